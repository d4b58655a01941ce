#pragma once

#include <optional>
#include <vector>

#include "corl/mdp.hpp"

namespace corl {

struct QTable {
  MatrixXd values;  // (s, a)
  Index iteration = 0;
};

// One entry per consecutive pair (f(k), f(k+1)) of the dataset-average
// Q-value series. cond1/cond2 are the two non-decrease conditions; a decrease
// with either condition holding is a violation of the contrapositive.
//
// Condition 2 is checked per dataset state: the greedy gap at s must cover
// alpha / pi_beta(a2 | s) at every visited state, a2 being the previous
// iterate's greedy action. The aggregated gap and zeta are also reported;
// the aggregate comparison is strictly weaker and does not imply
// non-decrease, so it carries its own flag.
struct MonotonicityReport {
  Index iteration = 0;  // k
  double f_k = 0.0;
  double f_k_next = 0.0;
  double mc_return = 0.0;     // dataset Monte-Carlo return E_D[r]/(1-gamma)
  bool cond1_holds = false;   // f(k) <= mc_return
  double cond2_gap = 0.0;     // E_{s~D}[max_a Q^k(s,a) - Q^k(s,a2)]
  double zeta = 0.0;          // E_{s~D}[alpha / pi_beta(a2|s)]
  double worst_state_margin = 0.0;  // min_s [gap(s) - alpha/pi_beta(a2|s)]
  bool cond2_holds = false;         // worst_state_margin >= 0
  bool cond2_mean_holds = false;    // cond2_gap >= zeta (informational)
  bool decreased = false;
  bool violates = false;
};

struct TabularCqlResult {
  std::vector<QTable> iterates;  // Q^0 ... Q^K
  VectorXd f_series;             // f(0) ... f(K), dataset-count weighted
  std::optional<Index> diverged_at;
};

// Dataset-weighted expectation of a per-(s,a) table.
double dataset_mean(const EmpiricalMDP& emp, const MatrixXd& values);

// Greedy action among the actions visited at s, lowest index on ties;
// -1 when no action of s appears in the data.
Index greedy_visited_action(const EmpiricalMDP& emp, const MatrixXd& q,
                            Index s);

// One exact iteration: Q' = B Q - alpha (mu/pi_beta - 1) with mu the point
// mass on the visited greedy action and B the optimality backup over the
// empirical kernel. Unvisited pairs are left untouched; next states without
// any visited action contribute value 0.
QTable cql_exact_backup(const QTable& q, const EmpiricalMDP& emp,
                        Discount gamma, double alpha);

// Iterates from Q^0 = 0, recording every table and the f-series. Stops early
// and reports the iteration when any |Q| exceeds divergence_bound.
TabularCqlResult run_tabular_cql(const EmpiricalMDP& emp, Discount gamma,
                                 double alpha, Index k_max,
                                 double divergence_bound = 1e9);

std::vector<MonotonicityReport> check_monotonicity(const TabularCqlResult& run,
                                                   const EmpiricalMDP& emp,
                                                   Discount gamma, double alpha,
                                                   double tol = 1e-9);

}  // namespace corl
