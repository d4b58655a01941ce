#include "corl/tabular_cql.hpp"

#include <cmath>
#include <stdexcept>

namespace corl {

double dataset_mean(const EmpiricalMDP& emp, const MatrixXd& values) {
  if (!(emp.total_count > 0.0))
    throw std::invalid_argument("dataset_mean: empty empirical MDP");
  return (emp.sa_counts.array() * values.array()).sum() / emp.total_count;
}

Index greedy_visited_action(const EmpiricalMDP& emp, const MatrixXd& q,
                            Index s) {
  Index best = -1;
  for (Index a = 0; a < emp.n_actions; ++a) {
    if (!emp.visited(s, a)) continue;
    if (best < 0 || q(s, a) > q(s, best)) best = a;
  }
  return best;
}

QTable cql_exact_backup(const QTable& q, const EmpiricalMDP& emp,
                        Discount gamma, double alpha) {
  if (q.values.rows() != emp.n_states || q.values.cols() != emp.n_actions)
    throw std::invalid_argument("cql_exact_backup: Q shape mismatch");

  // Greedy-visited state values V(s) = Q(s, argmax over visited a); states
  // never acted on in the data contribute 0.
  VectorXd v = VectorXd::Zero(emp.n_states);
  std::vector<Index> mu(static_cast<std::size_t>(emp.n_states), -1);
  for (Index s = 0; s < emp.n_states; ++s) {
    const Index a = greedy_visited_action(emp, q.values, s);
    mu[static_cast<std::size_t>(s)] = a;
    if (a >= 0) v[s] = q.values(s, a);
  }

  QTable out;
  out.iteration = q.iteration + 1;
  out.values = q.values;  // unvisited pairs carry over unchanged
  for (Index s = 0; s < emp.n_states; ++s) {
    for (Index a = 0; a < emp.n_actions; ++a) {
      if (!emp.visited(s, a)) continue;
      const double backup =
          emp.reward(s, a) +
          gamma.value() *
              emp.transition[static_cast<std::size_t>(a)].row(s).dot(v);
      const double mu_a = (a == mu[static_cast<std::size_t>(s)]) ? 1.0 : 0.0;
      const double pib = emp.behavior.probs(s, a);
      out.values(s, a) = backup - alpha * (mu_a / pib - 1.0);
    }
  }
  return out;
}

TabularCqlResult run_tabular_cql(const EmpiricalMDP& emp, Discount gamma,
                                 double alpha, Index k_max,
                                 double divergence_bound) {
  if (k_max < 1) throw std::invalid_argument("run_tabular_cql: k_max < 1");

  TabularCqlResult res;
  res.iterates.reserve(static_cast<std::size_t>(k_max) + 1);
  res.iterates.push_back({MatrixXd::Zero(emp.n_states, emp.n_actions), 0});
  std::vector<double> f;
  f.push_back(0.0);
  for (Index k = 1; k <= k_max; ++k) {
    QTable next = cql_exact_backup(res.iterates.back(), emp, gamma, alpha);
    if (!next.values.allFinite() ||
        next.values.cwiseAbs().maxCoeff() > divergence_bound) {
      res.diverged_at = k;
      break;
    }
    f.push_back(dataset_mean(emp, next.values));
    res.iterates.push_back(std::move(next));
  }
  res.f_series = Eigen::Map<VectorXd>(f.data(), static_cast<Index>(f.size()));
  return res;
}

std::vector<MonotonicityReport> check_monotonicity(const TabularCqlResult& run,
                                                   const EmpiricalMDP& emp,
                                                   Discount gamma, double alpha,
                                                   double tol) {
  const Index n_iter = static_cast<Index>(run.iterates.size());
  if (n_iter < 2)
    throw std::invalid_argument("check_monotonicity: run length < 2");
  const double mc = dataset_mc_return(emp, gamma);

  std::vector<MonotonicityReport> reports;
  for (Index k = 0; k + 1 < n_iter; ++k) {
    const MatrixXd& q_k = run.iterates[static_cast<std::size_t>(k)].values;
    // a2 is the previous iterate's greedy action; at k = 0 the previous
    // iterate is Q^0 itself.
    const MatrixXd& q_prev =
        run.iterates[static_cast<std::size_t>(k > 0 ? k - 1 : 0)].values;

    MonotonicityReport rep;
    rep.iteration = k;
    rep.f_k = run.f_series[k];
    rep.f_k_next = run.f_series[k + 1];
    rep.mc_return = mc;
    rep.cond1_holds = rep.f_k <= mc + tol;

    double gap = 0.0;
    double zeta = 0.0;
    double worst = std::numeric_limits<double>::infinity();
    for (Index s = 0; s < emp.n_states; ++s) {
      const double w = emp.state_counts[s] / emp.total_count;
      if (w <= 0.0) continue;
      const Index a2 = greedy_visited_action(emp, q_prev, s);
      const Index a1 = greedy_visited_action(emp, q_k, s);
      if (a2 < 0 || a1 < 0) continue;
      const double state_gap = q_k(s, a1) - q_k(s, a2);
      const double state_zeta = alpha / emp.behavior.probs(s, a2);
      gap += w * state_gap;
      zeta += w * state_zeta;
      worst = std::min(worst, state_gap - state_zeta);
    }
    rep.cond2_gap = gap;
    rep.zeta = zeta;
    rep.worst_state_margin = worst;
    rep.cond2_holds = worst >= -tol;
    rep.cond2_mean_holds = gap >= zeta - tol;
    rep.decreased = rep.f_k_next < rep.f_k - tol;
    rep.violates = rep.decreased && (rep.cond1_holds || rep.cond2_holds);
    reports.push_back(rep);
  }
  return reports;
}

}  // namespace corl
