#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "corl/types.hpp"

namespace corl {

// Stochastic policy over a finite MDP; probs(s, a).
struct TabularPolicy {
  MatrixXd probs;

  void validate() const;
  Index n_states() const { return probs.rows(); }
  Index n_actions() const { return probs.cols(); }
};

TabularPolicy uniform_policy(Index n_states, Index n_actions);
// (1 - eps) * base + eps * uniform.
TabularPolicy epsilon_greedy(const TabularPolicy& base, double eps);
// Deterministic policy from a Q table; ties break toward the lowest action
// index.
TabularPolicy greedy_policy(const MatrixXd& q);

// Enumerable MDP. transition[a] is the (s, s') kernel for action a.
// Terminal states are absorbing with zero reward; episodes end on entry.
struct TabularMDP {
  std::string id;
  Index n_states = 0;
  Index n_actions = 0;
  std::vector<MatrixXd> transition;
  MatrixXd reward;  // (s, a)
  Discount gamma;
  VectorXd initial_dist;
  Index horizon = 30;
  std::vector<bool> terminal;  // empty means no terminal states

  void validate() const;
  bool is_terminal(Index s) const {
    return !terminal.empty() && terminal[static_cast<std::size_t>(s)];
  }
};

struct Transition {
  Index state = 0;
  Index action = 0;
  double reward = 0.0;
  Index next_state = 0;
  bool done = false;
};

// Fixed offline experience. trajectory_starts[i] is the index of the first
// transition of trajectory i; the list partitions `transitions`.
struct Dataset {
  std::vector<Transition> transitions;
  std::vector<Index> trajectory_starts;
  std::uint64_t source_seed = 0;
  std::string behavior_policy_id;
  std::string mdp_id;
  Index horizon = 0;

  Index size() const { return static_cast<Index>(transitions.size()); }
  Index n_trajectories() const {
    return static_cast<Index>(trajectory_starts.size());
  }
  void validate() const;
};

// The MDP induced by dataset counts. Unvisited (s, a) pairs are masked:
// their transition rows and rewards stay zero and must not be read without
// consulting `visited` first. Counts are real-valued so that exactly
// constructed (non-sampled) weightings can use the same type.
struct EmpiricalMDP {
  Index n_states = 0;
  Index n_actions = 0;
  std::vector<MatrixXd> counts;      // per action, (s, s') visit weight
  MatrixXd sa_counts;                // (s, a)
  VectorXd state_counts;             // (s)
  double total_count = 0.0;
  std::vector<MatrixXd> transition;  // normalized over visited pairs
  MatrixXd reward;                   // mean reward per visited pair
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> visited;  // (s, a)
  TabularPolicy behavior;            // counts(s,a) / counts(s)

  bool state_visited(Index s) const { return state_counts[s] > 0.0; }
};

// Rolls out `n_traj` trajectories of at most mdp.horizon steps each.
// Deterministic for a fixed seed.
Dataset generate_dataset(const TabularMDP& mdp, const TabularPolicy& behavior,
                         Index n_traj, std::uint64_t seed,
                         const std::string& behavior_id = "behavior");

EmpiricalMDP build_empirical_mdp(const Dataset& data);

// Exact construction of the empirical MDP a behavior policy induces in the
// limit of infinite data: kernel and rewards are copied from the MDP and the
// visit weights are the stationary distribution of the behavior chain. Useful
// where sampling noise must be excluded entirely.
EmpiricalMDP empirical_from_stationary(const TabularMDP& mdp,
                                       const TabularPolicy& behavior);

// Stationary state distribution of the Markov chain induced by `policy`.
VectorXd stationary_distribution(const TabularMDP& mdp,
                                 const TabularPolicy& policy);

// Solves the linear policy-evaluation system exactly and returns
// E_{s ~ initial_dist}[V_policy(s)]. Ground-truth oracle; nothing on the
// advisor path may call it.
double exact_policy_return(const TabularMDP& mdp, const TabularPolicy& policy);

// State values V_policy for the same system.
VectorXd exact_policy_values(const TabularMDP& mdp,
                             const TabularPolicy& policy);

// Mean dataset reward divided by (1 - gamma).
double dataset_mc_return(const Dataset& data, Discount gamma);

// Mean dataset reward divided by (1 - gamma) for an empirical MDP's
// count-weighted reward.
double dataset_mc_return(const EmpiricalMDP& emp, Discount gamma);

// Maps state ids to dense feature vectors: one-hot, optionally concatenated
// with fixed state-indexed noise columns that invite overfitting at small
// dataset sizes.
struct Featurizer {
  MatrixXd table;  // (n_states, dim)

  static Featurizer one_hot(Index n_states);
  static Featurizer with_distractors(Index n_states, Index n_distractors,
                                     std::uint64_t seed);

  Index dim() const { return table.cols(); }
  VectorXd row(Index s) const { return table.row(s).transpose(); }
};

}  // namespace corl
