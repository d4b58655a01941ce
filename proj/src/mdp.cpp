#include "corl/mdp.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace corl {

namespace {

constexpr double kProbTol = 1e-12;

double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Inverse-CDF draw; the explicit loop keeps sampling identical across
// standard-library implementations.
Index sample_index(const VectorXd& probs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (Index i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  // Round-off may leave acc slightly below 1; return the last supported index.
  for (Index i = probs.size() - 1; i >= 0; --i)
    if (probs[i] > 0.0) return i;
  throw std::invalid_argument("sample_index: all-zero probability vector");
}

}  // namespace

void TabularPolicy::validate() const {
  if (probs.rows() == 0 || probs.cols() == 0)
    throw std::invalid_argument("TabularPolicy: empty");
  if ((probs.array() < 0.0).any())
    throw std::invalid_argument("TabularPolicy: negative probability");
  for (Index s = 0; s < probs.rows(); ++s) {
    if (std::abs(probs.row(s).sum() - 1.0) > kProbTol)
      throw std::invalid_argument("TabularPolicy: row does not sum to 1");
  }
}

TabularPolicy uniform_policy(Index n_states, Index n_actions) {
  TabularPolicy p;
  p.probs = MatrixXd::Constant(n_states, n_actions,
                               1.0 / static_cast<double>(n_actions));
  return p;
}

TabularPolicy epsilon_greedy(const TabularPolicy& base, double eps) {
  if (!(eps >= 0.0 && eps <= 1.0))
    throw std::invalid_argument("epsilon_greedy: eps must lie in [0, 1]");
  TabularPolicy p;
  const double u = 1.0 / static_cast<double>(base.n_actions());
  p.probs = (1.0 - eps) * base.probs.array() + eps * u;
  return p;
}

TabularPolicy greedy_policy(const MatrixXd& q) {
  TabularPolicy p;
  p.probs = MatrixXd::Zero(q.rows(), q.cols());
  for (Index s = 0; s < q.rows(); ++s) {
    Index best = 0;
    for (Index a = 1; a < q.cols(); ++a)
      if (q(s, a) > q(s, best)) best = a;
    p.probs(s, best) = 1.0;
  }
  return p;
}

void TabularMDP::validate() const {
  if (n_states <= 0 || n_actions <= 0)
    throw std::invalid_argument("TabularMDP: empty state or action space");
  if (static_cast<Index>(transition.size()) != n_actions)
    throw std::invalid_argument("TabularMDP: transition kernel shape");
  for (const auto& pa : transition) {
    if (pa.rows() != n_states || pa.cols() != n_states)
      throw std::invalid_argument("TabularMDP: transition kernel shape");
    if ((pa.array() < 0.0).any())
      throw std::invalid_argument("TabularMDP: negative transition mass");
    for (Index s = 0; s < n_states; ++s)
      if (std::abs(pa.row(s).sum() - 1.0) > kProbTol)
        throw std::invalid_argument("TabularMDP: transition row sum != 1");
  }
  if (reward.rows() != n_states || reward.cols() != n_actions)
    throw std::invalid_argument("TabularMDP: reward shape");
  if (!(gamma.value() >= 0.0 && gamma.value() < 1.0))
    throw std::invalid_argument("TabularMDP: gamma must lie in [0, 1)");
  if (initial_dist.size() != n_states ||
      std::abs(initial_dist.sum() - 1.0) > kProbTol ||
      (initial_dist.array() < 0.0).any())
    throw std::invalid_argument("TabularMDP: invalid initial distribution");
  if (horizon <= 0) throw std::invalid_argument("TabularMDP: horizon <= 0");
  if (!terminal.empty()) {
    if (terminal.size() != static_cast<std::size_t>(n_states))
      throw std::invalid_argument("TabularMDP: terminal mask size");
    for (Index s = 0; s < n_states; ++s) {
      if (!terminal[static_cast<std::size_t>(s)]) continue;
      for (Index a = 0; a < n_actions; ++a) {
        if (reward(s, a) != 0.0 || transition[a](s, s) != 1.0)
          throw std::invalid_argument(
              "TabularMDP: terminal states must be absorbing with zero "
              "reward");
      }
    }
  }
}

void Dataset::validate() const {
  if (transitions.empty()) throw std::invalid_argument("Dataset: empty");
  if (trajectory_starts.empty() || trajectory_starts.front() != 0)
    throw std::invalid_argument("Dataset: trajectory starts must begin at 0");
  for (std::size_t i = 1; i < trajectory_starts.size(); ++i)
    if (trajectory_starts[i] <= trajectory_starts[i - 1])
      throw std::invalid_argument("Dataset: trajectory starts not increasing");
  if (trajectory_starts.back() >= size())
    throw std::invalid_argument("Dataset: trajectory start out of range");
}

Dataset generate_dataset(const TabularMDP& mdp, const TabularPolicy& behavior,
                         Index n_traj, std::uint64_t seed,
                         const std::string& behavior_id) {
  mdp.validate();
  behavior.validate();
  if (behavior.n_states() != mdp.n_states ||
      behavior.n_actions() != mdp.n_actions)
    throw std::invalid_argument("generate_dataset: policy/MDP shape mismatch");
  if (n_traj <= 0)
    throw std::invalid_argument("generate_dataset: zero trajectories requested");

  Dataset data;
  data.source_seed = seed;
  data.behavior_policy_id = behavior_id;
  data.mdp_id = mdp.id;
  data.horizon = mdp.horizon;

  Rng rng = make_rng(seed, 0);
  for (Index t = 0; t < n_traj; ++t) {
    data.trajectory_starts.push_back(data.size());
    Index s = sample_index(mdp.initial_dist, rng);
    for (Index step = 0; step < mdp.horizon; ++step) {
      const Index a = sample_index(behavior.probs.row(s).transpose(), rng);
      const double r = mdp.reward(s, a);
      const Index s2 = sample_index(mdp.transition[a].row(s).transpose(), rng);
      const bool done = mdp.is_terminal(s2);
      data.transitions.push_back({s, a, r, s2, done});
      if (done) break;
      s = s2;
    }
  }
  data.validate();
  return data;
}

EmpiricalMDP build_empirical_mdp(const Dataset& data) {
  data.validate();
  Index n_states = 0;
  Index n_actions = 0;
  for (const auto& tr : data.transitions) {
    n_states = std::max({n_states, tr.state + 1, tr.next_state + 1});
    n_actions = std::max(n_actions, tr.action + 1);
  }

  EmpiricalMDP emp;
  emp.n_states = n_states;
  emp.n_actions = n_actions;
  emp.counts.assign(static_cast<std::size_t>(n_actions),
                    MatrixXd::Zero(n_states, n_states));
  emp.sa_counts = MatrixXd::Zero(n_states, n_actions);
  MatrixXd reward_sums = MatrixXd::Zero(n_states, n_actions);
  for (const auto& tr : data.transitions) {
    emp.counts[static_cast<std::size_t>(tr.action)](tr.state, tr.next_state) +=
        1.0;
    emp.sa_counts(tr.state, tr.action) += 1.0;
    reward_sums(tr.state, tr.action) += tr.reward;
  }

  emp.state_counts = emp.sa_counts.rowwise().sum();
  emp.total_count = emp.sa_counts.sum();
  emp.visited = emp.sa_counts.array() > 0.0;
  emp.transition.assign(static_cast<std::size_t>(n_actions),
                        MatrixXd::Zero(n_states, n_states));
  emp.reward = MatrixXd::Zero(n_states, n_actions);
  emp.behavior.probs = MatrixXd::Zero(n_states, n_actions);
  for (Index s = 0; s < n_states; ++s) {
    for (Index a = 0; a < n_actions; ++a) {
      const double c = emp.sa_counts(s, a);
      if (c <= 0.0) continue;  // masked, stays zero
      emp.transition[static_cast<std::size_t>(a)].row(s) =
          emp.counts[static_cast<std::size_t>(a)].row(s) / c;
      emp.reward(s, a) = reward_sums(s, a) / c;
      emp.behavior.probs(s, a) = c / emp.state_counts[s];
    }
  }
  return emp;
}

VectorXd stationary_distribution(const TabularMDP& mdp,
                                 const TabularPolicy& policy) {
  policy.validate();
  MatrixXd p_pi = MatrixXd::Zero(mdp.n_states, mdp.n_states);
  for (Index a = 0; a < mdp.n_actions; ++a)
    p_pi += policy.probs.col(a).asDiagonal() *
            mdp.transition[static_cast<std::size_t>(a)];

  // rho^T (P - I) = 0 with sum(rho) = 1; the normalization replaces one
  // equation of the singular system.
  MatrixXd system = p_pi.transpose() - MatrixXd::Identity(mdp.n_states, mdp.n_states);
  system.row(mdp.n_states - 1).setOnes();
  VectorXd rhs = VectorXd::Zero(mdp.n_states);
  rhs[mdp.n_states - 1] = 1.0;
  VectorXd rho = system.partialPivLu().solve(rhs);
  rho = rho.cwiseMax(0.0);
  const double total = rho.sum();
  if (!(total > 0.0))
    throw std::runtime_error("stationary_distribution: degenerate chain");
  return rho / total;
}

EmpiricalMDP empirical_from_stationary(const TabularMDP& mdp,
                                       const TabularPolicy& behavior) {
  mdp.validate();
  const VectorXd rho = stationary_distribution(mdp, behavior);

  EmpiricalMDP emp;
  emp.n_states = mdp.n_states;
  emp.n_actions = mdp.n_actions;
  emp.sa_counts = rho.asDiagonal() * behavior.probs;
  emp.counts.assign(static_cast<std::size_t>(mdp.n_actions),
                    MatrixXd::Zero(mdp.n_states, mdp.n_states));
  for (Index a = 0; a < mdp.n_actions; ++a)
    emp.counts[static_cast<std::size_t>(a)] =
        emp.sa_counts.col(a).asDiagonal() *
        mdp.transition[static_cast<std::size_t>(a)];
  emp.state_counts = rho;
  emp.total_count = 1.0;
  emp.visited = emp.sa_counts.array() > 0.0;
  emp.transition = mdp.transition;
  emp.reward = mdp.reward;
  emp.behavior = behavior;
  return emp;
}

VectorXd exact_policy_values(const TabularMDP& mdp,
                             const TabularPolicy& policy) {
  policy.validate();
  MatrixXd p_pi = MatrixXd::Zero(mdp.n_states, mdp.n_states);
  for (Index a = 0; a < mdp.n_actions; ++a)
    p_pi += policy.probs.col(a).asDiagonal() *
            mdp.transition[static_cast<std::size_t>(a)];
  const VectorXd r_pi = (policy.probs.array() * mdp.reward.array())
                            .matrix()
                            .rowwise()
                            .sum();
  const MatrixXd system =
      MatrixXd::Identity(mdp.n_states, mdp.n_states) - mdp.gamma.value() * p_pi;
  return system.partialPivLu().solve(r_pi);
}

double exact_policy_return(const TabularMDP& mdp,
                           const TabularPolicy& policy) {
  return mdp.initial_dist.dot(exact_policy_values(mdp, policy));
}

double dataset_mc_return(const Dataset& data, Discount gamma) {
  data.validate();
  double mean = 0.0;
  for (const auto& tr : data.transitions) mean += tr.reward;
  mean /= static_cast<double>(data.size());
  return mean / gamma.complement();
}

double dataset_mc_return(const EmpiricalMDP& emp, Discount gamma) {
  if (!(emp.total_count > 0.0))
    throw std::invalid_argument("dataset_mc_return: empty empirical MDP");
  const double mean =
      (emp.sa_counts.array() * emp.reward.array()).sum() / emp.total_count;
  return mean / gamma.complement();
}

Featurizer Featurizer::one_hot(Index n_states) {
  Featurizer f;
  f.table = MatrixXd::Identity(n_states, n_states);
  return f;
}

Featurizer Featurizer::with_distractors(Index n_states, Index n_distractors,
                                        std::uint64_t seed) {
  Featurizer f;
  f.table = MatrixXd::Zero(n_states, n_states + n_distractors);
  f.table.leftCols(n_states).setIdentity();
  Rng rng = make_rng(seed, 17);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index s = 0; s < n_states; ++s)
    for (Index j = 0; j < n_distractors; ++j)
      f.table(s, n_states + j) = normal(rng);
  return f;
}

}  // namespace corl
