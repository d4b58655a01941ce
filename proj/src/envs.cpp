#include "corl/envs.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <stdexcept>

namespace corl {

TabularMDP bandit(const VectorXd& rewards, Discount gamma) {
  TabularMDP mdp;
  mdp.id = "bandit" + std::to_string(rewards.size());
  mdp.n_states = 1;
  mdp.n_actions = rewards.size();
  mdp.transition.assign(static_cast<std::size_t>(mdp.n_actions),
                        MatrixXd::Ones(1, 1));
  mdp.reward = rewards.transpose();
  mdp.gamma = gamma;
  mdp.initial_dist = VectorXd::Ones(1);
  mdp.horizon = 1;
  mdp.validate();
  return mdp;
}

Gridworld make_gridworld(Index width, Index height, Index start,
                         std::vector<Index> goals, Discount gamma,
                         Index horizon) {
  const Index n = width * height;
  Gridworld grid;
  grid.width = width;
  grid.height = height;
  grid.start = start;
  grid.goals = std::move(goals);

  std::vector<bool> is_goal(static_cast<std::size_t>(n), false);
  for (Index g : grid.goals) is_goal[static_cast<std::size_t>(g)] = true;

  auto next_cell = [&](Index s, Index a) -> Index {
    Index x = s % width;
    Index y = s / width;
    switch (a) {
      case 0: y = std::max<Index>(0, y - 1); break;
      case 1: y = std::min<Index>(height - 1, y + 1); break;
      case 2: x = std::max<Index>(0, x - 1); break;
      default: x = std::min<Index>(width - 1, x + 1); break;
    }
    return y * width + x;
  };

  TabularMDP mdp;
  mdp.n_states = n;
  mdp.n_actions = 4;
  mdp.transition.assign(4, MatrixXd::Zero(n, n));
  mdp.reward = MatrixXd::Zero(n, 4);
  mdp.gamma = gamma;
  mdp.horizon = horizon;
  mdp.initial_dist = VectorXd::Zero(n);
  mdp.initial_dist[start] = 1.0;
  mdp.terminal.assign(static_cast<std::size_t>(n), false);
  for (Index g : grid.goals) mdp.terminal[static_cast<std::size_t>(g)] = true;

  for (Index s = 0; s < n; ++s) {
    for (Index a = 0; a < 4; ++a) {
      if (is_goal[static_cast<std::size_t>(s)]) {
        mdp.transition[static_cast<std::size_t>(a)](s, s) = 1.0;
        continue;
      }
      const Index s2 = next_cell(s, a);
      mdp.transition[static_cast<std::size_t>(a)](s, s2) = 1.0;
      if (is_goal[static_cast<std::size_t>(s2)]) mdp.reward(s, a) = 1.0;
    }
  }

  // BFS from all goals over the move graph.
  grid.goal_distance = VectorXi::Constant(n, std::numeric_limits<int>::max());
  std::deque<Index> queue;
  for (Index g : grid.goals) {
    grid.goal_distance[g] = 0;
    queue.push_back(g);
  }
  while (!queue.empty()) {
    const Index s = queue.front();
    queue.pop_front();
    const Index x = s % width;
    const Index y = s / width;
    const Index neighbors[4] = {
        y > 0 ? s - width : s, y < height - 1 ? s + width : s,
        x > 0 ? s - 1 : s, x < width - 1 ? s + 1 : s};
    for (Index nb : neighbors) {
      if (grid.goal_distance[nb] > grid.goal_distance[s] + 1) {
        grid.goal_distance[nb] = grid.goal_distance[s] + 1;
        queue.push_back(nb);
      }
    }
  }

  grid.mdp = std::move(mdp);
  grid.mdp.validate();
  return grid;
}

TabularPolicy scripted_gridworld_policy(const Gridworld& grid, double eps) {
  const Index n = grid.mdp.n_states;
  TabularPolicy base;
  base.probs = MatrixXd::Zero(n, 4);
  for (Index s = 0; s < n; ++s) {
    if (grid.mdp.is_terminal(s)) {
      base.probs.row(s).setConstant(0.25);
      continue;
    }
    // Split evenly over all shortest-path moves.
    int best = std::numeric_limits<int>::max();
    std::vector<Index> arg;
    for (Index a = 0; a < 4; ++a) {
      Index s2 = 0;
      for (Index c = 0; c < n; ++c)
        if (grid.mdp.transition[static_cast<std::size_t>(a)](s, c) == 1.0) {
          s2 = c;
          break;
        }
      const int d = grid.goal_distance[s2];
      if (d < best) {
        best = d;
        arg.clear();
      }
      if (d == best) arg.push_back(a);
    }
    for (Index a : arg)
      base.probs(s, a) = 1.0 / static_cast<double>(arg.size());
  }
  return epsilon_greedy(base, eps);
}

TabularMDP random_mdp(Index n_states, Index n_actions, Discount gamma,
                      std::uint64_t seed) {
  Rng rng = make_rng(seed, 101);
  std::exponential_distribution<double> expo(1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  TabularMDP mdp;
  mdp.id = "random";
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.transition.assign(static_cast<std::size_t>(n_actions),
                        MatrixXd::Zero(n_states, n_states));
  mdp.reward = MatrixXd::Zero(n_states, n_actions);
  mdp.gamma = gamma;
  mdp.initial_dist =
      VectorXd::Constant(n_states, 1.0 / static_cast<double>(n_states));
  mdp.horizon = 30;
  for (Index a = 0; a < n_actions; ++a) {
    for (Index s = 0; s < n_states; ++s) {
      VectorXd row(n_states);
      for (Index s2 = 0; s2 < n_states; ++s2) row[s2] = expo(rng);
      mdp.transition[static_cast<std::size_t>(a)].row(s) =
          row.transpose() / row.sum();
      mdp.reward(s, a) = unif(rng) < 0.5 ? 1.0 : 0.0;
    }
  }
  mdp.validate();
  return mdp;
}

TabularPolicy random_policy(Index n_states, Index n_actions, double min_prob,
                            std::uint64_t seed) {
  if (min_prob * static_cast<double>(n_actions) >= 1.0)
    throw std::invalid_argument("random_policy: min_prob too large");
  Rng rng = make_rng(seed, 202);
  std::exponential_distribution<double> expo(1.0);
  TabularPolicy p;
  p.probs = MatrixXd::Zero(n_states, n_actions);
  const double slack = 1.0 - min_prob * static_cast<double>(n_actions);
  for (Index s = 0; s < n_states; ++s) {
    VectorXd row(n_actions);
    for (Index a = 0; a < n_actions; ++a) row[a] = expo(rng);
    p.probs.row(s) =
        (min_prob + slack * (row / row.sum()).array()).transpose();
  }
  p.validate();
  return p;
}

namespace {

Gridworld registry_gridworld(const std::string& id) {
  const Discount g30 = Discount::from_horizon(30);
  if (id == "grid5")
    return make_gridworld(5, 5, 0, {24}, g30, 30);
  if (id == "grid5-drawer")
    return make_gridworld(5, 5, 10, {14}, g30, 30);
  if (id == "multigoal7")
    return make_gridworld(7, 7, 24, {0, 6, 42, 48}, g30, 30);
  throw std::invalid_argument("unknown gridworld id: " + id);
}

}  // namespace

TabularMDP make_mdp(const std::string& id) {
  if (id == "bandit2") {
    VectorXd r(2);
    r << 1.0, 0.0;
    TabularMDP mdp = bandit(r, Discount::from_gamma(0.9));
    mdp.id = id;
    return mdp;
  }
  if (id == "chain5") {
    const Index n = 5;
    TabularMDP mdp;
    mdp.id = id;
    mdp.n_states = n;
    mdp.n_actions = 2;
    mdp.transition.assign(2, MatrixXd::Zero(n, n));
    mdp.reward = MatrixXd::Zero(n, 2);
    mdp.gamma = Discount::from_horizon(30);
    mdp.initial_dist = VectorXd::Zero(n);
    mdp.initial_dist[0] = 1.0;
    mdp.horizon = 30;
    mdp.terminal.assign(n, false);
    mdp.terminal[n - 1] = true;
    for (Index s = 0; s < n; ++s) {
      if (s == n - 1) {
        mdp.transition[0](s, s) = 1.0;
        mdp.transition[1](s, s) = 1.0;
        continue;
      }
      mdp.transition[0](s, std::max<Index>(0, s - 1)) = 1.0;
      mdp.transition[1](s, s + 1) = 1.0;
      if (s + 1 == n - 1) mdp.reward(s, 1) = 1.0;
    }
    mdp.validate();
    return mdp;
  }
  TabularMDP mdp = registry_gridworld(id).mdp;
  mdp.id = id;
  return mdp;
}

TabularPolicy make_behavior(const std::string& mdp_id, double eps) {
  if (mdp_id == "bandit2") {
    TabularPolicy best;
    best.probs = MatrixXd::Zero(1, 2);
    best.probs(0, 0) = 1.0;
    return epsilon_greedy(best, eps);
  }
  if (mdp_id == "chain5") {
    TabularPolicy right;
    right.probs = MatrixXd::Zero(5, 2);
    right.probs.col(1).setOnes();
    return epsilon_greedy(right, eps);
  }
  return scripted_gridworld_policy(registry_gridworld(mdp_id), eps);
}

}  // namespace corl
