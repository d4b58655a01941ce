#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "corl/mdp.hpp"

namespace corl {

// Single-state MDP with one action per arm; the state self-loops forever.
TabularMDP bandit(const VectorXd& rewards, Discount gamma);

// Deterministic grid with four move actions (up/down/left/right). Goal cells
// are absorbing terminals; reward 1 is paid on the step that enters a goal.
struct Gridworld {
  TabularMDP mdp;
  Index width = 0;
  Index height = 0;
  Index start = 0;
  std::vector<Index> goals;
  VectorXi goal_distance;  // BFS steps to the nearest goal

  Index cell(Index x, Index y) const { return y * width + x; }
};

Gridworld make_gridworld(Index width, Index height, Index start,
                         std::vector<Index> goals, Discount gamma,
                         Index horizon);

// Noisy scripted policy: with probability 1-eps step along a shortest path to
// the nearest goal, otherwise act uniformly. At terminals the policy is
// uniform (never queried during rollouts).
TabularPolicy scripted_gridworld_policy(const Gridworld& grid, double eps);

// Ergodic random MDP with Dirichlet(1) transition rows and Bernoulli {0,1}
// rewards; no terminal states.
TabularMDP random_mdp(Index n_states, Index n_actions, Discount gamma,
                      std::uint64_t seed);

// Random policy with every action probability at least `min_prob`.
TabularPolicy random_policy(Index n_states, Index n_actions, double min_prob,
                            std::uint64_t seed);

// Environment registry used by the CLI and the dataset file format.
// Known ids: "bandit2", "chain5", "grid5", "grid5-drawer", "multigoal7".
TabularMDP make_mdp(const std::string& id);

// Scripted behavior policy for a registry id; `eps` is the action-noise rate.
TabularPolicy make_behavior(const std::string& mdp_id, double eps);

}  // namespace corl
