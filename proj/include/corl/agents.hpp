#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "corl/mdp.hpp"
#include "corl/mlp.hpp"

namespace corl {

// Ordered capacity knob standing in for architecture size.
enum class CapacityTier { small, medium, large };
std::vector<Index> tier_widths(CapacityTier tier);
std::string tier_name(CapacityTier tier);
std::optional<CapacityTier> tier_from_name(const std::string& name);

// Optional loss add-ons on the critic.
struct RegularizerConfig {
  double vib_beta = 0.0;
  Index vib_dim = 16;
  double dr3_beta = 0.0;
  double dropout_p = 0.0;
  double l1_rho = 0.0;
  double l2_rho = 0.0;
};

struct CqlConfig {
  double alpha = 1.0;
  Discount gamma = Discount::from_horizon(30);
  std::vector<Index> critic_hidden = {64, 64};
  std::vector<Index> policy_hidden = {64, 64};
  Activation activation = Activation::relu;
  RegularizerConfig reg;
  Index target_update_period = 100;
  Index actor_delay = 1;
  Index batch_size = 64;
  Index total_steps = 2000;
  Index eval_period = 100;
  Index checkpoint_period = 0;  // 0: follow eval_period
  Index eval_subset = 4096;     // metric sample cap; 0: full dataset
  double entropy_weight = 0.01;
  AdamConfig adam;
  std::uint64_t seed = 0;
  double divergence_bound = 1e6;
  bool record_eval_return = false;  // analysis-only ground truth column
  std::string capacity_tier = "custom";

  void validate() const;
  std::map<std::string, std::string> flat() const;
};

struct BracConfig {
  CqlConfig base;              // alpha is unused by BRAC-v
  double beta_div = 0.1;       // weight on log pi_beta in targets and actor
  double entropy_alpha = 0.01; // policy entropy weight
  std::vector<Index> behavior_hidden = {64};
  double behavior_dropout_p = 0.0;
  Index behavior_fit_steps = 2000;
  double log_floor = -9.210340371976182;  // log(1e-4)

  void validate() const;
  std::map<std::string, std::string> flat() const;
};

// One logged metric row. eval_return is ground truth recorded for analysis
// only; advisor-facing accessors refuse it (see metric_series).
struct MetricRecord {
  Index step = 0;
  double avg_dataset_q = 0.0;
  double td_error = 0.0;
  double cql_reg = 0.0;
  double policy_entropy = 0.0;
  double init_state_value = 0.0;
  std::optional<double> conservative_q;
  std::optional<double> vib_kl;
  std::optional<double> dr3;
  std::optional<double> eval_return;
};

struct RunLog {
  std::string algo;  // "cql" | "brac"
  std::string config_hash;
  std::string capacity_tier;
  std::map<std::string, std::string> config;
  double dataset_mc_return = 0.0;
  double gamma = 0.0;
  double effective_horizon = 0.0;
  std::optional<Index> diverged_at;
  std::vector<MetricRecord> records;
};

// Whitelisted offline metric columns; throws on unknown names and on
// "eval_return", which is not an advisor-visible field.
VectorXd metric_series(const RunLog& log, const std::string& name);
// Same columns plus eval_return, for plotting and offline analysis tools.
VectorXd analysis_series(const RunLog& log, const std::string& name);
VectorXd record_steps(const RunLog& log);
// The Q-value column the overfit detector reads: conservative_q for BRAC
// runs, avg_dataset_q otherwise.
std::string detector_metric(const RunLog& log);

// In-memory policy/critic snapshot taken at a logged step.
struct CheckpointSnapshot {
  Index step = 0;
  Mlp critic;
  Mlp policy;
  MetricRecord metrics;
};

// On-disk reference, produced when a run is persisted.
struct CheckpointRef {
  Index step = 0;
  std::string critic_path;
  std::string policy_path;
  MetricRecord metrics_at_save;
};

// Everything a trainer needs: the frozen data, the state feature table, and
// the initial distribution (for the initial-state value metric). `mdp` is
// optional and only consulted when record_eval_return is set.
struct TrainTask {
  Dataset data;
  Featurizer features;
  VectorXd initial_dist;
  const TabularMDP* mdp = nullptr;

  Index n_actions() const;
};

struct TrainResult {
  RunLog log;
  std::vector<CheckpointSnapshot> checkpoints;
  Mlp critic;
  Mlp policy;
  std::optional<Mlp> behavior;  // BRAC only
};

// Loss value and its reported components; loss == alpha * reg + td exactly.
struct CriticLossParts {
  double loss = 0.0;
  double td = 0.0;   // 0.5 * mean squared Bellman residual
  double reg = 0.0;  // mean(logsumexp_a Q - Q(s, a_data))
};

// Critic loss on one batch; also returns the gradient when grad != nullptr.
// Indices address rows of the task's feature matrix.
CriticLossParts cql_critic_loss(const TrainTask& task,
                                const std::vector<Index>& batch,
                                const Mlp& critic, const Mlp& target_critic,
                                const Mlp& policy, const CqlConfig& cfg,
                                Rng& noise_rng, VectorXd* grad = nullptr);

// Policy objective: maximize E_{a~pi}[Qhat] + entropy bonus, exactly over
// discrete actions. Returns the (minimized) loss; gradient flows to the
// policy only.
double cql_policy_loss(const TrainTask& task, const std::vector<Index>& batch,
                       const Mlp& critic, const Mlp& policy,
                       const CqlConfig& cfg, Rng& noise_rng,
                       VectorXd* grad = nullptr);

TrainResult train_cql(const TrainTask& task, const CqlConfig& cfg);

struct BehaviorFit {
  Mlp model;
  double final_nll = 0.0;
};

// Maximum-likelihood categorical fit of the dataset's action distribution.
BehaviorFit fit_behavior(const TrainTask& task, const MlpSpec& spec,
                         Index steps, Index batch_size, const AdamConfig& adam,
                         std::uint64_t seed);

TrainResult train_brac(const TrainTask& task, const BracConfig& cfg);

// E_{s ~ initial_dist, a ~ pi}[Q(s, a)], exact over the enumerable spaces.
double initial_state_value(const Mlp& critic, const Mlp& policy,
                           const MatrixXd& state_features,
                           const VectorXd& initial_dist);

// Softmax policy table over all states.
TabularPolicy policy_table(const Mlp& policy, const MatrixXd& state_features);

// Row-wise stable softmax.
MatrixXd softmax_rows(const MatrixXd& logits);

std::string config_hash(const std::map<std::string, std::string>& kv);

}  // namespace corl
