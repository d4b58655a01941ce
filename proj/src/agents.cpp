#include "corl/agents.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "corl/divergence.hpp"

namespace corl {

std::vector<Index> tier_widths(CapacityTier tier) {
  switch (tier) {
    case CapacityTier::small: return {4};
    case CapacityTier::medium: return {32, 32};
    default: return {64, 64};
  }
}

std::string tier_name(CapacityTier tier) {
  switch (tier) {
    case CapacityTier::small: return "small";
    case CapacityTier::medium: return "medium";
    default: return "large";
  }
}

std::optional<CapacityTier> tier_from_name(const std::string& name) {
  if (name == "small") return CapacityTier::small;
  if (name == "medium") return CapacityTier::medium;
  if (name == "large") return CapacityTier::large;
  return std::nullopt;
}

void CqlConfig::validate() const {
  if (alpha < 0.0) throw std::invalid_argument("CqlConfig: alpha < 0");
  if (target_update_period < 1 || actor_delay < 1 || batch_size < 1 ||
      eval_period < 1)
    throw std::invalid_argument("CqlConfig: periods and batch must be >= 1");
  if (total_steps < 0) throw std::invalid_argument("CqlConfig: total_steps < 0");
  if (reg.vib_beta < 0 || reg.dr3_beta < 0 || reg.l1_rho < 0 ||
      reg.l2_rho < 0 || reg.dropout_p < 0 || reg.dropout_p >= 1)
    throw std::invalid_argument("CqlConfig: invalid regularizer weights");
}

namespace {

std::string join_widths(const std::vector<Index>& widths) {
  std::string s;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(widths[i]);
  }
  return s;
}

}  // namespace

std::map<std::string, std::string> CqlConfig::flat() const {
  std::map<std::string, std::string> kv;
  kv["alpha"] = format_double(alpha);
  kv["gamma"] = format_double(gamma.value());
  kv["effective_horizon"] = format_double(gamma.effective_horizon());
  kv["critic_hidden"] = join_widths(critic_hidden);
  kv["policy_hidden"] = join_widths(policy_hidden);
  kv["activation"] = activation == Activation::relu ? "relu" : "tanh";
  kv["vib_beta"] = format_double(reg.vib_beta);
  kv["vib_dim"] = std::to_string(reg.vib_dim);
  kv["dr3_beta"] = format_double(reg.dr3_beta);
  kv["dropout_p"] = format_double(reg.dropout_p);
  kv["l1_rho"] = format_double(reg.l1_rho);
  kv["l2_rho"] = format_double(reg.l2_rho);
  kv["target_update_period"] = std::to_string(target_update_period);
  kv["actor_delay"] = std::to_string(actor_delay);
  kv["batch_size"] = std::to_string(batch_size);
  kv["total_steps"] = std::to_string(total_steps);
  kv["eval_period"] = std::to_string(eval_period);
  kv["checkpoint_period"] = std::to_string(checkpoint_period);
  kv["eval_subset"] = std::to_string(eval_subset);
  kv["entropy_weight"] = format_double(entropy_weight);
  kv["lr"] = format_double(adam.lr);
  kv["adam_beta1"] = format_double(adam.beta1);
  kv["adam_beta2"] = format_double(adam.beta2);
  kv["adam_eps"] = format_double(adam.eps);
  kv["seed"] = std::to_string(seed);
  kv["divergence_bound"] = format_double(divergence_bound);
  kv["record_eval_return"] = record_eval_return ? "true" : "false";
  kv["capacity_tier"] = capacity_tier;
  return kv;
}

void BracConfig::validate() const {
  base.validate();
  if (beta_div < 0.0) throw std::invalid_argument("BracConfig: beta_div < 0");
  if (entropy_alpha < 0.0)
    throw std::invalid_argument("BracConfig: entropy_alpha < 0");
  if (behavior_fit_steps < 0)
    throw std::invalid_argument("BracConfig: behavior_fit_steps < 0");
  if (behavior_dropout_p < 0.0 || behavior_dropout_p >= 1.0)
    throw std::invalid_argument("BracConfig: behavior_dropout_p out of range");
}

std::map<std::string, std::string> BracConfig::flat() const {
  auto kv = base.flat();
  kv["beta_div"] = format_double(beta_div);
  kv["entropy_alpha"] = format_double(entropy_alpha);
  kv["behavior_hidden"] = join_widths(behavior_hidden);
  kv["behavior_dropout_p"] = format_double(behavior_dropout_p);
  kv["behavior_fit_steps"] = std::to_string(behavior_fit_steps);
  kv["log_floor"] = format_double(log_floor);
  return kv;
}

std::string config_hash(const std::map<std::string, std::string>& kv) {
  std::string canon;
  for (const auto& [k, v] : kv) {
    canon += k;
    canon += '=';
    canon += v;
    canon += ';';
  }
  return fnv1a64_hex(canon);
}

namespace {

VectorXd pull_series(const RunLog& log, const std::string& name,
                     bool allow_eval_return) {
  const auto get = [&](const MetricRecord& r) -> double {
    if (name == "avg_dataset_q") return r.avg_dataset_q;
    if (name == "td_error") return r.td_error;
    if (name == "cql_reg") return r.cql_reg;
    if (name == "policy_entropy") return r.policy_entropy;
    if (name == "init_state_value") return r.init_state_value;
    if (name == "conservative_q") {
      if (!r.conservative_q)
        throw std::invalid_argument("metric not recorded: conservative_q");
      return *r.conservative_q;
    }
    if (name == "vib_kl") {
      if (!r.vib_kl) throw std::invalid_argument("metric not recorded: vib_kl");
      return *r.vib_kl;
    }
    if (name == "dr3") {
      if (!r.dr3) throw std::invalid_argument("metric not recorded: dr3");
      return *r.dr3;
    }
    if (name == "eval_return") {
      if (!allow_eval_return)
        throw std::invalid_argument(
            "eval_return is ground truth, not an offline metric");
      if (!r.eval_return)
        throw std::invalid_argument("metric not recorded: eval_return");
      return *r.eval_return;
    }
    throw std::invalid_argument("unknown metric: " + name);
  };
  VectorXd out(static_cast<Index>(log.records.size()));
  for (std::size_t i = 0; i < log.records.size(); ++i)
    out[static_cast<Index>(i)] = get(log.records[i]);
  return out;
}

}  // namespace

VectorXd metric_series(const RunLog& log, const std::string& name) {
  return pull_series(log, name, false);
}

VectorXd analysis_series(const RunLog& log, const std::string& name) {
  return pull_series(log, name, true);
}

VectorXd record_steps(const RunLog& log) {
  VectorXd out(static_cast<Index>(log.records.size()));
  for (std::size_t i = 0; i < log.records.size(); ++i)
    out[static_cast<Index>(i)] = static_cast<double>(log.records[i].step);
  return out;
}

std::string detector_metric(const RunLog& log) {
  return log.algo == "brac" ? "conservative_q" : "avg_dataset_q";
}

Index TrainTask::n_actions() const {
  Index n = 0;
  for (const auto& tr : data.transitions) n = std::max(n, tr.action + 1);
  return n;
}

MatrixXd softmax_rows(const MatrixXd& logits) {
  MatrixXd p(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

TabularPolicy policy_table(const Mlp& policy, const MatrixXd& state_features) {
  TabularPolicy tab;
  tab.probs = softmax_rows(forward_eval(policy, state_features).output);
  return tab;
}

double initial_state_value(const Mlp& critic, const Mlp& policy,
                           const MatrixXd& state_features,
                           const VectorXd& initial_dist) {
  if (state_features.rows() != initial_dist.size())
    throw std::invalid_argument("initial_state_value: shape mismatch");
  const MatrixXd q = forward_eval(critic, state_features).output;
  const MatrixXd pi = softmax_rows(forward_eval(policy, state_features).output);
  return initial_dist.dot((q.array() * pi.array()).rowwise().sum().matrix());
}

namespace {

// Dataset columns gathered once per run.
struct DataView {
  MatrixXd x;        // (N, d) state features
  MatrixXd x2;       // (N, d) next-state features
  VectorXi actions;  // (N)
  VectorXd rewards;
  VectorXd not_done;  // 1 - done
  Index n = 0;

  static DataView build(const TrainTask& task) {
    DataView v;
    v.n = task.data.size();
    const Index d = task.features.dim();
    v.x.resize(v.n, d);
    v.x2.resize(v.n, d);
    v.actions.resize(v.n);
    v.rewards.resize(v.n);
    v.not_done.resize(v.n);
    for (Index i = 0; i < v.n; ++i) {
      const Transition& tr = task.data.transitions[static_cast<std::size_t>(i)];
      v.x.row(i) = task.features.table.row(tr.state);
      v.x2.row(i) = task.features.table.row(tr.next_state);
      v.actions[i] = static_cast<int>(tr.action);
      v.rewards[i] = tr.reward;
      v.not_done[i] = tr.done ? 0.0 : 1.0;
    }
    return v;
  }

  MatrixXd gather(const MatrixXd& src, const std::vector<Index>& idx) const {
    MatrixXd out(static_cast<Index>(idx.size()), src.cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
      out.row(static_cast<Index>(i)) = src.row(idx[i]);
    return out;
  }
};

std::vector<Index> sample_batch(Index n, Index batch, Rng& rng) {
  std::vector<Index> idx(static_cast<std::size_t>(batch));
  for (auto& v : idx) v = static_cast<Index>(rng() % static_cast<std::uint64_t>(n));
  return idx;
}

VectorXd clipped_log_behavior(const Mlp& behavior, const MatrixXd& x,
                              const VectorXi& actions, double floor) {
  const MatrixXd probs = softmax_rows(forward_eval(behavior, x).output);
  VectorXd out(x.rows());
  for (Index i = 0; i < x.rows(); ++i)
    out[i] = std::max(std::log(probs(i, actions[i])), floor);
  return out;
}

MatrixXd clipped_log_behavior_all(const Mlp& behavior, const MatrixXd& x,
                                  double floor) {
  const MatrixXd probs = softmax_rows(forward_eval(behavior, x).output);
  return probs.array().log().max(floor).matrix();
}

// Bellman target r + gamma (1 - done) E_{a' ~ pi}[Qbar(s', a') + bonus(s', a')].
VectorXd bellman_target(const MatrixXd& x2, const VectorXd& rewards,
                        const VectorXd& not_done, const Mlp& target_critic,
                        const Mlp& policy, Discount gamma,
                        const MatrixXd* bonus) {
  MatrixXd qbar = forward_eval(target_critic, x2).output;
  if (bonus) qbar += *bonus;
  const MatrixXd pi = softmax_rows(forward_eval(policy, x2).output);
  const VectorXd next_v = (qbar.array() * pi.array()).rowwise().sum();
  return rewards.array() + gamma.value() * not_done.array() * next_v.array();
}

struct CriticStep {
  CriticLossParts parts;
  double vib = 0.0;
  double dr3 = 0.0;
  double penalty = 0.0;
  double total = 0.0;
  double max_abs_q = 0.0;
};

// Core CQL/BRAC critic objective on a batch. alpha = 0 plus a bonus matrix
// gives the BRAC-v critic. Gradients cover the capacity regularizers too.
CriticStep critic_step(const DataView& view, const std::vector<Index>& batch,
                       const Mlp& critic, const Mlp& target_critic,
                       const Mlp& policy, double alpha, Discount gamma,
                       const RegularizerConfig& reg, const MatrixXd* bonus,
                       Rng& noise_rng, VectorXd* grad) {
  const Index b = static_cast<Index>(batch.size());
  const double inv_b = 1.0 / static_cast<double>(b);
  const MatrixXd xb = view.gather(view.x, batch);
  const MatrixXd x2b = view.gather(view.x2, batch);
  VectorXd rb(b), ndb(b);
  VectorXi ab(b);
  for (Index i = 0; i < b; ++i) {
    rb[i] = view.rewards[batch[static_cast<std::size_t>(i)]];
    ndb[i] = view.not_done[batch[static_cast<std::size_t>(i)]];
    ab[i] = view.actions[batch[static_cast<std::size_t>(i)]];
  }

  ForwardTrace trace = grad ? forward(critic, xb, true, noise_rng)
                            : forward_eval(critic, xb);
  const MatrixXd& q = trace.output;

  MatrixXd bonus_b;
  if (bonus) bonus_b = view.gather(*bonus, batch);
  const VectorXd y = bellman_target(x2b, rb, ndb, target_critic, policy, gamma,
                                    bonus ? &bonus_b : nullptr);

  VectorXd q_data(b), lse(b), resid(b);
  for (Index i = 0; i < b; ++i) {
    q_data[i] = q(i, ab[i]);
    lse[i] = log_sum_exp(q.row(i));
    resid[i] = q_data[i] - y[i];
  }

  CriticStep st;
  st.parts.td = 0.5 * inv_b * resid.squaredNorm();
  st.parts.reg = inv_b * (lse - q_data).sum();
  st.parts.loss = alpha * st.parts.reg + st.parts.td;
  st.total = st.parts.loss;
  st.max_abs_q = q.cwiseAbs().maxCoeff();
  if (reg.vib_beta > 0.0 && trace.vib_kl.size() > 0)
    st.vib = reg.vib_beta * inv_b * trace.vib_kl.sum();

  if (!grad) {
    // Loss-only path reports the add-on values where they are cheap; DR3 and
    // weight penalties are included only on the gradient path.
    st.total += st.vib;
    return st;
  }

  MatrixXd d_output = MatrixXd::Zero(b, q.cols());
  if (alpha != 0.0) d_output = alpha * inv_b * softmax_rows(q);
  for (Index i = 0; i < b; ++i) {
    d_output(i, ab[i]) -= alpha * inv_b;
    d_output(i, ab[i]) += inv_b * resid[i];
  }

  const double kl_weight =
      critic.spec.vib_enabled ? reg.vib_beta * inv_b : 0.0;

  MatrixXd d_features;
  VectorXd g;
  if (reg.dr3_beta > 0.0) {
    ForwardTrace trace2 = forward(critic, x2b, true, noise_rng);
    const Dr3BatchResult dd =
        dr3_penalty_batch(trace.features, trace2.features);
    st.dr3 = reg.dr3_beta * dd.value;
    d_features = reg.dr3_beta * dd.d_phi_s;
    g = backward(critic, trace, d_output, d_features, kl_weight);
    g += backward(critic, trace2, MatrixXd::Zero(b, q.cols()),
                  reg.dr3_beta * dd.d_phi_s2, 0.0);
  } else {
    g = backward(critic, trace, d_output, MatrixXd(), kl_weight);
  }

  if (reg.l1_rho > 0.0) {
    const PenaltyResult p = weight_penalty(critic, PenaltyKind::l1, reg.l1_rho);
    st.penalty += p.value;
    g += p.grad;
  }
  if (reg.l2_rho > 0.0) {
    const PenaltyResult p = weight_penalty(critic, PenaltyKind::l2, reg.l2_rho);
    st.penalty += p.value;
    g += p.grad;
  }
  st.total += st.vib + st.dr3 + st.penalty;
  *grad = std::move(g);
  return st;
}

// Policy objective shared by CQL and BRAC: maximize
// E_{a~pi}[values(s,a)] + tau * entropy(pi(.|s)) over the batch.
double policy_step(const MatrixXd& xb, const MatrixXd& values,
                   const Mlp& policy, double tau, Rng& noise_rng,
                   VectorXd* grad) {
  const Index b = xb.rows();
  const double inv_b = 1.0 / static_cast<double>(b);
  ForwardTrace trace =
      grad ? forward(policy, xb, true, noise_rng) : forward_eval(policy, xb);
  const MatrixXd pi = softmax_rows(trace.output);

  double objective = 0.0;
  MatrixXd d_logits = MatrixXd::Zero(b, pi.cols());
  for (Index i = 0; i < b; ++i) {
    double expect = 0.0;
    double entropy = 0.0;
    for (Index a = 0; a < pi.cols(); ++a) {
      expect += pi(i, a) * values(i, a);
      if (pi(i, a) > 0.0) entropy -= pi(i, a) * std::log(pi(i, a));
    }
    objective += expect + tau * entropy;
    if (grad) {
      for (Index a = 0; a < pi.cols(); ++a) {
        const double logp = pi(i, a) > 0.0 ? std::log(pi(i, a)) : 0.0;
        const double d = pi(i, a) * (values(i, a) - expect) -
                         tau * pi(i, a) * (logp + entropy);
        d_logits(i, a) = -inv_b * d;  // minimize the negated objective
      }
    }
  }
  if (grad) *grad = backward(policy, trace, d_logits);
  return -inv_b * objective;
}

struct EvalContext {
  std::vector<Index> subset;
  MatrixXd xs, x2s;
  VectorXi as;
  VectorXd rs, nds;
};

EvalContext make_eval_context(const DataView& view, Index cap, Rng& rng) {
  EvalContext ctx;
  if (cap <= 0 || view.n <= cap) {
    ctx.subset.resize(static_cast<std::size_t>(view.n));
    for (Index i = 0; i < view.n; ++i) ctx.subset[static_cast<std::size_t>(i)] = i;
  } else {
    ctx.subset = sample_batch(view.n, cap, rng);
  }
  const Index m = static_cast<Index>(ctx.subset.size());
  ctx.xs = view.gather(view.x, ctx.subset);
  ctx.x2s = view.gather(view.x2, ctx.subset);
  ctx.as.resize(m);
  ctx.rs.resize(m);
  ctx.nds.resize(m);
  for (Index i = 0; i < m; ++i) {
    ctx.as[i] = view.actions[ctx.subset[static_cast<std::size_t>(i)]];
    ctx.rs[i] = view.rewards[ctx.subset[static_cast<std::size_t>(i)]];
    ctx.nds[i] = view.not_done[ctx.subset[static_cast<std::size_t>(i)]];
  }
  return ctx;
}

struct TrainerState {
  Mlp critic, target, policy;
  std::optional<Mlp> behavior;
};

MetricRecord evaluate_metrics(const TrainTask& task, const EvalContext& ctx,
                              const TrainerState& st, const CqlConfig& cfg,
                              const BracConfig* brac, Index step) {
  MetricRecord rec;
  rec.step = step;
  const Index m = ctx.xs.rows();
  const double inv_m = 1.0 / static_cast<double>(m);

  const ForwardTrace trace = forward_eval(st.critic, ctx.xs);
  const MatrixXd& q = trace.output;
  VectorXd q_data(m), lse(m);
  for (Index i = 0; i < m; ++i) {
    q_data[i] = q(i, ctx.as[i]);
    lse[i] = log_sum_exp(q.row(i));
  }
  rec.avg_dataset_q = inv_m * q_data.sum();
  rec.cql_reg = inv_m * (lse - q_data).sum();

  MatrixXd bonus;
  const MatrixXd* bonus_ptr = nullptr;
  if (brac && st.behavior) {
    bonus = brac->beta_div *
            clipped_log_behavior_all(*st.behavior, ctx.x2s, brac->log_floor);
    bonus_ptr = &bonus;
  }
  const VectorXd y = bellman_target(ctx.x2s, ctx.rs, ctx.nds, st.target,
                                    st.policy, cfg.gamma, bonus_ptr);
  rec.td_error = inv_m * (q_data - y).squaredNorm();

  const MatrixXd pi = softmax_rows(forward_eval(st.policy, ctx.xs).output);
  double entropy = 0.0;
  for (Index i = 0; i < m; ++i)
    for (Index a = 0; a < pi.cols(); ++a)
      if (pi(i, a) > 0.0) entropy -= pi(i, a) * std::log(pi(i, a));
  rec.policy_entropy = inv_m * entropy;

  if (st.critic.spec.vib_enabled) rec.vib_kl = inv_m * trace.vib_kl.sum();
  if (cfg.reg.dr3_beta > 0.0) {
    const ForwardTrace t2 = forward_eval(st.critic, ctx.x2s);
    rec.dr3 = dr3_penalty_batch(trace.features, t2.features).value;
  }
  if (brac && st.behavior) {
    const VectorXd logb = clipped_log_behavior(*st.behavior, ctx.xs, ctx.as,
                                               brac->log_floor);
    rec.conservative_q =
        inv_m * (q_data.array() + brac->beta_div * logb.array()).sum();
  }

  rec.init_state_value = initial_state_value(st.critic, st.policy,
                                             task.features.table,
                                             task.initial_dist);
  if (cfg.record_eval_return && task.mdp) {
    rec.eval_return = exact_policy_return(
        *task.mdp, policy_table(st.policy, task.features.table));
  }

  if (!std::isfinite(rec.avg_dataset_q) || !std::isfinite(rec.td_error) ||
      !std::isfinite(rec.cql_reg))
    throw std::runtime_error("training aborted: non-finite metric at step " +
                             std::to_string(step));
  return rec;
}

TrainResult train_impl(const TrainTask& task, const CqlConfig& cfg,
                       const BracConfig* brac) {
  cfg.validate();
  task.data.validate();
  if (task.features.table.rows() < 1)
    throw std::invalid_argument("train: empty feature table");
  const Index n_actions = task.n_actions();
  const Index input_dim = task.features.dim();

  MlpSpec critic_spec;
  critic_spec.input_dim = input_dim;
  critic_spec.hidden_widths = cfg.critic_hidden;
  critic_spec.output_dim = n_actions;
  critic_spec.activation = cfg.activation;
  critic_spec.dropout_p = cfg.reg.dropout_p;
  critic_spec.vib_enabled = cfg.reg.vib_beta > 0.0;
  critic_spec.vib_dim = cfg.reg.vib_dim;

  MlpSpec policy_spec;
  policy_spec.input_dim = input_dim;
  policy_spec.hidden_widths = cfg.policy_hidden;
  policy_spec.output_dim = n_actions;
  policy_spec.activation = cfg.activation;

  TrainerState st;
  st.critic = Mlp::init(critic_spec, split_seed(cfg.seed, 10));
  st.policy = Mlp::init(policy_spec, split_seed(cfg.seed, 11));
  st.target = st.critic;

  TrainResult result;
  if (brac) {
    MlpSpec behavior_spec;
    behavior_spec.input_dim = input_dim;
    behavior_spec.hidden_widths = brac->behavior_hidden;
    behavior_spec.output_dim = n_actions;
    behavior_spec.activation = cfg.activation;
    behavior_spec.dropout_p = brac->behavior_dropout_p;
    const BehaviorFit fit =
        fit_behavior(task, behavior_spec, brac->behavior_fit_steps,
                     cfg.batch_size, cfg.adam, split_seed(cfg.seed, 12));
    st.behavior = fit.model;
  }

  const DataView view = DataView::build(task);
  Rng rng_batch = make_rng(cfg.seed, 20);
  Rng rng_critic = make_rng(cfg.seed, 21);
  Rng rng_policy = make_rng(cfg.seed, 22);
  Rng rng_eval = make_rng(cfg.seed, 24);
  const EvalContext eval_ctx = make_eval_context(view, cfg.eval_subset, rng_eval);

  MatrixXd brac_bonus;
  const MatrixXd* bonus_ptr = nullptr;
  if (brac && st.behavior) {
    brac_bonus = brac->beta_div *
                 clipped_log_behavior_all(*st.behavior, view.x2, brac->log_floor);
    bonus_ptr = &brac_bonus;
  }

  RunLog& log = result.log;
  log.algo = brac ? "brac" : "cql";
  log.config = brac ? brac->flat() : cfg.flat();
  log.config_hash = config_hash(log.config);
  log.capacity_tier = cfg.capacity_tier;
  log.dataset_mc_return = dataset_mc_return(task.data, cfg.gamma);
  log.gamma = cfg.gamma.value();
  log.effective_horizon = cfg.gamma.effective_horizon();

  const Index ckpt_period =
      cfg.checkpoint_period > 0 ? cfg.checkpoint_period : cfg.eval_period;
  AdamState critic_opt = AdamState::init(st.critic.n_params());
  AdamState policy_opt = AdamState::init(st.policy.n_params());
  const double alpha = brac ? 0.0 : cfg.alpha;
  const double tau = brac ? brac->entropy_alpha : cfg.entropy_weight;

  const auto record_at = [&](Index step, bool force_ckpt) {
    const MetricRecord rec =
        evaluate_metrics(task, eval_ctx, st, cfg, brac, step);
    log.records.push_back(rec);
    if (step % ckpt_period == 0 || force_ckpt)
      result.checkpoints.push_back({step, st.critic, st.policy, rec});
  };

  record_at(0, false);
  for (Index step = 1; step <= cfg.total_steps; ++step) {
    VectorXd cgrad;
    const CriticStep cs =
        critic_step(view, sample_batch(view.n, cfg.batch_size, rng_batch),
                    st.critic, st.target, st.policy, alpha, cfg.gamma, cfg.reg,
                    bonus_ptr, rng_critic, &cgrad);
    if (!std::isfinite(cs.total))
      throw std::runtime_error("training aborted: non-finite critic loss at step " +
                               std::to_string(step));
    optimizer_step(st.critic, cgrad, critic_opt, cfg.adam);

    if (step % cfg.actor_delay == 0) {
      const auto pbatch = sample_batch(view.n, cfg.batch_size, rng_batch);
      const MatrixXd xb = view.gather(view.x, pbatch);
      MatrixXd values = forward_eval(st.critic, xb).output;
      if (brac && st.behavior)
        values += brac->beta_div *
                  clipped_log_behavior_all(*st.behavior, xb, brac->log_floor);
      VectorXd pgrad;
      const double ploss = policy_step(xb, values, st.policy, tau, rng_policy,
                                       &pgrad);
      if (!std::isfinite(ploss))
        throw std::runtime_error(
            "training aborted: non-finite policy loss at step " +
            std::to_string(step));
      optimizer_step(st.policy, pgrad, policy_opt, cfg.adam);
    }

    if (step % cfg.target_update_period == 0) st.target = st.critic;

    const bool diverged = cs.max_abs_q > cfg.divergence_bound;
    const bool last = step == cfg.total_steps || diverged;
    if (step % cfg.eval_period == 0 || last) record_at(step, last);
    if (diverged) {
      log.diverged_at = step;
      break;
    }
  }

  result.critic = st.critic;
  result.policy = st.policy;
  result.behavior = st.behavior;
  return result;
}

}  // namespace

CriticLossParts cql_critic_loss(const TrainTask& task,
                                const std::vector<Index>& batch,
                                const Mlp& critic, const Mlp& target_critic,
                                const Mlp& policy, const CqlConfig& cfg,
                                Rng& noise_rng, VectorXd* grad) {
  const DataView view = DataView::build(task);
  return critic_step(view, batch, critic, target_critic, policy, cfg.alpha,
                     cfg.gamma, cfg.reg, nullptr, noise_rng, grad)
      .parts;
}

double cql_policy_loss(const TrainTask& task, const std::vector<Index>& batch,
                       const Mlp& critic, const Mlp& policy,
                       const CqlConfig& cfg, Rng& noise_rng, VectorXd* grad) {
  const DataView view = DataView::build(task);
  const MatrixXd xb = view.gather(view.x, batch);
  const MatrixXd values = forward_eval(critic, xb).output;
  return policy_step(xb, values, policy, cfg.entropy_weight, noise_rng, grad);
}

TrainResult train_cql(const TrainTask& task, const CqlConfig& cfg) {
  return train_impl(task, cfg, nullptr);
}

BehaviorFit fit_behavior(const TrainTask& task, const MlpSpec& spec,
                         Index steps, Index batch_size, const AdamConfig& adam,
                         std::uint64_t seed) {
  spec.validate();
  const DataView view = DataView::build(task);
  BehaviorFit fit;
  fit.model = Mlp::init(spec, split_seed(seed, 30));
  AdamState opt = AdamState::init(fit.model.n_params());
  Rng rng_batch = make_rng(seed, 31);
  Rng rng_noise = make_rng(seed, 32);

  const auto nll_and_grad = [&](const std::vector<Index>& idx, bool train,
                                VectorXd* grad) {
    const Index b = static_cast<Index>(idx.size());
    const double inv_b = 1.0 / static_cast<double>(b);
    const MatrixXd xb = view.gather(view.x, idx);
    ForwardTrace trace = train ? forward(fit.model, xb, true, rng_noise)
                               : forward_eval(fit.model, xb);
    const MatrixXd pi = softmax_rows(trace.output);
    double nll = 0.0;
    MatrixXd d_logits = MatrixXd::Zero(b, pi.cols());
    for (Index i = 0; i < b; ++i) {
      const Index a = view.actions[idx[static_cast<std::size_t>(i)]];
      nll -= std::log(std::max(pi(i, a), 1e-300));
      if (grad) {
        d_logits.row(i) = inv_b * pi.row(i);
        d_logits(i, a) -= inv_b;
      }
    }
    if (grad) *grad = backward(fit.model, trace, d_logits);
    return inv_b * nll;
  };

  for (Index step = 0; step < steps; ++step) {
    VectorXd grad;
    const double nll =
        nll_and_grad(sample_batch(view.n, batch_size, rng_batch), true, &grad);
    if (!std::isfinite(nll))
      throw std::runtime_error("fit_behavior: non-finite loss");
    optimizer_step(fit.model, grad, opt, adam);
  }

  std::vector<Index> all(static_cast<std::size_t>(view.n));
  for (Index i = 0; i < view.n; ++i) all[static_cast<std::size_t>(i)] = i;
  fit.final_nll = nll_and_grad(all, false, nullptr);
  return fit;
}

TrainResult train_brac(const TrainTask& task, const BracConfig& cfg) {
  cfg.validate();
  return train_impl(task, cfg.base, &cfg);
}

}  // namespace corl
