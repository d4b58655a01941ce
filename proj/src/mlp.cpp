#include "corl/mlp.hpp"

#include <cmath>
#include <stdexcept>

namespace corl {

namespace {

double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

MatrixXd activate(const MatrixXd& pre, Activation act) {
  if (act == Activation::relu) return pre.cwiseMax(0.0);
  return pre.array().tanh().matrix();
}

MatrixXd activate_grad(const MatrixXd& pre, Activation act) {
  if (act == Activation::relu)
    return (pre.array() > 0.0).cast<double>().matrix();
  return (1.0 - pre.array().tanh().square()).matrix();
}

}  // namespace

void MlpSpec::validate() const {
  if (input_dim <= 0 || output_dim <= 0)
    throw std::invalid_argument("MlpSpec: non-positive dimension");
  for (Index w : hidden_widths)
    if (w < 1) throw std::invalid_argument("MlpSpec: hidden width < 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0))
    throw std::invalid_argument("MlpSpec: dropout_p must lie in [0, 1)");
  if (vib_enabled) {
    if (vib_dim <= 0) throw std::invalid_argument("MlpSpec: vib_dim <= 0");
    if (hidden_widths.empty())
      throw std::invalid_argument("MlpSpec: VIB head requires a hidden layer");
  }
}

Index MlpSpec::feature_dim() const {
  if (vib_enabled) return vib_dim;
  return hidden_widths.empty() ? input_dim : hidden_widths.back();
}

Mlp Mlp::init(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  Mlp net;
  net.spec = spec;
  Rng rng = make_rng(seed, 3);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto scaled_normal = [&](Index rows, Index cols) {
    MatrixXd w(rows, cols);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) w(i, j) = scale * normal(rng);
    return w;
  };

  Index in = spec.input_dim;
  for (Index width : spec.hidden_widths) {
    net.hidden.push_back({scaled_normal(width, in), VectorXd::Zero(width)});
    in = width;
  }
  if (spec.vib_enabled) {
    net.vib_mean = {scaled_normal(spec.vib_dim, in), VectorXd::Zero(spec.vib_dim)};
    net.vib_logvar = {MatrixXd::Zero(spec.vib_dim, in),
                      VectorXd::Zero(spec.vib_dim)};
  }
  net.out = {MatrixXd::Zero(spec.output_dim, spec.feature_dim()),
             VectorXd::Zero(spec.output_dim)};
  return net;
}

namespace {

template <typename NetT, typename F>
void visit_layers(NetT& net, F&& f) {
  for (auto& layer : net.hidden) f(layer);
  if (net.spec.vib_enabled) {
    f(net.vib_mean);
    f(net.vib_logvar);
  }
  f(net.out);
}

}  // namespace

Index Mlp::n_params() const {
  Index n = 0;
  visit_layers(*this, [&](const LayerParams& l) { n += l.w.size() + l.b.size(); });
  return n;
}

VectorXd Mlp::flat_params() const {
  VectorXd theta(n_params());
  Index off = 0;
  visit_layers(*this, [&](const LayerParams& l) {
    theta.segment(off, l.w.size()) =
        Eigen::Map<const VectorXd>(l.w.data(), l.w.size());
    off += l.w.size();
    theta.segment(off, l.b.size()) = l.b;
    off += l.b.size();
  });
  return theta;
}

void Mlp::set_flat_params(const VectorXd& theta) {
  if (theta.size() != n_params())
    throw std::invalid_argument("set_flat_params: size mismatch");
  Index off = 0;
  visit_layers(*this, [&](LayerParams& l) {
    Eigen::Map<VectorXd>(l.w.data(), l.w.size()) =
        theta.segment(off, l.w.size());
    off += l.w.size();
    l.b = theta.segment(off, l.b.size());
    off += l.b.size();
  });
}

ForwardTrace forward(const Mlp& net, const MatrixXd& input, bool train_mode,
                     Rng& rng) {
  if (input.cols() != net.spec.input_dim)
    throw std::invalid_argument("forward: input dimension mismatch");
  const Index batch = input.rows();
  const bool use_dropout = train_mode && net.spec.dropout_p > 0.0;

  ForwardTrace tr;
  tr.train_mode = train_mode;
  tr.input = input;

  MatrixXd h = input;
  for (std::size_t l = 0; l < net.hidden.size(); ++l) {
    const auto& layer = net.hidden[l];
    MatrixXd pre = (h * layer.w.transpose()).rowwise() + layer.b.transpose();
    MatrixXd post = activate(pre, net.spec.activation);
    if (use_dropout) {
      ArrayXXd scale(batch, post.cols());
      const double keep = 1.0 - net.spec.dropout_p;
      for (Index i = 0; i < batch; ++i)
        for (Index j = 0; j < post.cols(); ++j)
          scale(i, j) = uniform01(rng) < keep ? 1.0 / keep : 0.0;
      post.array() *= scale;
      tr.dropout_scale.push_back(std::move(scale));
    }
    tr.pre.push_back(std::move(pre));
    tr.post.push_back(post);
    h = std::move(post);
  }

  if (net.spec.vib_enabled) {
    tr.vib_mean_out =
        (h * net.vib_mean.w.transpose()).rowwise() + net.vib_mean.b.transpose();
    tr.vib_logvar_out = (h * net.vib_logvar.w.transpose()).rowwise() +
                        net.vib_logvar.b.transpose();
    tr.vib_kl = 0.5 * (tr.vib_logvar_out.array().exp() +
                       tr.vib_mean_out.array().square() - 1.0 -
                       tr.vib_logvar_out.array())
                          .rowwise()
                          .sum();
    if (train_mode) {
      std::normal_distribution<double> normal(0.0, 1.0);
      tr.vib_eps.resize(batch, net.spec.vib_dim);
      for (Index i = 0; i < batch; ++i)
        for (Index j = 0; j < net.spec.vib_dim; ++j)
          tr.vib_eps(i, j) = normal(rng);
      tr.features =
          tr.vib_mean_out.array() +
          (0.5 * tr.vib_logvar_out.array()).exp() * tr.vib_eps.array();
    } else {
      tr.features = tr.vib_mean_out;
    }
  } else {
    tr.features = h;
  }

  tr.output =
      (tr.features * net.out.w.transpose()).rowwise() + net.out.b.transpose();
  return tr;
}

ForwardTrace forward_eval(const Mlp& net, const MatrixXd& input) {
  Rng unused(0);
  return forward(net, input, false, unused);
}

VectorXd backward(const Mlp& net, const ForwardTrace& trace,
                  const MatrixXd& d_output, const MatrixXd& d_features,
                  double kl_weight) {
  if (!trace.train_mode)
    throw std::invalid_argument("backward: trace was not recorded in train mode");
  if (trace.pre.size() != net.hidden.size() ||
      trace.input.cols() != net.spec.input_dim ||
      d_output.rows() != trace.output.rows() ||
      d_output.cols() != trace.output.cols())
    throw std::invalid_argument("backward: stale or mismatched recording");
  const bool use_dropout = net.spec.dropout_p > 0.0;
  if (use_dropout && trace.dropout_scale.size() != net.hidden.size())
    throw std::invalid_argument("backward: stale or mismatched recording");

  VectorXd grad = VectorXd::Zero(net.n_params());
  // Flat layout offsets mirror flat_params().
  std::vector<std::pair<Index, Index>> spans;  // (w offset, b offset)
  {
    Index off = 0;
    visit_layers(net, [&](const LayerParams& l) {
      spans.emplace_back(off, off + l.w.size());
      off += l.w.size() + l.b.size();
    });
  }
  std::size_t span_idx = spans.size();

  auto write_layer = [&](std::size_t idx, const LayerParams& layer,
                         const MatrixXd& d_pre, const MatrixXd& layer_in) {
    Eigen::Map<MatrixXd>(grad.data() + spans[idx].first, layer.w.rows(),
                         layer.w.cols()) += d_pre.transpose() * layer_in;
    Eigen::Map<VectorXd>(grad.data() + spans[idx].second, layer.b.size()) +=
        d_pre.colwise().sum().transpose();
  };

  // Output layer.
  --span_idx;
  write_layer(span_idx, net.out, d_output, trace.features);
  MatrixXd d_phi = d_output * net.out.w;
  if (d_features.size() > 0) {
    if (d_features.rows() != trace.features.rows() ||
        d_features.cols() != trace.features.cols())
      throw std::invalid_argument("backward: feature gradient shape mismatch");
    d_phi += d_features;
  }

  MatrixXd d_h;  // gradient flowing into the last hidden activation
  if (net.spec.vib_enabled) {
    MatrixXd d_mean = d_phi;
    MatrixXd d_logvar = (d_phi.array() * trace.vib_eps.array() * 0.5 *
                         (0.5 * trace.vib_logvar_out.array()).exp())
                            .matrix();
    if (kl_weight != 0.0) {
      d_mean += kl_weight * trace.vib_mean_out;
      d_logvar.array() +=
          kl_weight * 0.5 * (trace.vib_logvar_out.array().exp() - 1.0);
    }
    const MatrixXd& h_last =
        net.hidden.empty() ? trace.input : trace.post.back();
    --span_idx;
    write_layer(span_idx, net.vib_logvar, d_logvar, h_last);
    --span_idx;
    write_layer(span_idx, net.vib_mean, d_mean, h_last);
    d_h = d_mean * net.vib_mean.w + d_logvar * net.vib_logvar.w;
  } else {
    d_h = d_phi;
  }

  for (std::size_t l = net.hidden.size(); l-- > 0;) {
    if (use_dropout) d_h.array() *= trace.dropout_scale[l];
    MatrixXd d_pre =
        d_h.cwiseProduct(activate_grad(trace.pre[l], net.spec.activation));
    const MatrixXd& layer_in = l == 0 ? trace.input : trace.post[l - 1];
    --span_idx;
    write_layer(span_idx, net.hidden[l], d_pre, layer_in);
    d_h = d_pre * net.hidden[l].w;
  }
  return grad;
}

Dr3Result dr3_penalty(const VectorXd& phi_s, const VectorXd& phi_s2) {
  if (phi_s.size() != phi_s2.size())
    throw std::invalid_argument("dr3_penalty: dimension mismatch");
  Dr3Result res;
  const double dot = phi_s.dot(phi_s2);
  res.value = std::abs(dot);
  const double sgn = dot > 0.0 ? 1.0 : (dot < 0.0 ? -1.0 : 0.0);
  res.d_phi_s = sgn * phi_s2;
  res.d_phi_s2 = sgn * phi_s;
  return res;
}

Dr3BatchResult dr3_penalty_batch(const MatrixXd& phi_s,
                                 const MatrixXd& phi_s2) {
  if (phi_s.rows() != phi_s2.rows() || phi_s.cols() != phi_s2.cols())
    throw std::invalid_argument("dr3_penalty_batch: shape mismatch");
  Dr3BatchResult res;
  const Index batch = phi_s.rows();
  res.d_phi_s = MatrixXd::Zero(batch, phi_s.cols());
  res.d_phi_s2 = MatrixXd::Zero(batch, phi_s.cols());
  const double inv_b = 1.0 / static_cast<double>(batch);
  for (Index i = 0; i < batch; ++i) {
    const double dot = phi_s.row(i).dot(phi_s2.row(i));
    res.value += std::abs(dot);
    const double sgn = dot > 0.0 ? 1.0 : (dot < 0.0 ? -1.0 : 0.0);
    res.d_phi_s.row(i) = inv_b * sgn * phi_s2.row(i);
    res.d_phi_s2.row(i) = inv_b * sgn * phi_s.row(i);
  }
  res.value *= inv_b;
  return res;
}

PenaltyResult weight_penalty(const Mlp& net, PenaltyKind kind, double rho) {
  if (rho < 0.0) throw std::invalid_argument("weight_penalty: rho < 0");
  PenaltyResult res;
  const VectorXd theta = net.flat_params();
  if (kind == PenaltyKind::l1) {
    res.value = rho * theta.array().abs().sum();
    res.grad = rho * theta.array().sign().matrix();
  } else {
    res.value = rho * theta.squaredNorm();
    res.grad = 2.0 * rho * theta;
  }
  return res;
}

AdamState AdamState::init(Index n_params) {
  AdamState st;
  st.m = VectorXd::Zero(n_params);
  st.v = VectorXd::Zero(n_params);
  st.t = 0;
  return st;
}

void optimizer_step(Mlp& net, const VectorXd& grad, AdamState& state,
                    const AdamConfig& cfg) {
  if (grad.size() != net.n_params() || state.m.size() != grad.size())
    throw std::invalid_argument("optimizer_step: shape mismatch");
  state.t += 1;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
  state.v =
      (cfg.beta2 * state.v.array() + (1.0 - cfg.beta2) * grad.array().square())
          .matrix();
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  VectorXd theta = net.flat_params();
  theta.array() -= cfg.lr * (state.m.array() / bc1) /
                   ((state.v.array() / bc2).sqrt() + cfg.eps);
  net.set_flat_params(theta);
}

}  // namespace corl
