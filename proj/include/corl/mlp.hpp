#pragma once

#include <cstdint>
#include <vector>

#include "corl/types.hpp"

namespace corl {

enum class Activation { relu, tanh };

// Architecture description. Capacity is controlled by hidden widths/depth;
// the optional VIB head replaces the penultimate features by a sampled
// Gaussian code of dimension vib_dim.
struct MlpSpec {
  Index input_dim = 0;
  std::vector<Index> hidden_widths;
  Index output_dim = 0;
  Activation activation = Activation::relu;
  double dropout_p = 0.0;
  bool vib_enabled = false;
  Index vib_dim = 0;

  void validate() const;
  Index feature_dim() const;
  bool operator==(const MlpSpec&) const = default;
};

struct LayerParams {
  MatrixXd w;  // (out, in); layer computes x * w^T + b
  VectorXd b;
};

// Multilayer perceptron with explicit forward/backward. Parameters are
// addressable both structurally and as one flat vector (layout: hidden
// layers in order, then VIB heads, then the output layer; w before b).
struct Mlp {
  MlpSpec spec;
  std::vector<LayerParams> hidden;
  LayerParams vib_mean;    // last hidden width -> vib_dim
  LayerParams vib_logvar;  // last hidden width -> vib_dim
  LayerParams out;         // feature_dim -> output_dim

  // Hidden and VIB-mean weights are scaled-normal; the output layer and the
  // log-variance head start at zero, so a fresh net outputs its biases and a
  // fresh VIB code has unit variance.
  static Mlp init(const MlpSpec& spec, std::uint64_t seed);

  Index n_params() const;
  VectorXd flat_params() const;
  void set_flat_params(const VectorXd& theta);
};

// Everything recorded during one forward pass; backward replays it exactly.
struct ForwardTrace {
  bool train_mode = false;
  MatrixXd input;                       // (B, in)
  std::vector<MatrixXd> pre;            // pre-activations per hidden layer
  std::vector<MatrixXd> post;           // post-activation, after dropout
  std::vector<ArrayXXd> dropout_scale;  // 0 or 1/(1-p); empty when unused
  MatrixXd vib_mean_out;                // (B, vib_dim)
  MatrixXd vib_logvar_out;
  MatrixXd vib_eps;                     // recorded reparameterization noise
  VectorXd vib_kl;                      // per-sample KL to N(0, I)
  MatrixXd features;                    // phi: sampled (train) or mean (eval)
  MatrixXd output;                      // (B, out_dim)
};

// Train mode records dropout masks and VIB noise drawn from `rng`; eval mode
// is deterministic (dropout off, VIB uses the mean head).
ForwardTrace forward(const Mlp& net, const MatrixXd& input, bool train_mode,
                     Rng& rng);
ForwardTrace forward_eval(const Mlp& net, const MatrixXd& input);

// Gradient of L = <d_output, output> + <d_features, features>
//               + kl_weight * sum_i KL_i
// with respect to the flat parameter vector, replaying the recorded pass.
// d_features may be empty; kl_weight is ignored for non-VIB nets.
VectorXd backward(const Mlp& net, const ForwardTrace& trace,
                  const MatrixXd& d_output,
                  const MatrixXd& d_features = MatrixXd(),
                  double kl_weight = 0.0);

// |phi(s)^T phi(s')| with subgradient 0 at exactly 0.
struct Dr3Result {
  double value = 0.0;
  VectorXd d_phi_s;
  VectorXd d_phi_s2;
};
Dr3Result dr3_penalty(const VectorXd& phi_s, const VectorXd& phi_s2);

// Batch mean of |phi(s_i)^T phi(s'_i)| over paired feature rows.
struct Dr3BatchResult {
  double value = 0.0;
  MatrixXd d_phi_s;   // (B, d), already scaled by 1/B
  MatrixXd d_phi_s2;  // (B, d)
};
Dr3BatchResult dr3_penalty_batch(const MatrixXd& phi_s, const MatrixXd& phi_s2);

enum class PenaltyKind { l1, l2 };

// rho * ||theta||_1 or rho * ||theta||_2^2 over all parameters.
struct PenaltyResult {
  double value = 0.0;
  VectorXd grad;
};
PenaltyResult weight_penalty(const Mlp& net, PenaltyKind kind, double rho);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  VectorXd m;
  VectorXd v;
  long t = 0;

  static AdamState init(Index n_params);
};

// Bias-corrected adaptive-moment update, applied in place.
void optimizer_step(Mlp& net, const VectorXd& grad, AdamState& state,
                    const AdamConfig& cfg);

}  // namespace corl
