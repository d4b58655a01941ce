#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

#include "corl/types.hpp"

namespace corl {

// Finite discrete distribution over {0, ..., n-1}.
struct Categorical {
  VectorXd probs;

  explicit Categorical(VectorXd p) : probs(std::move(p)) { validate(); }

  void validate() const {
    if (probs.size() == 0)
      throw std::invalid_argument("Categorical: empty probability vector");
    if ((probs.array() < 0.0).any())
      throw std::invalid_argument("Categorical: negative probability");
    if (std::abs(probs.sum() - 1.0) > 1e-12)
      throw std::invalid_argument("Categorical: probabilities must sum to 1");
  }
};

// Diagonal Gaussian in feature space. Variances are stored plainly; callers
// that optimize them should parameterize by log-variance (see mlp VIB head).
struct DiagGaussian {
  VectorXd mean;
  VectorXd var;

  DiagGaussian(VectorXd m, VectorXd v) : mean(std::move(m)), var(std::move(v)) {
    if (mean.size() != var.size())
      throw std::invalid_argument("DiagGaussian: mean/var dimension mismatch");
    if ((var.array() <= 0.0).any())
      throw std::invalid_argument("DiagGaussian: variances must be positive");
  }
};

// Chi-square-style divergence sum_x p(x) (p(x)/q(x) - 1).
// Requires support(p) within support(q); q(x)=0 with p(x)>0 is an error so
// callers never propagate infinities silently.
inline double d_cql(const Categorical& p, const Categorical& q) {
  if (p.probs.size() != q.probs.size())
    throw std::invalid_argument("d_cql: dimension mismatch");
  double acc = 0.0;
  for (Index i = 0; i < p.probs.size(); ++i) {
    const double pi = p.probs[i];
    if (pi == 0.0) continue;
    const double qi = q.probs[i];
    if (qi == 0.0)
      throw std::domain_error("d_cql: p has mass outside the support of q");
    acc += pi * (pi / qi - 1.0);
  }
  return acc;
}

inline double kl_categorical(const Categorical& p, const Categorical& q) {
  if (p.probs.size() != q.probs.size())
    throw std::invalid_argument("kl_categorical: dimension mismatch");
  double acc = 0.0;
  for (Index i = 0; i < p.probs.size(); ++i) {
    const double pi = p.probs[i];
    if (pi == 0.0) continue;
    const double qi = q.probs[i];
    if (qi == 0.0)
      throw std::domain_error(
          "kl_categorical: p has mass outside the support of q");
    acc += pi * std::log(pi / qi);
  }
  return acc;
}

// KL(N(mean, diag(var)) || N(0, I)) = 1/2 sum_i (var_i + mean_i^2 - 1 - ln var_i).
inline double kl_gauss_to_std(const DiagGaussian& g) {
  return 0.5 * (g.var.array() + g.mean.array().square() - 1.0 -
                g.var.array().log())
                   .sum();
}

// Gradient of kl_gauss_to_std with respect to (mean, log var). The log-var
// parameterization keeps the optimization unconstrained.
struct GaussKlGrad {
  VectorXd d_mean;
  VectorXd d_logvar;
};

inline GaussKlGrad kl_gauss_to_std_grad(const DiagGaussian& g) {
  GaussKlGrad out;
  out.d_mean = g.mean;
  out.d_logvar = (0.5 * (g.var.array() - 1.0)).matrix();
  return out;
}

// Max-shifted log sum exp; finite for any finite inputs.
template <typename Derived>
double log_sum_exp(const Eigen::DenseBase<Derived>& values) {
  if (values.size() == 0)
    throw std::invalid_argument("log_sum_exp: empty input");
  const double m = values.derived().maxCoeff();
  if (!std::isfinite(m))
    throw std::invalid_argument("log_sum_exp: non-finite input");
  double acc = 0.0;
  for (Index i = 0; i < values.size(); ++i)
    acc += std::exp(values.derived()(i) - m);
  return m + std::log(acc);
}

}  // namespace corl
