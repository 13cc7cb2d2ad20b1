#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tdlab/rng.hpp"

namespace tdlab {

// ---------------------------------------------------------------------------
// Activations (Lipschitz and smooth; ReLU is excluded by construction)
// ---------------------------------------------------------------------------

enum class ActivationKind { Elu, Gelu, Sigmoid };

inline double activation_value(ActivationKind kind, double y) {
  switch (kind) {
    case ActivationKind::Elu:
      return y > 0.0 ? y : std::expm1(y);
    case ActivationKind::Gelu: {
      // Exact Gaussian-CDF form, not the tanh approximation.
      return 0.5 * y * (1.0 + std::erf(y * M_SQRT1_2));
    }
    case ActivationKind::Sigmoid:
      return 1.0 / (1.0 + std::exp(-y));
  }
  return 0.0;
}

inline double activation_deriv(ActivationKind kind, double y) {
  switch (kind) {
    case ActivationKind::Elu:
      return y > 0.0 ? 1.0 : std::exp(y);
    case ActivationKind::Gelu: {
      const double cdf = 0.5 * (1.0 + std::erf(y * M_SQRT1_2));
      const double pdf = std::exp(-0.5 * y * y) / std::sqrt(2.0 * M_PI);
      return cdf + y * pdf;
    }
    case ActivationKind::Sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-y));
      return s * (1.0 - s);
    }
  }
  return 0.0;
}

/// Activation with its Lipschitz constant L1 = sup|sigma'| and smoothness
/// constant L2 = sup|sigma''| (suprema rounded up in the last digit).
struct Activation {
  ActivationKind kind = ActivationKind::Elu;

  double value(double y) const { return activation_value(kind, y); }
  double deriv(double y) const { return activation_deriv(kind, y); }

  double lipschitz() const {
    switch (kind) {
      case ActivationKind::Elu: return 1.0;
      case ActivationKind::Gelu: return 1.1290;  // sup at y = sqrt(2)
      case ActivationKind::Sigmoid: return 0.25;
    }
    return 0.0;
  }
  double smoothness() const {
    switch (kind) {
      case ActivationKind::Elu: return 1.0;
      case ActivationKind::Gelu: return 0.7979;  // 2*phi(0)
      case ActivationKind::Sigmoid: return 0.0963;  // 1/(6*sqrt(3))
    }
    return 0.0;
  }

  std::string name() const {
    switch (kind) {
      case ActivationKind::Elu: return "elu";
      case ActivationKind::Gelu: return "gelu";
      case ActivationKind::Sigmoid: return "sigmoid";
    }
    return "?";
  }

  static Activation elu() { return {ActivationKind::Elu}; }
  static Activation gelu() { return {ActivationKind::Gelu}; }
  static Activation sigmoid() { return {ActivationKind::Sigmoid}; }
  static Activation from_name(const std::string& name) {
    if (name == "elu") return elu();
    if (name == "gelu") return gelu();
    if (name == "sigmoid") return sigmoid();
    throw std::invalid_argument("Activation: unknown name '" + name + "'");
  }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// L-layer Q network weights held as one flat vector theta. Layers are
/// stacked in order with each weight matrix vectorized column-major, so
/// flatten/unflatten is the identity on the storage. The output sign vector b
/// is frozen at initialization and is not part of theta.
///
/// Layer layout: W_1 is width x input_dim, W_2..W_L are width x width.
/// Forward recursion (unit-norm inputs assumed):
///   h_1 = sigma(W_1 x),  h_l = sigma(W_l h_{l-1} / sqrt(m))  for l >= 2,
///   Q   = b^T h_L / sqrt(m).
/// The 1/sqrt(m) factors sit where they keep every pre-activation entry O(1)
/// at the N(0,1) initialization; with L = 1 this is exactly the two-layer
/// form Q = (1/sqrt(m)) sum_i b_i sigma(w_i^T x).
struct NetworkParams {
  int depth = 0;      // L
  int width = 0;      // m
  int input_dim = 0;  // d
  Eigen::VectorXd theta;
  Eigen::VectorXd sign_out;  // b, entries exactly +-1

  long long num_params() const {
    return static_cast<long long>(width) * input_dim +
           static_cast<long long>(depth - 1) * width * width;
  }

  long long layer_offset(int layer) const {
    if (layer == 0) return 0;
    return static_cast<long long>(width) * input_dim +
           static_cast<long long>(layer - 1) * width * width;
  }
  int layer_cols(int layer) const { return layer == 0 ? input_dim : width; }

  Eigen::Map<const Eigen::MatrixXd> weight(int layer) const {
    return {theta.data() + layer_offset(layer), width, layer_cols(layer)};
  }
  Eigen::Map<Eigen::MatrixXd> weight(int layer) {
    return {theta.data() + layer_offset(layer), width, layer_cols(layer)};
  }

  /// Copy with a replacement flat parameter vector.
  NetworkParams with_theta(Eigen::VectorXd new_theta) const {
    if (new_theta.size() != theta.size())
      throw std::invalid_argument("NetworkParams: replacement theta has wrong length");
    NetworkParams out = *this;
    out.theta = std::move(new_theta);
    return out;
  }
};

/// Euclidean ball S_omega around the initialization; training iterates are
/// projected onto it.
struct BallConstraint {
  Eigen::VectorXd center;
  double radius = 0.0;

  void validate() const {
    if (radius < 0.0) throw std::invalid_argument("BallConstraint: radius must be >= 0");
  }
};

/// Weights entrywise N(0,1), b uniform over {-1,+1}; deterministic per seed.
inline NetworkParams init_params(int depth, int width, int input_dim, std::uint64_t seed) {
  if (depth < 1 || width < 1 || input_dim < 1)
    throw std::invalid_argument("init_params: depth, width and input_dim must be >= 1");
  NetworkParams params;
  params.depth = depth;
  params.width = width;
  params.input_dim = input_dim;
  params.theta.resize(params.num_params());
  params.sign_out.resize(width);
  Rng rng(seed);
  for (long long i = 0; i < params.theta.size(); ++i) params.theta(i) = rng.normal();
  for (int i = 0; i < width; ++i) params.sign_out(i) = rng.sign();
  return params;
}

inline BallConstraint make_ball(const NetworkParams& params, double omega) {
  if (omega <= 0.0) throw std::invalid_argument("make_ball: omega must be positive");
  return BallConstraint{params.theta, omega};
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Forward pass intermediates needed by the backward pass: layer inputs
/// x^{(0)}..x^{(L-1)} and pre-activations z_1..z_L.
struct ForwardCache {
  std::vector<Eigen::VectorXd> inputs;
  std::vector<Eigen::VectorXd> preacts;
  double q = 0.0;
};

inline void forward_cached(const NetworkParams& params, const Activation& act,
                           const Eigen::VectorXd& x, ForwardCache& cache) {
  if (x.size() != params.input_dim)
    throw std::invalid_argument("forward: feature dimension " + std::to_string(x.size()) +
                                " != network input_dim " + std::to_string(params.input_dim));
  const int L = params.depth;
  const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(params.width));
  cache.inputs.resize(L);
  cache.preacts.resize(L);
  cache.inputs[0] = x;
  for (int l = 0; l < L; ++l) {
    Eigen::VectorXd& z = cache.preacts[l];
    z.noalias() = params.weight(l) * cache.inputs[l];
    if (l > 0) z *= inv_sqrt_m;
    if (l + 1 < L) {
      Eigen::VectorXd& h = cache.inputs[l + 1];
      h.resize(z.size());
      for (int i = 0; i < z.size(); ++i) h(i) = act.value(z(i));
    }
  }
  const Eigen::VectorXd& z_last = cache.preacts[L - 1];
  double q = 0.0;
  for (int i = 0; i < params.width; ++i) q += params.sign_out(i) * act.value(z_last(i));
  cache.q = q * inv_sqrt_m;
}

inline double forward(const NetworkParams& params, const Activation& act,
                      const Eigen::VectorXd& x) {
  ForwardCache cache;
  forward_cached(params, act, x, cache);
  return cache.q;
}

/// Exact reverse-mode gradient of Q w.r.t. the flat theta, written into
/// `grad` (resized as needed). Returns Q. Layout matches NetworkParams.
inline double grad_theta_into(const NetworkParams& params, const Activation& act,
                              const Eigen::VectorXd& x, ForwardCache& cache,
                              Eigen::VectorXd& grad) {
  forward_cached(params, act, x, cache);
  const int L = params.depth;
  const int m = params.width;
  const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(m));
  grad.resize(params.num_params());

  // d Q / d h_L = b / sqrt(m)
  Eigen::VectorXd dh = params.sign_out * inv_sqrt_m;
  Eigen::VectorXd dz(m);
  for (int l = L - 1; l >= 0; --l) {
    const Eigen::VectorXd& z = cache.preacts[l];
    for (int i = 0; i < m; ++i) dz(i) = dh(i) * act.deriv(z(i));
    const double scale = l > 0 ? inv_sqrt_m : 1.0;  // z_l = scale * W_l h_{l-1}
    Eigen::Map<Eigen::MatrixXd> g(grad.data() + params.layer_offset(l), m, params.layer_cols(l));
    g.noalias() = (scale * dz) * cache.inputs[l].transpose();
    if (l > 0) dh.noalias() = params.weight(l).transpose() * (scale * dz);
  }
  return cache.q;
}

inline Eigen::VectorXd grad_theta(const NetworkParams& params, const Activation& act,
                                  const Eigen::VectorXd& x) {
  ForwardCache cache;
  Eigen::VectorXd grad;
  grad_theta_into(params, act, x, cache, grad);
  return grad;
}

/// Local linearization at the initialization:
/// Qhat(x; theta) = Q(x; theta0) + <grad Q(x; theta0), theta - theta0>.
inline double linearized_q(const NetworkParams& params_at_init, const Activation& act,
                           const Eigen::VectorXd& theta, const Eigen::VectorXd& x) {
  if (theta.size() != params_at_init.theta.size())
    throw std::invalid_argument("linearized_q: theta has wrong length");
  ForwardCache cache;
  Eigen::VectorXd grad;
  const double q0 = grad_theta_into(params_at_init, act, x, cache, grad);
  if (theta.data() == params_at_init.theta.data()) return q0;
  return q0 + grad.dot(theta - params_at_init.theta);
}

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

/// Euclidean projection onto the ball. Points within the radius (up to a few
/// ulps, so projecting twice is bitwise stable) are returned unchanged.
inline Eigen::VectorXd project_ball(const BallConstraint& ball, const Eigen::VectorXd& theta) {
  if (theta.size() != ball.center.size())
    throw std::invalid_argument("project_ball: theta has wrong length");
  const double dist = (theta - ball.center).norm();
  if (dist <= ball.radius * (1.0 + 4.0 * std::numeric_limits<double>::epsilon())) return theta;
  return ball.center + (ball.radius / dist) * (theta - ball.center);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointMagic = 0x31544E51;  // "QNT1" on disk

/// Flat binary checkpoint: magic, L, m, d as little-endian 32-bit integers,
/// then theta and b as little-endian 64-bit floats.
inline void save_checkpoint(const std::string& path, const NetworkParams& params) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint format assumes a little-endian host");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  const std::uint32_t header[4] = {kCheckpointMagic, static_cast<std::uint32_t>(params.depth),
                                   static_cast<std::uint32_t>(params.width),
                                   static_cast<std::uint32_t>(params.input_dim)};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(params.theta.data()),
            static_cast<std::streamsize>(params.theta.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(params.sign_out.data()),
            static_cast<std::streamsize>(params.sign_out.size() * sizeof(double)));
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline NetworkParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::uint32_t header[4];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in || header[0] != kCheckpointMagic)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  NetworkParams params;
  params.depth = static_cast<int>(header[1]);
  params.width = static_cast<int>(header[2]);
  params.input_dim = static_cast<int>(header[3]);
  if (params.depth < 1 || params.width < 1 || params.input_dim < 1)
    throw std::runtime_error("load_checkpoint: corrupt header in " + path);
  params.theta.resize(params.num_params());
  params.sign_out.resize(params.width);
  in.read(reinterpret_cast<char*>(params.theta.data()),
          static_cast<std::streamsize>(params.theta.size() * sizeof(double)));
  in.read(reinterpret_cast<char*>(params.sign_out.data()),
          static_cast<std::streamsize>(params.sign_out.size() * sizeof(double)));
  if (!in) throw std::runtime_error("load_checkpoint: truncated file " + path);
  return params;
}

}  // namespace tdlab
