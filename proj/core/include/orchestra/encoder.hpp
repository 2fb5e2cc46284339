#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "orchestra/matrix.hpp"
#include "orchestra/rng.hpp"

namespace orchestra {

struct DenseLayer {
  DenseMatrix weight;  // d_out x d_in
  std::vector<double> bias;

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Architecture of the MLP encoder: input -> hidden... -> rep_dim, tanh on
/// hidden layers, L2-normalized output.
struct EncoderShape {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t rep_dim = 16;
  /// Std of the rotation head entries at init; 0 means 1/sqrt(rep_dim).
  double rot_head_std = 0.0;
};

/// MLP weights plus the rotation-prediction head (rep_dim x 4).
struct EncoderParams {
  std::vector<DenseLayer> layers;
  DenseMatrix rot_head;

  std::size_t input_dim() const { return layers.front().weight.cols(); }
  std::size_t rep_dim() const { return layers.back().weight.rows(); }
  std::size_t num_params() const;

  /// Throws ShapeError unless layer dims chain and the head is rep_dim x 4.
  void validate() const;

  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

/// Same layout as EncoderParams; a separate type so parameters and their
/// derivatives cannot be swapped by accident.
struct Gradients {
  std::vector<DenseLayer> layers;
  DenseMatrix rot_head;

  static Gradients zeros_like(const EncoderParams& params);
  double max_abs() const;
  Gradients& operator+=(const Gradients& other);
};

inline constexpr std::size_t kNumRotations = 4;

/// Seeded LeCun-normal init, zero biases; rotation head ~ N(0, rot_head_std^2).
EncoderParams init_encoder(const EncoderShape& shape, Rng& rng);

/// Unit-norm representations, one row per input row.
DenseMatrix forward(const EncoderParams& params, const DenseMatrix& batch);

/// Activations kept for the backward pass.
struct ForwardCache {
  std::vector<DenseMatrix> activations;  // [0] = input, then each hidden tanh output
  DenseMatrix raw;                       // final pre-normalization output
  std::vector<double> raw_norms;
  DenseMatrix reps;                      // normalized output
};

ForwardCache forward_cached(const EncoderParams& params, const DenseMatrix& batch);

/// Accumulates into `grads` the parameter gradient given dL/d(reps).
/// Rows whose pre-normalization norm is <= 1e-12 contribute nothing.
void backward(const EncoderParams& params, const ForwardCache& cache, const DenseMatrix& d_reps,
              Gradients& grads);

/// p <- p - lr * g for every parameter.
EncoderParams sgd_step(const EncoderParams& params, const Gradients& grads, double lr);

/// target <- m * target + (1 - m) * online.
EncoderParams ema_update(const EncoderParams& target, const EncoderParams& online, double m);

/// Central differences, one scalar parameter at a time. Test oracle.
Gradients finite_diff_grads(const EncoderParams& params,
                            const std::function<double(const EncoderParams&)>& loss_fn,
                            double eps);

/// Visits every scalar of params and grads in a fixed order.
void for_each_param(EncoderParams& params, const std::function<void(double&)>& fn);
/// All parameters in for_each_param order.
std::vector<double> flatten(const EncoderParams& params);
void for_each_param_pair(const EncoderParams& params, const Gradients& grads,
                         const std::function<void(double, double)>& fn);

}  // namespace orchestra
