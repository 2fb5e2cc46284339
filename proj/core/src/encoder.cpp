#include "orchestra/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "orchestra/errors.hpp"

namespace orchestra {

namespace {

constexpr double kTinyNorm = 1e-12;

void check_congruent(const std::vector<DenseLayer>& a, const DenseMatrix& ha,
                     const std::vector<DenseLayer>& b, const DenseMatrix& hb, const char* what) {
  bool ok = a.size() == b.size() && ha.rows() == hb.rows() && ha.cols() == hb.cols();
  for (std::size_t i = 0; ok && i < a.size(); ++i) {
    ok = a[i].weight.rows() == b[i].weight.rows() && a[i].weight.cols() == b[i].weight.cols() &&
         a[i].bias.size() == b[i].bias.size();
  }
  if (!ok) throw ShapeError(std::string(what) + ": parameter shapes are not congruent");
}

template <class Fn>
void zip_values(std::vector<double>& out, const std::vector<double>& a,
                const std::vector<double>& b, Fn fn) {
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(a[i], b[i]);
}

}  // namespace

std::size_t EncoderParams::num_params() const {
  std::size_t n = rot_head.size();
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

void EncoderParams::validate() const {
  if (layers.empty()) throw ShapeError("encoder has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].bias.size() != layers[i].weight.rows())
      throw ShapeError("layer " + std::to_string(i) + ": bias length != output dim");
    if (i + 1 < layers.size() && layers[i].weight.rows() != layers[i + 1].weight.cols())
      throw ShapeError("layer " + std::to_string(i) + " output dim does not chain");
  }
  if (rot_head.rows() != rep_dim() || rot_head.cols() != kNumRotations)
    throw ShapeError("rotation head must be rep_dim x 4");
}

Gradients Gradients::zeros_like(const EncoderParams& params) {
  Gradients g;
  g.layers.reserve(params.layers.size());
  for (const auto& l : params.layers) {
    g.layers.push_back({DenseMatrix(l.weight.rows(), l.weight.cols()),
                        std::vector<double>(l.bias.size(), 0.0)});
  }
  g.rot_head = DenseMatrix(params.rot_head.rows(), params.rot_head.cols());
  return g;
}

double Gradients::max_abs() const {
  double m = 0.0;
  for (const auto& l : layers) {
    for (double v : l.weight.data()) m = std::max(m, std::abs(v));
    for (double v : l.bias) m = std::max(m, std::abs(v));
  }
  for (double v : rot_head.data()) m = std::max(m, std::abs(v));
  return m;
}

Gradients& Gradients::operator+=(const Gradients& other) {
  check_congruent(layers, rot_head, other.layers, other.rot_head, "Gradients::operator+=");
  auto add = [](double a, double b) { return a + b; };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    zip_values(layers[i].weight.data(), layers[i].weight.data(), other.layers[i].weight.data(), add);
    zip_values(layers[i].bias, layers[i].bias, other.layers[i].bias, add);
  }
  zip_values(rot_head.data(), rot_head.data(), other.rot_head.data(), add);
  return *this;
}

EncoderParams init_encoder(const EncoderShape& shape, Rng& rng) {
  if (shape.input_dim == 0 || shape.rep_dim == 0) throw ConfigError("encoder dims must be positive");
  EncoderParams p;
  std::vector<std::size_t> dims{shape.input_dim};
  dims.insert(dims.end(), shape.hidden.begin(), shape.hidden.end());
  dims.push_back(shape.rep_dim);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer layer{DenseMatrix(dims[i + 1], dims[i]), std::vector<double>(dims[i + 1], 0.0)};
    const double scale = 1.0 / std::sqrt(static_cast<double>(dims[i]));
    for (double& w : layer.weight.data()) w = scale * rng.normal();
    p.layers.push_back(std::move(layer));
  }
  p.rot_head = DenseMatrix(shape.rep_dim, kNumRotations);
  if (shape.rot_head_std < 0.0) throw ConfigError("rot_head_std must be non-negative");
  const double head_scale = shape.rot_head_std > 0.0
                                ? shape.rot_head_std
                                : 1.0 / std::sqrt(static_cast<double>(shape.rep_dim));
  for (double& w : p.rot_head.data()) w = head_scale * rng.normal();
  return p;
}

ForwardCache forward_cached(const EncoderParams& params, const DenseMatrix& batch) {
  if (batch.cols() != params.input_dim()) {
    throw ShapeError("forward: batch has " + std::to_string(batch.cols()) +
                     " columns, encoder expects " + std::to_string(params.input_dim()));
  }
  ForwardCache cache;
  cache.activations.push_back(batch);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    DenseMatrix z = matmul_bt(cache.activations.back(), layer.weight);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      auto row = z.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += layer.bias[c];
    }
    if (l + 1 == params.layers.size()) {
      cache.raw = std::move(z);
    } else {
      for (double& v : z.data()) v = std::tanh(v);
      cache.activations.push_back(std::move(z));
    }
  }
  cache.reps = cache.raw;
  cache.raw_norms.resize(cache.raw.rows());
  for (std::size_t r = 0; r < cache.raw.rows(); ++r) cache.raw_norms[r] = norm2(cache.raw.row(r));
  normalize_rows(cache.reps);
  return cache;
}

DenseMatrix forward(const EncoderParams& params, const DenseMatrix& batch) {
  return forward_cached(params, batch).reps;
}

void backward(const EncoderParams& params, const ForwardCache& cache, const DenseMatrix& d_reps,
              Gradients& grads) {
  const std::size_t n = cache.reps.rows();
  if (d_reps.rows() != n || d_reps.cols() != cache.reps.cols())
    throw ShapeError("backward: d_reps shape mismatch");

  // Through the normalization: d raw = (g - f (f . g)) / |raw|.
  DenseMatrix delta(n, cache.raw.cols());
  for (std::size_t r = 0; r < n; ++r) {
    if (cache.raw_norms[r] <= kTinyNorm) continue;
    auto f = cache.reps.row(r);
    auto g = d_reps.row(r);
    const double fg = dot(f, g);
    auto d = delta.row(r);
    for (std::size_t c = 0; c < d.size(); ++c) d[c] = (g[c] - f[c] * fg) / cache.raw_norms[r];
  }

  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const DenseMatrix& input = cache.activations[l];
    auto& gl = grads.layers[l];
    DenseMatrix dw = matmul_at(delta, input);
    for (std::size_t i = 0; i < dw.size(); ++i) gl.weight.data()[i] += dw.data()[i];
    for (std::size_t r = 0; r < n; ++r) {
      auto d = delta.row(r);
      for (std::size_t c = 0; c < d.size(); ++c) gl.bias[c] += d[c];
    }
    if (l == 0) break;
    DenseMatrix d_in = matmul(delta, params.layers[l].weight);
    // input is tanh output of the previous layer.
    for (std::size_t i = 0; i < d_in.size(); ++i) {
      const double h = input.data()[i];
      d_in.data()[i] *= 1.0 - h * h;
    }
    delta = std::move(d_in);
  }
}

EncoderParams sgd_step(const EncoderParams& params, const Gradients& grads, double lr) {
  check_congruent(params.layers, params.rot_head, grads.layers, grads.rot_head, "sgd_step");
  EncoderParams out = params;
  auto step = [lr](double p, double g) { return p - lr * g; };
  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    zip_values(out.layers[i].weight.data(), params.layers[i].weight.data(),
               grads.layers[i].weight.data(), step);
    zip_values(out.layers[i].bias, params.layers[i].bias, grads.layers[i].bias, step);
  }
  zip_values(out.rot_head.data(), params.rot_head.data(), grads.rot_head.data(), step);
  return out;
}

EncoderParams ema_update(const EncoderParams& target, const EncoderParams& online, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("ema rate m must lie in [0, 1]");
  check_congruent(target.layers, target.rot_head, online.layers, online.rot_head, "ema_update");
  EncoderParams out = target;
  auto blend = [m](double t, double o) { return m * t + (1.0 - m) * o; };
  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    zip_values(out.layers[i].weight.data(), target.layers[i].weight.data(),
               online.layers[i].weight.data(), blend);
    zip_values(out.layers[i].bias, target.layers[i].bias, online.layers[i].bias, blend);
  }
  zip_values(out.rot_head.data(), target.rot_head.data(), online.rot_head.data(), blend);
  return out;
}

void for_each_param(EncoderParams& params, const std::function<void(double&)>& fn) {
  for (auto& l : params.layers) {
    for (double& v : l.weight.data()) fn(v);
    for (double& v : l.bias) fn(v);
  }
  for (double& v : params.rot_head.data()) fn(v);
}

std::vector<double> flatten(const EncoderParams& params) {
  std::vector<double> out;
  out.reserve(params.num_params());
  for (const auto& l : params.layers) {
    out.insert(out.end(), l.weight.data().begin(), l.weight.data().end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  out.insert(out.end(), params.rot_head.data().begin(), params.rot_head.data().end());
  return out;
}

void for_each_param_pair(const EncoderParams& params, const Gradients& grads,
                         const std::function<void(double, double)>& fn) {
  check_congruent(params.layers, params.rot_head, grads.layers, grads.rot_head,
                  "for_each_param_pair");
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& pw = params.layers[i].weight.data();
    const auto& gw = grads.layers[i].weight.data();
    for (std::size_t j = 0; j < pw.size(); ++j) fn(pw[j], gw[j]);
    for (std::size_t j = 0; j < params.layers[i].bias.size(); ++j)
      fn(params.layers[i].bias[j], grads.layers[i].bias[j]);
  }
  for (std::size_t j = 0; j < params.rot_head.size(); ++j)
    fn(params.rot_head.data()[j], grads.rot_head.data()[j]);
}

Gradients finite_diff_grads(const EncoderParams& params,
                            const std::function<double(const EncoderParams&)>& loss_fn,
                            double eps) {
  if (!(eps > 0.0)) throw ConfigError("finite_diff_grads: eps must be positive");
  Gradients g = Gradients::zeros_like(params);
  EncoderParams probe = params;

  std::vector<double*> slots;
  for_each_param(probe, [&](double& v) { slots.push_back(&v); });
  std::vector<double*> out;
  for (auto& l : g.layers) {
    for (double& v : l.weight.data()) out.push_back(&v);
    for (double& v : l.bias) out.push_back(&v);
  }
  for (double& v : g.rot_head.data()) out.push_back(&v);

  for (std::size_t i = 0; i < slots.size(); ++i) {
    const double saved = *slots[i];
    *slots[i] = saved + eps;
    const double up = loss_fn(probe);
    *slots[i] = saved - eps;
    const double down = loss_fn(probe);
    *slots[i] = saved;
    *out[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

}  // namespace orchestra
