#include "orchestra/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "orchestra/errors.hpp"

namespace orchestra {

namespace {

// Row-wise log-softmax of logits / tau.
DenseMatrix log_softmax_rows(const DenseMatrix& logits, double tau) {
  DenseMatrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto in = logits.row(r);
    auto o = out.row(r);
    double mx = -INFINITY;
    for (double v : in) mx = std::max(mx, v / tau);
    double s = 0.0;
    for (double v : in) s += std::exp(v / tau - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < in.size(); ++c) o[c] = in[c] / tau - lse;
  }
  return out;
}

double mean_ce_from_log(const DenseMatrix& p, const DenseMatrix& log_q) {
  if (p.rows() != log_q.rows() || p.cols() != log_q.cols())
    throw ShapeError("cross-entropy: distribution shapes differ");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p.data()[i] != 0.0) total -= p.data()[i] * log_q.data()[i];
  return total / static_cast<double>(p.rows());
}

DenseMatrix one_hot(std::span<const std::size_t> labels, std::size_t classes) {
  DenseMatrix m(labels.size(), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw ShapeError("label out of range");
    m(i, labels[i]) = 1.0;
  }
  return m;
}

void require_finite(double loss, const char* name) {
  if (!std::isfinite(loss)) throw NumericalError(std::string(name) + ": loss is not finite");
}

void check_rows(const DenseMatrix& a, const DenseMatrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(what) + ": batch shapes differ");
}

struct GradVisitor {
  const EncoderParams& params;

  LossAndGrads operator()(const SquaredErrorLoss& s) const {
    const ForwardCache fc = forward_cached(params, s.inputs);
    check_rows(fc.reps, s.targets, "squared_error");
    const double n = static_cast<double>(fc.reps.rows());
    DenseMatrix d(fc.reps.rows(), fc.reps.cols());
    double loss = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double diff = fc.reps.data()[i] - s.targets.data()[i];
      loss += 0.5 * diff * diff / n;
      d.data()[i] = diff / n;
    }
    require_finite(loss, "squared_error");
    LossAndGrads out{loss, Gradients::zeros_like(params)};
    backward(params, fc, d, out.grads);
    return out;
  }

  LossAndGrads operator()(const ClusterLoss& s) const {
    const ForwardCache fc = forward_cached(params, s.augmented);
    const DenseMatrix logits = matmul(fc.reps, s.centroids.matrix());
    const DenseMatrix log_q = log_softmax_rows(logits, s.tau);
    const double loss = mean_ce_from_log(s.target_probs, log_q);
    require_finite(loss, "cluster_loss");
    const double n = static_cast<double>(fc.reps.rows());
    DenseMatrix d_logits(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < d_logits.size(); ++i) {
      // d/dz of -sum p log softmax(z/tau) with sum p = 1.
      d_logits.data()[i] = (std::exp(log_q.data()[i]) - s.target_probs.data()[i]) / (n * s.tau);
    }
    DenseMatrix d_reps = matmul_bt(d_logits, s.centroids.matrix());
    LossAndGrads out{loss, Gradients::zeros_like(params)};
    backward(params, fc, d_reps, out.grads);
    return out;
  }

  LossAndGrads operator()(const DegeneracyLoss& s) const {
    const ForwardCache fc = forward_cached(params, s.rotated);
    const DenseMatrix logits = matmul(fc.reps, params.rot_head);
    const DenseMatrix log_q = log_softmax_rows(logits, 1.0);
    const DenseMatrix target = one_hot(s.rotation, kNumRotations);
    const double loss = mean_ce_from_log(target, log_q);
    require_finite(loss, "degeneracy_loss");
    const double n = static_cast<double>(fc.reps.rows());
    DenseMatrix d_logits(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < d_logits.size(); ++i)
      d_logits.data()[i] = (std::exp(log_q.data()[i]) - target.data()[i]) / n;
    LossAndGrads out{loss, Gradients::zeros_like(params)};
    out.grads.rot_head = matmul_at(fc.reps, d_logits);
    backward(params, fc, matmul_bt(d_logits, params.rot_head), out.grads);
    return out;
  }

  LossAndGrads operator()(const SpecLoss& s) const {
    const ForwardCache clean = forward_cached(params, s.clean);
    const ForwardCache aug = forward_cached(params, s.augmented);
    const double loss = specloss_local(clean.reps, aug.reps);
    require_finite(loss, "specloss");
    const std::size_t n = clean.reps.rows();
    const double nn = static_cast<double>(n);
    const DenseMatrix gram = matmul_bt(clean.reps, clean.reps);
    DenseMatrix d_clean(n, clean.reps.cols());
    DenseMatrix d_aug(n, clean.reps.cols());
    const double pair_scale = 4.0 / (nn * (nn - 1.0));
    for (std::size_t i = 0; i < n; ++i) {
      auto dc = d_clean.row(i);
      auto da = d_aug.row(i);
      auto fa = aug.reps.row(i);
      auto fc = clean.reps.row(i);
      for (std::size_t d = 0; d < dc.size(); ++d) {
        dc[d] = -2.0 * fa[d] / nn;
        da[d] = -2.0 * fc[d] / nn;
      }
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        auto fj = clean.reps.row(j);
        const double w = pair_scale * gram(i, j);
        for (std::size_t d = 0; d < dc.size(); ++d) dc[d] += w * fj[d];
      }
    }
    LossAndGrads out{loss, Gradients::zeros_like(params)};
    backward(params, clean, d_clean, out.grads);
    backward(params, aug, d_aug, out.grads);
    return out;
  }
};

struct ValueVisitor {
  const EncoderParams& params;

  double operator()(const SquaredErrorLoss& s) const {
    const DenseMatrix f = forward(params, s.inputs);
    check_rows(f, s.targets, "squared_error");
    double loss = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double diff = f.data()[i] - s.targets.data()[i];
      loss += 0.5 * diff * diff;
    }
    return loss / static_cast<double>(f.rows());
  }
  double operator()(const ClusterLoss& s) const {
    const DenseMatrix logits = matmul(forward(params, s.augmented), s.centroids.matrix());
    return mean_ce_from_log(s.target_probs, log_softmax_rows(logits, s.tau));
  }
  double operator()(const DegeneracyLoss& s) const {
    return rotation_loss(forward(params, s.rotated), params.rot_head, s.rotation);
  }
  double operator()(const SpecLoss& s) const {
    return specloss_local(forward(params, s.clean), forward(params, s.augmented));
  }
};

}  // namespace

DenseMatrix assignment_probs(const DenseMatrix& reps, const Centroids& centroids, double tau) {
  if (!(tau > 0.0)) throw ConfigError("assignment temperature must be positive");
  return softmax_rows(matmul(reps, centroids.matrix()), tau);
}

double cross_entropy(const DenseMatrix& p, const DenseMatrix& q) {
  check_rows(p, q, "cross_entropy");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p.data()[i] != 0.0) total -= p.data()[i] * std::log(q.data()[i]);
  return total / static_cast<double>(p.rows());
}

double cluster_loss(const DenseMatrix& online_aug_reps, const DenseMatrix& target_clean_reps,
                    const Centroids& centroids, double tau) {
  check_rows(online_aug_reps, target_clean_reps, "cluster_loss");
  if (!(tau > 0.0)) throw ConfigError("assignment temperature must be positive");
  const DenseMatrix p = assignment_probs(target_clean_reps, centroids, tau);
  const DenseMatrix log_q = log_softmax_rows(matmul(online_aug_reps, centroids.matrix()), tau);
  return mean_ce_from_log(p, log_q);
}

double rotation_loss(const DenseMatrix& reps, const DenseMatrix& rot_head,
                     std::span<const std::size_t> rotation) {
  if (rotation.size() != reps.rows()) throw ShapeError("rotation_loss: one index per row required");
  const DenseMatrix log_q = log_softmax_rows(matmul(reps, rot_head), 1.0);
  return mean_ce_from_log(one_hot(rotation, rot_head.cols()), log_q);
}

double specloss_local(const DenseMatrix& reps, const DenseMatrix& aug_reps) {
  check_rows(reps, aug_reps, "specloss_local");
  const std::size_t n = reps.rows();
  if (n < 2) throw ConfigError("specloss_local: batch size must be >= 2");
  const double nn = static_cast<double>(n);
  double pos = 0.0;
  for (std::size_t i = 0; i < n; ++i) pos += dot(reps.row(i), aug_reps.row(i));
  const DenseMatrix gram = matmul_bt(reps, reps);
  double neg = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) neg += gram(i, j) * gram(i, j);
  return -2.0 * pos / nn + neg / (nn * (nn - 1.0));
}

const char* loss_name(const LossSpec& spec) {
  static constexpr const char* kNames[] = {"squared_error", "cluster_loss", "degeneracy_loss",
                                           "specloss_local"};
  return kNames[spec.index()];
}

LossAndGrads compute_loss_and_grads(const EncoderParams& params, const LossSpec& spec) {
  return std::visit(GradVisitor{params}, spec);
}

double evaluate_loss(const EncoderParams& params, const LossSpec& spec) {
  return std::visit(ValueVisitor{params}, spec);
}

}  // namespace orchestra
