#pragma once

#include <cstddef>
#include <span>
#include <variant>
#include <vector>

#include "orchestra/clustering.hpp"
#include "orchestra/encoder.hpp"
#include "orchestra/matrix.hpp"

namespace orchestra {

// Representation-level losses. All take unit-norm representation rows.

/// Row-wise softmax of (rep . centroid) / tau: soft cluster assignments.
DenseMatrix assignment_probs(const DenseMatrix& reps, const Centroids& centroids, double tau);

/// Mean over rows of H(p, q) = -sum p log q.
double cross_entropy(const DenseMatrix& p, const DenseMatrix& q);

/// Mean cross-entropy between target-model assignments of clean samples
/// (labels) and online-model assignments of their augmentations.
double cluster_loss(const DenseMatrix& online_aug_reps, const DenseMatrix& target_clean_reps,
                    const Centroids& centroids, double tau);

/// Mean cross-entropy of softmax(rep . rot_head) against the rotation index.
double rotation_loss(const DenseMatrix& reps, const DenseMatrix& rot_head,
                     std::span<const std::size_t> rotation);

/// -2 mean_i <f_i, g_i> + mean_{i != j} <f_i, f_j>^2.
double specloss_local(const DenseMatrix& reps, const DenseMatrix& aug_reps);

// Loss specifications understood by compute_loss_and_grads. Each holds the
// raw inputs; the online encoder under differentiation produces the reps.

/// 1/2 mean_i |f(x_i) - t_i|^2.
struct SquaredErrorLoss {
  DenseMatrix inputs;
  DenseMatrix targets;
};

/// Cluster loss with target assignments frozen (no gradient to the target).
struct ClusterLoss {
  DenseMatrix augmented;
  DenseMatrix target_probs;
  Centroids centroids;
  double tau = 0.1;
};

struct DegeneracyLoss {
  DenseMatrix rotated;
  std::vector<std::size_t> rotation;
};

struct SpecLoss {
  DenseMatrix clean;
  DenseMatrix augmented;
};

using LossSpec = std::variant<SquaredErrorLoss, ClusterLoss, DegeneracyLoss, SpecLoss>;

const char* loss_name(const LossSpec& spec);

struct LossAndGrads {
  double loss = 0.0;
  Gradients grads;
};

/// Loss value and analytic gradient w.r.t. every parameter of `params`,
/// including through the output normalization. Throws NumericalError naming
/// the loss when the value is not finite.
LossAndGrads compute_loss_and_grads(const EncoderParams& params, const LossSpec& spec);

/// Loss value only (same definition as compute_loss_and_grads).
double evaluate_loss(const EncoderParams& params, const LossSpec& spec);

}  // namespace orchestra
