// SPDX-License-Identifier: Apache-2.0
//
// Pruning-mask construction (global magnitude and gradient-flow scoring),
// gradient sparsity enforcement, and the mask stability tracker that gates
// the compressed sync path.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>

#include "pact/tensor.hpp"

namespace pact {

enum class PruneMethod { Magnitude, Grasp };

/// Which end of the saliency scale survives grasp_prune. The score formula
/// does not force a direction, so it stays configurable.
enum class GraspKeep { MostNegative, MostPositive };

struct PruneConfig {
  float ratio = 0.0f;  // fraction of elements to drop, in [0, 1)
  PruneMethod method = PruneMethod::Magnitude;
  float grasp_epsilon = 1e-2f;  // finite-difference step, pre-normalization
  GraspKeep grasp_keep = GraspKeep::MostNegative;

  void validate() const;
};

enum class TrackerStatus { Stable, Unstable };

/// Watches the digest sequence of the per-iteration sparsity mask. After K
/// consecutive repeats of the same digest (K+1 identical observations in
/// total) the pattern counts as stable.
class MaskTracker {
 public:
  explicit MaskTracker(uint32_t stability_threshold = 3)
      : threshold_(stability_threshold == 0 ? 1 : stability_threshold) {}

  TrackerStatus observe(const SparsityMask& mask);

  TrackerStatus status() const {
    return stable_count_ >= threshold_ ? TrackerStatus::Stable : TrackerStatus::Unstable;
  }
  uint32_t stable_count() const { return stable_count_; }
  std::optional<uint64_t> last_digest() const { return last_digest_; }

 private:
  std::optional<uint64_t> last_digest_;
  uint32_t stable_count_ = 0;
  uint32_t threshold_;
};

TrackerStatus tracker_observe(MaskTracker& tracker, const SparsityMask& mask);

/// Keeps the (1-ratio) fraction of weights with the largest magnitude,
/// globally across the buffer. Ties drop the lower index first.
SparsityMask magnitude_prune(const FlatTensor& weights, float ratio);

/// Per-parameter saliency buffer produced by grasp_scores.
struct GraspScores {
  FlatTensor scores;
};

/// Gradient of the loss at a parameter vector; the trainer supplies a
/// closure over its model and batch, tests supply analytic surrogates.
using GradientFn = std::function<FlatTensor(const FlatTensor&)>;

/// S = -theta ⊙ (H g) with the Hessian-vector product taken by central
/// finite differences along g, step epsilon / max(1, ||g||).
GraspScores grasp_scores(const GradientFn& grad_of, const FlatTensor& theta, float epsilon);

/// Drops the floor(ratio*len) parameters at the configured end of the score
/// scale (default: algebraically largest scores go first, most-negative
/// survive). Ties drop the lower index first.
SparsityMask grasp_prune(const GraspScores& scores, float ratio,
                         GraspKeep keep = GraspKeep::MostNegative);

/// Zeroes gradient entries whose mask bit is clear; kept entries pass
/// through bit-identical.
FlatTensor enforce_gradient_sparsity(const FlatTensor& grad, const SparsityMask& mask);

/// Builds the mask for the configured method. `grad_of` is only consulted
/// for gradient-flow scoring.
SparsityMask build_prune_mask(const FlatTensor& weights, const PruneConfig& cfg,
                              const GradientFn& grad_of = nullptr);

}  // namespace pact
