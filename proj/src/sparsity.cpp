// SPDX-License-Identifier: Apache-2.0

#include "pact/sparsity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pact {

void PruneConfig::validate() const {
  if (!(ratio >= 0.0f && ratio < 1.0f))
    raise(Errc::InvalidRatio, "prune ratio " + std::to_string(ratio) + " outside [0, 1)");
  if (!(grasp_epsilon > 0.0f)) raise(Errc::InvalidRatio, "grasp_epsilon must be positive");
}

TrackerStatus MaskTracker::observe(const SparsityMask& mask) {
  const uint64_t d = mask.digest();
  if (last_digest_ && *last_digest_ == d)
    ++stable_count_;
  else
    stable_count_ = 0;
  last_digest_ = d;
  return status();
}

TrackerStatus tracker_observe(MaskTracker& tracker, const SparsityMask& mask) {
  return tracker.observe(mask);
}

namespace {

size_t drop_count(float ratio, size_t len) {
  if (!(ratio >= 0.0f && ratio < 1.0f))
    raise(Errc::InvalidRatio, "prune ratio " + std::to_string(ratio) + " outside [0, 1)");
  // epsilon absorbs float representation error in ratios like 0.7, whose
  // nearest float sits just below the rational value
  return static_cast<size_t>(std::floor(static_cast<double>(ratio) * static_cast<double>(len) +
                                        static_cast<double>(len) * 1e-7));
}

}  // namespace

SparsityMask magnitude_prune(const FlatTensor& weights, float ratio) {
  const size_t len = weights.size();
  const size_t k = drop_count(ratio, len);

  std::vector<size_t> order(len);
  std::iota(order.begin(), order.end(), size_t{0});
  // stable sort keeps lower indices first among equal magnitudes, so ties
  // are dropped lowest-index-first
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return std::fabs(weights[a]) < std::fabs(weights[b]);
  });

  std::vector<bool> bits(len, true);
  for (size_t i = 0; i < k; ++i) bits[order[i]] = false;
  return SparsityMask::from_bits(bits);
}

GraspScores grasp_scores(const GradientFn& grad_of, const FlatTensor& theta, float epsilon) {
  if (!(epsilon > 0.0f)) raise(Errc::InvalidRatio, "epsilon must be positive");
  const size_t len = theta.size();

  FlatTensor g = grad_of(theta);
  if (g.size() != len) raise(Errc::ShapeMismatch, "gradient length != parameter length");
  if (!g.all_finite()) raise(Errc::NumericalFailure, "non-finite gradient");

  double norm_sq = 0.0;
  for (size_t i = 0; i < len; ++i) norm_sq += static_cast<double>(g[i]) * g[i];
  const double step = epsilon / std::max(1.0, std::sqrt(norm_sq));

  std::vector<float> plus(len), minus(len);
  for (size_t i = 0; i < len; ++i) {
    plus[i] = static_cast<float>(theta[i] + step * g[i]);
    minus[i] = static_cast<float>(theta[i] - step * g[i]);
  }
  FlatTensor g_plus = grad_of(FlatTensor(std::move(plus)));
  FlatTensor g_minus = grad_of(FlatTensor(std::move(minus)));
  if (!g_plus.all_finite() || !g_minus.all_finite())
    raise(Errc::NumericalFailure, "non-finite gradient in finite-difference probe");

  std::vector<float> s(len);
  for (size_t i = 0; i < len; ++i) {
    const double hv = (static_cast<double>(g_plus[i]) - g_minus[i]) / (2.0 * step);
    s[i] = static_cast<float>(-static_cast<double>(theta[i]) * hv);
  }
  FlatTensor scores(std::move(s));
  if (!scores.all_finite()) raise(Errc::NumericalFailure, "non-finite scores");
  return GraspScores{std::move(scores)};
}

SparsityMask grasp_prune(const GraspScores& scores, float ratio, GraspKeep keep) {
  const auto& s = scores.scores;
  const size_t len = s.size();
  const size_t k = drop_count(ratio, len);

  std::vector<size_t> order(len);
  std::iota(order.begin(), order.end(), size_t{0});
  if (keep == GraspKeep::MostNegative) {
    // drop the algebraically largest scores first
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return s[a] > s[b]; });
  } else {
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return s[a] < s[b]; });
  }

  std::vector<bool> bits(len, true);
  for (size_t i = 0; i < k; ++i) bits[order[i]] = false;
  return SparsityMask::from_bits(bits);
}

FlatTensor enforce_gradient_sparsity(const FlatTensor& grad, const SparsityMask& mask) {
  if (grad.size() != mask.size())
    raise(Errc::ShapeMismatch, "gradient length " + std::to_string(grad.size()) +
                                   " != mask length " + std::to_string(mask.size()));
  std::vector<float> out(grad.size());
  for (size_t i = 0; i < grad.size(); ++i) out[i] = mask.test(i) ? grad[i] : 0.0f;
  return FlatTensor(std::move(out));
}

SparsityMask build_prune_mask(const FlatTensor& weights, const PruneConfig& cfg,
                              const GradientFn& grad_of) {
  cfg.validate();
  if (cfg.method == PruneMethod::Magnitude) return magnitude_prune(weights, cfg.ratio);
  if (!grad_of) raise(Errc::NumericalFailure, "gradient-flow pruning needs a gradient function");
  GraspScores s = grasp_scores(grad_of, weights, cfg.grasp_epsilon);
  return grasp_prune(s, cfg.ratio, cfg.grasp_keep);
}

}  // namespace pact
