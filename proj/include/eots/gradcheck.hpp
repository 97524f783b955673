#pragma once

// Central finite-difference oracle for the embedding gradient. It only ever
// evaluates the forward loss, so it shares nothing with the analytic backward
// pass it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "eots/fixtures.hpp"
#include "eots/toy_attention.hpp"

namespace eots {

inline Eigen::MatrixXd finite_difference_gradient(const ToyDenoiser& model, const Eigen::MatrixXd& z, Index t,
                                                  const Anchors& anchors, const Eigen::MatrixXd& c_hat,
                                                  const TokenPartition& part, const LossWeights& w,
                                                  double h = 1e-5) {
  Eigen::MatrixXd probe = c_hat;
  Eigen::MatrixXd grad(c_hat.rows(), c_hat.cols());
  for (Index j = 0; j < c_hat.cols(); ++j) {
    for (Index i = 0; i < c_hat.rows(); ++i) {
      const double orig = probe(i, j);
      probe(i, j) = orig + h;
      const double up = evaluate_loss(model, z, t, anchors, probe, part, w).total;
      probe(i, j) = orig - h;
      const double down = evaluate_loss(model, z, t, anchors, probe, part, w).total;
      probe(i, j) = orig;
      grad(i, j) = (up - down) / (2.0 * h);
    }
  }
  return grad;
}

/// Max over entries of |a - f| / max(|a|, |f|, floor), with floor a fixed
/// fraction of the largest gradient magnitude. Entries many orders below the
/// gradient's scale carry only finite-difference rounding noise and are
/// compared against that scale instead of themselves.
inline double max_relative_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric,
                                 double floor_fraction = 1e-3) {
  const double scale = std::max(analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff());
  const double floor = std::max(scale * floor_fraction, 1e-300);
  double worst = 0.0;
  for (Index k = 0; k < analytic.size(); ++k) {
    const double a = analytic.data()[k];
    const double f = numeric.data()[k];
    const double denom = std::max({std::abs(a), std::abs(f), floor});
    worst = std::max(worst, std::abs(a - f) / denom);
  }
  return worst;
}

struct GradcheckCase {
  std::uint64_t seed = 0;
  LossKind kind = LossKind::kAttention;
  LossWeights weights;
  double max_rel_error = 0.0;
  double grad_scale = 0.0;
};

/// Runs the oracle over `instances` seeded problems, both loss kinds and
/// the weight combinations (1,0), (0,1), (1,0.5).
inline std::vector<GradcheckCase> run_gradcheck_suite(Index instances, double h = 1e-5, std::uint64_t first_seed = 1) {
  const LossWeights combos[] = {{1.0, 0.0}, {0.0, 1.0}, {1.0, 0.5}};
  std::vector<GradcheckCase> out;
  for (Index s = 0; s < instances; ++s) {
    const std::uint64_t seed = first_seed + static_cast<std::uint64_t>(s);
    const auto inst = fixtures::gradcheck_instance(seed);
    for (LossKind kind : {LossKind::kAttention, LossKind::kValue}) {
      const Anchors anchors = make_anchors(inst.model, inst.z, inst.t, inst.c, inst.part, kind);
      for (const LossWeights& w : combos) {
        const auto analytic =
            grad_loss_wrt_embeddings(inst.model, inst.z, inst.t, anchors, inst.c_hat, inst.part, w).grad;
        const auto numeric = finite_difference_gradient(inst.model, inst.z, inst.t, anchors, inst.c_hat, inst.part, w, h);
        out.push_back({seed, kind, w, max_relative_error(analytic, numeric), analytic.cwiseAbs().maxCoeff()});
      }
    }
  }
  return out;
}

}  // namespace eots
