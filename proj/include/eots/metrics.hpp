#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "eots/attention_maps.hpp"
#include "eots/error.hpp"

namespace eots {

/// An h x w real grid; attention columns are reshaped row-major into this.
using Field2D = Eigen::MatrixXd;

/// Column `token` of the maps as a grid_h x grid_w field (position p -> row p / w, col p % w).
inline Field2D attention_field(const AttentionMaps& maps, Index token, Index grid_h, Index grid_w) {
  detail::require(grid_h * grid_w == maps.positions(), ErrorCode::kShapeMismatch, "grid does not match positions");
  detail::require(token >= 0 && token < maps.tokens(), ErrorCode::kInvalidArgument, "token index out of range");
  Field2D f(grid_h, grid_w);
  for (Index p = 0; p < maps.positions(); ++p) f(p / grid_w, p % grid_w) = maps.A(p, token);
  return f;
}

namespace detail {

inline void require_same_shape(const Field2D& a, const Field2D& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::kShapeMismatch,
          "fields differ in shape: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
              std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

}  // namespace detail

/// 10 log10(peak^2 / MSE); +inf when the fields are identical. Peak defaults
/// to the maximum of the reference field `b`.
inline double psnr(const Field2D& a, const Field2D& b, std::optional<double> peak = std::nullopt) {
  detail::require_same_shape(a, b);
  detail::require(a.size() > 0, ErrorCode::kShapeMismatch, "empty field");
  const double p = peak.value_or(b.maxCoeff());
  detail::require(p > 0.0, ErrorCode::kInvalidArgument, "peak must be > 0");
  const double mse = (a - b).squaredNorm() / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(p * p / mse);
}

struct SsimOptions {
  Index window = 7;
  double k1 = 0.01;
  double k2 = 0.03;
  std::optional<double> peak;  // defaults to max of the reference field
};

/// Mean local SSIM over a uniform window centred on every pixel, clipped at
/// the field edges. Population statistics within each window.
inline double ssim(const Field2D& a, const Field2D& b, const SsimOptions& opt = {}) {
  detail::require_same_shape(a, b);
  detail::require(opt.window >= 1, ErrorCode::kInvalidArgument, "window must be >= 1");
  detail::require(a.rows() >= opt.window && a.cols() >= opt.window, ErrorCode::kShapeMismatch,
                  "field smaller than the SSIM window");
  const double peak = opt.peak.value_or(b.maxCoeff());
  detail::require(peak > 0.0, ErrorCode::kInvalidArgument, "peak must be > 0");
  const double c1 = (opt.k1 * peak) * (opt.k1 * peak);
  const double c2 = (opt.k2 * peak) * (opt.k2 * peak);
  const Index half = opt.window / 2;

  double total = 0.0;
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) {
      const Index r0 = std::max<Index>(0, i - half), r1 = std::min<Index>(a.rows(), i + half + 1);
      const Index c0 = std::max<Index>(0, j - half), c1_ = std::min<Index>(a.cols(), j + half + 1);
      const auto wa = a.block(r0, c0, r1 - r0, c1_ - c0);
      const auto wb = b.block(r0, c0, r1 - r0, c1_ - c0);
      const double n = static_cast<double>(wa.size());
      const double mu_a = wa.sum() / n;
      const double mu_b = wb.sum() / n;
      const double var_a = wa.cwiseProduct(wa).sum() / n - mu_a * mu_a;
      const double var_b = wb.cwiseProduct(wb).sum() / n - mu_b * mu_b;
      const double cov = wa.cwiseProduct(wb).sum() / n - mu_a * mu_b;
      const double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
      const double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
      total += num / den;
    }
  }
  return total / static_cast<double>(a.size());
}

/// Total attention on the listed token columns, normalized so all columns sum to 1.
inline double attention_mass(const AttentionMaps& maps, std::span<const Index> indices) {
  double s = 0.0;
  for (Index j : indices) {
    detail::require(j >= 0 && j < maps.tokens(), ErrorCode::kInvalidArgument, "token index out of range");
    s += maps.A.col(j).sum();
  }
  return s / static_cast<double>(maps.positions());
}

inline double relative_frobenius_error(const Eigen::MatrixXd& approx, const Eigen::MatrixXd& reference) {
  detail::require(approx.rows() == reference.rows() && approx.cols() == reference.cols(), ErrorCode::kShapeMismatch,
                  "matrices differ in shape");
  const double denom = reference.norm();
  const double diff = (approx - reference).norm();
  return denom == 0.0 ? diff : diff / denom;
}

}  // namespace eots
