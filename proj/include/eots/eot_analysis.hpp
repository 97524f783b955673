#pragma once

// Diagnostics for the end-of-text padding block: pairwise distances,
// low-rank reconstruction, replacement and mean-padding experiments.

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "eots/embedding.hpp"
#include "eots/error.hpp"
#include "eots/spectrum.hpp"

namespace eots {

struct EotMatrix {
  Eigen::MatrixXd psi;  // M x (N - p - 1)
};

inline EotMatrix eot_matrix(const TextEmbeddings& emb) {
  return {emb.data().middleCols(emb.eot_begin(), emb.eot_count())};
}

enum class DistanceMetric { kEuclidean, kCosine };

inline DistanceMetric parse_metric(std::string_view name) {
  if (name == "euclidean") return DistanceMetric::kEuclidean;
  if (name == "cosine") return DistanceMetric::kCosine;
  throw Error(ErrorCode::kInvalidArgument, "unknown distance metric '" + std::string(name) + "'");
}

inline std::string_view metric_name(DistanceMetric m) {
  return m == DistanceMetric::kEuclidean ? "euclidean" : "cosine";
}

inline double column_distance(const Eigen::Ref<const Eigen::VectorXd>& a,
                              const Eigen::Ref<const Eigen::VectorXd>& b, DistanceMetric metric) {
  if (metric == DistanceMetric::kEuclidean) return (a - b).norm();
  const double na = a.norm();
  const double nb = b.norm();
  // A zero column has no direction: distance 0 to another zero column, 1 otherwise.
  if (na == 0.0 || nb == 0.0) return (na == 0.0 && nb == 0.0) ? 0.0 : 1.0;
  return 1.0 - a.dot(b) / (na * nb);
}

/// Symmetric matrix of pairwise distances over the columns of m, zero diagonal.
inline Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& m, DistanceMetric metric) {
  const Index n = m.cols();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = column_distance(m.col(i), m.col(j), metric);
  return d;
}

inline Eigen::MatrixXd eot_distance_matrix(const TextEmbeddings& emb,
                                           DistanceMetric metric = DistanceMetric::kEuclidean) {
  detail::require(emb.eot_count() >= 2, ErrorCode::kInvalidArgument, "need at least two EOT columns");
  return pairwise_distances(eot_matrix(emb).psi, metric);
}

struct RankReconstruction {
  Eigen::MatrixXd psi_hat;
  double rel_error = 0.0;  // ||psi - psi_hat||_F / ||psi||_F, 0 for an all-zero psi
};

/// Best rank-K approximation given a precomputed decomposition of psi.
inline RankReconstruction rank_k_reconstruct(const EotMatrix& psi, const SpectrumDecomposition& dec, Index k) {
  const Index r = dec.rank_bound();
  detail::require(k >= 0 && k <= r, ErrorCode::kInvalidArgument,
                  "K=" + std::to_string(k) + " outside 0.." + std::to_string(r));
  RankReconstruction out;
  out.psi_hat = reconstruct(dec, zero_bottomk(dec.sigma, r - k));
  const double denom = psi.psi.norm();
  out.rel_error = denom == 0.0 ? 0.0 : (psi.psi - out.psi_hat).norm() / denom;
  return out;
}

inline RankReconstruction rank_k_reconstruct(const EotMatrix& psi, Index k) {
  return rank_k_reconstruct(psi, svd(psi.psi), k);
}

struct RankPoint {
  Index k = 0;
  double rel_error = 0.0;
  double energy_fraction = 0.0;  // sum_{i<K} sigma_i^2 / sum_i sigma_i^2
};

struct RankCurve {
  std::vector<RankPoint> points;
  Eigen::VectorXd sigma;
};

inline RankCurve rank_curve(const EotMatrix& psi) {
  const SpectrumDecomposition dec = svd(psi.psi);
  const double total = dec.sigma.squaredNorm();
  RankCurve curve;
  curve.sigma = dec.sigma;
  double kept = 0.0;
  for (Index k = 0; k <= dec.rank_bound(); ++k) {
    if (k > 0) kept += dec.sigma[k - 1] * dec.sigma[k - 1];
    const auto rec = rank_k_reconstruct(psi, dec, k);
    curve.points.push_back({k, rec.rel_error, total == 0.0 ? 1.0 : kept / total});
  }
  return curve;
}

/// Overwrites every prompt column with the chosen EOT column.
inline TextEmbeddings replace_prompt_with_eot(const TextEmbeddings& emb, Index eot_index) {
  detail::require(eot_index >= emb.eot_begin() && eot_index < emb.token_count(), ErrorCode::kInvalidArgument,
                  "column " + std::to_string(eot_index) + " is not an EOT column");
  Eigen::MatrixXd out = emb.data();
  for (Index j = 1; j <= emb.prompt_len(); ++j) out.col(j) = emb.data().col(eot_index);
  return emb.with_data(std::move(out));
}

inline Eigen::VectorXd mean_eot_embedding(const TextEmbeddings& emb) {
  return eot_matrix(emb).psi.rowwise().mean();
}

/// Mean-of-padding baseline: subtracts the mean EOT column from every EOT column.
inline TextEmbeddings remove_mean_eot(const TextEmbeddings& emb) {
  Eigen::MatrixXd out = emb.data();
  const Eigen::VectorXd mean = mean_eot_embedding(emb);
  out.middleCols(emb.eot_begin(), emb.eot_count()).colwise() -= mean;
  return emb.with_data(std::move(out));
}

}  // namespace eots
