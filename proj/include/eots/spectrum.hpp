#pragma once

// Thin SVD and singular-value regularization rules.

#include <cmath>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "eots/embedding.hpp"
#include "eots/error.hpp"

namespace eots {

struct SpectrumDecomposition {
  Eigen::MatrixXd U;      // rows x r
  Eigen::VectorXd sigma;  // r, nonincreasing
  Eigen::MatrixXd V;      // cols x r

  Index rank_bound() const { return sigma.size(); }
};

/// Thin SVD with canonical signs: the largest-magnitude entry of every U
/// column is positive (first such entry on ties), V flipped to match.
inline SpectrumDecomposition svd(const Eigen::MatrixXd& m) {
  detail::require(m.allFinite(), ErrorCode::kNonFinite, "svd input contains non-finite entries");
  SpectrumDecomposition dec;
  const Index r = std::min(m.rows(), m.cols());
  if (r == 0) {
    dec.U.resize(m.rows(), 0);
    dec.V.resize(m.cols(), 0);
    return dec;
  }
  Eigen::BDCSVD<Eigen::MatrixXd> solver(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  detail::require(solver.info() == Eigen::Success, ErrorCode::kNumerical, "svd did not converge");
  dec.U = solver.matrixU();
  dec.sigma = solver.singularValues();
  dec.V = solver.matrixV();
  for (Index i = 0; i < r; ++i) {
    Index arg = 0;
    double best = -1.0;
    for (Index k = 0; k < dec.U.rows(); ++k) {
      const double a = std::abs(dec.U(k, i));
      if (a > best) {
        best = a;
        arg = k;
      }
    }
    if (dec.U(arg, i) < 0.0) {
      dec.U.col(i) = -dec.U.col(i);
      dec.V.col(i) = -dec.V.col(i);
    }
  }
  return dec;
}

namespace detail {

inline void require_nonnegative(const Eigen::VectorXd& sigma) {
  for (Index i = 0; i < sigma.size(); ++i)
    require(sigma[i] >= 0.0, ErrorCode::kInvalidArgument,
            "singular value " + std::to_string(i) + " is negative (" + std::to_string(sigma[i]) + ")");
}

}  // namespace detail

/// sigma_i * exp(-gamma * sigma_i). gamma = 1 drains the dominant directions
/// hardest; gamma = 0 is the identity; gamma -> inf zeroes everything.
inline Eigen::VectorXd soft_weight_spectrum(const Eigen::VectorXd& sigma, double gamma = 1.0) {
  detail::require_nonnegative(sigma);
  detail::require(gamma >= 0.0, ErrorCode::kInvalidArgument, "gamma must be >= 0");
  Eigen::VectorXd out(sigma.size());
  for (Index i = 0; i < sigma.size(); ++i)
    out[i] = sigma[i] == 0.0 ? 0.0 : std::exp(-gamma * sigma[i]) * sigma[i];
  return out;
}

/// beta * exp(alpha * sigma_i) * sigma_i: amplifies the dominant directions.
inline Eigen::VectorXd strengthen_spectrum(const Eigen::VectorXd& sigma, double alpha = 0.001,
                                           double beta = 1.2) {
  detail::require_nonnegative(sigma);
  detail::require(beta > 0.0, ErrorCode::kInvalidArgument, "beta must be > 0");
  Eigen::VectorXd out(sigma.size());
  for (Index i = 0; i < sigma.size(); ++i) out[i] = beta * std::exp(alpha * sigma[i]) * sigma[i];
  return out;
}

inline Eigen::VectorXd zero_topk(const Eigen::VectorXd& sigma, Index k) {
  detail::require(k >= 0 && k <= sigma.size(), ErrorCode::kInvalidArgument,
                  "K=" + std::to_string(k) + " outside 0.." + std::to_string(sigma.size()));
  Eigen::VectorXd out = sigma;
  out.head(k).setZero();
  return out;
}

inline Eigen::VectorXd zero_bottomk(const Eigen::VectorXd& sigma, Index k) {
  detail::require(k >= 0 && k <= sigma.size(), ErrorCode::kInvalidArgument,
                  "K=" + std::to_string(k) + " outside 0.." + std::to_string(sigma.size()));
  Eigen::VectorXd out = sigma;
  out.tail(k).setZero();
  return out;
}

/// Generalized soft threshold max(sigma_i - w_i, 0) with nondecreasing weights.
inline Eigen::VectorXd wnnm_threshold(const Eigen::VectorXd& sigma, const Eigen::VectorXd& weights) {
  detail::require(sigma.size() == weights.size(), ErrorCode::kShapeMismatch, "weight/spectrum length mismatch");
  for (Index i = 0; i < weights.size(); ++i) {
    detail::require(weights[i] >= 0.0, ErrorCode::kInvalidArgument, "weights must be >= 0");
    detail::require(i == 0 || weights[i] >= weights[i - 1], ErrorCode::kInvalidArgument,
                    "weights must be nondecreasing");
  }
  return (sigma - weights).cwiseMax(0.0);
}

/// w_i = lambda / (sigma_i + eps); nondecreasing whenever sigma is sorted descending.
inline Eigen::VectorXd wnnm_weights(const Eigen::VectorXd& sigma, double lambda, double eps = 1e-6) {
  detail::require(lambda >= 0.0, ErrorCode::kInvalidArgument, "lambda must be >= 0");
  detail::require(eps > 0.0, ErrorCode::kInvalidArgument, "eps must be > 0");
  detail::require_nonnegative(sigma);
  return (lambda / (sigma.array() + eps)).matrix();
}

inline Eigen::MatrixXd reconstruct(const SpectrumDecomposition& dec, const Eigen::VectorXd& sigma_hat) {
  detail::require(sigma_hat.size() == dec.sigma.size(), ErrorCode::kShapeMismatch,
                  "spectrum length " + std::to_string(sigma_hat.size()) + " != rank bound " +
                      std::to_string(dec.sigma.size()));
  return dec.U * sigma_hat.asDiagonal() * dec.V.transpose();
}

namespace rule {

/// Leaves the embeddings untouched; no decomposition is computed.
struct Identity {};
struct SoftWeight {
  double gamma = 1.0;
};
struct Strengthen {
  double alpha = 0.001;
  double beta = 1.2;
};
struct ZeroTop {
  Index k = 2;
};
struct ZeroBottom {
  Index k = 0;
};
/// Either explicit weights, or weights lambda / (sigma + eps) derived from the spectrum.
struct Wnnm {
  Eigen::VectorXd weights;
  double lambda = 0.0;
  double eps = 1e-6;
};
/// Uniform attenuation of the whole negative-target matrix.
struct Attenuate {
  double factor = 0.1;
};

}  // namespace rule

using SpectrumRule = std::variant<rule::Identity, rule::SoftWeight, rule::Strengthen, rule::ZeroTop,
                                  rule::ZeroBottom, rule::Wnnm, rule::Attenuate>;

inline std::string rule_name(const SpectrumRule& r) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, rule::Identity>) return "identity";
        else if constexpr (std::is_same_v<T, rule::SoftWeight>) return "soft";
        else if constexpr (std::is_same_v<T, rule::Strengthen>) return "strengthen";
        else if constexpr (std::is_same_v<T, rule::ZeroTop>) return "topk";
        else if constexpr (std::is_same_v<T, rule::ZeroBottom>) return "bottomk";
        else if constexpr (std::is_same_v<T, rule::Wnnm>) return "wnnm";
        else return "attenuate";
      },
      r);
}

inline Eigen::VectorXd apply_rule(const SpectrumRule& r, const Eigen::VectorXd& sigma) {
  return std::visit(
      [&](const auto& v) -> Eigen::VectorXd {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, rule::Identity>) {
          return sigma;
        } else if constexpr (std::is_same_v<T, rule::SoftWeight>) {
          return soft_weight_spectrum(sigma, v.gamma);
        } else if constexpr (std::is_same_v<T, rule::Strengthen>) {
          return strengthen_spectrum(sigma, v.alpha, v.beta);
        } else if constexpr (std::is_same_v<T, rule::ZeroTop>) {
          return zero_topk(sigma, v.k);
        } else if constexpr (std::is_same_v<T, rule::ZeroBottom>) {
          return zero_bottomk(sigma, v.k);
        } else if constexpr (std::is_same_v<T, rule::Wnnm>) {
          if (v.weights.size() > 0) return wnnm_threshold(sigma, v.weights);
          return wnnm_threshold(sigma, wnnm_weights(sigma, v.lambda, v.eps));
        } else {
          detail::require(v.factor >= 0.0, ErrorCode::kInvalidArgument, "attenuation factor must be >= 0");
          detail::require_nonnegative(sigma);
          return (sigma * v.factor).eval();
        }
      },
      r);
}

/// Everything a report needs about one regularization pass.
struct SuppressionDetail {
  TextEmbeddings output;
  Eigen::VectorXd sigma_before;
  Eigen::VectorXd sigma_after;
  Index chi_cols = 0;
  Index n0_used = 0;      // min(M, cols(chi))
  Index n0_eot_only = 0;  // min(M, N - p - 1), which omits the NE columns
};

inline SuppressionDetail suppress_detailed(const TextEmbeddings& emb, const TokenPartition& part,
                                           const SpectrumRule& r) {
  part.check_compatible(emb);
  const NegativeTargetMatrix chi = build_chi(emb, part);
  SuppressionDetail out{emb, {}, {}, chi.cols(), std::min(emb.embed_dim(), chi.cols()),
                        std::min(emb.embed_dim(), part.eot_count())};
  if (std::holds_alternative<rule::Identity>(r)) return out;

  const SpectrumDecomposition dec = svd(chi.chi);
  out.sigma_before = dec.sigma;
  out.sigma_after = apply_rule(r, dec.sigma);
  NegativeTargetMatrix chi_hat{reconstruct(dec, out.sigma_after), chi.ne_count, chi.eot_count};
  detail::require(chi_hat.chi.allFinite(), ErrorCode::kNonFinite, "regularized matrix is not finite");
  out.output = scatter_chi_back(emb, chi_hat, part);
  return out;
}

/// build_chi -> svd -> rule -> reconstruct -> scatter back. SOT and PE columns are never touched.
inline TextEmbeddings suppress(const TextEmbeddings& emb, const TokenPartition& part, const SpectrumRule& r) {
  return suppress_detailed(emb, part, r).output;
}

}  // namespace eots
