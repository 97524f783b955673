#pragma once

// A deterministic single-layer, single-head cross-attention denoiser.
//
//   Q = (z_t + time_embed[t]) W_Q        positions x d_attn
//   K = c^T W_K,  V = c^T W_V            tokens x d_attn
//   A = rowsoftmax(Q K^T / sqrt(d_attn))
//   residual = A V W_O                   positions x d_latent
//
// It is small enough that every gradient can be written by hand and checked
// against finite differences, yet it exposes per-token attention maps that
// depend on both the latent and the timestep.

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>

#include <Eigen/Dense>

#include "eots/attention_maps.hpp"
#include "eots/embedding.hpp"
#include "eots/error.hpp"
#include "eots/random.hpp"

namespace eots {

struct ToyDenoiserConfig {
  Index grid_h = 8;
  Index grid_w = 8;
  Index d_latent = 16;
  Index d_attn = 32;
  Index timesteps = 50;
  Index embed_dim = kDefaultEmbedDim;
  std::uint64_t seed = 0;

  Index positions() const { return grid_h * grid_w; }

  void validate() const {
    detail::require(grid_h >= 1 && grid_w >= 1 && d_latent >= 1 && timesteps >= 1 && embed_dim >= 1,
                    ErrorCode::kInvalidArgument, "toy denoiser dimensions must be >= 1");
    detail::require(d_attn >= 2, ErrorCode::kInvalidArgument, "d_attn must be >= 2");
  }

  friend bool operator==(const ToyDenoiserConfig&, const ToyDenoiserConfig&) = default;
};

struct ToyDenoiserWeights {
  Eigen::MatrixXd W_Q;         // d_latent x d_attn
  Eigen::MatrixXd W_K;         // embed_dim x d_attn
  Eigen::MatrixXd W_V;         // embed_dim x d_attn
  Eigen::MatrixXd W_O;         // d_attn x d_latent
  Eigen::MatrixXd time_embed;  // timesteps x d_latent
};

class ToyDenoiser {
 public:
  /// Draws weights from SplitMix64(seed), in the order W_Q, W_K, W_V, W_O,
  /// time_embed, each filled row-major with uniform values in
  /// [-1/sqrt(fan_in), 1/sqrt(fan_in)). fan_in is the row count of each
  /// projection; the time table uses d_latent.
  explicit ToyDenoiser(const ToyDenoiserConfig& config) : config_(config) {
    config_.validate();
    SplitMix64 rng(config_.seed);
    auto draw = [&rng](Index rows, Index cols, Index fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      return uniform_matrix(rows, cols, rng, -bound, bound);
    };
    w_.W_Q = draw(config_.d_latent, config_.d_attn, config_.d_latent);
    w_.W_K = draw(config_.embed_dim, config_.d_attn, config_.embed_dim);
    w_.W_V = draw(config_.embed_dim, config_.d_attn, config_.embed_dim);
    w_.W_O = draw(config_.d_attn, config_.d_latent, config_.d_attn);
    w_.time_embed = draw(config_.timesteps, config_.d_latent, config_.d_latent);
  }

  ToyDenoiser(const ToyDenoiserConfig& config, ToyDenoiserWeights weights)
      : config_(config), w_(std::move(weights)) {
    config_.validate();
    const auto& c = config_;
    auto check = [](const Eigen::MatrixXd& m, Index r, Index k, const char* name) {
      detail::require(m.rows() == r && m.cols() == k, ErrorCode::kShapeMismatch,
                      std::string(name) + " has the wrong shape");
      detail::require(m.allFinite(), ErrorCode::kNonFinite, std::string(name) + " is not finite");
    };
    check(w_.W_Q, c.d_latent, c.d_attn, "W_Q");
    check(w_.W_K, c.embed_dim, c.d_attn, "W_K");
    check(w_.W_V, c.embed_dim, c.d_attn, "W_V");
    check(w_.W_O, c.d_attn, c.d_latent, "W_O");
    check(w_.time_embed, c.timesteps, c.d_latent, "time_embed");
  }

  static ToyDenoiser zeros(const ToyDenoiserConfig& c) {
    return ToyDenoiser(c, {Eigen::MatrixXd::Zero(c.d_latent, c.d_attn), Eigen::MatrixXd::Zero(c.embed_dim, c.d_attn),
                           Eigen::MatrixXd::Zero(c.embed_dim, c.d_attn), Eigen::MatrixXd::Zero(c.d_attn, c.d_latent),
                           Eigen::MatrixXd::Zero(c.timesteps, c.d_latent)});
  }

  const ToyDenoiserConfig& config() const noexcept { return config_; }
  const ToyDenoiserWeights& weights() const noexcept { return w_; }

 private:
  ToyDenoiserConfig config_;
  ToyDenoiserWeights w_;
};

namespace detail {

inline void check_inputs(const ToyDenoiser& model, const Eigen::MatrixXd& z, Index t, const Eigen::MatrixXd& c) {
  const auto& cfg = model.config();
  require(t >= 1 && t <= cfg.timesteps, ErrorCode::kInvalidArgument,
          "timestep " + std::to_string(t) + " outside 1.." + std::to_string(cfg.timesteps));
  require(z.rows() == cfg.positions() && z.cols() == cfg.d_latent, ErrorCode::kShapeMismatch,
          "latent must be " + std::to_string(cfg.positions()) + "x" + std::to_string(cfg.d_latent));
  require(c.rows() == cfg.embed_dim, ErrorCode::kShapeMismatch,
          "embedding dimension " + std::to_string(c.rows()) + " != model embed_dim " +
              std::to_string(cfg.embed_dim));
}

inline Eigen::MatrixXd queries(const ToyDenoiser& model, const Eigen::MatrixXd& z, Index t) {
  const auto& w = model.weights();
  return (z.rowwise() + w.time_embed.row(t - 1)) * w.W_Q;
}

inline Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& s) {
  Eigen::MatrixXd a = (s.colwise() - s.rowwise().maxCoeff()).array().exp().matrix();
  a.array().colwise() /= a.rowwise().sum().array();
  return a;
}

}  // namespace detail

struct ForwardResult {
  Eigen::MatrixXd z_next_pred;  // z_t + residual
  Eigen::MatrixXd residual;     // A V W_O
  AttentionMaps maps;
};

inline AttentionMaps attention(const ToyDenoiser& model, const Eigen::MatrixXd& z, Index t,
                               const Eigen::MatrixXd& c) {
  detail::check_inputs(model, z, t, c);
  const auto& w = model.weights();
  const Eigen::MatrixXd q = detail::queries(model, z, t);
  const Eigen::MatrixXd k = c.transpose() * w.W_K;
  const double scale = 1.0 / std::sqrt(static_cast<double>(model.config().d_attn));
  return {detail::row_softmax((q * k.transpose()) * scale)};
}

/// Token values c^T W_V (tokens x d_attn).
inline Eigen::MatrixXd token_values(const ToyDenoiser& model, const Eigen::MatrixXd& c) {
  return c.transpose() * model.weights().W_V;
}

/// Mixes token values through the given attention maps. Exposed so that
/// attention-editing baselines can run the rest of the layer on edited maps.
inline Eigen::MatrixXd residual_from_maps(const ToyDenoiser& model, const AttentionMaps& maps,
                                          const Eigen::MatrixXd& c) {
  return maps.A * token_values(model, c) * model.weights().W_O;
}

inline ForwardResult forward(const ToyDenoiser& model, const Eigen::MatrixXd& z, Index t, const Eigen::MatrixXd& c) {
  ForwardResult out;
  out.maps = attention(model, z, t, c);
  out.residual = residual_from_maps(model, out.maps, c);
  out.z_next_pred = z + out.residual;
  return out;
}

/// z_{t-1} = z_t - residual / T.
inline Eigen::MatrixXd step_latent(const ToyDenoiser& model, const Eigen::MatrixXd& z, Index t,
                                   const Eigen::MatrixXd& c) {
  detail::require(t >= 1, ErrorCode::kInvalidArgument, "cannot step from t=0");
  const auto res = forward(model, z, t, c);
  return z - res.residual / static_cast<double>(model.config().timesteps);
}

// ---------------------------------------------------------------------------
// Losses

enum class LossKind { kAttention, kValue };

inline std::string_view loss_kind_name(LossKind k) { return k == LossKind::kAttention ? "attention" : "value"; }

struct LossWeights {
  double preserve = 1.0;  // lambda_pl
  double suppress = 0.5;  // lambda_nl
};

struct LossValue {
  double total = 0.0;
  double preserve = 0.0;  // ||hat_PE - PE||^2
  double suppress = 0.0;  // -||hat_NE - NE||^2
};

namespace detail {

inline LossValue block_loss(const Eigen::MatrixXd& hat_pe, const Eigen::MatrixXd& pe, const Eigen::MatrixXd& hat_ne,
                            const Eigen::MatrixXd& ne, const LossWeights& w) {
  require(hat_pe.rows() == pe.rows() && hat_pe.cols() == pe.cols(), ErrorCode::kShapeMismatch,
          "positive-target blocks differ in shape");
  require(hat_ne.rows() == ne.rows() && hat_ne.cols() == ne.cols(), ErrorCode::kShapeMismatch,
          "negative-target blocks differ in shape");
  LossValue l;
  l.preserve = (hat_pe - pe).squaredNorm();
  l.suppress = -(hat_ne - ne).squaredNorm();
  l.total = w.preserve * l.preserve + w.suppress * l.suppress;
  return l;
}

}  // namespace detail

/// Preservation/suppression loss on attention-map column blocks.
inline LossValue attention_loss(const Eigen::MatrixXd& hat_pe, const Eigen::MatrixXd& pe,
                                const Eigen::MatrixXd& hat_ne, const Eigen::MatrixXd& ne,
                                const LossWeights& w = {}) {
  return detail::block_loss(hat_pe, pe, hat_ne, ne, w);
}

/// Same functional form on value rows (tokens x d_attn).
inline LossValue value_loss(const Eigen::MatrixXd& hat_pe, const Eigen::MatrixXd& pe, const Eigen::MatrixXd& hat_ne,
                            const Eigen::MatrixXd& ne, const LossWeights& w = {}) {
  return detail::block_loss(hat_pe, pe, hat_ne, ne, w);
}

/// Reference blocks computed from the unmodified embeddings at (z_t, t).
struct Anchors {
  LossKind kind = LossKind::kAttention;
  Eigen::MatrixXd pe;
  Eigen::MatrixXd ne;
};

inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> value_blocks(const ToyDenoiser& model, const Eigen::MatrixXd& c,
                                                                const TokenPartition& part) {
  const Eigen::MatrixXd vt = token_values(model, c).transpose();  // d_attn x tokens
  return {gather_columns(vt, part.pe).transpose(), gather_columns(vt, part.ne).transpose()};
}

inline Anchors make_anchors(const ToyDenoiser& model, const Eigen::MatrixXd& z, Index t, const Eigen::MatrixXd& c,
                            const TokenPartition& part, LossKind kind) {
  detail::require(c.cols() == part.token_count, ErrorCode::kShapeMismatch, "partition/token count mismatch");
  Anchors a;
  a.kind = kind;
  if (kind == LossKind::kAttention) {
    std::tie(a.pe, a.ne) = attention_blocks(attention(model, z, t, c), part);
  } else {
    detail::check_inputs(model, z, t, c);
    std::tie(a.pe, a.ne) = value_blocks(model, c, part);
  }
  return a;
}

/// Loss at c_hat using only the forward pass.
inline LossValue evaluate_loss(const ToyDenoiser& model, const Eigen::MatrixXd& z, Index t, const Anchors& anchors,
                               const Eigen::MatrixXd& c_hat, const TokenPartition& part, const LossWeights& w) {
  if (anchors.kind == LossKind::kAttention) {
    const auto [pe, ne] = attention_blocks(attention(model, z, t, c_hat), part);
    return attention_loss(pe, anchors.pe, ne, anchors.ne, w);
  }
  detail::check_inputs(model, z, t, c_hat);
  const auto [pe, ne] = value_blocks(model, c_hat, part);
  return value_loss(pe, anchors.pe, ne, anchors.ne, w);
}

struct LossGradient {
  LossValue loss;
  Eigen::MatrixXd grad;  // embed_dim x tokens
  AttentionMaps maps;    // maps at c_hat
};

/// Analytic dL/dc_hat for every column of c_hat.
inline LossGradient grad_loss_wrt_embeddings(const ToyDenoiser& model, const Eigen::MatrixXd& z, Index t,
                                             const Anchors& anchors, const Eigen::MatrixXd& c_hat,
                                             const TokenPartition& part, const LossWeights& w) {
  detail::check_inputs(model, z, t, c_hat);
  detail::require(c_hat.cols() == part.token_count, ErrorCode::kShapeMismatch, "partition/token count mismatch");
  const auto& weights = model.weights();
  const Index n = c_hat.cols();

  LossGradient out;
  const Eigen::MatrixXd q = detail::queries(model, z, t);
  const Eigen::MatrixXd k = c_hat.transpose() * weights.W_K;
  const double scale = 1.0 / std::sqrt(static_cast<double>(model.config().d_attn));
  out.maps.A = detail::row_softmax((q * k.transpose()) * scale);

  if (anchors.kind == LossKind::kAttention) {
    const Eigen::MatrixXd& a = out.maps.A;
    const auto [hat_pe, hat_ne] = attention_blocks(out.maps, part);
    out.loss = attention_loss(hat_pe, anchors.pe, hat_ne, anchors.ne, w);

    // dL/dA is nonzero only on PE and NE columns.
    Eigen::MatrixXd g_a = Eigen::MatrixXd::Zero(a.rows(), n);
    for (std::size_t j = 0; j < part.pe.size(); ++j)
      g_a.col(part.pe[j]) = 2.0 * w.preserve * (hat_pe.col(static_cast<Index>(j)) - anchors.pe.col(static_cast<Index>(j)));
    for (std::size_t j = 0; j < part.ne.size(); ++j)
      g_a.col(part.ne[j]) = -2.0 * w.suppress * (hat_ne.col(static_cast<Index>(j)) - anchors.ne.col(static_cast<Index>(j)));

    // Row-softmax backward: dS = A .* (dA - rowsum(dA .* A)).
    const Eigen::VectorXd inner = (g_a.array() * a.array()).rowwise().sum();
    const Eigen::MatrixXd g_s = (a.array() * (g_a.colwise() - inner).array()).matrix();
    const Eigen::MatrixXd g_k = scale * (g_s.transpose() * q);  // tokens x d_attn
    out.grad = weights.W_K * g_k.transpose();
  } else {
    const auto [hat_pe, hat_ne] = value_blocks(model, c_hat, part);
    out.loss = value_loss(hat_pe, anchors.pe, hat_ne, anchors.ne, w);
    Eigen::MatrixXd g_v = Eigen::MatrixXd::Zero(n, weights.W_V.cols());
    for (std::size_t j = 0; j < part.pe.size(); ++j)
      g_v.row(part.pe[j]) = 2.0 * w.preserve * (hat_pe.row(static_cast<Index>(j)) - anchors.pe.row(static_cast<Index>(j)));
    for (std::size_t j = 0; j < part.ne.size(); ++j)
      g_v.row(part.ne[j]) = -2.0 * w.suppress * (hat_ne.row(static_cast<Index>(j)) - anchors.ne.row(static_cast<Index>(j)));
    out.grad = weights.W_V * g_v.transpose();
  }

  if (!std::isfinite(out.loss.total) || !out.grad.allFinite()) {
    throw Error(ErrorCode::kNonFinite,
                "non-finite gradient at t=" + std::to_string(t) + " (loss=" + std::to_string(out.loss.total) +
                    ", max|c_hat|=" + std::to_string(c_hat.cwiseAbs().maxCoeff()) + ")");
  }
  return out;
}

}  // namespace eots
