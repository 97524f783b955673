#pragma once

// Seeded synthetic inputs shared by the tests, the acceptance suite and the CLI.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "eots/embedding.hpp"
#include "eots/random.hpp"
#include "eots/toy_attention.hpp"

namespace eots::fixtures {

inline constexpr std::uint64_t kSuppressionSeed = 20231017;

struct SuppressionFixture {
  ToyDenoiser model;
  TextEmbeddings emb;
  TokenPartition part;
  Eigen::MatrixXd z_T;
};

/// A 768 x 77 embedding laid out like "a man without glasses": four prompt
/// tokens with the negative target at position 4. The negative-target column
/// points along the direction that the mean query at t=T scores highest, and
/// every EOT column is a noisy mix of that column and the prompt mean, so the
/// padding carries the negative-target semantics as well.
/// `cfg` supplies grid, latent, attention and timestep sizes; its seed and
/// embedding dimension are overridden.
inline SuppressionFixture suppression_fixture(std::uint64_t seed = kSuppressionSeed, ToyDenoiserConfig cfg = {}) {
  cfg.seed = seed;
  cfg.embed_dim = kDefaultEmbedDim;
  ToyDenoiser model(cfg);

  SplitMix64 rng(seed ^ 0xA5A5A5A5DEADBEEFULL);
  const Index m = cfg.embed_dim;
  const Index n = kDefaultTokenCount;
  const Index p = 4;
  const double col_scale = 1.0 / std::sqrt(static_cast<double>(m));

  Eigen::MatrixXd z_T = normal_matrix(cfg.positions(), cfg.d_latent, rng, 4.0);
  Eigen::MatrixXd c(m, n);
  c.col(0) = normal_matrix(m, 1, rng, 2.0 * col_scale);
  for (Index j = 1; j < p; ++j) c.col(j) = normal_matrix(m, 1, rng, 2.0 * col_scale);

  const Eigen::RowVectorXd q_mean = detail::queries(model, z_T, cfg.timesteps).colwise().mean();
  Eigen::VectorXd dir = model.weights().W_K * q_mean.transpose();
  dir.normalize();
  c.col(p) = 10.0 * dir + normal_matrix(m, 1, rng, 0.5 * col_scale);

  const Eigen::VectorXd prompt_mean = c.middleCols(1, p - 1).rowwise().mean();
  for (Index j = p + 1; j < n; ++j)
    c.col(j) = 0.6 * c.col(p) + 0.4 * prompt_mean + normal_matrix(m, 1, rng, 0.05 * col_scale);

  return {std::move(model), TextEmbeddings(std::move(c), p), partition(p, {p}, n), std::move(z_T)};
}

/// Small instance for finite-difference checks: 4x4 grid, N=12, M=24.
struct GradcheckInstance {
  ToyDenoiser model;
  TokenPartition part;
  Eigen::MatrixXd z;
  Index t = 1;
  Eigen::MatrixXd c;      // anchors come from here
  Eigen::MatrixXd c_hat;  // evaluation point
};

inline GradcheckInstance gradcheck_instance(std::uint64_t seed) {
  ToyDenoiserConfig cfg;
  cfg.grid_h = 4;
  cfg.grid_w = 4;
  cfg.d_latent = 6;
  cfg.d_attn = 8;
  cfg.timesteps = 10;
  cfg.embed_dim = 24;
  cfg.seed = seed;
  ToyDenoiser model(cfg);

  SplitMix64 rng(seed * 0x9E3779B97F4A7C15ULL + 17);
  const Index n = 12;
  const Index p = 5;
  const Index ne_pos = 1 + static_cast<Index>(rng.next() % p);
  Eigen::MatrixXd z = normal_matrix(cfg.positions(), cfg.d_latent, rng);
  const Index t = 1 + static_cast<Index>(rng.next() % static_cast<std::uint64_t>(cfg.timesteps));
  Eigen::MatrixXd c = normal_matrix(cfg.embed_dim, n, rng);
  Eigen::MatrixXd c_hat = c + normal_matrix(cfg.embed_dim, n, rng, 0.5);
  return {std::move(model), partition(p, {ne_pos}, n), std::move(z), t, std::move(c), std::move(c_hat)};
}

}  // namespace eots::fixtures
