#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "eots/embedding.hpp"
#include "eots/random.hpp"
#include "eots/spectrum.hpp"

namespace eots {
namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// Orthonormal columns from a QR of a random matrix; independent of the SVD code path.
Eigen::MatrixXd random_orthonormal(Index rows, Index cols, SplitMix64& rng) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(uniform_matrix(rows, cols, rng));
  return qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
}

// Matrix with a prescribed spectrum.
Eigen::MatrixXd with_spectrum(Index rows, Index cols, const Eigen::VectorXd& s, SplitMix64& rng) {
  return random_orthonormal(rows, s.size(), rng) * s.asDiagonal() * random_orthonormal(cols, s.size(), rng).transpose();
}

TEST(Svd, DiagonalMatrix) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(3, 3);
  m.diagonal() << 3, 2, 1;
  const auto dec = svd(m);
  EXPECT_NEAR((dec.sigma - vec({3, 2, 1})).cwiseAbs().maxCoeff(), 0.0, 1e-14);
}

TEST(Svd, ZeroMatrix) {
  const auto dec = svd(Eigen::MatrixXd::Zero(5, 4));
  EXPECT_EQ(dec.sigma.size(), 4);
  EXPECT_TRUE(dec.sigma.isZero(0.0));
}

TEST(Svd, RejectsNonFinite) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Ones(3, 3);
  m(0, 0) = std::numeric_limits<double>::infinity();
  try {
    svd(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFinite);
  }
}

TEST(Svd, InvariantsOnRandomMatrices) {
  SplitMix64 rng(11);
  for (auto [r, c] : std::vector<std::pair<Index, Index>>{{8, 5}, {5, 8}, {768, 72}, {1, 7}, {7, 1}}) {
    const Eigen::MatrixXd m = uniform_matrix(r, c, rng);
    const auto dec = svd(m);
    const Index k = std::min(r, c);
    ASSERT_EQ(dec.sigma.size(), k);
    for (Index i = 0; i + 1 < k; ++i) EXPECT_GE(dec.sigma[i], dec.sigma[i + 1]);
    EXPECT_GE(dec.sigma.minCoeff(), 0.0);
    EXPECT_LE((dec.U.transpose() * dec.U - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((dec.V.transpose() * dec.V - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((reconstruct(dec, dec.sigma) - m).norm() / m.norm(), 1e-10);
    for (Index i = 0; i < k; ++i) {
      Index arg;
      dec.U.col(i).cwiseAbs().maxCoeff(&arg);
      EXPECT_GT(dec.U(arg, i), 0.0) << "sign canonicalization, column " << i;
    }
  }
}

TEST(Svd, SignCanonicalizationIsStableUnderNegation) {
  SplitMix64 rng(12);
  const Eigen::MatrixXd m = uniform_matrix(10, 6, rng);
  const auto a = svd(m);
  const auto b = svd(m);
  EXPECT_EQ(a.U, b.U);
  EXPECT_EQ(a.V, b.V);
  EXPECT_EQ(a.sigma, b.sigma);
}

TEST(SoftWeight, MatchesDirectEvaluation) {
  const auto out = soft_weight_spectrum(vec({0, 1, 10}), 1.0);
  EXPECT_EQ(out[0], 0.0);
  EXPECT_NEAR(out[1], 0.3678794412, 1e-10);
  EXPECT_NEAR(out[2], 4.539993e-4, 1e-9);
}

TEST(SoftWeight, GammaZeroIsIdentityAndHugeGammaZeroes) {
  const auto s = vec({7.5, 2, 0.3, 0});
  EXPECT_EQ(soft_weight_spectrum(s, 0.0), s);
  const auto z = soft_weight_spectrum(vec({2, 1}), 1e6);
  EXPECT_LT(z[0], 1e-300);
  EXPECT_LT(z[1], 1e-300);
}

TEST(SoftWeight, RejectsNegativeInputs) {
  EXPECT_THROW(soft_weight_spectrum(vec({1, -1})), Error);
  EXPECT_THROW(soft_weight_spectrum(vec({1}), -0.5), Error);
}

TEST(SoftWeight, ShrinkageLaw) {
  // Sorted spectrum: factor e^{-gamma sigma} strictly decreasing in sigma, and
  // the output never exceeds the input, with equality only at zero.
  const auto s = vec({9, 4, 2.5, 1, 0.25, 0});
  for (double gamma : {0.1, 0.5, 1.0, 3.0}) {
    const auto out = soft_weight_spectrum(s, gamma);
    for (Index i = 0; i < s.size(); ++i) {
      if (s[i] > 0) {
        EXPECT_LT(out[i], s[i]);
      } else {
        EXPECT_EQ(out[i], 0.0);
      }
    }
    for (Index i = 0; i + 2 < s.size(); ++i) EXPECT_LT(out[i] / s[i], out[i + 1] / s[i + 1]);
  }
}

TEST(SoftWeight, PeakAtOne) {
  const Index n = 10000;
  Eigen::VectorXd grid(n);
  for (Index i = 0; i < n; ++i) grid[i] = 20.0 * static_cast<double>(i + 1) / static_cast<double>(n);
  const auto out = soft_weight_spectrum(grid, 1.0);
  Index arg;
  const double best = out.maxCoeff(&arg);
  EXPECT_NEAR(grid[arg], 1.0, 1e-3);
  EXPECT_NEAR(best, std::exp(-1.0), 1e-9);
}

TEST(Strengthen, DirectEvaluationAndIdentity) {
  EXPECT_NEAR(strengthen_spectrum(vec({1}), 0.001, 1.2)[0], 1.2 * std::exp(0.001), 1e-15);
  EXPECT_NEAR(strengthen_spectrum(vec({1}), 0.001, 1.2)[0], 1.2012006, 1e-7);
  const auto s = vec({3, 2, 1});
  EXPECT_EQ(strengthen_spectrum(s, 0.0, 1.0), s);
  EXPECT_THROW(strengthen_spectrum(s, 0.001, 0.0), Error);
}

TEST(Strengthen, GainIncreasesWithSigma) {
  const auto s = vec({50, 10, 2, 0.5});
  const auto out = strengthen_spectrum(s);
  for (Index i = 0; i + 1 < s.size(); ++i) EXPECT_GT(out[i] / s[i], out[i + 1] / s[i + 1]);
}

TEST(ZeroK, TopAndBottom) {
  const auto s = vec({5, 3, 1});
  EXPECT_EQ(zero_topk(s, 2), vec({0, 0, 1}));
  EXPECT_EQ(zero_bottomk(s, 0), s);
  EXPECT_EQ(zero_bottomk(s, 1), vec({5, 3, 0}));
  EXPECT_TRUE(zero_topk(s, 3).isZero(0.0));
  EXPECT_THROW(zero_topk(s, 4), Error);
  EXPECT_THROW(zero_bottomk(s, -1), Error);

  SplitMix64 rng(4);
  const Eigen::MatrixXd m = uniform_matrix(6, 4, rng);
  const auto dec = svd(m);
  EXPECT_TRUE(reconstruct(dec, zero_topk(dec.sigma, 4)).isZero(0.0));
}

TEST(Wnnm, HandCases) {
  EXPECT_EQ(wnnm_threshold(vec({5, 3, 1}), vec({1, 1, 2})), vec({4, 2, 0}));
  const auto s = vec({5, 3, 1});
  EXPECT_EQ(wnnm_threshold(s, Eigen::VectorXd::Zero(3)), s);
  const auto w = wnnm_weights(vec({4, 1}), 2.0, 1e-6);
  const auto out = wnnm_threshold(vec({4, 1}), w);
  EXPECT_NEAR(out[0], 4.0 - 2.0 / (4.0 + 1e-6), 1e-15);
  EXPECT_NEAR(out[0], 3.5, 1e-6);
  EXPECT_EQ(out[1], 0.0);
}

TEST(Wnnm, RejectsBadWeights) {
  EXPECT_THROW(wnnm_threshold(vec({5, 3}), vec({1})), Error);
  EXPECT_THROW(wnnm_threshold(vec({5, 3}), vec({2, 1})), Error);
  EXPECT_THROW(wnnm_threshold(vec({5, 3}), vec({-1, 1})), Error);
}

TEST(Wnnm, RankNonincreasingInLambda) {
  SplitMix64 rng(21);
  for (int f = 0; f < 5; ++f) {
    const auto dec = svd(uniform_matrix(40, 12, rng));
    Index prev = dec.sigma.size() + 1;
    for (int i = 0; i < 10; ++i) {
      const double lambda = 0.5 * i * i;
      const auto out = wnnm_threshold(dec.sigma, wnnm_weights(dec.sigma, lambda));
      const Index rank = (out.array() > 0.0).count();
      EXPECT_LE(rank, prev);
      prev = rank;
    }
  }
}

TEST(Reconstruct, IdentityZeroAndShrink) {
  SplitMix64 rng(31);
  const Eigen::MatrixXd chi = uniform_matrix(768, 72, rng);
  const auto dec = svd(chi);
  EXPECT_LT((reconstruct(dec, dec.sigma) - chi).norm() / chi.norm(), 1e-10);
  EXPECT_TRUE(reconstruct(dec, Eigen::VectorXd::Zero(72)).isZero(0.0));
  const auto hat = reconstruct(dec, soft_weight_spectrum(dec.sigma, 1.0));
  // Frobenius norm equals the l2 norm of the spectrum, so strict shrinkage of
  // every positive singular value strictly shrinks the matrix.
  EXPECT_LT(hat.norm(), chi.norm());
  EXPECT_NEAR(hat.norm(), soft_weight_spectrum(dec.sigma, 1.0).norm(), 1e-9 * chi.norm());
  EXPECT_THROW(reconstruct(dec, Eigen::VectorXd::Zero(3)), Error);
}

TEST(EckartYoung, TruncationErrorMatchesTailEnergy) {
  SplitMix64 rng(41);
  // Known spectrum from construction, not from the SVD under test.
  const auto s = vec({40, 20, 10, 5, 2.5, 1, 0.5, 0.25});
  const Eigen::MatrixXd m = with_spectrum(30, 8, s, rng);
  const auto dec = svd(m);
  for (Index k = 0; k <= 8; ++k) {
    const double err = (m - reconstruct(dec, zero_bottomk(dec.sigma, 8 - k))).norm();
    EXPECT_NEAR(err, s.tail(8 - k).norm(), 1e-9) << "K=" << k;
  }
  // Any other rank-3 matrix does at least as badly.
  const double best = (m - reconstruct(dec, zero_bottomk(dec.sigma, 5))).norm();
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd other = uniform_matrix(30, 3, rng) * uniform_matrix(3, 8, rng);
    EXPECT_GE((m - other).norm(), best);
  }
}

class SuppressTest : public ::testing::Test {
 protected:
  void SetUp() override {
    SplitMix64 rng(51);
    emb_.emplace(uniform_matrix(64, 30, rng), 5);
    part_ = partition(5, {2, 5}, 30);
  }
  std::optional<TextEmbeddings> emb_;
  TokenPartition part_;
};

TEST_F(SuppressTest, GammaZeroIsIdentity) {
  const auto out = suppress(*emb_, part_, rule::SoftWeight{0.0});
  EXPECT_LT((out.data() - emb_->data()).norm() / emb_->data().norm(), 1e-10);
  EXPECT_EQ(suppress(*emb_, part_, rule::Identity{}), *emb_);
}

TEST_F(SuppressTest, HugeGammaEqualsZeroingNegativeAndEot) {
  const auto out = suppress(*emb_, part_, rule::SoftWeight{1e6});
  const auto ref = zero_out_tokens(*emb_, part_.ne_and_eot());
  EXPECT_LT((out.data() - ref.data()).norm() / ref.data().norm(), 1e-10);
}

TEST_F(SuppressTest, NeverTouchesSotOrPositive) {
  for (const SpectrumRule& r : std::vector<SpectrumRule>{rule::SoftWeight{1.0}, rule::Strengthen{}, rule::ZeroTop{2},
                                                          rule::ZeroBottom{3}, rule::Wnnm{{}, 1.0, 1e-6},
                                                          rule::Attenuate{0.1}}) {
    const auto out = suppress(*emb_, part_, r);
    EXPECT_EQ(out.column(0), emb_->column(0)) << rule_name(r);
    for (Index j : part_.pe) EXPECT_EQ(out.column(j), emb_->column(j)) << rule_name(r);
  }
}

TEST_F(SuppressTest, DeterministicBitForBit) {
  const auto a = suppress(*emb_, part_, rule::SoftWeight{1.0});
  const auto b = suppress(*emb_, part_, rule::SoftWeight{1.0});
  EXPECT_EQ(a, b);
}

TEST(Suppress, ZeroTopRemovesDominantEnergy) {
  SplitMix64 rng(61);
  const Index m = 128, p = 3, n = 40;
  const auto part = partition(p, {2}, n);
  const Index cols = 1 + n - p - 1;
  Eigen::VectorXd s = Eigen::VectorXd::Zero(cols);
  s.head(2) << 100.0, 60.0;
  for (Index i = 2; i < cols; ++i) s[i] = 1.0 / static_cast<double>(i);
  const Eigen::MatrixXd chi = with_spectrum(m, cols, s, rng);

  Eigen::MatrixXd data = uniform_matrix(m, n, rng);
  const auto cols_idx = part.ne_and_eot();
  for (std::size_t k = 0; k < cols_idx.size(); ++k) data.col(cols_idx[k]) = chi.col(static_cast<Index>(k));
  const TextEmbeddings emb(data, p);

  const auto out = suppress(emb, part, rule::ZeroTop{2});
  const double energy = build_chi(out, part).chi.squaredNorm();
  EXPECT_NEAR(energy, s.tail(cols - 2).squaredNorm(), 1e-9);
}

TEST(Suppress, PropagatesRuleErrors) {
  SplitMix64 rng(71);
  const TextEmbeddings emb(uniform_matrix(8, 10, rng), 3);
  const auto part = partition(3, {1}, 10);
  EXPECT_THROW(suppress(emb, part, rule::ZeroTop{8}), Error);  // r = min(8, 7) = 7
  EXPECT_THROW(suppress(emb, part, rule::Strengthen{0.001, -1.0}), Error);
}

}  // namespace
}  // namespace eots
