#pragma once

// Structured text-embedding matrices.
//
// Tokens are columns of an M x N matrix: column 0 is the start-of-text token,
// columns 1..p are the prompt tokens and columns p+1..N-1 are end-of-text
// padding tokens. Prompt tokens split into a preserved set (PE) and a
// negative-target set (NE) whose semantics should be suppressed.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "eots/error.hpp"

namespace eots {

using Eigen::Index;

inline constexpr Index kDefaultEmbedDim = 768;
inline constexpr Index kDefaultTokenCount = 77;

namespace detail {

inline bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  return m.allFinite();
}

}  // namespace detail

class TextEmbeddings {
 public:
  TextEmbeddings(Eigen::MatrixXd data, Index prompt_len)
      : data_(std::move(data)), prompt_len_(prompt_len) {
    detail::require(prompt_len_ >= 0, ErrorCode::kInvalidArgument, "prompt length must be >= 0");
    detail::require(data_.rows() >= 1, ErrorCode::kShapeMismatch, "embedding dimension must be >= 1");
    detail::require(data_.cols() >= prompt_len_ + 2, ErrorCode::kShapeMismatch,
                    "need N >= prompt_len + 2 (one SOT and at least one EOT column), got N=" +
                        std::to_string(data_.cols()) + ", prompt_len=" + std::to_string(prompt_len_));
    detail::require(detail::all_finite(data_), ErrorCode::kNonFinite, "embedding entries must be finite");
  }

  const Eigen::MatrixXd& data() const noexcept { return data_; }
  Index embed_dim() const noexcept { return data_.rows(); }
  Index token_count() const noexcept { return data_.cols(); }
  Index prompt_len() const noexcept { return prompt_len_; }
  Index eot_begin() const noexcept { return prompt_len_ + 1; }
  Index eot_count() const noexcept { return token_count() - prompt_len_ - 1; }

  auto column(Index j) const { return data_.col(j); }

  /// Same token layout, new values. Shape must match.
  TextEmbeddings with_data(Eigen::MatrixXd data) const {
    detail::require(data.rows() == data_.rows() && data.cols() == data_.cols(),
                    ErrorCode::kShapeMismatch, "replacement data has a different shape");
    return TextEmbeddings(std::move(data), prompt_len_);
  }

  friend bool operator==(const TextEmbeddings& a, const TextEmbeddings& b) {
    return a.prompt_len_ == b.prompt_len_ && a.data_.rows() == b.data_.rows() &&
           a.data_.cols() == b.data_.cols() && a.data_ == b.data_;
  }

 private:
  Eigen::MatrixXd data_;
  Index prompt_len_;
};

struct TokenPartition {
  Index prompt_len = 0;
  Index token_count = kDefaultTokenCount;
  std::vector<Index> pe;  // ascending, subset of 1..prompt_len
  std::vector<Index> ne;  // ascending, subset of 1..prompt_len

  static constexpr Index sot() { return 0; }
  Index eot_begin() const { return prompt_len + 1; }
  Index eot_count() const { return token_count - prompt_len - 1; }

  std::vector<Index> eot() const {
    std::vector<Index> out(static_cast<std::size_t>(eot_count()));
    for (Index j = 0; j < eot_count(); ++j) out[static_cast<std::size_t>(j)] = eot_begin() + j;
    return out;
  }

  /// NE indices followed by EOT indices: the column order of the negative-target matrix.
  std::vector<Index> ne_and_eot() const {
    std::vector<Index> out = ne;
    for (Index j = eot_begin(); j < token_count; ++j) out.push_back(j);
    return out;
  }

  void check_compatible(const TextEmbeddings& emb) const {
    detail::require(emb.prompt_len() == prompt_len && emb.token_count() == token_count,
                    ErrorCode::kShapeMismatch,
                    "partition (prompt_len=" + std::to_string(prompt_len) + ", N=" +
                        std::to_string(token_count) + ") does not match embeddings (prompt_len=" +
                        std::to_string(emb.prompt_len()) + ", N=" + std::to_string(emb.token_count()) + ")");
  }

  friend bool operator==(const TokenPartition&, const TokenPartition&) = default;
};

/// Splits prompt positions 1..prompt_len into NE (given) and PE (the rest).
inline TokenPartition partition(Index prompt_len, std::span<const Index> ne_positions,
                                Index token_count = kDefaultTokenCount) {
  detail::require(prompt_len >= 1, ErrorCode::kInvalidPartition, "prompt must contain at least one token");
  detail::require(token_count >= prompt_len + 2, ErrorCode::kInvalidPartition,
                  "token count " + std::to_string(token_count) + " leaves no EOT column for prompt_len " +
                      std::to_string(prompt_len));
  detail::require(!ne_positions.empty(), ErrorCode::kInvalidPartition, "negative-target set is empty");

  std::vector<Index> ne(ne_positions.begin(), ne_positions.end());
  std::sort(ne.begin(), ne.end());
  for (std::size_t i = 0; i < ne.size(); ++i) {
    detail::require(ne[i] >= 1 && ne[i] <= prompt_len, ErrorCode::kInvalidPartition,
                    "position " + std::to_string(ne[i]) + " is outside the prompt span 1.." +
                        std::to_string(prompt_len));
    detail::require(i == 0 || ne[i] != ne[i - 1], ErrorCode::kInvalidPartition,
                    "duplicate position " + std::to_string(ne[i]));
  }

  TokenPartition part;
  part.prompt_len = prompt_len;
  part.token_count = token_count;
  part.ne = std::move(ne);
  for (Index j = 1; j <= prompt_len; ++j)
    if (!std::binary_search(part.ne.begin(), part.ne.end(), j)) part.pe.push_back(j);
  return part;
}

inline TokenPartition partition(Index prompt_len, std::initializer_list<Index> ne_positions,
                                Index token_count = kDefaultTokenCount) {
  return partition(prompt_len, std::span<const Index>(ne_positions.begin(), ne_positions.size()), token_count);
}

/// The matrix [c^NE | c^EOT_0 .. c^EOT_last], M x (|ne| + N - p - 1).
struct NegativeTargetMatrix {
  Eigen::MatrixXd chi;
  Index ne_count = 0;
  Index eot_count = 0;

  Index cols() const { return chi.cols(); }
};

inline Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& m, std::span<const Index> cols) {
  Eigen::MatrixXd out(m.rows(), static_cast<Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Index>(k)) = m.col(cols[k]);
  return out;
}

inline NegativeTargetMatrix build_chi(const TextEmbeddings& emb, const TokenPartition& part) {
  part.check_compatible(emb);
  const auto cols = part.ne_and_eot();
  return {gather_columns(emb.data(), cols), static_cast<Index>(part.ne.size()), part.eot_count()};
}

inline TextEmbeddings scatter_chi_back(const TextEmbeddings& emb, const NegativeTargetMatrix& chi_hat,
                                       const TokenPartition& part) {
  part.check_compatible(emb);
  const auto cols = part.ne_and_eot();
  detail::require(chi_hat.chi.rows() == emb.embed_dim() && chi_hat.chi.cols() == static_cast<Index>(cols.size()),
                  ErrorCode::kShapeMismatch,
                  "chi is " + std::to_string(chi_hat.chi.rows()) + "x" + std::to_string(chi_hat.chi.cols()) +
                      ", expected " + std::to_string(emb.embed_dim()) + "x" + std::to_string(cols.size()));
  Eigen::MatrixXd out = emb.data();
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(cols[k]) = chi_hat.chi.col(static_cast<Index>(k));
  return emb.with_data(std::move(out));
}

inline TextEmbeddings zero_out_tokens(const TextEmbeddings& emb, std::span<const Index> indices) {
  Eigen::MatrixXd out = emb.data();
  for (Index j : indices) {
    detail::require(j >= 0 && j < emb.token_count(), ErrorCode::kInvalidArgument,
                    "token index " + std::to_string(j) + " out of range");
    out.col(j).setZero();
  }
  return emb.with_data(std::move(out));
}

}  // namespace eots
