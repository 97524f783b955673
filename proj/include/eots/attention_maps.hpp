#pragma once

#include <span>
#include <utility>

#include <Eigen/Dense>

#include "eots/embedding.hpp"

namespace eots {

/// Row-stochastic cross-attention matrix: one row per spatial position, one column per token.
struct AttentionMaps {
  Eigen::MatrixXd A;

  Index positions() const { return A.rows(); }
  Index tokens() const { return A.cols(); }

  Eigen::MatrixXd columns(std::span<const Index> idx) const { return gather_columns(A, idx); }
};

/// (A_PE, A_NE) column blocks, order preserving.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> attention_blocks(const AttentionMaps& maps,
                                                                    const TokenPartition& part) {
  return {maps.columns(part.pe), maps.columns(part.ne)};
}

}  // namespace eots
