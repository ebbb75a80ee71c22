#pragma once

#include <vector>

#include "rhymelm/model.hpp"

// Straight-line loop implementations of the model's forward computation, written
// independently of the autodiff graph. Used as oracles.
namespace rhymelm::reference {

using Rows = std::vector<std::vector<double>>;

Rows from_matrix(const Matrix& m);
Matrix to_matrix(const Rows& r);

double act(ad::Activation kind, double x);

// y = x W + b, row by row.
Rows affine(const Rows& x, const Matrix& w, const Matrix* b);
Rows layer_norm(const Rows& x, const Matrix& gain, const Matrix& bias);
Rows attention(const Rows& x, const AttentionParams& p, int heads, std::vector<Rows>* weights = nullptr);

struct Fused {
  std::vector<double> token;
  std::vector<double> rhyme;
};

// The three fusion equations for one position, scalar loops throughout.
Fused fuse_position(const std::vector<double>& w_tilde, const std::vector<double>* e_tilde,
                    const FusionParams& p, ad::Activation kind);

struct Streams {
  Rows tokens;
  Rows rhymes;  // empty when the rhyme stream is off
};

Streams aggregator(const Streams& in, const AggregatorParams& p, const ModelConfig& cfg);

Matrix forward(const Model& m, const std::vector<int>& token_ids, const std::vector<int>& rhyme_ids);

// A single-stream post-norm decoder block: x1 = LN(x + MHA(x)),
// y = LN(x1 + act(act(x1 W1 + b1) W2 + b2)); `residuals` toggles both skips.
Rows plain_block(const Rows& x, const AttentionParams& attn, const Matrix& w1, const Matrix& b1,
                 const Matrix& w2, const Matrix& b2, const LayerNormParams& norm1,
                 const LayerNormParams& norm2, int heads, ad::Activation kind, bool residuals);

}  // namespace rhymelm::reference
