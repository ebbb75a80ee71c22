#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rhymelm/autodiff.hpp"

namespace rhymelm {

using ad::Matrix;
using ad::Parameter;

struct ModelConfig {
  int num_aggregators = 6;
  int fusion_dim = 768;
  int num_heads = 4;
  int vocab_size = 0;
  int rhyme_dim = 0;    // 0: fusion_dim / 4
  int rhyme_heads = 0;  // 0: min(num_heads, rhyme_dim / 8), at least 1
  int max_seq_len = 64;
  ad::Activation activation = ad::Activation::kGelu;
  bool use_residuals = true;
  // Off: rhyme stream dropped and fusion reduced to the token path.
  bool use_rhyme_stream = true;

  // Copy with the derived defaults filled in; throws std::invalid_argument on
  // inconsistent sizes.
  ModelConfig resolved() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// The key projection has no bias: a key bias shifts every score in a row by the
// same amount and cancels in the softmax.
struct AttentionParams {
  Parameter wq, bq, wk, wv, bv, wo, bo;
};

// Information fusion weights (row-vector convention, y = x W + b):
//   h = act(w~ Wt_in + e~ We_in + b_in)
//   w = act(h Wt_out + bt_out)
//   e = act(h We_out + be_out)
struct FusionParams {
  Parameter token_in;        // d x d
  Parameter rhyme_in;        // d_e x d
  Parameter bias_in;         // 1 x d
  Parameter token_out;       // d x d
  Parameter token_out_bias;  // 1 x d
  Parameter rhyme_out;       // d x d_e
  Parameter rhyme_out_bias;  // 1 x d_e
};

struct LayerNormParams {
  Parameter gain, bias;
};

struct AggregatorParams {
  AttentionParams token_attn;
  AttentionParams rhyme_attn;
  FusionParams fusion;
  LayerNormParams token_attn_norm;
  LayerNormParams rhyme_attn_norm;
  LayerNormParams token_fuse_norm;
  LayerNormParams rhyme_fuse_norm;
};

struct EmbeddingParams {
  Parameter token;       // V x d
  Parameter token_pos;   // max_seq_len x d
  Parameter rhyme;       // 18 x d_e: the dense image of each one-hot rhyme symbol
  Parameter rhyme_pos;   // max_seq_len x d_e
};

struct StreamVars {
  ad::Var tokens;                // n x d
  std::optional<ad::Var> rhymes;  // n x d_e, absent when the rhyme stream is off
};

enum class Stream { kToken, kRhyme };
std::string_view to_string(Stream s);

struct AttentionMap {
  int layer = 0;
  Stream stream = Stream::kToken;
  int head = 0;
  Matrix weights;  // n x n, post-softmax
};

struct AttentionTrace {
  std::vector<AttentionMap> maps;
};

// Causal multi-head self-attention over the rows of `x`. Records the per-head
// weight matrices into `weights` when given.
ad::Var masked_mha(ad::Graph& g, ad::Var x, const AttentionParams& p, int heads,
                   std::vector<Matrix>* weights = nullptr);

struct FusedStreams {
  ad::Var tokens;
  std::optional<ad::Var> rhymes;
};

// Position-wise fusion. Without a rhyme input the rhyme term and rhyme output
// are skipped.
FusedStreams fuse(ad::Graph& g, ad::Var token_tilde, std::optional<ad::Var> rhyme_tilde,
                  const FusionParams& p, ad::Activation act);

StreamVars aggregator_forward(ad::Graph& g, const StreamVars& in, const AggregatorParams& p,
                              const ModelConfig& cfg, int layer = 0, AttentionTrace* trace = nullptr);

class Model {
 public:
  // Normal(0, 0.02) weights, zero biases, unit LayerNorm gains.
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  StreamVars embed(ad::Graph& g, std::span<const int> token_ids, std::span<const int> rhyme_ids) const;

  // Logits n x V.
  ad::Var forward(ad::Graph& g, std::span<const int> token_ids, std::span<const int> rhyme_ids,
                  AttentionTrace* trace = nullptr) const;

  Matrix logits(std::span<const int> token_ids, std::span<const int> rhyme_ids,
                AttentionTrace* trace = nullptr) const;

  // Stable order; names are unique.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;

  EmbeddingParams& embeddings() { return embeddings_; }
  const EmbeddingParams& embeddings() const { return embeddings_; }
  std::vector<AggregatorParams>& layers() { return layers_; }
  const std::vector<AggregatorParams>& layers() const { return layers_; }
  Parameter& head() { return head_; }
  const Parameter& head() const { return head_; }

 private:
  ModelConfig cfg_;
  EmbeddingParams embeddings_;
  std::vector<AggregatorParams> layers_;
  Parameter head_;  // d x V
};

// Next-token cross-entropy: position j predicts token_ids[j + 1]. `mask` has one
// entry per position (the last one is ignored).
ad::Var next_token_loss(ad::Graph& g, ad::Var logits, std::span<const int> token_ids,
                        std::span<const double> mask, std::optional<double> denominator = std::nullopt);

}  // namespace rhymelm
