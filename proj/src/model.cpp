#include "rhymelm/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "rhymelm/rhyme_vocab.hpp"

namespace rhymelm {

namespace {

constexpr double kInitStd = 0.02;

Parameter normal_param(std::string name, Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, kInitStd);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return {std::move(name), std::move(m)};
}

Parameter const_param(std::string name, Eigen::Index rows, Eigen::Index cols, double v) {
  return {std::move(name), Matrix::Constant(rows, cols, v)};
}

AttentionParams make_attention(const std::string& prefix, int width, std::mt19937_64& rng) {
  return {normal_param(prefix + ".wq", width, width, rng), const_param(prefix + ".bq", 1, width, 0.0),
          normal_param(prefix + ".wk", width, width, rng),
          normal_param(prefix + ".wv", width, width, rng), const_param(prefix + ".bv", 1, width, 0.0),
          normal_param(prefix + ".wo", width, width, rng), const_param(prefix + ".bo", 1, width, 0.0)};
}

LayerNormParams make_norm(const std::string& prefix, int width) {
  return {const_param(prefix + ".gain", 1, width, 1.0), const_param(prefix + ".bias", 1, width, 0.0)};
}

template <typename P>
void collect(AttentionParams& a, std::vector<P>& out) {
  for (Parameter* p : {&a.wq, &a.bq, &a.wk, &a.wv, &a.bv, &a.wo, &a.bo}) out.push_back(p);
}

ad::Var linear(ad::Graph& g, ad::Var x, const Parameter& w, const Parameter& b) {
  return g.add(g.matmul(x, g.param(w)), g.param(b));
}

ad::Var norm(ad::Graph& g, ad::Var x, const LayerNormParams& p) {
  return g.layer_norm(x, g.param(p.gain), g.param(p.bias));
}

}  // namespace

std::string_view to_string(Stream s) { return s == Stream::kToken ? "token" : "rhyme"; }

ModelConfig ModelConfig::resolved() const {
  ModelConfig c = *this;
  if (c.num_aggregators < 1) throw std::invalid_argument("num_aggregators must be >= 1");
  if (c.fusion_dim < 1 || c.num_heads < 1) throw std::invalid_argument("fusion_dim and num_heads must be >= 1");
  if (c.fusion_dim % c.num_heads != 0) {
    throw std::invalid_argument("fusion_dim " + std::to_string(c.fusion_dim) +
                                " not divisible by num_heads " + std::to_string(c.num_heads));
  }
  if (c.rhyme_dim == 0) c.rhyme_dim = std::max(1, c.fusion_dim / 4);
  if (c.rhyme_dim < 1) throw std::invalid_argument("rhyme_dim must be >= 1");
  if (c.rhyme_heads == 0) c.rhyme_heads = std::max(1, std::min(c.num_heads, c.rhyme_dim / 8));
  if (c.rhyme_dim % c.rhyme_heads != 0) {
    throw std::invalid_argument("rhyme_dim " + std::to_string(c.rhyme_dim) +
                                " not divisible by rhyme_heads " + std::to_string(c.rhyme_heads));
  }
  if (c.vocab_size < 1) throw std::invalid_argument("vocab_size must be >= 1");
  if (c.max_seq_len < 1) throw std::invalid_argument("max_seq_len must be >= 1");
  return c;
}

ad::Var masked_mha(ad::Graph& g, ad::Var x, const AttentionParams& p, int heads,
                   std::vector<Matrix>* weights) {
  const auto n = static_cast<std::size_t>(g.value(x).rows());
  const auto width = static_cast<std::size_t>(g.value(x).cols());
  if (p.wq.value.rows() != g.value(x).cols()) {
    throw ad::ShapeError("masked_mha: input " + ad::shape_string(g.value(x)) + " vs wq " +
                         ad::shape_string(p.wq.value));
  }
  if (heads < 1 || width % static_cast<std::size_t>(heads) != 0) {
    throw ad::ShapeError("masked_mha: width " + std::to_string(width) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t head_dim = width / static_cast<std::size_t>(heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  const ad::Var q = linear(g, x, p.wq, p.bq);
  const ad::Var k = g.matmul(x, g.param(p.wk));
  const ad::Var v = linear(g, x, p.wv, p.bv);
  std::vector<ad::Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
    const ad::Var qh = g.slice(q, 0, n, h * head_dim, head_dim);
    const ad::Var kh = g.slice(k, 0, n, h * head_dim, head_dim);
    const ad::Var vh = g.slice(v, 0, n, h * head_dim, head_dim);
    const ad::Var scores = g.scale(g.matmul(qh, g.transpose(kh)), scale);
    const ad::Var attn = g.softmax(scores, /*causal=*/true);
    if (weights != nullptr) weights->push_back(g.value(attn));
    outs.push_back(g.matmul(attn, vh));
  }
  const ad::Var merged = heads == 1 ? outs.front() : g.concat(outs);
  return linear(g, merged, p.wo, p.bo);
}

FusedStreams fuse(ad::Graph& g, ad::Var token_tilde, std::optional<ad::Var> rhyme_tilde,
                  const FusionParams& p, ad::Activation act) {
  ad::Var pre = g.matmul(token_tilde, g.param(p.token_in));
  if (rhyme_tilde) pre = g.add(pre, g.matmul(*rhyme_tilde, g.param(p.rhyme_in)));
  const ad::Var h = g.activation(g.add(pre, g.param(p.bias_in)), act);
  FusedStreams out;
  out.tokens = g.activation(linear(g, h, p.token_out, p.token_out_bias), act);
  if (rhyme_tilde) out.rhymes = g.activation(linear(g, h, p.rhyme_out, p.rhyme_out_bias), act);
  return out;
}

StreamVars aggregator_forward(ad::Graph& g, const StreamVars& in, const AggregatorParams& p,
                              const ModelConfig& cfg, int layer, AttentionTrace* trace) {
  const auto attend = [&](ad::Var x, const AttentionParams& ap, int heads, Stream stream) {
    std::vector<Matrix> weights;
    const ad::Var out = masked_mha(g, x, ap, heads, trace != nullptr ? &weights : nullptr);
    if (trace != nullptr) {
      for (std::size_t h = 0; h < weights.size(); ++h) {
        trace->maps.push_back({layer, stream, static_cast<int>(h), std::move(weights[h])});
      }
    }
    return out;
  };
  const auto residual = [&](ad::Var skip, ad::Var x) { return cfg.use_residuals ? g.add(skip, x) : x; };

  const ad::Var w_attn = attend(in.tokens, p.token_attn, cfg.num_heads, Stream::kToken);
  const ad::Var w_tilde = norm(g, residual(in.tokens, w_attn), p.token_attn_norm);
  std::optional<ad::Var> e_tilde;
  if (in.rhymes) {
    const ad::Var e_attn = attend(*in.rhymes, p.rhyme_attn, cfg.rhyme_heads, Stream::kRhyme);
    e_tilde = norm(g, residual(*in.rhymes, e_attn), p.rhyme_attn_norm);
  }

  const FusedStreams fused = fuse(g, w_tilde, e_tilde, p.fusion, cfg.activation);
  StreamVars out;
  out.tokens = norm(g, residual(w_tilde, fused.tokens), p.token_fuse_norm);
  if (e_tilde) out.rhymes = norm(g, residual(*e_tilde, *fused.rhymes), p.rhyme_fuse_norm);
  return out;
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg.resolved()) {
  std::mt19937_64 rng(seed);
  const int d = cfg_.fusion_dim;
  const int de = cfg_.rhyme_dim;
  embeddings_.token = normal_param("embed.token", cfg_.vocab_size, d, rng);
  embeddings_.token_pos = normal_param("embed.token_pos", cfg_.max_seq_len, d, rng);
  embeddings_.rhyme = normal_param("embed.rhyme", static_cast<Eigen::Index>(kNumRhymeSymbols), de, rng);
  embeddings_.rhyme_pos = normal_param("embed.rhyme_pos", cfg_.max_seq_len, de, rng);
  for (int i = 0; i < cfg_.num_aggregators; ++i) {
    const std::string pre = "agg" + std::to_string(i);
    AggregatorParams a;
    a.token_attn = make_attention(pre + ".token_attn", d, rng);
    a.rhyme_attn = make_attention(pre + ".rhyme_attn", de, rng);
    a.fusion.token_in = normal_param(pre + ".fusion.token_in", d, d, rng);
    a.fusion.rhyme_in = normal_param(pre + ".fusion.rhyme_in", de, d, rng);
    a.fusion.bias_in = const_param(pre + ".fusion.bias_in", 1, d, 0.0);
    a.fusion.token_out = normal_param(pre + ".fusion.token_out", d, d, rng);
    a.fusion.token_out_bias = const_param(pre + ".fusion.token_out_bias", 1, d, 0.0);
    a.fusion.rhyme_out = normal_param(pre + ".fusion.rhyme_out", d, de, rng);
    a.fusion.rhyme_out_bias = const_param(pre + ".fusion.rhyme_out_bias", 1, de, 0.0);
    a.token_attn_norm = make_norm(pre + ".token_attn_norm", d);
    a.rhyme_attn_norm = make_norm(pre + ".rhyme_attn_norm", de);
    a.token_fuse_norm = make_norm(pre + ".token_fuse_norm", d);
    a.rhyme_fuse_norm = make_norm(pre + ".rhyme_fuse_norm", de);
    layers_.push_back(std::move(a));
  }
  head_ = normal_param("head", d, cfg_.vocab_size, rng);
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out = {&embeddings_.token, &embeddings_.token_pos, &embeddings_.rhyme,
                                 &embeddings_.rhyme_pos};
  for (auto& a : layers_) {
    collect(a.token_attn, out);
    collect(a.rhyme_attn, out);
    auto& f = a.fusion;
    for (Parameter* p : {&f.token_in, &f.rhyme_in, &f.bias_in, &f.token_out, &f.token_out_bias,
                         &f.rhyme_out, &f.rhyme_out_bias}) {
      out.push_back(p);
    }
    for (LayerNormParams* n :
         {&a.token_attn_norm, &a.rhyme_attn_norm, &a.token_fuse_norm, &a.rhyme_fuse_norm}) {
      out.push_back(&n->gain);
      out.push_back(&n->bias);
    }
  }
  out.push_back(&head_);
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  auto mut = const_cast<Model*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

StreamVars Model::embed(ad::Graph& g, std::span<const int> token_ids,
                        std::span<const int> rhyme_ids) const {
  if (token_ids.size() != rhyme_ids.size()) {
    throw ad::ShapeError("embed: " + std::to_string(token_ids.size()) + " tokens vs " +
                         std::to_string(rhyme_ids.size()) + " rhyme ids");
  }
  if (token_ids.empty()) throw ad::ShapeError("embed: empty sequence");
  if (token_ids.size() > static_cast<std::size_t>(cfg_.max_seq_len)) {
    throw std::out_of_range("embed: sequence length " + std::to_string(token_ids.size()) +
                            " exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
  }
  std::vector<int> positions(token_ids.size());
  std::iota(positions.begin(), positions.end(), 0);

  StreamVars s;
  s.tokens = g.add(g.embedding(g.param(embeddings_.token), token_ids),
                   g.embedding(g.param(embeddings_.token_pos), positions));
  if (cfg_.use_rhyme_stream) {
    s.rhymes = g.add(g.embedding(g.param(embeddings_.rhyme), rhyme_ids),
                     g.embedding(g.param(embeddings_.rhyme_pos), positions));
  } else {
    for (int r : rhyme_ids) {
      if (r < 0 || r >= static_cast<int>(kNumRhymeSymbols)) {
        throw std::out_of_range("embed: rhyme id " + std::to_string(r) + " out of range");
      }
    }
  }
  return s;
}

ad::Var Model::forward(ad::Graph& g, std::span<const int> token_ids, std::span<const int> rhyme_ids,
                       AttentionTrace* trace) const {
  StreamVars s = embed(g, token_ids, rhyme_ids);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    s = aggregator_forward(g, s, layers_[i], cfg_, static_cast<int>(i), trace);
  }
  return g.matmul(s.tokens, g.param(head_));
}

Matrix Model::logits(std::span<const int> token_ids, std::span<const int> rhyme_ids,
                     AttentionTrace* trace) const {
  ad::Graph g;
  return g.value(forward(g, token_ids, rhyme_ids, trace));
}

ad::Var next_token_loss(ad::Graph& g, ad::Var logits, std::span<const int> token_ids,
                        std::span<const double> mask, std::optional<double> denominator) {
  const std::size_t n = token_ids.size();
  if (mask.size() != n) {
    throw ad::ShapeError("next_token_loss: " + std::to_string(n) + " tokens vs " +
                         std::to_string(mask.size()) + " mask entries");
  }
  std::vector<int> targets(n, 0);
  std::vector<double> m(n, 0.0);
  for (std::size_t j = 0; j + 1 < n; ++j) {
    targets[j] = token_ids[j + 1];
    m[j] = mask[j];
  }
  return g.cross_entropy(logits, targets, m, denominator);
}

}  // namespace rhymelm
