#include "support/reference_model.hpp"

#include <cmath>

namespace rhymelm::reference {

Rows from_matrix(const Matrix& m) {
  Rows r(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  }
  return r;
}

Matrix to_matrix(const Rows& r) {
  Matrix m(static_cast<Eigen::Index>(r.size()), r.empty() ? 0 : static_cast<Eigen::Index>(r[0].size()));
  for (std::size_t i = 0; i < r.size(); ++i) {
    for (std::size_t j = 0; j < r[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r[i][j];
  }
  return m;
}

double act(ad::Activation kind, double x) {
  switch (kind) {
    case ad::Activation::kGelu: return x * 0.5 * std::erfc(-x / std::sqrt(2.0));
    case ad::Activation::kRelu: return x > 0.0 ? x : 0.0;
    case ad::Activation::kTanh: return std::tanh(x);
  }
  return x;
}

Rows affine(const Rows& x, const Matrix& w, const Matrix* b) {
  Rows y(x.size(), std::vector<double>(static_cast<std::size_t>(w.cols()), 0.0));
  for (std::size_t r = 0; r < x.size(); ++r) {
    for (Eigen::Index k = 0; k < w.cols(); ++k) {
      double s = b != nullptr ? (*b)(0, k) : 0.0;
      for (Eigen::Index i = 0; i < w.rows(); ++i) s += x[r][static_cast<std::size_t>(i)] * w(i, k);
      y[r][static_cast<std::size_t>(k)] = s;
    }
  }
  return y;
}

Rows layer_norm(const Rows& x, const Matrix& gain, const Matrix& bias) {
  Rows y = x;
  for (std::size_t r = 0; r < x.size(); ++r) {
    const double n = static_cast<double>(x[r].size());
    double mean = 0.0;
    for (double v : x[r]) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x[r]) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (std::size_t c = 0; c < x[r].size(); ++c) {
      y[r][c] = (x[r][c] - mean) * inv * gain(0, static_cast<Eigen::Index>(c)) + bias(0, static_cast<Eigen::Index>(c));
    }
  }
  return y;
}

Rows attention(const Rows& x, const AttentionParams& p, int heads, std::vector<Rows>* weights) {
  const Rows q = affine(x, p.wq.value, &p.bq.value);
  const Rows k = affine(x, p.wk.value, nullptr);
  const Rows v = affine(x, p.wv.value, &p.bv.value);
  const std::size_t n = x.size();
  const std::size_t width = q[0].size();
  const std::size_t hd = width / static_cast<std::size_t>(heads);
  Rows merged(n, std::vector<double>(width, 0.0));
  for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
    Rows w(n, std::vector<double>(n, 0.0));
    for (std::size_t a = 0; a < n; ++a) {
      std::vector<double> score(a + 1);
      double mx = -INFINITY;
      for (std::size_t b = 0; b <= a; ++b) {
        double s = 0.0;
        for (std::size_t c = 0; c < hd; ++c) s += q[a][h * hd + c] * k[b][h * hd + c];
        score[b] = s / std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, score[b]);
      }
      double z = 0.0;
      for (std::size_t b = 0; b <= a; ++b) z += std::exp(score[b] - mx);
      for (std::size_t b = 0; b <= a; ++b) w[a][b] = std::exp(score[b] - mx) / z;
      for (std::size_t c = 0; c < hd; ++c) {
        double s = 0.0;
        for (std::size_t b = 0; b <= a; ++b) s += w[a][b] * v[b][h * hd + c];
        merged[a][h * hd + c] = s;
      }
    }
    if (weights != nullptr) weights->push_back(std::move(w));
  }
  return affine(merged, p.wo.value, &p.bo.value);
}

Fused fuse_position(const std::vector<double>& w_tilde, const std::vector<double>* e_tilde,
                    const FusionParams& p, ad::Activation kind) {
  const Eigen::Index d = p.token_in.value.cols();
  std::vector<double> h(static_cast<std::size_t>(d));
  for (Eigen::Index k = 0; k < d; ++k) {
    double s = p.bias_in.value(0, k);
    for (std::size_t i = 0; i < w_tilde.size(); ++i) s += p.token_in.value(static_cast<Eigen::Index>(i), k) * w_tilde[i];
    if (e_tilde != nullptr) {
      for (std::size_t i = 0; i < e_tilde->size(); ++i) {
        s += p.rhyme_in.value(static_cast<Eigen::Index>(i), k) * (*e_tilde)[i];
      }
    }
    h[static_cast<std::size_t>(k)] = act(kind, s);
  }
  Fused out;
  for (Eigen::Index k = 0; k < p.token_out.value.cols(); ++k) {
    double s = p.token_out_bias.value(0, k);
    for (Eigen::Index i = 0; i < d; ++i) s += p.token_out.value(i, k) * h[static_cast<std::size_t>(i)];
    out.token.push_back(act(kind, s));
  }
  if (e_tilde != nullptr) {
    for (Eigen::Index k = 0; k < p.rhyme_out.value.cols(); ++k) {
      double s = p.rhyme_out_bias.value(0, k);
      for (Eigen::Index i = 0; i < d; ++i) s += p.rhyme_out.value(i, k) * h[static_cast<std::size_t>(i)];
      out.rhyme.push_back(act(kind, s));
    }
  }
  return out;
}

namespace {

Rows plus(const Rows& a, const Rows& b) {
  Rows c = a;
  for (std::size_t r = 0; r < a.size(); ++r) {
    for (std::size_t j = 0; j < a[r].size(); ++j) c[r][j] += b[r][j];
  }
  return c;
}

}  // namespace

Streams aggregator(const Streams& in, const AggregatorParams& p, const ModelConfig& cfg) {
  const auto skip = [&](const Rows& a, const Rows& b) { return cfg.use_residuals ? plus(a, b) : b; };
  const Rows w_tilde = layer_norm(skip(in.tokens, attention(in.tokens, p.token_attn, cfg.num_heads)),
                                  p.token_attn_norm.gain.value, p.token_attn_norm.bias.value);
  Rows e_tilde;
  if (!in.rhymes.empty()) {
    e_tilde = layer_norm(skip(in.rhymes, attention(in.rhymes, p.rhyme_attn, cfg.rhyme_heads)),
                         p.rhyme_attn_norm.gain.value, p.rhyme_attn_norm.bias.value);
  }
  Rows fw;
  Rows fe;
  for (std::size_t j = 0; j < w_tilde.size(); ++j) {
    const Fused f = fuse_position(w_tilde[j], e_tilde.empty() ? nullptr : &e_tilde[j], p.fusion, cfg.activation);
    fw.push_back(f.token);
    if (!e_tilde.empty()) fe.push_back(f.rhyme);
  }
  Streams out;
  out.tokens = layer_norm(skip(w_tilde, fw), p.token_fuse_norm.gain.value, p.token_fuse_norm.bias.value);
  if (!e_tilde.empty()) {
    out.rhymes = layer_norm(skip(e_tilde, fe), p.rhyme_fuse_norm.gain.value, p.rhyme_fuse_norm.bias.value);
  }
  return out;
}

Matrix forward(const Model& m, const std::vector<int>& token_ids, const std::vector<int>& rhyme_ids) {
  const auto& cfg = m.config();
  const auto& e = m.embeddings();
  Streams s;
  for (std::size_t j = 0; j < token_ids.size(); ++j) {
    std::vector<double> w(static_cast<std::size_t>(cfg.fusion_dim));
    for (std::size_t c = 0; c < w.size(); ++c) {
      const auto cc = static_cast<Eigen::Index>(c);
      w[c] = e.token.value(token_ids[j], cc) + e.token_pos.value(static_cast<Eigen::Index>(j), cc);
    }
    s.tokens.push_back(w);
    if (cfg.use_rhyme_stream) {
      std::vector<double> r(static_cast<std::size_t>(cfg.rhyme_dim));
      for (std::size_t c = 0; c < r.size(); ++c) {
        const auto cc = static_cast<Eigen::Index>(c);
        r[c] = e.rhyme.value(rhyme_ids[j], cc) + e.rhyme_pos.value(static_cast<Eigen::Index>(j), cc);
      }
      s.rhymes.push_back(r);
    }
  }
  for (const auto& layer : m.layers()) s = aggregator(s, layer, cfg);
  return to_matrix(affine(s.tokens, m.head().value, nullptr));
}

Rows plain_block(const Rows& x, const AttentionParams& attn, const Matrix& w1, const Matrix& b1,
                 const Matrix& w2, const Matrix& b2, const LayerNormParams& norm1,
                 const LayerNormParams& norm2, int heads, ad::Activation kind, bool residuals) {
  Rows a = attention(x, attn, heads);
  if (residuals) a = plus(x, a);
  const Rows x1 = layer_norm(a, norm1.gain.value, norm1.bias.value);
  Rows h = affine(x1, w1, &b1);
  for (auto& row : h) {
    for (double& v : row) v = act(kind, v);
  }
  Rows f = affine(h, w2, &b2);
  for (auto& row : f) {
    for (double& v : row) v = act(kind, v);
  }
  if (residuals) f = plus(x1, f);
  return layer_norm(f, norm2.gain.value, norm2.bias.value);
}

}  // namespace rhymelm::reference
