#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "rhymelm/model.hpp"
#include "rhymelm/rhyme_vocab.hpp"
#include "support/reference_model.hpp"
#include "support/test_support.hpp"

using namespace rhymelm;
using ad::Graph;
using ad::Var;

namespace {

constexpr int kVocab = 23;

struct Ids {
  std::vector<int> tokens;
  std::vector<int> rhymes;
};

Ids random_ids(std::size_t n, std::mt19937_64& rng, int vocab = kVocab) {
  Ids ids;
  for (std::size_t i = 0; i < n; ++i) {
    ids.tokens.push_back(static_cast<int>(rng() % static_cast<std::uint64_t>(vocab)));
    ids.rhymes.push_back(static_cast<int>(rng() % kNumRhymeSymbols));
  }
  return ids;
}

Model jittered(const ModelConfig& cfg, std::uint64_t seed) {
  Model m(cfg, seed);
  std::mt19937_64 rng(seed + 1000);
  testing::jitter(m, rng, 0.3);
  return m;
}

double max_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

AttentionParams random_attention(int width, std::mt19937_64& rng) {
  const auto r = [&](Eigen::Index rows) { return testing::random_matrix(rows, width, rng, 0.4); };
  return {{"wq", r(width)}, {"bq", r(1)}, {"wk", r(width)},
          {"wv", r(width)}, {"bv", r(1)}, {"wo", r(width)}, {"bo", r(1)}};
}

FusionParams random_fusion(int d, int de, std::mt19937_64& rng, double scale = 0.5) {
  return {{"token_in", testing::random_matrix(d, d, rng, scale)},
          {"rhyme_in", testing::random_matrix(de, d, rng, scale)},
          {"bias_in", testing::random_matrix(1, d, rng, scale)},
          {"token_out", testing::random_matrix(d, d, rng, scale)},
          {"token_out_bias", testing::random_matrix(1, d, rng, scale)},
          {"rhyme_out", testing::random_matrix(d, de, rng, scale)},
          {"rhyme_out_bias", testing::random_matrix(1, de, rng, scale)}};
}

}  // namespace

TEST_CASE("config defaults") {
  ModelConfig c;
  c.vocab_size = 10;
  const auto r = c.resolved();
  CHECK(r.rhyme_dim == 192);
  CHECK(r.rhyme_heads == 4);
  c.fusion_dim = 64;
  c.num_heads = 2;
  CHECK(c.resolved().rhyme_dim == 16);
  CHECK(c.resolved().rhyme_heads == 2);
  c.fusion_dim = 30;
  c.num_heads = 4;
  CHECK_THROWS_AS(c.resolved(), std::invalid_argument);
  CHECK(testing::tiny_config(5).rhyme_heads == 1);
}

TEST_CASE("parameters") {
  const Model m(testing::tiny_config(kVocab), 1);
  std::set<std::string> names;
  std::size_t count = 0;
  for (const Parameter* p : m.parameters()) {
    names.insert(p->name);
    count += static_cast<std::size_t>(p->value.size());
  }
  CHECK(names.size() == m.parameters().size());
  CHECK(count == m.parameter_count());
  const std::size_t d = 16, de = 8, V = kVocab, n = 8;
  const std::size_t per_layer = 4 * d * d + 3 * d + 4 * de * de + 3 * de + (d * d + de * d + d) +
                                (d * d + d) + (d * de + de) + 2 * 2 * d + 2 * 2 * de;
  CHECK(count == V * d + n * d + 18 * de + n * de + 2 * per_layer + d * V);
}

TEST_CASE("embed") {
  const Model m = jittered(testing::tiny_config(kVocab), 2);
  SUBCASE("single position shapes") {
    Graph g;
    const std::vector<int> t = {5};
    const std::vector<int> r = {4};
    const auto s = m.embed(g, t, r);
    CHECK(g.value(s.tokens).rows() == 1);
    CHECK(g.value(s.tokens).cols() == 16);
    REQUIRE(s.rhymes.has_value());
    CHECK(g.value(*s.rhymes).cols() == 8);
  }
  SUBCASE("position embedding separates equal tokens") {
    Graph g;
    const std::vector<int> t = {7, 7};
    const std::vector<int> r = {4, 4};
    const auto s = m.embed(g, t, r);
    CHECK(max_diff(g.value(s.tokens).row(0), g.value(s.tokens).row(1)) > 0.0);
  }
  SUBCASE("rhyme lookup is the one-hot image") {
    for (std::size_t k = 0; k < kNumRhymeSymbols; ++k) {
      const auto oh = one_hot(rhyme_class_from_id(static_cast<int>(k)));
      Matrix row = Matrix::Zero(1, 18);
      for (std::size_t i = 0; i < 18; ++i) row(0, static_cast<Eigen::Index>(i)) = oh[i];
      const Matrix dense = row * m.embeddings().rhyme.value;
      Graph g;
      const std::vector<int> t = {0};
      const std::vector<int> r = {static_cast<int>(k)};
      const Matrix got = g.value(*m.embed(g, t, r).rhymes) - m.embeddings().rhyme_pos.value.row(0);
      CHECK(max_diff(got, dense) <= 1e-15);
    }
  }
  SUBCASE("errors") {
    Graph g;
    const std::vector<int> bad_t = {kVocab};
    const std::vector<int> ok_r = {4};
    CHECK_THROWS_AS(m.embed(g, bad_t, ok_r), std::out_of_range);
    const std::vector<int> ok_t = {1};
    const std::vector<int> bad_r = {18};
    CHECK_THROWS_AS(m.embed(g, ok_t, bad_r), std::out_of_range);
    const std::vector<int> long_t(9, 1);
    const std::vector<int> long_r(9, 4);
    CHECK_THROWS_AS(m.embed(g, long_t, long_r), std::out_of_range);
    const std::vector<int> two = {1, 2};
    CHECK_THROWS_AS(m.embed(g, two, ok_r), ad::ShapeError);
  }
}

TEST_CASE("masked_mha") {
  std::mt19937_64 rng(4);
  const auto p = random_attention(8, rng);
  SUBCASE("single position attends to itself") {
    Graph g;
    std::vector<Matrix> w;
    masked_mha(g, g.input(testing::random_matrix(1, 8, rng)), p, 2, &w);
    REQUIRE(w.size() == 2);
    for (const auto& m : w) CHECK(m == Matrix::Ones(1, 1));
  }
  SUBCASE("row-stochastic, causal and matching the loop reference") {
    for (int trial = 0; trial < 20; ++trial) {
      const auto x = testing::random_matrix(7, 8, rng, 2.0);
      Graph g;
      std::vector<Matrix> w;
      const auto out = masked_mha(g, g.input(x), p, 2, &w);
      std::vector<reference::Rows> ref_w;
      const auto ref = reference::attention(reference::from_matrix(x), p, 2, &ref_w);
      CHECK(max_diff(g.value(out), reference::to_matrix(ref)) <= 1e-12);
      for (std::size_t h = 0; h < w.size(); ++h) {
        CHECK(max_diff(w[h], reference::to_matrix(ref_w[h])) <= 1e-12);
        for (Eigen::Index r = 0; r < 7; ++r) {
          CHECK(std::abs(w[h].row(r).sum() - 1.0) <= 1e-6);
          for (Eigen::Index c = r + 1; c < 7; ++c) CHECK(w[h](r, c) == 0.0);
        }
      }
    }
  }
  SUBCASE("perturbing row 5 leaves rows 0..4 unchanged") {
    for (int trial = 0; trial < 20; ++trial) {
      auto x = testing::random_matrix(8, 8, rng);
      Graph g;
      const Matrix before = g.value(masked_mha(g, g.input(x), p, 2));
      x.row(5) += testing::random_matrix(1, 8, rng);
      Graph h;
      const Matrix after = h.value(masked_mha(h, h.input(x), p, 2));
      CHECK(before.topRows(5) == after.topRows(5));
      CHECK(max_diff(before.row(5), after.row(5)) > 0.0);
    }
  }
  SUBCASE("heads must divide the width") {
    Graph g;
    CHECK_THROWS_AS(masked_mha(g, g.input(Matrix::Zero(2, 8)), p, 3), ad::ShapeError);
    CHECK_THROWS_AS(masked_mha(g, g.input(Matrix::Zero(2, 6)), p, 2), ad::ShapeError);
  }
}

TEST_CASE("fuse") {
  std::mt19937_64 rng(5);
  SUBCASE("zero input, zero bias, tanh gives zero") {
    auto p = random_fusion(16, 8, rng);
    p.bias_in.value.setZero();
    p.token_out_bias.value.setZero();
    p.rhyme_out_bias.value.setZero();
    Graph g;
    const auto f = fuse(g, g.input(Matrix::Zero(3, 16)), g.input(Matrix::Zero(3, 8)), p, ad::Activation::kTanh);
    CHECK(g.value(f.tokens) == Matrix::Zero(3, 16));
    CHECK(g.value(*f.rhymes) == Matrix::Zero(3, 8));
  }
  SUBCASE("matches the straight-line equations") {
    for (int trial = 0; trial < 200; ++trial) {
      const auto kind = static_cast<ad::Activation>(trial % 3);
      const auto p = random_fusion(16, 8, rng);
      const auto w = testing::random_matrix(3, 16, rng);
      const auto e = testing::random_matrix(3, 8, rng);
      Graph g;
      const auto f = fuse(g, g.input(w), g.input(e), p, kind);
      for (Eigen::Index j = 0; j < 3; ++j) {
        const auto wj = reference::from_matrix(w.row(j))[0];
        const auto ej = reference::from_matrix(e.row(j))[0];
        const auto ref = reference::fuse_position(wj, &ej, p, kind);
        CHECK(max_diff(g.value(f.tokens).row(j), reference::to_matrix({ref.token})) <= 1e-12);
        CHECK(max_diff(g.value(*f.rhymes).row(j), reference::to_matrix({ref.rhyme})) <= 1e-12);
      }
    }
  }
  SUBCASE("gradients for all seven parameter groups") {
    for (auto kind : {ad::Activation::kGelu, ad::Activation::kTanh}) {
      auto p = random_fusion(6, 4, rng);
      const auto w = testing::random_matrix(2, 6, rng);
      const auto e = testing::random_matrix(2, 4, rng);
      const auto rw = testing::random_matrix(2, 6, rng);
      const auto re = testing::random_matrix(2, 4, rng);
      std::vector<Parameter*> params = {&p.token_in, &p.rhyme_in, &p.bias_in, &p.token_out,
                                        &p.token_out_bias, &p.rhyme_out, &p.rhyme_out_bias};
      const auto report = ad::grad_check(
          [&](Graph& g) {
            const auto f = fuse(g, g.input(w), g.input(e), p, kind);
            return g.add(g.sum(g.mul(f.tokens, g.input(rw))), g.sum(g.mul(*f.rhymes, g.input(re))));
          },
          params, 1e-6, 1e-4);
      CHECK(report.entries.size() == 7);
      for (const auto& entry : report.entries) {
        INFO(entry.name);
        CHECK(entry.max_rel_error <= 1e-4);
        CHECK(entry.max_abs_error > -1.0);
      }
      CHECK(report.passed);
    }
  }
}

TEST_CASE("aggregator") {
  std::mt19937_64 rng(6);
  SUBCASE("shape preservation and reference agreement") {
    for (bool residuals : {true, false}) {
      auto cfg = testing::tiny_config(kVocab, 16);
      cfg.use_residuals = residuals;
      const Model m = jittered(cfg, 6);
      for (Eigen::Index n : {1, 4, 16}) {
        const auto w = testing::random_matrix(n, 16, rng);
        const auto e = testing::random_matrix(n, 8, rng);
        Graph g;
        const auto out = aggregator_forward(g, {g.input(w), g.input(e)}, m.layers()[0], cfg);
        CHECK(g.value(out.tokens).rows() == n);
        CHECK(g.value(out.tokens).cols() == 16);
        CHECK(g.value(*out.rhymes).rows() == n);
        CHECK(g.value(*out.rhymes).cols() == 8);
        const auto ref = reference::aggregator({reference::from_matrix(w), reference::from_matrix(e)},
                                               m.layers()[0], cfg);
        CHECK(max_diff(g.value(out.tokens), reference::to_matrix(ref.tokens)) <= 1e-12);
        CHECK(max_diff(g.value(*out.rhymes), reference::to_matrix(ref.rhymes)) <= 1e-12);
      }
    }
  }
  SUBCASE("residuals off and zero fusion weights give LN(act(b_t))") {
    auto cfg = testing::tiny_config(kVocab);
    cfg.use_residuals = false;
    Model m = jittered(cfg, 7);
    auto& f = m.layers()[0].fusion;
    f.token_in.value.setZero();
    f.rhyme_in.value.setZero();
    f.bias_in.value.setZero();
    f.token_out.value.setZero();
    f.rhyme_out.value.setZero();
    const auto& bt = f.token_out_bias.value;
    Matrix expected_row(1, 16);
    for (Eigen::Index c = 0; c < 16; ++c) expected_row(0, c) = ad::activate(cfg.activation, bt(0, c));
    const auto& ln = m.layers()[0].token_fuse_norm;
    const auto expected = reference::to_matrix(reference::layer_norm(reference::from_matrix(expected_row),
                                                                     ln.gain.value, ln.bias.value));
    Graph g;
    const auto out = aggregator_forward(g, {g.input(testing::random_matrix(5, 16, rng)),
                                            g.input(testing::random_matrix(5, 8, rng))},
                                        m.layers()[0], cfg);
    for (Eigen::Index j = 0; j < 5; ++j) CHECK(max_diff(g.value(out.tokens).row(j), expected) <= 1e-12);
  }
  SUBCASE("future perturbations never reach the past in either stream") {
    const auto cfg = testing::tiny_config(kVocab);
    const Model m = jittered(cfg, 8);
    for (int trial = 0; trial < 20; ++trial) {
      auto w = testing::random_matrix(6, 16, rng);
      auto e = testing::random_matrix(6, 8, rng);
      Graph g;
      const auto a = aggregator_forward(g, {g.input(w), g.input(e)}, m.layers()[0], cfg);
      const Eigen::Index q = static_cast<Eigen::Index>(rng() % 6);
      (trial % 2 == 0 ? w.row(q) : e.row(q)).array() += 1.0;
      Graph h;
      const auto b = aggregator_forward(h, {h.input(w), h.input(e)}, m.layers()[0], cfg);
      CHECK(g.value(a.tokens).topRows(q) == h.value(b.tokens).topRows(q));
      CHECK(g.value(*a.rhymes).topRows(q) == h.value(*b.rhymes).topRows(q));
    }
  }
}

TEST_CASE("forward") {
  std::mt19937_64 rng(9);
  const auto cfg = testing::tiny_config(kVocab, 16);
  const Model m = jittered(cfg, 9);
  SUBCASE("shape and reference agreement") {
    for (std::size_t n : {1u, 5u, 16u}) {
      const auto ids = random_ids(n, rng);
      const auto logits = m.logits(ids.tokens, ids.rhymes);
      CHECK(logits.rows() == static_cast<Eigen::Index>(n));
      CHECK(logits.cols() == kVocab);
      CHECK(max_diff(logits, reference::forward(m, ids.tokens, ids.rhymes)) <= 1e-12);
    }
  }
  SUBCASE("deterministic") {
    const auto ids = random_ids(10, rng);
    const Model other = jittered(cfg, 9);
    CHECK(m.logits(ids.tokens, ids.rhymes) == m.logits(ids.tokens, ids.rhymes));
    CHECK(m.logits(ids.tokens, ids.rhymes) == other.logits(ids.tokens, ids.rhymes));
  }
  SUBCASE("causality over tokens and rhymes") {
    for (int trial = 0; trial < 30; ++trial) {
      auto ids = random_ids(1 + rng() % 16, rng);
      const auto before = m.logits(ids.tokens, ids.rhymes);
      const std::size_t q = rng() % ids.tokens.size();
      if (trial % 2 == 0) {
        ids.tokens[q] = (ids.tokens[q] + 1) % kVocab;
      } else {
        ids.rhymes[q] = (ids.rhymes[q] + 1) % static_cast<int>(kNumRhymeSymbols);
      }
      const auto after = m.logits(ids.tokens, ids.rhymes);
      const auto past = static_cast<Eigen::Index>(q);
      CHECK(before.topRows(past) == after.topRows(past));
      CHECK(max_diff(before.row(past), after.row(past)) > 0.0);
    }
  }
  SUBCASE("a rhyme id influences its own and later positions") {
    const Model fresh(cfg, 10);
    for (int trial = 0; trial < 10; ++trial) {
      auto ids = random_ids(8, rng);
      const auto before = fresh.logits(ids.tokens, ids.rhymes);
      const std::size_t q = rng() % 8;
      ids.rhymes[q] = (ids.rhymes[q] + 5) % static_cast<int>(kNumRhymeSymbols);
      const auto after = fresh.logits(ids.tokens, ids.rhymes);
      for (Eigen::Index j = static_cast<Eigen::Index>(q); j < 8; ++j) {
        CHECK(max_diff(before.row(j), after.row(j)) > 0.0);
      }
    }
  }
}

TEST_CASE("rhyme stream ablation") {
  std::mt19937_64 rng(11);
  auto cfg = testing::tiny_config(kVocab, 16);
  cfg.use_rhyme_stream = false;
  const Model m = jittered(cfg, 11);
  SUBCASE("rhyme ids have no effect") {
    auto ids = random_ids(9, rng);
    const auto before = m.logits(ids.tokens, ids.rhymes);
    for (int& r : ids.rhymes) r = (r + 3) % static_cast<int>(kNumRhymeSymbols);
    CHECK(before == m.logits(ids.tokens, ids.rhymes));
  }
  SUBCASE("equals a plain single-stream decoder") {
    for (int trial = 0; trial < 10; ++trial) {
      const auto ids = random_ids(1 + rng() % 16, rng);
      reference::Rows x;
      for (std::size_t j = 0; j < ids.tokens.size(); ++j) {
        const Matrix row = m.embeddings().token.value.row(ids.tokens[j]) +
                           m.embeddings().token_pos.value.row(static_cast<Eigen::Index>(j));
        x.push_back(reference::from_matrix(row)[0]);
      }
      for (const auto& layer : m.layers()) {
        const auto& f = layer.fusion;
        x = reference::plain_block(x, layer.token_attn, f.token_in.value, f.bias_in.value, f.token_out.value,
                                   f.token_out_bias.value, layer.token_attn_norm, layer.token_fuse_norm,
                                   cfg.num_heads, cfg.activation, true);
      }
      const auto expected = reference::to_matrix(reference::affine(x, m.head().value, nullptr));
      CHECK(max_diff(m.logits(ids.tokens, ids.rhymes), expected) <= 1e-12);
    }
  }
  SUBCASE("token path equals the full model with the rhyme input weights zeroed") {
    auto full_cfg = cfg;
    full_cfg.use_rhyme_stream = true;
    Model full(full_cfg, 11);
    std::mt19937_64 jit(11 + 1000);
    testing::jitter(full, jit, 0.3);
    for (auto& layer : full.layers()) layer.fusion.rhyme_in.value.setZero();
    const auto ids = random_ids(12, rng);
    CHECK(max_diff(full.logits(ids.tokens, ids.rhymes), m.logits(ids.tokens, ids.rhymes)) <= 1e-12);
  }
}

TEST_CASE("loss") {
  std::mt19937_64 rng(12);
  SUBCASE("untrained model is close to ln V") {
    const int V = 200;
    const Model m(testing::tiny_config(V, 32), 12);
    double total = 0.0;
    double count = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      const auto ids = random_ids(32, rng, V);
      Graph g;
      const std::vector<double> mask(32, 1.0);
      total += g.value(next_token_loss(g, m.forward(g, ids.tokens, ids.rhymes), ids.tokens, mask))(0, 0) * 31;
      count += 31;
    }
    CHECK(std::abs(total / count - std::log(V)) <= 0.1 * std::log(V));
  }
  SUBCASE("uniform logits give ln V, certain logits give 0") {
    const std::vector<int> ids = {1, 4, 2, 5};
    const std::vector<double> mask = {1, 1, 1, 1};
    Graph g;
    CHECK(g.value(next_token_loss(g, g.input(Matrix::Zero(4, 9)), ids, mask))(0, 0) ==
          doctest::Approx(std::log(9.0)).epsilon(1e-14));
    Matrix sure = Matrix::Constant(4, 9, -1e3);
    for (int j = 0; j < 3; ++j) sure(j, ids[static_cast<std::size_t>(j) + 1]) = 1e3;
    CHECK(g.value(next_token_loss(g, g.input(sure), ids, mask))(0, 0) == 0.0);
  }
  SUBCASE("equals the scalar loop") {
    const Model m = jittered(testing::tiny_config(kVocab, 16), 13);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 2 + rng() % 15;
      const auto ids = random_ids(n, rng);
      std::vector<double> mask(n);
      for (auto& v : mask) v = (rng() % 4 == 0) ? 0.0 : 1.0;
      mask[0] = 1.0;
      Graph g;
      const double got = g.value(next_token_loss(g, m.forward(g, ids.tokens, ids.rhymes), ids.tokens, mask))(0, 0);
      const Matrix logits = m.logits(ids.tokens, ids.rhymes);
      double sum = 0.0;
      double cnt = 0.0;
      for (std::size_t j = 0; j + 1 < n; ++j) {
        if (mask[j] == 0.0) continue;
        double z = 0.0;
        for (Eigen::Index k = 0; k < kVocab; ++k) z += std::exp(logits(static_cast<Eigen::Index>(j), k));
        sum += -std::log(std::exp(logits(static_cast<Eigen::Index>(j), ids.tokens[j + 1])) / z);
        cnt += 1.0;
      }
      CHECK(std::abs(got - sum / cnt) <= 1e-10);
    }
  }
}

TEST_CASE("end-to-end gradient check on the tiny configuration") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CAPTURE(seed);
    std::mt19937_64 rng(seed);
    Model m = jittered(testing::tiny_config(kVocab, 6), seed);
    const auto ids = random_ids(6, rng);
    const std::vector<double> mask(6, 1.0);
    auto params = m.parameters();
    const auto report = ad::grad_check(
        [&](Graph& g) { return next_token_loss(g, m.forward(g, ids.tokens, ids.rhymes), ids.tokens, mask); },
        params, 1e-6, 1e-4);
    CHECK(report.entries.size() == params.size());
    for (const auto& e : report.entries) {
      INFO(e.name, " rel=", e.max_rel_error);
      CHECK(e.max_rel_error <= 1e-4);
    }
  }
}
