#include "test_support.hpp"

#include <algorithm>
#include <atomic>
#include <stdexcept>

#include "rhymelm/utf8.hpp"

namespace rhymelm::testing {

const CharPinyinLexicon& shipped_lexicon() {
  static const CharPinyinLexicon lex = CharPinyinLexicon::load(default_lexicon_path());
  return lex;
}

std::filesystem::path fixture_dir() { return RHYMELM_FIXTURE_DIR; }

std::filesystem::path temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  std::random_device rd;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("rhymelm_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

ModelConfig tiny_config(int vocab_size, int max_seq_len) {
  ModelConfig c;
  c.num_aggregators = 2;
  c.fusion_dim = 16;
  c.rhyme_dim = 8;
  c.num_heads = 2;
  c.vocab_size = vocab_size;
  c.max_seq_len = max_seq_len;
  return c.resolved();
}

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> dist(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

std::vector<std::u32string> chars_by_class(const CharPinyinLexicon& lex) {
  std::vector<std::u32string> out(kNumRhymeClasses);
  // CJK unified ideographs basic block covers the whole shipped lexicon.
  for (char32_t c = 0x4E00; c <= 0x9FFF; ++c) {
    const RhymeClass rc = classify_char(c, lex);
    if (is_rhyme_class(rc)) out[static_cast<std::size_t>(id(rc) - id(RhymeClass::kClass1))].push_back(c);
  }
  return out;
}

std::string random_line(const std::u32string& alphabet, std::size_t len, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::u32string s;
  for (std::size_t i = 0; i < len; ++i) s.push_back(alphabet[pick(rng)]);
  return utf8::encode(s);
}

RhymeCorpus end_char_corpus(const CharPinyinLexicon& lex, std::size_t pairs, std::size_t prompts,
                            std::uint64_t seed, std::size_t train_ends, std::size_t heldout_ends) {
  const auto by_class = chars_by_class(lex);
  std::mt19937_64 pick(12345);
  std::vector<std::u32string> train(by_class.size());
  std::vector<std::u32string> held(by_class.size());
  RhymeCorpus out;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    std::u32string pool = by_class[c];
    std::shuffle(pool.begin(), pool.end(), pick);
    if (pool.size() < train_ends + heldout_ends) throw std::runtime_error("rhyme class too small");
    train[c] = pool.substr(0, train_ends);
    held[c] = pool.substr(train_ends, heldout_ends);
    out.train_end_chars += train[c];
    out.heldout_end_chars += held[c];
  }
  if (pairs < by_class.size() * heldout_ends) throw std::runtime_error("too few pairs to cover held-out characters");

  std::mt19937_64 rng(seed);
  const auto pick_from = [&](const std::u32string& s) {
    return s[std::uniform_int_distribution<std::size_t>(0, s.size() - 1)(rng)];
  };
  std::uniform_int_distribution<std::size_t> cls(0, by_class.size() - 1);
  const std::size_t forced = by_class.size() * heldout_ends;
  for (std::size_t i = 0; i < pairs; ++i) {
    const std::size_t c = i < forced ? i % by_class.size() : cls(rng);
    const char32_t a = pick_from(train[c]);
    const std::u32string second = train[c] + held[c];
    char32_t b = i < forced ? held[c][i / by_class.size()] : pick_from(second);
    while (b == a) b = pick_from(second);
    out.pairs.push_back({utf8::encode(std::u32string(1, a)), utf8::encode(std::u32string(1, b)), "synthetic"});
  }
  std::shuffle(out.pairs.begin(), out.pairs.end(), rng);
  for (std::size_t i = 0; i < prompts; ++i) {
    out.heldout_prompts.push_back(utf8::encode(std::u32string(1, pick_from(held[cls(rng)]))));
  }
  return out;
}

void jitter(Model& model, std::mt19937_64& rng, double scale) {
  for (Parameter* p : model.parameters()) p->value += random_matrix(p->value.rows(), p->value.cols(), rng, scale);
}

RhymeCorpus rhyme_corpus(const CharPinyinLexicon& lex, std::size_t pairs, std::size_t prompts,
                         std::uint64_t seed, std::size_t train_ends, std::size_t heldout_ends,
                         std::size_t filler_len) {
  const auto by_class = chars_by_class(lex);
  // Character choice is fixed; only the lines depend on `seed`.
  std::mt19937_64 pick(12345);
  std::vector<std::u32string> train(by_class.size());
  std::vector<std::u32string> held(by_class.size());
  RhymeCorpus out;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    std::u32string pool = by_class[c];
    std::shuffle(pool.begin(), pool.end(), pick);
    if (pool.size() < train_ends + heldout_ends) throw std::runtime_error("rhyme class too small");
    train[c] = pool.substr(0, train_ends);
    held[c] = pool.substr(train_ends, heldout_ends);
    out.train_end_chars += train[c];
    out.heldout_end_chars += held[c];
  }
  const std::u32string& fillers = out.heldout_end_chars;

  std::mt19937_64 rng(seed);
  const auto pick_from = [&](const std::u32string& s) {
    return s[std::uniform_int_distribution<std::size_t>(0, s.size() - 1)(rng)];
  };
  const auto line = [&](char32_t end) {
    std::u32string l;
    for (std::size_t i = 0; i < filler_len; ++i) l.push_back(pick_from(fillers));
    l.push_back(end);
    return utf8::encode(l);
  };
  std::uniform_int_distribution<std::size_t> cls(0, by_class.size() - 1);
  for (std::size_t i = 0; i < pairs; ++i) {
    const std::size_t c = cls(rng);
    const char32_t a = pick_from(train[c]);
    char32_t b = pick_from(train[c]);
    while (b == a) b = pick_from(train[c]);
    out.pairs.push_back({line(a), line(b), "synthetic"});
  }
  for (std::size_t i = 0; i < prompts; ++i) out.heldout_prompts.push_back(line(pick_from(held[cls(rng)])));
  return out;
}

}  // namespace rhymelm::testing
