#include "rhymelm/generator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace rhymelm {

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::vector<double> sampling_probabilities(std::span<const double> logits, double temperature, int top_k) {
  if (logits.empty()) throw GenerationError("empty logits");
  if (!(temperature > 0.0)) throw GenerationError("temperature must be > 0");
  std::vector<double> scaled(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / temperature;

  std::vector<bool> keep(logits.size(), true);
  if (top_k > 0 && static_cast<std::size_t>(top_k) < logits.size()) {
    std::vector<std::size_t> order(logits.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scaled[a] > scaled[b]; });
    std::fill(keep.begin(), keep.end(), false);
    for (int i = 0; i < top_k; ++i) keep[order[static_cast<std::size_t>(i)]] = true;
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scaled.size(); ++i) {
    if (keep[i] && std::isfinite(scaled[i])) mx = std::max(mx, scaled[i]);
  }
  std::vector<double> probs(logits.size(), 0.0);
  if (!std::isfinite(mx)) throw GenerationError("no probability mass left after top-k truncation");
  double total = 0.0;
  for (std::size_t i = 0; i < scaled.size(); ++i) {
    if (!keep[i] || !std::isfinite(scaled[i])) continue;
    probs[i] = std::exp(scaled[i] - mx);
    total += probs[i];
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw GenerationError("no probability mass left after top-k truncation");
  }
  for (double& p : probs) p /= total;
  return probs;
}

int sample_token(std::span<const double> logits, double temperature, int top_k, std::mt19937_64& rng) {
  if (temperature < kGreedyTemperature) {
    if (logits.empty()) throw GenerationError("empty logits");
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  const std::vector<double> probs = sampling_probabilities(logits, temperature, top_k);
  const double u = uniform01(rng);
  double cum = 0.0;
  int last = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] == 0.0) continue;
    cum += probs[i];
    last = static_cast<int>(i);
    if (u < cum) return last;
  }
  return last;  // u landed in the rounding gap at the top
}

Generation generate_sequence(std::string_view prompt, const Model& model, const Vocab& vocab,
                             const CharPinyinLexicon& lex, const GenConfig& cfg) {
  cfg.validate();
  Generation out;
  EncodedPair ctx;
  try {
    ctx = encode_prompt(prompt, vocab, lex);
  } catch (const TokenizerError& e) {
    throw GenerationError(std::string("prompt: ") + e.what());
  }
  const auto max_len = static_cast<std::size_t>(model.config().max_seq_len);
  if (ctx.size() > max_len) throw GenerationError("prompt longer than the model context");

  std::mt19937_64 rng(cfg.seed);
  std::vector<int> generated;
  for (int step = 0; step < cfg.max_new_tokens && ctx.size() < max_len; ++step) {
    const Matrix logits = model.logits(ctx.token_ids, ctx.rhyme_ids);
    const auto last = logits.row(logits.rows() - 1);
    const std::span<const double> row(last.data(), static_cast<std::size_t>(last.size()));
    const int tok = sample_token(row, cfg.temperature, cfg.top_k, rng);
    ctx.token_ids.push_back(tok);
    ctx.rhyme_ids.push_back(rhyme_id_for_token(tok, vocab, lex));
    if (tok == kSepId) break;
    generated.push_back(tok);
  }
  out.text = decode_tokens(generated, vocab);
  out.token_ids = std::move(ctx.token_ids);
  out.rhyme_ids = std::move(ctx.rhyme_ids);
  return out;
}

std::string generate(std::string_view prompt, const Model& model, const Vocab& vocab,
                     const CharPinyinLexicon& lex, const GenConfig& cfg) {
  return generate_sequence(prompt, model, vocab, lex, cfg).text;
}

std::vector<GenerationResult> batch_generate(const std::vector<std::string>& prompts, const Model& model,
                                             const Vocab& vocab, const CharPinyinLexicon& lex,
                                             const GenConfig& cfg) {
  std::vector<GenerationResult> out(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    GenConfig c = cfg;
    c.seed = cfg.seed + i;
    try {
      out[i].text = generate(prompts[i], model, vocab, lex, c);
      out[i].ok = true;
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  }
  return out;
}

std::vector<std::string> generate_lines(std::string_view first_line, int lines, const Model& model,
                                        const Vocab& vocab, const CharPinyinLexicon& lex,
                                        const GenConfig& cfg) {
  std::vector<std::string> out;
  std::string prompt(first_line);
  for (int i = 0; i < lines; ++i) {
    GenConfig c = cfg;
    c.seed = cfg.seed + static_cast<std::uint64_t>(i);
    std::string next = generate(prompt, model, vocab, lex, c);
    out.push_back(next);
    if (next.empty()) break;
    prompt = std::move(next);
  }
  return out;
}

}  // namespace rhymelm
