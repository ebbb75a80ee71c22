#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rhymelm/config.hpp"
#include "rhymelm/model.hpp"
#include "rhymelm/rhyme_vocab.hpp"
#include "rhymelm/tokenizer.hpp"

namespace rhymelm {

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kGreedyTemperature = 1e-6;

// Uniform double in [0, 1) from the top 53 bits of one draw.
double uniform01(std::mt19937_64& rng);

// Picks a token id from one row of logits: argmax when temperature is below
// kGreedyTemperature, else softmax(logits / temperature) restricted to the
// top_k largest logits (0 = all). Ties resolve to the lowest id.
int sample_token(std::span<const double> logits, double temperature, int top_k, std::mt19937_64& rng);

// Sampling distribution used by sample_token (all zeros outside the top-k set).
std::vector<double> sampling_probabilities(std::span<const double> logits, double temperature, int top_k);

struct Generation {
  std::string text;            // generated characters, tags removed
  std::vector<int> token_ids;  // full context incl. prompt and final <sep>
  std::vector<int> rhyme_ids;
};

// Continues `<cls> prompt <sep>` until <sep> or max_new_tokens; every appended
// token carries its own rhyme id.
Generation generate_sequence(std::string_view prompt, const Model& model, const Vocab& vocab,
                             const CharPinyinLexicon& lex, const GenConfig& cfg);

std::string generate(std::string_view prompt, const Model& model, const Vocab& vocab,
                     const CharPinyinLexicon& lex, const GenConfig& cfg);

struct GenerationResult {
  bool ok = false;
  std::string text;
  std::string error;
};

// Prompt i uses seed cfg.seed + i. Failures are reported per index.
std::vector<GenerationResult> batch_generate(const std::vector<std::string>& prompts, const Model& model,
                                             const Vocab& vocab, const CharPinyinLexicon& lex,
                                             const GenConfig& cfg);

// Multi-line lyric: each line becomes the prompt for the next.
std::vector<std::string> generate_lines(std::string_view first_line, int lines, const Model& model,
                                        const Vocab& vocab, const CharPinyinLexicon& lex,
                                        const GenConfig& cfg);

}  // namespace rhymelm
