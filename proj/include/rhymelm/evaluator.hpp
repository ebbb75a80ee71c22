#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rhymelm/config.hpp"
#include "rhymelm/model.hpp"
#include "rhymelm/rhyme_vocab.hpp"
#include "rhymelm/tokenizer.hpp"

namespace rhymelm {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PairRecord {
  std::string prompt;
  std::string generated;
  std::string prompt_end;     // UTF-8 character, empty if the line is blank
  std::string generated_end;
  RhymeClass prompt_class = RhymeClass::kUnknown;
  RhymeClass generated_class = RhymeClass::kUnknown;
  bool matched = false;
};

struct EvalReport {
  double rhyming_rate = 0.0;
  std::size_t num_prompts = 0;
  std::size_t num_rhymed = 0;
  std::vector<PairRecord> records;
  std::optional<double> perplexity;
  // Reserved for manually entered human ratings (1-3 scale).
  std::optional<double> consistency;
  std::optional<double> fluency;
  std::optional<double> meaning;

  // One TSV record per pair followed by a `# summary` key=value block.
  std::string to_text() const;
};

// Last non-whitespace character of a line (U'\0' if none).
char32_t line_end_char(std::string_view line);

// A pair counts as rhymed iff both end characters fall in the same one of the
// 13 rhyme classes. Throws EvalError on empty input.
EvalReport rhyming_rate(const std::vector<std::pair<std::string, std::string>>& pairs,
                        const CharPinyinLexicon& lex);

// One seeded continuation per prompt (prompt i uses gen.seed + i), scored with
// rhyming_rate; perplexity over `heldout` when given.
EvalReport evaluate_model(const Model& model, const Vocab& vocab, const std::vector<std::string>& prompts,
                          const GenConfig& gen, const CharPinyinLexicon& lex,
                          const std::vector<EncodedPair>* heldout = nullptr);

struct AttentionDump {
  std::vector<std::string> tokens;  // axis labels for the token stream
  std::vector<std::string> rhymes;  // axis labels for the rhyme stream
  std::vector<AttentionMap> maps;

  nlohmann::json to_json() const;
};

// Throws EvalError unless every matrix is square n x n, non-negative, causal
// (exact zeros above the diagonal) and row-stochastic within `tol`.
void validate_attention(const AttentionDump& dump, double tol = 1e-6);

AttentionDump capture_attention(const Model& model, const Vocab& vocab, const EncodedPair& input);

// Validates, then writes JSON:
// {"tokens": [...], "rhymes": [...],
//  "matrices": [{"layer", "stream", "head", "labels": [...], "rows": [[...]]}]}
void dump_attention(const AttentionDump& dump, const std::filesystem::path& out_path);

}  // namespace rhymelm
