#include "rhymelm/evaluator.hpp"

#include <cmath>
#include <fstream>

#include "rhymelm/corpus.hpp"
#include "rhymelm/generator.hpp"
#include "rhymelm/trainer.hpp"
#include "rhymelm/utf8.hpp"

namespace rhymelm {

namespace {

bool is_blank(char32_t c) { return c == U' ' || c == U'\t' || c == U'　'; }

std::string char_text(char32_t c) { return c == U'\0' ? std::string() : utf8::encode(c); }

std::string optional_text(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string("NA");
}

}  // namespace

char32_t line_end_char(std::string_view line) {
  const std::u32string cps = utf8::decode(line);
  for (auto it = cps.rbegin(); it != cps.rend(); ++it) {
    if (!is_blank(*it)) return *it;
  }
  return U'\0';
}

EvalReport rhyming_rate(const std::vector<std::pair<std::string, std::string>>& pairs,
                        const CharPinyinLexicon& lex) {
  if (pairs.empty()) throw EvalError("rhyming rate is undefined for zero pairs");
  EvalReport report;
  for (const auto& [prompt, generated] : pairs) {
    PairRecord r;
    r.prompt = prompt;
    r.generated = generated;
    const char32_t a = line_end_char(prompt);
    const char32_t b = line_end_char(generated);
    r.prompt_end = char_text(a);
    r.generated_end = char_text(b);
    r.prompt_class = a == U'\0' ? RhymeClass::kUnknown : classify_char(a, lex);
    r.generated_class = b == U'\0' ? RhymeClass::kUnknown : classify_char(b, lex);
    r.matched = is_rhyme_class(r.prompt_class) && r.prompt_class == r.generated_class;
    report.num_rhymed += r.matched ? 1 : 0;
    report.records.push_back(std::move(r));
  }
  report.num_prompts = report.records.size();
  report.rhyming_rate = static_cast<double>(report.num_rhymed) / static_cast<double>(report.num_prompts);
  return report;
}

EvalReport evaluate_model(const Model& model, const Vocab& vocab, const std::vector<std::string>& prompts,
                          const GenConfig& gen, const CharPinyinLexicon& lex,
                          const std::vector<EncodedPair>* heldout) {
  std::vector<std::pair<std::string, std::string>> pairs;
  const auto results = batch_generate(prompts, model, vocab, lex, gen);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (!results[i].ok) throw EvalError("prompt " + std::to_string(i) + ": " + results[i].error);
    pairs.emplace_back(prompts[i], results[i].text);
  }
  EvalReport report = rhyming_rate(pairs, lex);
  if (heldout != nullptr && !heldout->empty()) {
    report.perplexity = std::exp(evaluate_loss(model, *heldout));
  }
  return report;
}

std::string EvalReport::to_text() const {
  std::string out =
      "prompt\tgenerated\tprompt_end\tgenerated_end\tprompt_class\tgenerated_class\tmatched\n";
  for (const auto& r : records) {
    out += escape_field(r.prompt) + "\t" + escape_field(r.generated) + "\t" + r.prompt_end + "\t" +
           r.generated_end + "\t" + std::string(name(r.prompt_class)) + "\t" +
           std::string(name(r.generated_class)) + "\t" + (r.matched ? "1" : "0") + "\n";
  }
  out += "# summary\n";
  out += "num_prompts=" + std::to_string(num_prompts) + "\n";
  out += "num_rhymed=" + std::to_string(num_rhymed) + "\n";
  out += "rhyming_rate=" + format_double(rhyming_rate) + "\n";
  out += "perplexity=" + optional_text(perplexity) + "\n";
  out += "consistency=" + optional_text(consistency) + "\n";
  out += "fluency=" + optional_text(fluency) + "\n";
  out += "meaning=" + optional_text(meaning) + "\n";
  return out;
}

AttentionDump capture_attention(const Model& model, const Vocab& vocab, const EncodedPair& input) {
  AttentionDump dump;
  AttentionTrace trace;
  model.logits(input.token_ids, input.rhyme_ids, &trace);
  for (int t : input.token_ids) dump.tokens.push_back(vocab.token_text(t));
  for (int r : input.rhyme_ids) dump.rhymes.emplace_back(name(rhyme_class_from_id(r)));
  dump.maps = std::move(trace.maps);
  return dump;
}

void validate_attention(const AttentionDump& dump, double tol) {
  for (const auto& m : dump.maps) {
    const std::string where = "layer " + std::to_string(m.layer) + " " +
                              std::string(to_string(m.stream)) + " head " + std::to_string(m.head);
    const Matrix& w = m.weights;
    if (w.rows() != w.cols()) throw EvalError(where + ": matrix not square");
    for (Eigen::Index q = 0; q < w.rows(); ++q) {
      double row_sum = 0.0;
      for (Eigen::Index p = 0; p < w.cols(); ++p) {
        if (w(q, p) < 0.0) throw EvalError(where + ": negative weight");
        if (p > q && w(q, p) != 0.0) throw EvalError(where + ": weight above the diagonal");
        row_sum += w(q, p);
      }
      if (std::abs(row_sum - 1.0) > tol) throw EvalError(where + ": row does not sum to 1");
    }
  }
}

nlohmann::json AttentionDump::to_json() const {
  nlohmann::json j;
  j["tokens"] = tokens;
  j["rhymes"] = rhymes;
  j["matrices"] = nlohmann::json::array();
  for (const auto& m : maps) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index q = 0; q < m.weights.rows(); ++q) {
      std::vector<double> row(m.weights.row(q).data(), m.weights.row(q).data() + m.weights.cols());
      rows.push_back(row);
    }
    j["matrices"].push_back({{"layer", m.layer},
                             {"stream", to_string(m.stream)},
                             {"head", m.head},
                             {"labels", m.stream == Stream::kToken ? tokens : rhymes},
                             {"rows", std::move(rows)}});
  }
  return j;
}

void dump_attention(const AttentionDump& dump, const std::filesystem::path& out_path) {
  validate_attention(dump);
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw EvalError("cannot write " + out_path.string());
  out << dump.to_json().dump(1) << "\n";
  if (!out) throw EvalError("write failed: " + out_path.string());
}

}  // namespace rhymelm
