#include "rhymelm/rhyme_vocab.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <utility>
#include <vector>

#include "rhymelm/utf8.hpp"

#ifndef RHYMELM_DATA_DIR
#define RHYMELM_DATA_DIR "data"
#endif

namespace rhymelm {

namespace {

constexpr std::array<std::string_view, kNumRhymeSymbols> kNames = {
    "<pad>", "<cls>", "<sep>", "<space>", "a",  "an", "o",  "en", "ie",
    "ang",   "ai",    "eng",   "ei",      "i",  "ao", "ou", "u",  "<unknown>"};

// One row per class, in class order.
const std::vector<std::vector<std::string>>& table_rows() {
  static const std::vector<std::vector<std::string>> rows = {
      {"a", "ia", "ua"},
      {"an", "ian", "uan"},
      {"o", "e", "uo"},
      {"en", "un"},
      {"ie", "ve"},
      {"ang", "iang", "uang"},
      {"ai", "uai"},
      {"eng", "ong", "iong"},
      {"ei", "ui"},
      {"i", "er", "v", "in", "ing"},
      {"ao", "Iao"},
      {"ou", "Iu"},
      {"u"},
  };
  return rows;
}

// Tone-marked vowel -> base letter.
char32_t strip_tone(char32_t c) {
  switch (c) {
    case U'ā': case U'á': case U'ǎ': case U'à': return U'a';
    case U'ē': case U'é': case U'ě': case U'è': return U'e';
    case U'ī': case U'í': case U'ǐ': case U'ì': return U'i';
    case U'ō': case U'ó': case U'ǒ': case U'ò': return U'o';
    case U'ū': case U'ú': case U'ǔ': case U'ù': return U'u';
    case U'ǖ': case U'ǘ': case U'ǚ': case U'ǜ': case U'ü': case U'Ü': return U'v';
    default: return c;
  }
}

}  // namespace

RhymeClass rhyme_class_from_id(int value) {
  if (value < 0 || value >= static_cast<int>(kNumRhymeSymbols)) {
    throw std::out_of_range("rhyme id out of range: " + std::to_string(value));
  }
  return static_cast<RhymeClass>(value);
}

std::string_view name(RhymeClass rc) { return kNames[static_cast<std::size_t>(id(rc))]; }

std::array<double, kNumRhymeSymbols> one_hot(RhymeClass rc) {
  std::array<double, kNumRhymeSymbols> v{};
  v[static_cast<std::size_t>(id(rc))] = 1.0;
  return v;
}

std::string normalize_final(std::string_view final) {
  if (!utf8::is_valid(final)) return std::string(final);
  std::u32string out;
  for (char32_t c : utf8::decode(final)) {
    c = strip_tone(c);
    if (c >= U'A' && c <= U'Z') c = c - U'A' + U'a';
    if (c >= U'0' && c <= U'9') continue;
    out.push_back(c);
  }
  // "u:" is a common ASCII spelling of u-umlaut.
  std::string s = utf8::encode(out);
  for (std::size_t pos; (pos = s.find("u:")) != std::string::npos;) s.replace(pos, 2, "v");
  return s;
}

RhymeTable::RhymeTable() {
  const auto& rows = table_rows();
  for (std::size_t row = 0; row < rows.size(); ++row) {
    const auto rc = static_cast<RhymeClass>(id(RhymeClass::kClass1) + static_cast<int>(row));
    for (const auto& f : rows[row]) {
      const auto [it, inserted] = final_to_class_.emplace(normalize_final(f), rc);
      if (!inserted) throw std::logic_error("rhyme table lists final twice: " + f);
    }
  }
}

const RhymeTable& RhymeTable::standard() {
  static const RhymeTable table;
  return table;
}

RhymeClass RhymeTable::classify(std::string_view final) const {
  const auto it = final_to_class_.find(normalize_final(final));
  return it == final_to_class_.end() ? RhymeClass::kUnknown : it->second;
}

CharPinyinLexicon CharPinyinLexicon::parse(std::string_view text, const std::string& source) {
  if (!utf8::is_valid(text)) throw LexiconError(source + ": not valid UTF-8");
  CharPinyinLexicon lex;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;

    const std::size_t tab = line.find('\t');
    const auto fail = [&](const std::string& why) {
      return LexiconError(source + ":" + std::to_string(line_no) + ": " + why);
    };
    if (tab == std::string_view::npos) throw fail("expected <char>\\t<final>");
    const std::u32string ch = utf8::decode(line.substr(0, tab));
    const std::string final = normalize_final(line.substr(tab + 1));
    if (ch.size() != 1) throw fail("first field must be exactly one character");
    if (final.empty() || final.find('\t') != std::string::npos) throw fail("bad final field");
    lex.char_to_final_.emplace(ch[0], final);
  }
  if (lex.char_to_final_.empty()) throw LexiconError(source + ": lexicon has no records");
  return lex;
}

CharPinyinLexicon CharPinyinLexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LexiconError("cannot open lexicon: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

std::optional<std::string_view> CharPinyinLexicon::final_of(char32_t c) const {
  const auto it = char_to_final_.find(c);
  if (it == char_to_final_.end()) return std::nullopt;
  return std::string_view(it->second);
}

RhymeClass classify_char(char32_t c, const CharPinyinLexicon& lex) {
  if (c == U' ') return RhymeClass::kSpace;
  const auto final = lex.final_of(c);
  return final ? classify_final(*final) : RhymeClass::kUnknown;
}

std::filesystem::path default_lexicon_path() {
  if (const char* env = std::getenv("RHYMELM_LEXICON"); env != nullptr && *env != '\0') {
    return env;
  }
  return std::filesystem::path(RHYMELM_DATA_DIR) / "lexicon.tsv";
}

}  // namespace rhymelm
