#include "rhymelm/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "rhymelm/utf8.hpp"

namespace rhymelm {

namespace {

constexpr std::string_view kHeader = "song_id\tfirst\tsecond";

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw CorpusError("cannot read " + path.string());
  return buf.str();
}

}  // namespace

DatasetVariant parse_variant(std::string_view text) {
  if (text == "raw") return DatasetVariant::kRaw;
  if (text == "filtered") return DatasetVariant::kFiltered;
  if (text == "only-rhyme") return DatasetVariant::kOnlyRhyme;
  throw CorpusError("unknown dataset variant: " + std::string(text));
}

std::string_view to_string(DatasetVariant v) {
  switch (v) {
    case DatasetVariant::kRaw: return "raw";
    case DatasetVariant::kFiltered: return "filtered";
    case DatasetVariant::kOnlyRhyme: return "only-rhyme";
  }
  return "?";
}

Lyric parse_lyric(std::string song_id, std::string_view text) {
  if (!utf8::is_valid(text)) throw CorpusError(song_id + ": not valid UTF-8");
  Lyric lyric{std::move(song_id), {}};
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line = utf8::trim(text.substr(start, end - start));
    if (!line.empty()) lyric.lines.push_back(std::move(line));
    start = end + 1;
  }
  return lyric;
}

std::vector<Lyric> ingest(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) {
    throw CorpusError("corpus directory not found: " + dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });

  std::vector<Lyric> lyrics;
  lyrics.reserve(files.size());
  for (const auto& f : files) {
    const std::string text = read_file(f);
    try {
      lyrics.push_back(parse_lyric(f.stem().string(), text));
    } catch (const CorpusError&) {
      throw CorpusError(f.string() + ": not valid UTF-8");
    }
  }
  return lyrics;
}

std::vector<SentencePair> extract_pairs(const Lyric& lyric) {
  std::vector<SentencePair> pairs;
  for (std::size_t i = 0; i + 1 < lyric.lines.size(); ++i) {
    pairs.push_back({lyric.lines[i], lyric.lines[i + 1], lyric.song_id});
  }
  return pairs;
}

std::vector<SentencePair> extract_pairs(const std::vector<Lyric>& lyrics) {
  std::vector<SentencePair> pairs;
  for (const auto& l : lyrics) {
    auto p = extract_pairs(l);
    pairs.insert(pairs.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  }
  return pairs;
}

char32_t end_char(std::string_view line) {
  const std::u32string cps = utf8::decode(line);
  return cps.empty() ? U'\0' : cps.back();
}

std::vector<SentencePair> filter_pairs(const std::vector<SentencePair>& pairs, LengthBounds bounds) {
  if (bounds.min_len < 1 || bounds.min_len > bounds.max_len) {
    throw std::invalid_argument("filter_pairs: need 1 <= min_len <= max_len");
  }
  const auto in_bounds = [&](std::string_view s) {
    const std::size_t n = utf8::length(s);
    return n >= bounds.min_len && n <= bounds.max_len;
  };
  std::vector<SentencePair> out;
  for (const auto& p : pairs) {
    if (!in_bounds(p.first) || !in_bounds(p.second)) continue;
    if (end_char(p.first) == end_char(p.second)) continue;
    out.push_back(p);
  }
  return out;
}

bool ends_rhyme(std::string_view first, std::string_view second, const CharPinyinLexicon& lex) {
  const char32_t a = end_char(first);
  const char32_t b = end_char(second);
  if (a == U'\0' || b == U'\0') return false;
  const RhymeClass ca = classify_char(a, lex);
  return is_rhyme_class(ca) && ca == classify_char(b, lex);
}

std::vector<SentencePair> only_rhyme(const std::vector<SentencePair>& pairs,
                                     const CharPinyinLexicon& lex) {
  std::vector<SentencePair> out;
  std::copy_if(pairs.begin(), pairs.end(), std::back_inserter(out),
               [&](const SentencePair& p) { return ends_rhyme(p.first, p.second, lex); });
  return out;
}

std::vector<SentencePair> build_dataset(const std::vector<Lyric>& lyrics, DatasetVariant variant,
                                        LengthBounds bounds, const CharPinyinLexicon& lex) {
  auto pairs = extract_pairs(lyrics);
  if (variant == DatasetVariant::kRaw) return pairs;
  pairs = filter_pairs(pairs, bounds);
  if (variant == DatasetVariant::kFiltered) return pairs;
  return only_rhyme(pairs, lex);
}

std::string escape_field(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string unescape_field(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '\\') {
      out.push_back(text[i]);
      continue;
    }
    if (i + 1 == text.size()) throw CorpusError("dangling escape");
    switch (text[++i]) {
      case '\\': out.push_back('\\'); break;
      case 't': out.push_back('\t'); break;
      case 'n': out.push_back('\n'); break;
      case 'r': out.push_back('\r'); break;
      default: throw CorpusError(std::string("unknown escape \\") + text[i]);
    }
  }
  return out;
}

std::string format_dataset(const std::vector<SentencePair>& pairs) {
  std::string out(kHeader);
  out.push_back('\n');
  for (const auto& p : pairs) {
    out += escape_field(p.song_id);
    out.push_back('\t');
    out += escape_field(p.first);
    out.push_back('\t');
    out += escape_field(p.second);
    out.push_back('\n');
  }
  return out;
}

void write_dataset(const std::vector<SentencePair>& pairs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorpusError("cannot write " + path.string());
  out << format_dataset(pairs);
  if (!out) throw CorpusError("write failed: " + path.string());
}

std::vector<SentencePair> parse_dataset(std::string_view text, const std::string& source) {
  std::vector<SentencePair> pairs;
  std::size_t line_no = 0;
  std::size_t start = 0;
  bool saw_header = false;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    const auto fail = [&](const std::string& why) {
      return CorpusError(source + ":" + std::to_string(line_no) + ": " + why);
    };
    if (!saw_header) {
      if (line != kHeader) throw fail("missing dataset header");
      saw_header = true;
      continue;
    }
    const std::size_t t1 = line.find('\t');
    const std::size_t t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string_view::npos || line.find('\t', t2 + 1) != std::string_view::npos) {
      throw fail("expected 3 tab-separated fields");
    }
    try {
      SentencePair p{unescape_field(line.substr(t1 + 1, t2 - t1 - 1)),
                     unescape_field(line.substr(t2 + 1)), unescape_field(line.substr(0, t1))};
      if (!utf8::is_valid(p.first) || !utf8::is_valid(p.second)) throw CorpusError("invalid UTF-8");
      pairs.push_back(std::move(p));
    } catch (const CorpusError& e) {
      throw fail(e.what());
    }
  }
  if (!saw_header) throw CorpusError(source + ": empty dataset file (no header)");
  return pairs;
}

std::vector<SentencePair> read_dataset(const std::filesystem::path& path) {
  return parse_dataset(read_file(path), path.string());
}

}  // namespace rhymelm
