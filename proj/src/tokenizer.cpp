#include "rhymelm/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rhymelm/utf8.hpp"

namespace rhymelm {

namespace {

constexpr std::array<std::string_view, kNumReservedIds> kTagText = {"<pad>", "<cls>", "<sep>",
                                                                    "<space>"};

constexpr std::array<RhymeClass, kNumReservedIds> kTagRhyme = {
    RhymeClass::kPad, RhymeClass::kCls, RhymeClass::kSep, RhymeClass::kSpace};

}  // namespace

Vocab Vocab::from_chars(std::u32string chars) {
  std::erase(chars, U' ');
  std::sort(chars.begin(), chars.end());
  chars.erase(std::unique(chars.begin(), chars.end()), chars.end());
  Vocab v;
  v.chars_ = std::move(chars);
  for (std::size_t i = 0; i < v.chars_.size(); ++i) {
    v.index_.emplace(v.chars_[i], kNumReservedIds + static_cast<int>(i));
  }
  return v;
}

Vocab Vocab::build(const std::vector<SentencePair>& pairs) {
  if (pairs.empty()) throw TokenizerError("cannot build a vocabulary from zero pairs");
  std::u32string chars;
  for (const auto& p : pairs) {
    chars += utf8::decode(p.first);
    chars += utf8::decode(p.second);
  }
  return from_chars(std::move(chars));
}

std::optional<int> Vocab::id_of(char32_t c) const {
  if (c == U' ') return kSpaceId;
  const auto it = index_.find(c);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

char32_t Vocab::char_of(int id) const {
  if (!is_char_id(id)) throw TokenizerError("not a character id: " + std::to_string(id));
  return chars_[static_cast<std::size_t>(id - kNumReservedIds)];
}

std::string Vocab::token_text(int id) const {
  if (id >= 0 && id < kNumReservedIds) return std::string(kTagText[static_cast<std::size_t>(id)]);
  return utf8::encode(char_of(id));
}

std::string Vocab::serialize() const {
  std::string out;
  for (int id = 0; id < static_cast<int>(size()); ++id) {
    out += token_text(id);
    out.push_back('\n');
  }
  return out;
}

Vocab Vocab::deserialize(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.emplace_back(text.substr(start, end - start));
    start = end + 1;
  }
  if (lines.size() < kNumReservedIds) throw TokenizerError("vocab file too short");
  for (std::size_t i = 0; i < kNumReservedIds; ++i) {
    if (lines[i] != kTagText[i]) {
      throw TokenizerError("vocab line " + std::to_string(i + 1) + ": expected " +
                           std::string(kTagText[i]));
    }
  }
  std::u32string chars;
  for (std::size_t i = kNumReservedIds; i < lines.size(); ++i) {
    const std::u32string cp = utf8::decode(lines[i]);
    if (cp.size() != 1) {
      throw TokenizerError("vocab line " + std::to_string(i + 1) + ": expected one character");
    }
    chars += cp;
  }
  Vocab v = from_chars(chars);
  if (v.chars_ != chars) throw TokenizerError("vocab characters not in canonical order");
  return v;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TokenizerError("cannot write " + path.string());
  out << serialize();
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TokenizerError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

int rhyme_id_for_token(int token_id, const Vocab& vocab, const CharPinyinLexicon& lex) {
  if (token_id >= 0 && token_id < kNumReservedIds) {
    return id(kTagRhyme[static_cast<std::size_t>(token_id)]);
  }
  return id(classify_char(vocab.char_of(token_id), lex));
}

void append_line(EncodedPair& out, std::string_view line, const Vocab& vocab,
                 const CharPinyinLexicon& lex) {
  for (char32_t c : utf8::decode(line)) {
    const auto tok = vocab.id_of(c);
    if (!tok) throw TokenizerError("character not in vocabulary: '" + utf8::encode(c) + "'");
    out.token_ids.push_back(*tok);
    out.rhyme_ids.push_back(id(classify_char(c, lex)));
  }
}

EncodedPair encode_pair(const SentencePair& pair, const Vocab& vocab, const CharPinyinLexicon& lex) {
  EncodedPair enc;
  enc.token_ids.push_back(kClsId);
  enc.rhyme_ids.push_back(id(RhymeClass::kCls));
  append_line(enc, pair.first, vocab, lex);
  enc.token_ids.push_back(kSepId);
  enc.rhyme_ids.push_back(id(RhymeClass::kSep));
  append_line(enc, pair.second, vocab, lex);
  enc.token_ids.push_back(kSepId);
  enc.rhyme_ids.push_back(id(RhymeClass::kSep));
  return enc;
}

std::vector<EncodedPair> encode_pairs(const std::vector<SentencePair>& pairs, const Vocab& vocab,
                                      const CharPinyinLexicon& lex) {
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(encode_pair(p, vocab, lex));
  return out;
}

EncodedPair encode_prompt(std::string_view prompt, const Vocab& vocab, const CharPinyinLexicon& lex) {
  EncodedPair enc;
  enc.token_ids.push_back(kClsId);
  enc.rhyme_ids.push_back(id(RhymeClass::kCls));
  append_line(enc, prompt, vocab, lex);
  enc.token_ids.push_back(kSepId);
  enc.rhyme_ids.push_back(id(RhymeClass::kSep));
  return enc;
}

std::string decode_tokens(const std::vector<int>& ids, const Vocab& vocab) {
  std::u32string out;
  for (int t : ids) {
    if (t == kSpaceId) {
      out.push_back(U' ');
    } else if (vocab.is_char_id(t)) {
      out.push_back(vocab.char_of(t));
    }
  }
  return utf8::encode(out);
}

std::pair<std::string, std::string> decode_pair(const EncodedPair& enc, const Vocab& vocab) {
  const auto& ids = enc.token_ids;
  if (ids.empty() || ids.front() != kClsId) throw TokenizerError("decode_pair: missing <cls>");
  const auto sep1 = std::find(ids.begin() + 1, ids.end(), kSepId);
  if (sep1 == ids.end()) throw TokenizerError("decode_pair: missing first <sep>");
  const auto sep2 = std::find(sep1 + 1, ids.end(), kSepId);
  return {decode_tokens(std::vector<int>(ids.begin() + 1, sep1), vocab),
          decode_tokens(std::vector<int>(sep1 + 1, sep2), vocab)};
}

double Batch::mask_total() const { return std::accumulate(mask.begin(), mask.end(), 0.0); }

Batch pad_batch(const std::vector<EncodedPair>& encoded, std::size_t max_len) {
  Batch b;
  b.rows = encoded.size();
  b.cols = max_len;
  b.tokens.assign(b.rows * b.cols, kPadId);
  b.rhymes.assign(b.rows * b.cols, id(RhymeClass::kPad));
  b.mask.assign(b.rows * b.cols, 0.0);
  for (std::size_t r = 0; r < encoded.size(); ++r) {
    const auto& e = encoded[r];
    if (e.token_ids.size() != e.rhyme_ids.size()) {
      throw TokenizerError("pad_batch: token/rhyme length mismatch in row " + std::to_string(r));
    }
    if (e.size() > max_len) {
      throw TokenizerError("pad_batch: row " + std::to_string(r) + " has length " +
                           std::to_string(e.size()) + " > max_len " + std::to_string(max_len));
    }
    b.lengths.push_back(e.size());
    for (std::size_t c = 0; c < e.size(); ++c) {
      b.tokens[r * b.cols + c] = e.token_ids[c];
      b.rhymes[r * b.cols + c] = e.rhyme_ids[c];
      if (c + 1 < e.size()) b.mask[r * b.cols + c] = 1.0;
    }
  }
  return b;
}

}  // namespace rhymelm
