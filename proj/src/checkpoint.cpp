#include "rhymelm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace rhymelm {

namespace {

constexpr char kMagic[8] = {'R', 'H', 'Y', 'M', 'E', 'L', 'M', '\0'};

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void str(std::string_view s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void tensor(const NamedTensor& t, Precision prec) {
    str(t.name);
    u32(2);
    u64(static_cast<std::uint64_t>(t.value.rows()));
    u64(static_cast<std::uint64_t>(t.value.cols()));
    for (Eigen::Index i = 0; i < t.value.size(); ++i) {
      const double v = t.value.data()[i];
      if (prec == Precision::kFloat32) {
        u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      } else {
        u64(std::bit_cast<std::uint64_t>(v));
      }
    }
  }
  std::string take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  NamedTensor tensor(Precision prec) {
    NamedTensor t;
    t.name = str();
    if (u32() != 2) throw CheckpointError("tensor " + t.name + ": unsupported rank");
    const std::uint64_t rows = u64();
    const std::uint64_t cols = u64();
    const std::uint64_t width = static_cast<std::uint64_t>(prec);
    if (rows != 0 && cols > (in_.size() - pos_) / width / rows) {
      throw CheckpointError("tensor " + t.name + ": truncated data");
    }
    t.value.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < t.value.size(); ++i) {
      t.value.data()[i] = prec == Precision::kFloat32
                              ? static_cast<double>(std::bit_cast<float>(u32()))
                              : std::bit_cast<double>(u64());
    }
    return t;
  }
  void raw(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, in_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > in_.size() - pos_) throw CheckpointError("checkpoint truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

void write_group(Writer& w, const std::vector<NamedTensor>& group, Precision prec) {
  w.u64(group.size());
  for (const auto& t : group) w.tensor(t, prec);
}

std::vector<NamedTensor> read_group(Reader& r, Precision prec) {
  const std::uint64_t n = r.u64();
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < n; ++i) out.push_back(r.tensor(prec));
  return out;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.u32(kCheckpointFormatVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.precision));
  w.u64(ckpt.step);
  w.u32(ckpt.epoch);
  w.str(to_ini(ckpt.config));
  w.str(ckpt.vocab.serialize());
  write_group(w, ckpt.params, ckpt.precision);
  write_group(w, ckpt.adam_m, ckpt.precision);
  write_group(w, ckpt.adam_v, ckpt.precision);
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  char magic[sizeof(kMagic)];
  r.raw(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw CheckpointError("not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointFormatVersion) {
    throw CheckpointError("unsupported checkpoint format version " + std::to_string(version));
  }
  Checkpoint c;
  const std::uint32_t prec = r.u32();
  if (prec != 4 && prec != 8) throw CheckpointError("bad precision field " + std::to_string(prec));
  c.precision = static_cast<Precision>(prec);
  c.step = r.u64();
  c.epoch = r.u32();
  try {
    apply_ini(c.config, r.str());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("embedded config: ") + e.what());
  }
  try {
    c.vocab = Vocab::deserialize(r.str());
  } catch (const TokenizerError& e) {
    throw CheckpointError(std::string("embedded vocab: ") + e.what());
  }
  c.params = read_group(r, c.precision);
  c.adam_m = read_group(r, c.precision);
  c.adam_v = read_group(r, c.precision);
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

std::vector<NamedTensor> snapshot(const Model& model) {
  std::vector<NamedTensor> out;
  for (const Parameter* p : model.parameters()) out.push_back({p->name, p->value});
  return out;
}

void restore(Model& model, const std::vector<NamedTensor>& tensors) {
  std::unordered_map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name.emplace(t.name, &t);
  const auto params = model.parameters();
  if (by_name.size() != params.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(by_name.size()) +
                          " tensors, model expects " + std::to_string(params.size()));
  }
  for (Parameter* p : params) {
    const auto it = by_name.find(p->name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks tensor " + p->name);
    const Matrix& v = it->second->value;
    if (v.rows() != p->value.rows() || v.cols() != p->value.cols()) {
      throw CheckpointError("tensor " + p->name + ": shape " + ad::shape_string(v) +
                            " vs model " + ad::shape_string(p->value));
    }
    p->value = v;
  }
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model model(ckpt.config.model, 0);
  restore(model, ckpt.params);
  return model;
}

}  // namespace rhymelm
