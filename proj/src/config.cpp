#include "rhymelm/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <functional>
#include <map>
#include <sstream>

namespace rhymelm {

namespace {

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("bad value for " + std::string(key) + ": '" + std::string(text) + "'");
  }
  return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "on" || text == "1") return true;
  if (text == "false" || text == "off" || text == "0") return false;
  throw ConfigError("bad boolean for " + std::string(key) + ": '" + std::string(text) + "'");
}

struct Field {
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

using FieldTable = std::vector<std::pair<std::string, Field>>;  // "section.key", in output order

#define RHYMELM_INT_FIELD(section, member, key)                                                     \
  {                                                                                                \
    key, Field {                                                                                   \
      [](RunConfig& c, std::string_view v) { c.section.member = parse_number<decltype(c.section.member)>(key, v); }, \
          [](const RunConfig& c) { return std::to_string(c.section.member); }                      \
    }                                                                                              \
  }

#define RHYMELM_DOUBLE_FIELD(section, member, key)                                                  \
  {                                                                                                \
    key, Field {                                                                                   \
      [](RunConfig& c, std::string_view v) { c.section.member = parse_number<double>(key, v); },   \
          [](const RunConfig& c) { return format_double(c.section.member); }                       \
    }                                                                                              \
  }

#define RHYMELM_BOOL_FIELD(section, member, key)                                                    \
  {                                                                                                \
    key, Field {                                                                                   \
      [](RunConfig& c, std::string_view v) { c.section.member = parse_bool(key, v); },             \
          [](const RunConfig& c) { return std::string(c.section.member ? "true" : "false"); }      \
    }                                                                                              \
  }

const FieldTable& fields() {
  static const FieldTable table = {
      RHYMELM_INT_FIELD(model, num_aggregators, "model.num_aggregators"),
      RHYMELM_INT_FIELD(model, fusion_dim, "model.fusion_dim"),
      RHYMELM_INT_FIELD(model, num_heads, "model.num_heads"),
      RHYMELM_INT_FIELD(model, vocab_size, "model.vocab_size"),
      RHYMELM_INT_FIELD(model, rhyme_dim, "model.rhyme_dim"),
      RHYMELM_INT_FIELD(model, rhyme_heads, "model.rhyme_heads"),
      RHYMELM_INT_FIELD(model, max_seq_len, "model.max_seq_len"),
      {"model.activation",
       Field{[](RunConfig& c, std::string_view v) {
               try {
                 c.model.activation = ad::parse_activation(v);
               } catch (const std::invalid_argument& e) {
                 throw ConfigError(e.what());
               }
             },
             [](const RunConfig& c) { return std::string(ad::to_string(c.model.activation)); }}},
      RHYMELM_BOOL_FIELD(model, use_residuals, "model.use_residuals"),
      RHYMELM_BOOL_FIELD(model, use_rhyme_stream, "model.use_rhyme_stream"),
      RHYMELM_INT_FIELD(train, epochs, "train.epochs"),
      RHYMELM_DOUBLE_FIELD(train, base_lr, "train.base_lr"),
      RHYMELM_INT_FIELD(train, warmup_epochs, "train.warmup_epochs"),
      RHYMELM_INT_FIELD(train, batch_size, "train.batch_size"),
      RHYMELM_INT_FIELD(train, grad_accum_steps, "train.grad_accum_steps"),
      RHYMELM_DOUBLE_FIELD(train, beta1, "train.beta1"),
      RHYMELM_DOUBLE_FIELD(train, beta2, "train.beta2"),
      RHYMELM_DOUBLE_FIELD(train, adam_eps, "train.adam_eps"),
      RHYMELM_INT_FIELD(train, seed, "train.seed"),
      RHYMELM_DOUBLE_FIELD(train, clip_norm, "train.clip_norm"),
      {"train.checkpoint_precision",
       Field{[](RunConfig& c, std::string_view v) {
               if (v == "32") {
                 c.train.checkpoint_precision = Precision::kFloat32;
               } else if (v == "64") {
                 c.train.checkpoint_precision = Precision::kFloat64;
               } else {
                 throw ConfigError("train.checkpoint_precision must be 32 or 64");
               }
             },
             [](const RunConfig& c) {
               return std::string(c.train.checkpoint_precision == Precision::kFloat64 ? "64" : "32");
             }}},
      RHYMELM_DOUBLE_FIELD(gen, temperature, "generate.temperature"),
      RHYMELM_INT_FIELD(gen, top_k, "generate.top_k"),
      RHYMELM_INT_FIELD(gen, max_new_tokens, "generate.max_new_tokens"),
      RHYMELM_INT_FIELD(gen, seed, "generate.seed"),
  };
  return table;
}

#undef RHYMELM_INT_FIELD
#undef RHYMELM_DOUBLE_FIELD
#undef RHYMELM_BOOL_FIELD

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs >= epochs) {
    throw ConfigError("train.warmup_epochs must satisfy 0 <= warmup_epochs < epochs");
  }
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (grad_accum_steps < 1) throw ConfigError("train.grad_accum_steps must be >= 1");
  if (!(base_lr >= 0.0)) throw ConfigError("train.base_lr must be >= 0");
  if (clip_norm < 0.0) throw ConfigError("train.clip_norm must be >= 0");
}

void GenConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("generate.temperature must be > 0");
  if (top_k < 0) throw ConfigError("generate.top_k must be >= 0");
  if (max_new_tokens < 1) throw ConfigError("generate.max_new_tokens must be >= 1");
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

RunConfig preset(std::string_view name) {
  RunConfig c;
  if (name == "paper") {
    c.model.num_aggregators = 6;
    c.model.fusion_dim = 768;
    c.model.num_heads = 4;
    c.model.max_seq_len = 64;
    c.train.epochs = 40;
    c.train.base_lr = 1e-5;
    c.train.warmup_epochs = 4;
    c.train.batch_size = 64;
    c.train.grad_accum_steps = 2;
    return c;
  }
  if (name == "desk") {
    c.model.num_aggregators = 2;
    c.model.fusion_dim = 64;
    c.model.rhyme_dim = 16;
    c.model.num_heads = 2;
    c.model.max_seq_len = 64;
    c.train.epochs = 40;
    c.train.base_lr = 3e-3;
    c.train.warmup_epochs = 2;
    c.train.batch_size = 16;
    c.train.grad_accum_steps = 1;
    return c;
  }
  throw ConfigError("unknown preset: " + std::string(name));
}

std::vector<std::string> preset_names() { return {"paper", "desk"}; }

void set_value(RunConfig& cfg, std::string_view section, std::string_view key, std::string_view value) {
  const std::string full = std::string(section) + "." + std::string(key);
  for (const auto& [name, field] : fields()) {
    if (name == full) {
      field.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key: " + full);
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
  const std::size_t eq = assignment.find('=');
  const std::size_t dot = assignment.find('.');
  if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq) {
    throw ConfigError("override must look like section.key=value: " + std::string(assignment));
  }
  set_value(cfg, assignment.substr(0, dot), assignment.substr(dot + 1, eq - dot - 1),
            assignment.substr(eq + 1));
}

void apply_ini(RunConfig& cfg, std::string_view text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config key outside a section: " + section);
    for (const auto& [key, value] : body) set_value(cfg, section, key, value.data());
  }
}

std::string to_ini(const RunConfig& cfg) {
  std::string out;
  std::string current;
  for (const auto& [name, field] : fields()) {
    const std::string section = name.substr(0, name.find('.'));
    if (section != current) {
      if (!current.empty()) out += "\n";
      out += "[" + section + "]\n";
      current = section;
    }
    out += name.substr(name.find('.') + 1) + " = " + field.get(cfg) + "\n";
  }
  return out;
}

}  // namespace rhymelm
