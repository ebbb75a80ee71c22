#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rhymelm/model.hpp"

namespace rhymelm {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Storage width of tensors in checkpoint files. Training itself runs in 64-bit.
enum class Precision : std::uint32_t { kFloat32 = 4, kFloat64 = 8 };

struct TrainConfig {
  int epochs = 40;
  double base_lr = 1e-5;
  int warmup_epochs = 4;
  int batch_size = 64;
  int grad_accum_steps = 2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  double clip_norm = 0.0;  // 0 disables global-norm clipping
  Precision checkpoint_precision = Precision::kFloat32;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct GenConfig {
  double temperature = 0.9;  // below 1e-6 decoding is greedy
  int top_k = 20;            // 0 disables truncation
  int max_new_tokens = 32;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const GenConfig&, const GenConfig&) = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  GenConfig gen;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// "paper": 6 aggregators, d = 768, 4 heads, 40 epochs, lr 1e-5, warmup 4,
// batch 64, accumulation 2. "desk": 2 aggregators, d = 64, d_e = 16, 2 heads.
RunConfig preset(std::string_view name);
std::vector<std::string> preset_names();

// INI text with [model], [train] and [generate] sections. Keys absent from the
// text keep their current values; unknown sections or keys are errors.
void apply_ini(RunConfig& cfg, std::string_view text);
// Single `section.key=value` override, same keys as the INI form.
void apply_override(RunConfig& cfg, std::string_view assignment);
void set_value(RunConfig& cfg, std::string_view section, std::string_view key, std::string_view value);

// Every field, values printed so that apply_ini(to_ini(c)) reproduces c exactly.
std::string to_ini(const RunConfig& cfg);

std::string format_double(double v);

}  // namespace rhymelm
