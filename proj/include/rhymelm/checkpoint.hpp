#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "rhymelm/config.hpp"
#include "rhymelm/model.hpp"
#include "rhymelm/tokenizer.hpp"

namespace rhymelm {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Matrix value;
};

// Everything needed to rebuild a model, run it, and resume training.
// Layout: docs/checkpoint_format.md.
struct Checkpoint {
  RunConfig config;  // model + train; generate section is informational
  Vocab vocab;
  std::uint64_t step = 0;   // optimizer steps taken
  std::uint32_t epoch = 0;  // completed epochs
  Precision precision = Precision::kFloat32;
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> adam_m;  // empty when no optimizer state is stored
  std::vector<NamedTensor> adam_v;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);

// Writes to a sibling temp file, then renames over `path`.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<NamedTensor> snapshot(const Model& model);
// Shapes and names must match the model exactly.
void restore(Model& model, const std::vector<NamedTensor>& tensors);
Model model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace rhymelm
