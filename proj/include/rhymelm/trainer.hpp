#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rhymelm/checkpoint.hpp"
#include "rhymelm/config.hpp"
#include "rhymelm/model.hpp"
#include "rhymelm/tokenizer.hpp"

namespace rhymelm {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Linear warmup from 0 to base_lr over warmup_epochs * steps_per_epoch steps,
// then linear decay to 0 at epochs * steps_per_epoch.
double lr_schedule(std::uint64_t step, std::uint64_t steps_per_epoch, const TrainConfig& cfg);

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t t = 0;

  static AdamState zeros_like(std::span<Parameter* const> params);
};

// One bias-corrected Adam update. A non-finite gradient throws TrainingError
// naming the parameter, before anything is modified.
void adam_step(std::span<Parameter* const> params, std::span<const Matrix> grads, AdamState& state,
               double lr, const TrainConfig& cfg);

struct StepRecord {
  std::uint64_t step = 0;  // 1-based optimizer step
  int epoch = 0;           // 0-based
  double lr = 0.0;
  double loss = 0.0;  // token-mean loss over the accumulation window
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<double> epoch_loss;  // token-weighted mean per epoch

  // TSV: header then `step epoch lr loss` per line.
  std::string to_tsv() const;
};

// Gradients of the token-mean next-token loss over `rows` of `batch`,
// normalised by `denominator` tokens. Returns the loss (sum / denominator).
double accumulate_gradients(const Model& model, const Batch& batch, double denominator,
                            std::vector<Matrix>& grads);

// Masked mean next-token cross-entropy over a dataset (no gradients).
double evaluate_loss(const Model& model, const std::vector<EncodedPair>& data, std::size_t batch_size = 64);

struct TrainOptions {
  // Where epoch-end checkpoints (`latest.ckpt`) and the log go; empty disables.
  std::filesystem::path out_dir;
  // Resume from this state; config and vocab must match.
  const Checkpoint* resume = nullptr;
  // Stop after completing this epoch (1-based count); 0 runs to the end.
  int stop_after_epoch = 0;
  std::function<void(const StepRecord&)> on_step;
  std::function<void(int epoch, double loss)> on_epoch;
};

struct TrainResult {
  Model model;
  AdamState adam;
  TrainLog log;
  Checkpoint checkpoint;  // state at the last completed epoch
};

// Deterministic given train.seed: initialisation uses the seed, and each epoch
// shuffles with a generator seeded from (seed, epoch). Each optimizer step
// consumes grad_accum_steps micro-batches of batch_size pairs.
TrainResult train(const std::vector<EncodedPair>& data, const Vocab& vocab, const RunConfig& cfg,
                  const TrainOptions& options = {});

std::uint64_t steps_per_epoch(std::size_t dataset_size, const TrainConfig& cfg);

}  // namespace rhymelm
