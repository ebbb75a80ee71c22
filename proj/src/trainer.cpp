#include "rhymelm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace rhymelm {

namespace {

std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  // splitmix64 of (seed, epoch)
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(epoch) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::size_t max_length(const std::vector<EncodedPair>& data, std::span<const std::size_t> idx) {
  std::size_t n = 0;
  for (std::size_t i : idx) n = std::max(n, data[i].size());
  return n;
}

Batch make_batch(const std::vector<EncodedPair>& data, std::span<const std::size_t> idx) {
  std::vector<EncodedPair> rows;
  rows.reserve(idx.size());
  for (std::size_t i : idx) rows.push_back(data[i]);
  return pad_batch(rows, max_length(data, idx));
}

Checkpoint make_checkpoint(const Model& model, const AdamState& adam, const Vocab& vocab,
                           const RunConfig& cfg, int epochs_done) {
  Checkpoint c;
  c.config = cfg;
  c.vocab = vocab;
  c.step = adam.t;
  c.epoch = static_cast<std::uint32_t>(epochs_done);
  c.precision = cfg.train.checkpoint_precision;
  c.params = snapshot(model);
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    c.adam_m.push_back({params[i]->name, adam.m[i]});
    c.adam_v.push_back({params[i]->name, adam.v[i]});
  }
  return c;
}

std::vector<Matrix> by_param_order(const std::vector<NamedTensor>& tensors,
                                   std::span<Parameter* const> params) {
  std::vector<Matrix> out;
  for (Parameter* p : params) {
    const auto it = std::find_if(tensors.begin(), tensors.end(),
                                 [&](const NamedTensor& t) { return t.name == p->name; });
    if (it == tensors.end()) throw TrainingError("resume: optimizer state lacks " + p->name);
    if (it->value.rows() != p->value.rows() || it->value.cols() != p->value.cols()) {
      throw TrainingError("resume: optimizer state shape mismatch for " + p->name);
    }
    out.push_back(it->value);
  }
  return out;
}

}  // namespace

double lr_schedule(std::uint64_t step, std::uint64_t steps_per_epoch, const TrainConfig& cfg) {
  const auto warm = static_cast<double>(static_cast<std::uint64_t>(cfg.warmup_epochs) * steps_per_epoch);
  const auto total = static_cast<double>(static_cast<std::uint64_t>(cfg.epochs) * steps_per_epoch);
  const auto s = static_cast<double>(step);
  if (s >= total) return 0.0;
  if (s < warm) return cfg.base_lr * s / warm;
  return cfg.base_lr * (total - s) / (total - warm);
}

std::uint64_t steps_per_epoch(std::size_t dataset_size, const TrainConfig& cfg) {
  const auto window = static_cast<std::uint64_t>(cfg.batch_size) *
                      static_cast<std::uint64_t>(cfg.grad_accum_steps);
  return (dataset_size + window - 1) / window;
}

AdamState AdamState::zeros_like(std::span<Parameter* const> params) {
  AdamState s;
  for (const Parameter* p : params) {
    s.m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    s.v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
  return s;
}

void adam_step(std::span<Parameter* const> params, std::span<const Matrix> grads, AdamState& state,
               double lr, const TrainConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw TrainingError("adam_step: parameter/gradient/state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = grads[i];
    if (g.rows() != params[i]->value.rows() || g.cols() != params[i]->value.cols()) {
      throw TrainingError("adam_step: gradient shape mismatch for " + params[i]->name);
    }
    if (!g.allFinite()) throw TrainingError("non-finite gradient for parameter " + params[i]->name);
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    const Matrix& g = grads[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const auto m_hat = m.array() / c1;
    const auto v_hat = v.array() / c2;
    params[i]->value.array() -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
  }
}

std::string TrainLog::to_tsv() const {
  std::string out = "step\tepoch\tlr\tloss\n";
  for (const auto& r : steps) {
    out += std::to_string(r.step) + "\t" + std::to_string(r.epoch) + "\t" + format_double(r.lr) +
           "\t" + format_double(r.loss) + "\n";
  }
  return out;
}

double accumulate_gradients(const Model& model, const Batch& batch, double denominator,
                            std::vector<Matrix>& grads) {
  const auto params = model.parameters();
  if (grads.size() != params.size()) {
    grads.clear();
    for (const Parameter* p : params) grads.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
  ad::Graph g;
  std::optional<ad::Var> total;
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const std::size_t n = batch.lengths[r];
    const std::span<const int> tokens(batch.tokens.data() + r * batch.cols, n);
    const std::span<const int> rhymes(batch.rhymes.data() + r * batch.cols, n);
    const std::span<const double> mask(batch.mask.data() + r * batch.cols, n);
    const ad::Var logits = model.forward(g, tokens, rhymes);
    const ad::Var loss = next_token_loss(g, logits, tokens, mask, denominator);
    total = total ? g.add(*total, loss) : loss;
  }
  if (!total) return 0.0;
  g.backward(*total);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (auto pg = g.param_grad(*params[i])) grads[i] += *pg;
  }
  return g.value(*total)(0, 0);
}

double evaluate_loss(const Model& model, const std::vector<EncodedPair>& data, std::size_t batch_size) {
  double weighted = 0.0;
  double tokens = 0.0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Batch b = make_batch(data, idx);
    ad::Graph g;
    for (std::size_t r = 0; r < b.rows; ++r) {
      const std::size_t n = b.lengths[r];
      const std::span<const int> toks(b.tokens.data() + r * b.cols, n);
      const std::span<const int> rh(b.rhymes.data() + r * b.cols, n);
      const std::span<const double> mask(b.mask.data() + r * b.cols, n);
      const ad::Var logits = model.forward(g, toks, rh);
      const double count = std::accumulate(mask.begin(), mask.end(), 0.0);
      weighted += g.value(next_token_loss(g, logits, toks, mask, 1.0))(0, 0);
      tokens += count;
    }
  }
  return tokens == 0.0 ? 0.0 : weighted / tokens;
}

TrainResult train(const std::vector<EncodedPair>& data, const Vocab& vocab, const RunConfig& cfg_in,
                  const TrainOptions& options) {
  if (data.empty()) throw TrainingError("training dataset is empty");
  RunConfig cfg = cfg_in;
  cfg.model.vocab_size = static_cast<int>(vocab.size());
  cfg.model = cfg.model.resolved();
  cfg.train.validate();
  for (const auto& e : data) {
    if (e.size() > static_cast<std::size_t>(cfg.model.max_seq_len)) {
      throw TrainingError("encoded pair of length " + std::to_string(e.size()) +
                          " exceeds max_seq_len " + std::to_string(cfg.model.max_seq_len));
    }
  }

  TrainResult result{Model(cfg.model, cfg.train.seed), {}, {}, {}};
  Model& model = result.model;
  const auto params = model.parameters();
  AdamState& adam = result.adam;
  adam = AdamState::zeros_like(params);
  int start_epoch = 0;

  if (options.resume != nullptr) {
    const Checkpoint& ck = *options.resume;
    if (!(ck.vocab == vocab)) throw TrainingError("resume: vocabulary differs from checkpoint");
    if (!(ck.config.model == cfg.model) || !(ck.config.train == cfg.train)) {
      throw TrainingError("resume: configuration differs from checkpoint");
    }
    restore(model, ck.params);
    adam.m = by_param_order(ck.adam_m, params);
    adam.v = by_param_order(ck.adam_v, params);
    adam.t = ck.step;
    start_epoch = static_cast<int>(ck.epoch);
    result.checkpoint = ck;
  }

  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    std::ofstream(options.out_dir / "config.ini", std::ios::trunc) << to_ini(cfg);
    vocab.save(options.out_dir / "vocab.txt");
    if (options.resume == nullptr) {
      std::ofstream(options.out_dir / "train_log.tsv", std::ios::trunc) << "step\tepoch\tlr\tloss\n";
    }
  }

  const std::uint64_t spe = steps_per_epoch(data.size(), cfg.train);
  const auto micro = static_cast<std::size_t>(cfg.train.batch_size);
  const std::size_t window = micro * static_cast<std::size_t>(cfg.train.grad_accum_steps);
  std::vector<Matrix> grads;

  for (int epoch = start_epoch; epoch < cfg.train.epochs; ++epoch) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(epoch_seed(cfg.train.seed, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_weighted = 0.0;
    double epoch_tokens = 0.0;
    for (std::size_t start = 0; start < order.size(); start += window) {
      const std::size_t end = std::min(order.size(), start + window);
      double window_tokens = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        window_tokens += static_cast<double>(data[order[i]].size() - 1);
      }
      for (auto& gm : grads) gm.setZero();
      double loss = 0.0;
      for (std::size_t mb = start; mb < end; mb += micro) {
        const std::span<const std::size_t> idx(order.data() + mb, std::min(micro, end - mb));
        loss += accumulate_gradients(model, make_batch(data, idx), window_tokens, grads);
      }
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite loss at step " + std::to_string(adam.t + 1) +
                            "; last epoch-end checkpoint left in place");
      }
      if (cfg.train.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& gm : grads) sq += gm.squaredNorm();
        const double norm = std::sqrt(sq);
        if (norm > cfg.train.clip_norm) {
          for (auto& gm : grads) gm *= cfg.train.clip_norm / norm;
        }
      }
      const double lr = lr_schedule(adam.t + 1, spe, cfg.train);
      adam_step(params, grads, adam, lr, cfg.train);

      StepRecord rec{adam.t, epoch, lr, loss};
      result.log.steps.push_back(rec);
      if (options.on_step) options.on_step(rec);
      epoch_weighted += loss * window_tokens;
      epoch_tokens += window_tokens;
    }
    const double epoch_loss = epoch_weighted / epoch_tokens;
    result.log.epoch_loss.push_back(epoch_loss);
    if (options.on_epoch) options.on_epoch(epoch, epoch_loss);

    result.checkpoint = make_checkpoint(model, adam, vocab, cfg, epoch + 1);
    if (!options.out_dir.empty()) {
      save_checkpoint(result.checkpoint, options.out_dir / "latest.ckpt");
      std::ofstream log(options.out_dir / "train_log.tsv", std::ios::app);
      for (const auto& r : result.log.steps) {
        if (r.epoch != epoch) continue;
        log << r.step << '\t' << r.epoch << '\t' << format_double(r.lr) << '\t'
            << format_double(r.loss) << '\n';
      }
    }
    if (options.stop_after_epoch > 0 && epoch + 1 >= options.stop_after_epoch) break;
  }
  return result;
}

}  // namespace rhymelm
