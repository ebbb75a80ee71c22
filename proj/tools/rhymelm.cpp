#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "rhymelm/checkpoint.hpp"
#include "rhymelm/config.hpp"
#include "rhymelm/corpus.hpp"
#include "rhymelm/evaluator.hpp"
#include "rhymelm/generator.hpp"
#include "rhymelm/trainer.hpp"
#include "rhymelm/utf8.hpp"
#include "rhymelm/version.hpp"

namespace fs = std::filesystem;
using namespace rhymelm;

namespace {

constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

bool verbose() {
  const char* v = std::getenv("RHYMELM_VERBOSE");
  return v == nullptr || std::string_view(v) != "0";
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

CharPinyinLexicon load_lexicon(const std::string& path) {
  return CharPinyinLexicon::load(path.empty() ? default_lexicon_path() : fs::path(path));
}

struct ConfigFlags {
  std::string preset = "desk";
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--preset", preset, "Base configuration")->check(CLI::IsMember(preset_names()));
    cmd->add_option("--config", config_file, "INI file applied over the preset")->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "Override as section.key=value (repeatable)");
    cmd->add_option("--seed", seed, "Seed for every random choice");
  }

  // preset < config file < --set < --seed
  RunConfig resolve() const {
    RunConfig cfg = rhymelm::preset(preset);
    if (!config_file.empty()) apply_ini(cfg, read_file(config_file));
    for (const auto& o : overrides) apply_override(cfg, o);
    if (seed) {
      cfg.train.seed = *seed;
      cfg.gen.seed = *seed;
    }
    return cfg;
  }
};

struct GenFlags {
  std::optional<double> temperature;
  std::optional<int> top_k;
  std::optional<int> max_new_tokens;
  std::optional<std::uint64_t> seed;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--temperature", temperature, "Sampling temperature; below 1e-6 decodes greedily");
    cmd->add_option("--top-k", top_k, "Keep the k most likely tokens (0 keeps all)");
    cmd->add_option("--max-new-tokens", max_new_tokens, "Token budget per generated line");
    cmd->add_option("--seed", seed, "Sampling seed");
  }

  GenConfig apply(GenConfig g) const {
    if (temperature) g.temperature = *temperature;
    if (top_k) g.top_k = *top_k;
    if (max_new_tokens) g.max_new_tokens = *max_new_tokens;
    if (seed) g.seed = *seed;
    g.validate();
    return g;
  }
};

std::vector<std::string> read_prompts(const fs::path& path) {
  std::vector<std::string> prompts;
  std::istringstream in(read_file(path));
  for (std::string line; std::getline(in, line);) {
    std::string t = utf8::trim(line);
    if (!t.empty()) prompts.push_back(std::move(t));
  }
  return prompts;
}

int cmd_dataset(const std::string& corpus, const std::string& variant, int min_len, int max_len,
                const std::string& out, const std::string& lexicon) {
  const auto lex = load_lexicon(lexicon);
  const auto lyrics = ingest(corpus);
  const LengthBounds bounds{static_cast<std::size_t>(min_len), static_cast<std::size_t>(max_len)};
  const auto pairs = build_dataset(lyrics, parse_variant(variant), bounds, lex);
  write_dataset(pairs, out);
  std::cout << pairs.size() << " pairs (" << variant << ") from " << lyrics.size() << " songs -> " << out << "\n";
  return 0;
}

int cmd_train(const std::string& dataset, const ConfigFlags& flags, const std::string& out_dir, bool resume,
              int stop_after, const std::string& lexicon) {
  const auto lex = load_lexicon(lexicon);
  const auto pairs = read_dataset(dataset);
  if (pairs.empty()) throw TrainingError("dataset " + dataset + " has no pairs");
  const auto vocab = Vocab::build(pairs);
  const auto data = encode_pairs(pairs, vocab, lex);
  const RunConfig cfg = flags.resolve();

  std::optional<Checkpoint> ck;
  TrainOptions options;
  options.out_dir = out_dir;
  options.stop_after_epoch = stop_after;
  if (resume) {
    ck = load_checkpoint(fs::path(out_dir) / "latest.ckpt");
    options.resume = &*ck;
  }
  const bool loud = verbose();
  options.on_epoch = [&](int epoch, double loss) {
    if (loud) std::cout << "epoch " << epoch + 1 << "/" << cfg.train.epochs << " loss " << format_double(loss) << "\n" << std::flush;
  };
  if (loud) {
    std::cout << pairs.size() << " pairs, vocabulary " << vocab.size() << ", "
              << steps_per_epoch(data.size(), cfg.train) << " steps per epoch\n";
  }
  const auto result = train(data, vocab, cfg, options);
  std::cout << "checkpoint " << (fs::path(out_dir) / "latest.ckpt").string() << " after epoch "
            << result.checkpoint.epoch << ", step " << result.checkpoint.step << "\n";
  return 0;
}

int cmd_generate(const std::string& checkpoint, const std::string& prompt, int lines, const GenFlags& flags,
                 const std::string& lexicon) {
  const auto lex = load_lexicon(lexicon);
  const auto ck = load_checkpoint(checkpoint);
  const Model model = model_from_checkpoint(ck);
  const GenConfig gen = flags.apply(ck.config.gen);
  const auto out = generate_lines(prompt, lines, model, ck.vocab, lex, gen);
  std::cout << prompt << "\n";
  for (const auto& line : out) std::cout << line << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& prompts_file, const std::string& dataset,
             const std::string& out, const GenFlags& flags, const std::string& lexicon) {
  const auto lex = load_lexicon(lexicon);
  const auto ck = load_checkpoint(checkpoint);
  const Model model = model_from_checkpoint(ck);
  const GenConfig gen = flags.apply(ck.config.gen);
  const auto prompts = read_prompts(prompts_file);
  std::vector<EncodedPair> heldout;
  if (!dataset.empty()) heldout = encode_pairs(read_dataset(dataset), ck.vocab, lex);
  const auto report = evaluate_model(model, ck.vocab, prompts, gen, lex, dataset.empty() ? nullptr : &heldout);
  std::ofstream(out, std::ios::binary | std::ios::trunc) << report.to_text();
  std::cout << "rhyming_rate " << format_double(report.rhyming_rate) << " (" << report.num_rhymed << "/"
            << report.num_prompts << ")";
  if (report.perplexity) std::cout << " perplexity " << format_double(*report.perplexity);
  std::cout << "\n";
  return 0;
}

int cmd_attention(const std::string& checkpoint, const std::string& text, const std::string& out,
                  const std::string& lexicon) {
  const auto lex = load_lexicon(lexicon);
  const auto ck = load_checkpoint(checkpoint);
  const Model model = model_from_checkpoint(ck);
  const std::size_t bar = text.find('|');
  const EncodedPair enc = bar == std::string::npos
                              ? encode_prompt(text, ck.vocab, lex)
                              : encode_pair({text.substr(0, bar), text.substr(bar + 1), ""}, ck.vocab, lex);
  if (enc.size() > static_cast<std::size_t>(model.config().max_seq_len)) {
    throw std::runtime_error("input longer than the model context");
  }
  const auto dump = capture_attention(model, ck.vocab, enc);
  dump_attention(dump, out);
  std::cout << dump.maps.size() << " attention matrices of size " << enc.size() << " -> " << out << "\n";
  return 0;
}

int cmd_gradcheck(const ConfigFlags& flags, int vocab_size, int length, int seeds, double tol, double perturb) {
  RunConfig cfg = flags.resolve();
  cfg.model.vocab_size = vocab_size;
  cfg.model = cfg.model.resolved();
  if (length < 1 || length > cfg.model.max_seq_len) throw std::runtime_error("--length out of range");
  std::map<std::string, double> worst;
  std::vector<std::string> order;
  for (int s = 0; s < seeds; ++s) {
    const std::uint64_t seed = cfg.train.seed + static_cast<std::uint64_t>(s);
    Model model(cfg.model, seed);
    std::mt19937_64 rng(seed);
    // At initialisation many gradients sit below the finite-difference noise
    // floor, so the probe point is moved away from it.
    std::normal_distribution<double> noise(0.0, perturb);
    for (Parameter* p : model.parameters()) {
      for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] += noise(rng);
    }
    std::vector<int> tokens;
    std::vector<int> rhymes;
    for (int i = 0; i < length; ++i) {
      tokens.push_back(static_cast<int>(rng() % static_cast<std::uint64_t>(vocab_size)));
      rhymes.push_back(static_cast<int>(rng() % kNumRhymeSymbols));
    }
    const std::vector<double> mask(static_cast<std::size_t>(length), 1.0);
    auto params = model.parameters();
    const auto report = ad::grad_check(
        [&](ad::Graph& g) { return next_token_loss(g, model.forward(g, tokens, rhymes), tokens, mask); }, params,
        1e-6, tol);
    for (const auto& e : report.entries) {
      if (!worst.contains(e.name)) order.push_back(e.name);
      worst[e.name] = std::max(worst[e.name], e.max_rel_error);
    }
  }
  double overall = 0.0;
  for (const auto& name : order) {
    std::cout << name << "\t" << worst[name] << "\n";
    overall = std::max(overall, worst[name]);
  }
  const bool ok = overall <= tol;
  std::cout << "max_rel_error " << overall << (ok ? " PASS" : " FAIL") << " (tol " << tol << ")\n";
  return ok ? 0 : kRuntimeError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rhyme-aware character language model for lyric lines"};
  app.require_subcommand(1);
  std::string lexicon;
  app.add_option("--lexicon", lexicon, "Character-to-final table (default: shipped lexicon)");

  auto* dataset = app.add_subcommand("dataset", "Corpus to sentence-pair dataset");
  dataset->require_subcommand(1);
  auto* build = dataset->add_subcommand("build", "Build a pair dataset from a directory of .txt lyrics");
  std::string corpus, variant = "only-rhyme", dataset_out;
  int min_len = 2, max_len = 30;
  build->add_option("--corpus", corpus, "Directory of lyric files")->required()->check(CLI::ExistingDirectory);
  build->add_option("--variant", variant, "raw | filtered | only-rhyme")
      ->check(CLI::IsMember({"raw", "filtered", "only-rhyme"}));
  build->add_option("--min-len", min_len, "Shortest kept line, in characters");
  build->add_option("--max-len", max_len, "Longest kept line, in characters");
  build->add_option("--out", dataset_out, "Output TSV")->required();

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  std::string train_data, out_dir;
  bool resume = false;
  int stop_after = 0;
  ConfigFlags train_flags;
  train_cmd->add_option("--dataset", train_data, "Pair dataset TSV")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out-dir", out_dir, "Checkpoint, config, vocab and log directory")->required();
  train_cmd->add_flag("--resume", resume, "Continue from <out-dir>/latest.ckpt");
  train_cmd->add_option("--stop-after-epoch", stop_after, "Stop once this many epochs are complete");
  train_flags.add_to(train_cmd);

  auto* gen_cmd = app.add_subcommand("generate", "Continue a lyric line");
  std::string gen_ckpt, prompt;
  int lines = 1;
  GenFlags gen_flags;
  gen_cmd->add_option("--checkpoint", gen_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  gen_cmd->add_option("--prompt", prompt, "First line")->required();
  gen_cmd->add_option("--lines", lines, "Number of lines to generate")->check(CLI::PositiveNumber);
  gen_flags.add_to(gen_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "Rhyming rate and perplexity");
  std::string eval_ckpt, prompts_file, eval_data, eval_out;
  GenFlags eval_flags;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--prompts", prompts_file, "One prompt per line")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--dataset", eval_data, "Held-out pair TSV for perplexity")->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", eval_out, "Report file")->required();
  eval_flags.add_to(eval_cmd);

  auto* attn_cmd = app.add_subcommand("attention", "Export attention matrices as JSON");
  std::string attn_ckpt, attn_text, attn_out;
  attn_cmd->add_option("--checkpoint", attn_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  attn_cmd->add_option("--text", attn_text, "Line pair as 'first|second', or a single line")->required();
  attn_cmd->add_option("--out", attn_out, "Output JSON")->required();

  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every parameter gradient");
  ConfigFlags gc_flags;
  int gc_vocab = 12, gc_length = 6, gc_seeds = 1;
  double gc_tol = 1e-4;
  double gc_perturb = 0.3;
  gc_flags.add_to(gc_cmd);
  gc_cmd->add_option("--vocab-size", gc_vocab, "Vocabulary size of the probe model")->check(CLI::PositiveNumber);
  gc_cmd->add_option("--length", gc_length, "Probe sequence length");
  gc_cmd->add_option("--seeds", gc_seeds, "Number of seeds")->check(CLI::PositiveNumber);
  gc_cmd->add_option("--tol", gc_tol, "Largest accepted relative error");
  gc_cmd->add_option("--perturb", gc_perturb, "Std of the noise added to the initial parameters");

  auto* version_cmd = app.add_subcommand("version", "Print versions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (build->parsed()) return cmd_dataset(corpus, variant, min_len, max_len, dataset_out, lexicon);
    if (train_cmd->parsed()) return cmd_train(train_data, train_flags, out_dir, resume, stop_after, lexicon);
    if (gen_cmd->parsed()) return cmd_generate(gen_ckpt, prompt, lines, gen_flags, lexicon);
    if (eval_cmd->parsed()) return cmd_eval(eval_ckpt, prompts_file, eval_data, eval_out, eval_flags, lexicon);
    if (attn_cmd->parsed()) return cmd_attention(attn_ckpt, attn_text, attn_out, lexicon);
    if (gc_cmd->parsed()) return cmd_gradcheck(gc_flags, gc_vocab, gc_length, gc_seeds, gc_tol, gc_perturb);
    if (version_cmd->parsed()) {
      std::cout << "rhymelm " << kVersion << "\ncheckpoint format " << kCheckpointFormatVersion << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}
