#include "minigen/cli.hpp"

#include <algorithm>
#include <chrono>
#include <climits>
#include <cstdio>
#include <filesystem>
#include <initializer_list>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "minigen/bpe.hpp"
#include "minigen/data.hpp"
#include "minigen/decode.hpp"
#include "minigen/error.hpp"
#include "minigen/kernels.hpp"
#include "minigen/metrics.hpp"
#include "minigen/model.hpp"
#include "minigen/rng.hpp"
#include "minigen/train.hpp"
#include "minigen/transfer.hpp"

namespace minigen::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------- config

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw ConfigError("'" + where + "' must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known)
      throw ConfigError("unknown key '" + where + "." + key + "'");
  }
}

const json* find(const json& j, const char* key) {
  const auto it = j.find(key);
  return it == j.end() || it->is_null() ? nullptr : &*it;
}

template <typename T>
T typed(const json& v, const std::string& ctx);

template <>
std::string typed<std::string>(const json& v, const std::string& ctx) {
  if (!v.is_string()) throw ConfigError(ctx + ": expected a string");
  return v.get<std::string>();
}

template <>
bool typed<bool>(const json& v, const std::string& ctx) {
  if (!v.is_boolean()) throw ConfigError(ctx + ": expected a boolean");
  return v.get<bool>();
}

template <>
std::int64_t typed<std::int64_t>(const json& v, const std::string& ctx) {
  if (!v.is_number_integer() && !v.is_number_unsigned())
    throw ConfigError(ctx + ": expected an integer");
  return v.get<std::int64_t>();
}

template <>
int typed<int>(const json& v, const std::string& ctx) {
  const auto x = typed<std::int64_t>(v, ctx);
  if (x < INT_MIN || x > INT_MAX)
    throw ConfigError(ctx + ": integer out of range");
  return static_cast<int>(x);
}

template <>
std::uint64_t typed<std::uint64_t>(const json& v, const std::string& ctx) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  throw ConfigError(ctx + ": expected a non-negative integer");
}

template <>
double typed<double>(const json& v, const std::string& ctx) {
  if (!v.is_number()) throw ConfigError(ctx + ": expected a number");
  return v.get<double>();
}

template <typename T>
T get(const json& j, const char* key, const std::string& where) {
  const json* v = find(j, key);
  if (!v) throw ConfigError("missing key '" + where + "." + key + "'");
  return typed<T>(*v, where + "." + key);
}

template <typename T>
T get_or(const json& j, const char* key, const std::string& where, T fallback) {
  const json* v = find(j, key);
  return v ? typed<T>(*v, where + "." + key) : fallback;
}

void check_schema_version(const json& j, const std::string& where) {
  const auto v = get<std::int64_t>(j, "schema_version", where);
  if (v != kConfigSchemaVersion)
    throw ConfigError(where + ".schema_version " + std::to_string(v) +
                      " unsupported (this build reads version " +
                      std::to_string(kConfigSchemaVersion) + ")");
}

void require_input(const std::string& path, const std::string& role) {
  if (!fs::exists(path))
    throw ConfigError(role + " file not found: " + path);
}

// ------------------------------------------------------- nested sections

ModelConfig parse_model(const json* j, ModelConfig base,
                        const std::string& where) {
  if (!j) return base;
  check_keys(*j, where,
             {"preset", "num_layers", "d_model", "num_heads", "d_ff",
              "context_length", "vocab_size", "encoder_bidirectional",
              "dropout_rate", "pre_norm", "shared_embeddings"});
  if (const json* p = find(*j, "preset")) {
    const auto name = typed<std::string>(*p, where + ".preset");
    if (name == "desk")
      base = ModelConfig::desk(base.vocab_size);
    else if (name == "full_scale")
      base = ModelConfig::full_scale();
    else
      throw ConfigError(where + ".preset: unknown preset '" + name +
                        "' (desk, full_scale)");
  }
  base.num_layers = get_or(*j, "num_layers", where, base.num_layers);
  base.d_model = get_or(*j, "d_model", where, base.d_model);
  base.num_heads = get_or(*j, "num_heads", where, base.num_heads);
  base.d_ff = get_or(*j, "d_ff", where, base.d_ff);
  base.context_length = get_or(*j, "context_length", where, base.context_length);
  base.vocab_size = get_or(*j, "vocab_size", where, base.vocab_size);
  base.encoder_bidirectional =
      get_or(*j, "encoder_bidirectional", where, base.encoder_bidirectional);
  base.dropout_rate = get_or(*j, "dropout_rate", where, base.dropout_rate);
  base.pre_norm = get_or(*j, "pre_norm", where, base.pre_norm);
  base.shared_embeddings =
      get_or(*j, "shared_embeddings", where, base.shared_embeddings);
  return base;
}

json model_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers},
          {"d_model", c.d_model},
          {"num_heads", c.num_heads},
          {"d_ff", c.d_ff},
          {"context_length", c.context_length},
          {"vocab_size", c.vocab_size},
          {"encoder_bidirectional", c.encoder_bidirectional},
          {"dropout_rate", c.dropout_rate},
          {"pre_norm", c.pre_norm},
          {"shared_embeddings", c.shared_embeddings}};
}

// Tokenizer vocabulary is the single source of vocab_size; an explicit value
// is allowed only when it agrees.
void set_vocab(ModelConfig& cfg, const bpe::Tokenizer& tok,
               const std::string& where) {
  const int v = tok.vocab.size();
  if (cfg.vocab_size != 0 && cfg.vocab_size != v)
    throw ConfigError(where + ".vocab_size " + std::to_string(cfg.vocab_size) +
                      " disagrees with the tokenizer (" + std::to_string(v) +
                      ")");
  cfg.vocab_size = v;
}

struct TrainSettings {
  train::TrainConfig cfg;
  std::int64_t max_steps = 0;  // 0 = run every epoch to completion
};

void apply_train_overrides(TrainSettings& s, const json& j,
                           const std::string& where) {
  check_keys(j, where,
             {"learning_rate", "epochs", "batch_size", "warmup_steps",
              "grad_clip_norm", "dropout_rate", "seed", "max_steps"});
  s.cfg.learning_rate = get_or(j, "learning_rate", where, s.cfg.learning_rate);
  s.cfg.epochs = get_or(j, "epochs", where, s.cfg.epochs);
  s.cfg.batch_size = get_or(j, "batch_size", where, s.cfg.batch_size);
  s.cfg.warmup_steps = get_or(j, "warmup_steps", where, s.cfg.warmup_steps);
  s.cfg.grad_clip_norm =
      get_or(j, "grad_clip_norm", where, s.cfg.grad_clip_norm);
  s.cfg.dropout_rate = get_or(j, "dropout_rate", where, s.cfg.dropout_rate);
  s.cfg.seed = get_or(j, "seed", where, s.cfg.seed);
  s.max_steps = get_or(j, "max_steps", where, s.max_steps);
}

TrainSettings parse_train(const json* j, train::TrainMode mode,
                          const std::string& where) {
  TrainSettings s;
  s.cfg = train::TrainConfig::defaults(mode);
  if (j) apply_train_overrides(s, *j, where);
  return s;
}

json train_json(const TrainSettings& s) {
  return {{"learning_rate", s.cfg.learning_rate},
          {"epochs", s.cfg.epochs},
          {"batch_size", s.cfg.batch_size},
          {"warmup_steps", s.cfg.warmup_steps},
          {"grad_clip_norm", s.cfg.grad_clip_norm},
          {"dropout_rate", s.cfg.dropout_rate},
          {"seed", s.cfg.seed},
          {"mode", train::to_string(s.cfg.mode)},
          {"max_steps", s.max_steps}};
}

data::PackBudget parse_pack(const json* j, const std::string& where) {
  data::PackBudget b;
  if (!j) return b;
  check_keys(*j, where, {"max_article", "max_summary"});
  b.max_article = get_or(*j, "max_article", where, b.max_article);
  b.max_summary = get_or(*j, "max_summary", where, b.max_summary);
  return b;
}

json pack_json(const data::PackBudget& b) {
  return {{"max_article", b.max_article}, {"max_summary", b.max_summary}};
}

decode::DecodeParams parse_decode(const json* j, const std::string& where) {
  decode::DecodeParams p;
  if (!j) return p;
  check_keys(*j, where, {"beam_size", "max_len", "length_normalize"});
  p.beam_size = get_or(*j, "beam_size", where, p.beam_size);
  p.max_len = get_or(*j, "max_len", where, p.max_len);
  p.length_normalize =
      get_or(*j, "length_normalize", where, p.length_normalize);
  return p;
}

json decode_json(const decode::DecodeParams& p) {
  return {{"beam_size", p.beam_size},
          {"max_len", p.max_len},
          {"length_normalize", p.length_normalize}};
}

// ------------------------------------------------------ run dir plumbing

void select_backend(const CliOptions& opt) {
  kernels::set_backend(opt.fast ? kernels::Backend::openmp
                                : kernels::Backend::serial);
}

// A directory is "completed" exactly when its manifest exists; the manifest
// is always written last, so an interrupted run stays re-runnable.
std::string prepare_run_dir(const CliOptions& opt,
                            const std::string& default_name) {
  const std::string dir =
      opt.out_dir.empty() ? "runs/" + default_name : opt.out_dir;
  const fs::path manifest = fs::path(dir) / kManifestFile;
  if (fs::exists(manifest)) {
    if (!opt.force)
      throw IoError("run directory '" + dir +
                    "' holds a completed run; pass --force to overwrite");
    fs::remove(manifest);
  }
  fs::create_directories(dir);
  return dir;
}

struct ManifestBuilder {
  json m;

  ManifestBuilder(const std::string& subcommand, const CliOptions& opt) {
    m["schema_version"] = kConfigSchemaVersion;
    m["toolkit_version"] = kToolkitVersion;
    m["subcommand"] = subcommand;
    m["mode"] = opt.fast ? "fast" : "determinism";
    m["seed"] = nullptr;
    m["inputs"] = json::object();
    m["outputs"] = json::array();
  }

  void input(const std::string& role, const std::string& path) {
    m["inputs"][role] = {{"path", path}, {"fnv1a64", file_hash(path)}};
  }
  void output(const std::string& name) { m["outputs"].push_back(name); }

  // The exact bytes that will land in manifest.json; hash this to tie other
  // artifacts (checkpoints) to the manifest.
  std::string final_text() const { return m.dump(2) + "\n"; }
  std::string hash() const { return std::to_string(rng::fnv1a(final_text())); }
  void write(const std::string& dir) const {
    data::write_text_file(dir + "/" + kManifestFile, final_text());
  }
};

std::string tokenizer_hash_string(const bpe::Tokenizer& tok) {
  return std::to_string(tok.hash());
}

train::Checkpoint load_matching_checkpoint(const std::string& path,
                                           const bpe::Tokenizer& tok) {
  auto ck = train::load_checkpoint(path);
  if (ck.tokenizer_hash != tokenizer_hash_string(tok))
    throw ConfigError("tokenizer does not match checkpoint " + path +
                      " (hash " + tokenizer_hash_string(tok) + " vs " +
                      ck.tokenizer_hash + ")");
  return ck;
}

std::string detokenize(const bpe::Tokenizer& tok, const std::vector<int>& ids) {
  std::vector<int> keep;
  keep.reserve(ids.size());
  for (int id : ids)
    if (id >= bpe::kNumSpecials) keep.push_back(id);
  return tok.decode(keep);
}

std::string gfmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", x);
  return buf;
}

// Wall-clock is reported only in fast mode; determinism mode pins the cell
// time to 0.00 so identical manifests yield byte-identical sweep CSVs.
std::string time_cell(double seconds, bool fast) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", fast ? seconds : 0.0);
  return buf;
}

std::string sanitize_csv(std::string msg) {
  for (char& c : msg)
    if (c == ',')
      c = ';';
    else if (c == '\n' || c == '\r')
      c = ' ';
  return msg;
}

std::vector<data::PackedExample> pack_all(
    const std::vector<data::ExamplePair>& pairs, const bpe::Tokenizer& tok,
    int context_length, const data::PackBudget& budget) {
  std::vector<data::PackedExample> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    try {
      out.push_back(data::pack(pairs[i], tok, context_length, budget));
    } catch (const DegenerateInputError& e) {
      throw DegenerateInputError("pair " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

// ------------------------------------------------------------- utilities

std::string file_hash(const std::string& path) {
  return std::to_string(rng::fnv1a(data::read_text_file(path)));
}

json load_config(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
  json j;
  try {
    j = json::parse(data::read_text_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  if (!j.is_object())
    throw ConfigError("config " + path + ": top level must be a JSON object");
  return j;
}

// ------------------------------------------------------------ bpe-train

std::string run_bpe_train(const json& config, const CliOptions& opt) {
  select_backend(opt);
  const std::string where = "bpe-train";
  check_keys(config, where, {"schema_version", "corpus", "merges", "lowercase"});
  check_schema_version(config, where);
  const auto corpus_path = get<std::string>(config, "corpus", where);
  int merges = get<int>(config, "merges", where);
  const bool lowercase = get_or(config, "lowercase", where, false);
  if (opt.merges_override >= 0) merges = opt.merges_override;
  if (merges < 0) throw ConfigError(where + ".merges must be >= 0");
  require_input(corpus_path, "corpus");

  const std::string dir = prepare_run_dir(opt, "bpe-train");
  const auto tok = bpe::train_bpe(data::read_text_file(corpus_path), merges,
                                  lowercase);
  tok.save(dir + "/tokenizer.json");

  ManifestBuilder mb(where, opt);
  mb.input("corpus", corpus_path);
  mb.m["config"] = {{"schema_version", kConfigSchemaVersion},
                    {"corpus", corpus_path},
                    {"merges", merges},
                    {"lowercase", lowercase}};
  mb.m["results"] = {{"vocab_size", tok.vocab.size()},
                     {"merges_learned", tok.merges.rules.size()},
                     {"tokenizer_hash", tokenizer_hash_string(tok)}};
  mb.output("tokenizer.json");
  mb.write(dir);
  return dir;
}

// ------------------------------------------------------------ synth-data

std::string run_synth_data(const json& config, const CliOptions& opt) {
  select_backend(opt);
  const std::string where = "synth-data";
  check_keys(config, where,
             {"schema_version", "num_pairs", "test_pairs", "seed", "synth"});
  check_schema_version(config, where);
  const int num_pairs = get<int>(config, "num_pairs", where);
  const int test_pairs = get_or(config, "test_pairs", where, 0);
  std::uint64_t seed = get_or<std::uint64_t>(config, "seed", where, 0);
  if (opt.has_seed) seed = opt.seed;
  if (num_pairs < 1) throw ConfigError(where + ".num_pairs must be >= 1");
  if (test_pairs < 0) throw ConfigError(where + ".test_pairs must be >= 0");

  data::SynthParams params;
  if (const json* sj = find(config, "synth")) {
    const std::string sw = where + ".synth";
    check_keys(*sj, sw,
               {"vocab_words", "article_words", "salient_k", "marker",
                "doc_words", "pretrain_chars"});
    params.vocab_words = get_or(*sj, "vocab_words", sw, params.vocab_words);
    params.article_words =
        get_or(*sj, "article_words", sw, params.article_words);
    params.salient_k = get_or(*sj, "salient_k", sw, params.salient_k);
    params.marker = get_or(*sj, "marker", sw, params.marker);
    params.doc_words = get_or(*sj, "doc_words", sw, params.doc_words);
    params.pretrain_chars =
        get_or(*sj, "pretrain_chars", sw, params.pretrain_chars);
  }

  const std::string dir = prepare_run_dir(opt, "synth-data");
  const auto corpus = data::synth_task(num_pairs + test_pairs, seed, params);
  const std::vector<data::ExamplePair> train_pairs(
      corpus.pairs.begin(), corpus.pairs.begin() + num_pairs);
  const std::vector<data::ExamplePair> eval_pairs(
      corpus.pairs.begin() + num_pairs, corpus.pairs.end());
  data::save_pairs(dir + "/pairs_train.jsonl", train_pairs);
  if (test_pairs > 0) data::save_pairs(dir + "/pairs_test.jsonl", eval_pairs);
  data::write_text_file(dir + "/pretrain.txt", corpus.pretrain_text);

  ManifestBuilder mb(where, opt);
  mb.m["seed"] = seed;
  mb.m["config"] = {{"schema_version", kConfigSchemaVersion},
                    {"num_pairs", num_pairs},
                    {"test_pairs", test_pairs},
                    {"seed", seed},
                    {"synth",
                     {{"vocab_words", params.vocab_words},
                      {"article_words", params.article_words},
                      {"salient_k", params.salient_k},
                      {"marker", params.marker},
                      {"doc_words", params.doc_words},
                      {"pretrain_chars", params.pretrain_chars}}}};
  mb.m["results"] = {{"train_pairs", train_pairs.size()},
                     {"test_pairs", eval_pairs.size()},
                     {"pretrain_bytes", corpus.pretrain_text.size()}};
  mb.output("pairs_train.jsonl");
  if (test_pairs > 0) mb.output("pairs_test.jsonl");
  mb.output("pretrain.txt");
  mb.write(dir);
  return dir;
}

// -------------------------------------------------------------- pretrain

std::string run_pretrain(const json& config, const CliOptions& opt) {
  select_backend(opt);
  const std::string where = "pretrain";
  check_keys(config, where,
             {"schema_version", "corpus", "tokenizer", "model", "train"});
  check_schema_version(config, where);
  const auto corpus_path = get<std::string>(config, "corpus", where);
  const auto tok_path = get<std::string>(config, "tokenizer", where);
  require_input(corpus_path, "corpus");
  require_input(tok_path, "tokenizer");

  const auto tok = bpe::Tokenizer::load(tok_path);
  ModelConfig mcfg =
      parse_model(find(config, "model"), ModelConfig{}, where + ".model");
  set_vocab(mcfg, tok, where + ".model");
  mcfg.validate();
  TrainSettings ts = parse_train(find(config, "train"),
                                 train::TrainMode::pretrain, where + ".train");
  if (opt.has_seed) ts.cfg.seed = opt.seed;
  ts.cfg.validate();

  const std::string dir = prepare_run_dir(opt, "pretrain");
  auto result = train::pretrain(data::read_text_file(corpus_path), ts.cfg, tok,
                                mcfg, nullptr, ts.max_steps);

  ManifestBuilder mb(where, opt);
  mb.m["seed"] = ts.cfg.seed;
  mb.input("corpus", corpus_path);
  mb.input("tokenizer", tok_path);
  mb.m["config"] = {{"schema_version", kConfigSchemaVersion},
                    {"corpus", corpus_path},
                    {"tokenizer", tok_path},
                    {"model", model_json(mcfg)},
                    {"train", train_json(ts)}};
  mb.m["results"] = {{"steps", result.state.step},
                     {"heldout_perplexity", result.heldout_perplexity},
                     {"tokenizer_hash", tokenizer_hash_string(tok)}};
  mb.output("checkpoint.bin");
  mb.output("train_log.csv");

  train::Checkpoint ck{mcfg, Variant::lm, std::move(result.state),
                       tokenizer_hash_string(tok), mb.hash()};
  train::save_checkpoint(dir + "/checkpoint.bin", ck);
  train::write_train_log(dir + "/train_log.csv", result.log);
  mb.write(dir);
  return dir;
}

// -------------------------------------------------------------- finetune

std::string run_finetune(const json& config, const CliOptions& opt) {
  select_backend(opt);
  const std::string where = "finetune";
  check_keys(config, where,
             {"schema_version", "pairs", "tokenizer", "variant", "strategy",
              "checkpoint", "subset", "model", "train", "pack"});
  check_schema_version(config, where);
  const auto pairs_path = get<std::string>(config, "pairs", where);
  const auto tok_path = get<std::string>(config, "tokenizer", where);
  const auto variant =
      variant_from_string(get<std::string>(config, "variant", where));
  const auto strategy = transfer_strategy_from_string(
      get<std::string>(config, "strategy", where));
  const json* ck_key = find(config, "checkpoint");
  if (strategy != TransferStrategy::none && !ck_key)
    throw ConfigError(where + ".checkpoint is required for strategy '" +
                      to_string(strategy) + "'");
  if (strategy == TransferStrategy::none && ck_key)
    throw ConfigError(where + ".checkpoint is not used by strategy 'none'");
  const std::string ck_path =
      ck_key ? typed<std::string>(*ck_key, where + ".checkpoint") : "";
  require_input(pairs_path, "pairs");
  require_input(tok_path, "tokenizer");
  if (ck_key) require_input(ck_path, "checkpoint");

  double subset_fraction = 1.0;
  std::uint64_t subset_seed = 0;
  const json* subset_j = find(config, "subset");
  if (subset_j) {
    const std::string sw = where + ".subset";
    check_keys(*subset_j, sw, {"fraction", "seed"});
    subset_fraction = get<double>(*subset_j, "fraction", sw);
    subset_seed = get_or<std::uint64_t>(*subset_j, "seed", sw, 0);
  }

  const auto tok = bpe::Tokenizer::load(tok_path);
  const auto pairs = data::load_pairs(pairs_path);
  std::optional<train::Checkpoint> pretrained;
  if (ck_key) {
    pretrained = load_matching_checkpoint(ck_path, tok);
    if (pretrained->variant != Variant::lm)
      throw ConfigError("checkpoint " + ck_path +
                        " is not a decoder-only LM; transfer starts from one");
  }
  ModelConfig mcfg =
      parse_model(find(config, "model"),
                  pretrained ? pretrained->config : ModelConfig{},
                  where + ".model");
  set_vocab(mcfg, tok, where + ".model");
  mcfg.validate();
  const auto mode = strategy == TransferStrategy::none
                        ? train::TrainMode::finetune_scratch
                        : train::TrainMode::finetune_pretrained;
  TrainSettings ts = parse_train(find(config, "train"), mode, where + ".train");
  if (opt.has_seed) ts.cfg.seed = opt.seed;
  ts.cfg.validate();
  const auto budget = parse_pack(find(config, "pack"), where + ".pack");

  const std::string dir = prepare_run_dir(opt, "finetune");
  const auto examples = pack_all(pairs, tok, mcfg.context_length, budget);

  std::vector<int> indices;
  std::string subset_file;
  if (subset_j) {
    data::SubsetSpec spec{{subset_fraction}, subset_seed,
                          static_cast<idx>(pairs.size())};
    indices = data::make_subsets(spec).front().second;
    subset_file = data::subset_filename(subset_fraction, subset_seed);
    data::write_subset(dir + "/" + subset_file, indices);
  } else {
    indices.resize(pairs.size());
    for (std::size_t i = 0; i < indices.size(); ++i)
      indices[i] = static_cast<int>(i);
  }

  auto [weights, report] = apply_transfer<float>(
      strategy, variant, pretrained ? pretrained->state.weights : WeightSet<float>{},
      pretrained ? pretrained->config : mcfg, mcfg,
      rng::derive_seed(ts.cfg.seed, "transfer"));
  auto result = train::finetune(examples, indices, ts.cfg, mcfg, variant,
                                {std::move(weights), {}, 0}, ts.max_steps);

  json provenance = json::object();
  for (const auto& [name, origin] : report.provenance) provenance[name] = origin;
  data::write_text_file(
      dir + "/transfer.json",
      json{{"strategy", to_string(strategy)},
           {"pretrained_params", report.pretrained_params},
           {"random_params", report.random_params},
           {"provenance", provenance}}
              .dump(2) +
          "\n");

  ManifestBuilder mb(where, opt);
  mb.m["seed"] = ts.cfg.seed;
  mb.input("pairs", pairs_path);
  mb.input("tokenizer", tok_path);
  if (ck_key) mb.input("checkpoint", ck_path);
  mb.m["config"] = {
      {"schema_version", kConfigSchemaVersion},
      {"pairs", pairs_path},
      {"tokenizer", tok_path},
      {"variant", to_string(variant)},
      {"strategy", to_string(strategy)},
      {"checkpoint", ck_key ? json(ck_path) : json(nullptr)},
      {"subset", subset_j ? json{{"fraction", subset_fraction},
                                 {"seed", subset_seed}}
                          : json(nullptr)},
      {"model", model_json(mcfg)},
      {"train", train_json(ts)},
      {"pack", pack_json(budget)}};
  mb.m["results"] = {
      {"steps", result.state.step},
      {"train_examples", indices.size()},
      {"final_loss", result.log.empty() ? 0.0 : result.log.back().loss},
      {"pretrained_params", report.pretrained_params},
      {"random_params", report.random_params}};
  mb.output("checkpoint.bin");
  mb.output("train_log.csv");
  mb.output("transfer.json");
  if (!subset_file.empty()) mb.output(subset_file);

  train::Checkpoint out{mcfg, variant, std::move(result.state),
                        tokenizer_hash_string(tok), mb.hash()};
  train::save_checkpoint(dir + "/checkpoint.bin", out);
  train::write_train_log(dir + "/train_log.csv", result.log);
  mb.write(dir);
  return dir;
}

// ---------------------------------------------------------------- decode

std::string run_decode(const json& config, const CliOptions& opt) {
  select_backend(opt);
  const std::string where = "decode";
  check_keys(config, where,
             {"schema_version", "checkpoint", "tokenizer", "pairs", "decode",
              "limit"});
  check_schema_version(config, where);
  const auto ck_path = get<std::string>(config, "checkpoint", where);
  const auto tok_path = get<std::string>(config, "tokenizer", where);
  const auto pairs_path = get<std::string>(config, "pairs", where);
  const auto params = parse_decode(find(config, "decode"), where + ".decode");
  const int limit = get_or(config, "limit", where, 0);
  if (limit < 0) throw ConfigError(where + ".limit must be >= 0");
  require_input(ck_path, "checkpoint");
  require_input(tok_path, "tokenizer");
  require_input(pairs_path, "pairs");

  const auto tok = bpe::Tokenizer::load(tok_path);
  const auto ck = load_matching_checkpoint(ck_path, tok);
  const auto pairs = data::load_pairs(pairs_path);
  const std::size_t n = limit > 0
                            ? std::min<std::size_t>(limit, pairs.size())
                            : pairs.size();

  const std::string dir = prepare_run_dir(opt, "decode");
  std::vector<decode::PredictionRow> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto hyps =
        decode::beam_search(ck.state.weights, ck.config, ck.variant,
                            tok.encode(pairs[i].article), params);
    rows.push_back({static_cast<int>(i), detokenize(tok, hyps.front().ids),
                    hyps.front().score});
  }
  decode::write_predictions(dir + "/predictions.jsonl", rows);

  ManifestBuilder mb(where, opt);
  mb.input("checkpoint", ck_path);
  mb.input("tokenizer", tok_path);
  mb.input("pairs", pairs_path);
  mb.m["config"] = {{"schema_version", kConfigSchemaVersion},
                    {"checkpoint", ck_path},
                    {"tokenizer", tok_path},
                    {"pairs", pairs_path},
                    {"decode", decode_json(params)},
                    {"limit", limit}};
  mb.m["results"] = {{"examples", n}};
  mb.output("predictions.jsonl");
  mb.write(dir);
  return dir;
}

// -------------------------------------------------------------- evaluate

std::string run_evaluate(const json& config, const CliOptions& opt) {
  select_backend(opt);
  const std::string where = "evaluate";
  check_keys(config, where, {"schema_version", "predictions", "gold"});
  check_schema_version(config, where);
  const auto pred_path = get<std::string>(config, "predictions", where);
  const auto gold_path = get<std::string>(config, "gold", where);
  require_input(pred_path, "predictions");
  require_input(gold_path, "gold");

  auto rows = decode::load_predictions(pred_path);
  const auto gold = data::load_pairs(gold_path);
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  std::vector<int> ids;
  std::vector<metrics::RougeScore> scores;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int id = rows[i].id;
    if (i > 0 && id == rows[i - 1].id)
      throw ConfigError("duplicate prediction id " + std::to_string(id));
    if (id < 0 || id >= static_cast<int>(gold.size()))
      throw ConfigError("prediction id " + std::to_string(id) +
                        " has no gold pair (file has " +
                        std::to_string(gold.size()) + ")");
    ids.push_back(id);
    scores.push_back(metrics::rouge_all(rows[i].prediction, gold[id].summary));
  }
  if (scores.empty())
    throw DegenerateInputError("predictions file has no rows");

  const std::string dir = prepare_run_dir(opt, "evaluate");
  data::write_text_file(dir + "/evaluation.csv",
                        metrics::evaluation_csv(ids, scores));

  const auto mean = metrics::aggregate(scores);
  ManifestBuilder mb(where, opt);
  mb.input("predictions", pred_path);
  mb.input("gold", gold_path);
  mb.m["config"] = {{"schema_version", kConfigSchemaVersion},
                    {"predictions", pred_path},
                    {"gold", gold_path}};
  mb.m["results"] = {{"examples", scores.size()},
                     {"r1_f", mean.r1.f1},
                     {"r2_f", mean.r2.f1},
                     {"rl_f", mean.rl.f1}};
  mb.output("evaluation.csv");
  mb.write(dir);
  return dir;
}

// ------------------------------------------------------- analyze-overlap

std::string run_analyze_overlap(const json& config, const CliOptions& opt) {
  select_backend(opt);
  const std::string where = "analyze-overlap";
  check_keys(config, where,
             {"schema_version", "gold", "predictions", "n_max"});
  check_schema_version(config, where);
  const auto gold_path = get<std::string>(config, "gold", where);
  const json* pred_key = find(config, "predictions");
  const std::string pred_path =
      pred_key ? typed<std::string>(*pred_key, where + ".predictions") : "";
  const int n_max = get_or(config, "n_max", where, 10);
  if (n_max < 1) throw ConfigError(where + ".n_max must be >= 1");
  require_input(gold_path, "gold");
  if (pred_key) require_input(pred_path, "predictions");

  const auto gold = data::load_pairs(gold_path);
  using TokenPair = std::pair<std::vector<std::string>, std::vector<std::string>>;
  std::vector<TokenPair> gold_pairs;
  gold_pairs.reserve(gold.size());
  for (const auto& p : gold)
    gold_pairs.emplace_back(metrics::metric_tokens(p.summary),
                            metrics::metric_tokens(p.article));

  std::vector<std::pair<std::string, metrics::OverlapProfile>> systems;
  systems.emplace_back("gold",
                       metrics::pooled_overlap_profile(gold_pairs, n_max));
  if (pred_key) {
    std::vector<TokenPair> model_pairs;
    for (const auto& row : decode::load_predictions(pred_path)) {
      if (row.id < 0 || row.id >= static_cast<int>(gold.size()))
        throw ConfigError("prediction id " + std::to_string(row.id) +
                          " has no gold pair");
      model_pairs.emplace_back(metrics::metric_tokens(row.prediction),
                               metrics::metric_tokens(gold[row.id].article));
    }
    systems.emplace_back("model",
                         metrics::pooled_overlap_profile(model_pairs, n_max));
  }

  const std::string dir = prepare_run_dir(opt, "analyze-overlap");
  data::write_text_file(dir + "/overlap.csv", metrics::overlap_csv(systems));

  ManifestBuilder mb(where, opt);
  mb.input("gold", gold_path);
  if (pred_key) mb.input("predictions", pred_path);
  mb.m["config"] = {{"schema_version", kConfigSchemaVersion},
                    {"gold", gold_path},
                    {"predictions",
                     pred_key ? json(pred_path) : json(nullptr)},
                    {"n_max", n_max}};
  json profiles = json::object();
  for (const auto& [label, profile] : systems) {
    json series = json::array();
    for (const auto& [n, fraction] : profile)
      series.push_back({{"n", n}, {"fraction", fraction}});
    profiles[label] = std::move(series);
  }
  mb.m["results"] = {{"profiles", std::move(profiles)}};
  mb.output("overlap.csv");
  mb.write(dir);
  return dir;
}

// ----------------------------------------------------------------- sweep

std::string run_sweep(const json& config, const CliOptions& opt) {
  select_backend(opt);
  const std::string where = "sweep";
  check_keys(config, where,
             {"schema_version", "pairs", "eval_pairs", "tokenizer",
              "pretrained_checkpoint", "model", "cells", "fractions", "seeds",
              "subset_seed", "train", "train_scratch", "train_pretrained",
              "decode", "pack", "eval_limit"});
  check_schema_version(config, where);
  const auto pairs_path = get<std::string>(config, "pairs", where);
  const auto eval_path = get<std::string>(config, "eval_pairs", where);
  const auto tok_path = get<std::string>(config, "tokenizer", where);
  const json* ck_key = find(config, "pretrained_checkpoint");
  const std::string ck_path =
      ck_key ? typed<std::string>(*ck_key, where + ".pretrained_checkpoint")
             : "";

  const json* cells_j = find(config, "cells");
  if (!cells_j || !cells_j->is_array() || cells_j->empty())
    throw ConfigError(where + ".cells must be a non-empty array");
  std::vector<std::pair<Variant, TransferStrategy>> cells;
  for (std::size_t i = 0; i < cells_j->size(); ++i) {
    const json& c = (*cells_j)[i];
    const std::string cw = where + ".cells[" + std::to_string(i) + "]";
    if (!c.is_object()) throw ConfigError(cw + " must be an object");
    check_keys(c, cw, {"variant", "strategy"});
    const auto v = variant_from_string(get<std::string>(c, "variant", cw));
    const auto s =
        transfer_strategy_from_string(get<std::string>(c, "strategy", cw));
    const bool ok =
        s == TransferStrategy::none ||
        (s == TransferStrategy::lm_direct ? v == Variant::lm
                                          : v == Variant::encdec);
    if (!ok)
      throw ConfigError(cw + ": strategy '" + to_string(s) +
                        "' cannot target variant '" + to_string(v) + "'");
    cells.emplace_back(v, s);
  }

  const json* fr_j = find(config, "fractions");
  if (!fr_j || !fr_j->is_array() || fr_j->empty())
    throw ConfigError(where + ".fractions must be a non-empty array");
  std::vector<double> fractions;
  for (std::size_t i = 0; i < fr_j->size(); ++i)
    fractions.push_back(typed<double>(
        (*fr_j)[i], where + ".fractions[" + std::to_string(i) + "]"));

  const json* seeds_j = find(config, "seeds");
  if (!seeds_j || !seeds_j->is_array() || seeds_j->empty())
    throw ConfigError(where + ".seeds must be a non-empty array");
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < seeds_j->size(); ++i)
    seeds.push_back(typed<std::uint64_t>(
        (*seeds_j)[i], where + ".seeds[" + std::to_string(i) + "]"));

  const auto subset_seed = get_or<std::uint64_t>(config, "subset_seed", where, 0);
  const int eval_limit = get_or(config, "eval_limit", where, 0);
  if (eval_limit < 0) throw ConfigError(where + ".eval_limit must be >= 0");

  bool needs_checkpoint = false;
  for (const auto& [v, s] : cells)
    needs_checkpoint = needs_checkpoint || s != TransferStrategy::none;
  if (needs_checkpoint && !ck_key)
    throw ConfigError(where +
                      ".pretrained_checkpoint is required by the cell "
                      "strategies");

  require_input(pairs_path, "pairs");
  require_input(eval_path, "eval_pairs");
  require_input(tok_path, "tokenizer");
  if (ck_key) require_input(ck_path, "pretrained_checkpoint");

  TrainSettings scratch =
      parse_train(find(config, "train"), train::TrainMode::finetune_scratch,
                  where + ".train");
  TrainSettings pretrained_ts =
      parse_train(find(config, "train"), train::TrainMode::finetune_pretrained,
                  where + ".train");
  if (const json* j = find(config, "train_scratch"))
    apply_train_overrides(scratch, *j, where + ".train_scratch");
  if (const json* j = find(config, "train_pretrained"))
    apply_train_overrides(pretrained_ts, *j, where + ".train_pretrained");
  const auto dec_params =
      parse_decode(find(config, "decode"), where + ".decode");
  const auto budget = parse_pack(find(config, "pack"), where + ".pack");

  const auto tok = bpe::Tokenizer::load(tok_path);
  const auto pairs = data::load_pairs(pairs_path);
  const auto eval_pairs = data::load_pairs(eval_path);
  std::optional<train::Checkpoint> pretrained;
  if (ck_key) {
    pretrained = load_matching_checkpoint(ck_path, tok);
    if (pretrained->variant != Variant::lm)
      throw ConfigError("pretrained_checkpoint " + ck_path +
                        " is not a decoder-only LM");
  }
  ModelConfig mcfg =
      parse_model(find(config, "model"),
                  pretrained ? pretrained->config : ModelConfig{},
                  where + ".model");
  set_vocab(mcfg, tok, where + ".model");
  mcfg.validate();

  const std::string dir = prepare_run_dir(opt, "sweep");
  const auto examples = pack_all(pairs, tok, mcfg.context_length, budget);

  // One SubsetSpec for the whole grid: every cell at a given fraction trains
  // on literally the same examples.
  std::map<double, std::vector<int>> subset_of;
  for (auto& [f, idxs] : data::make_subsets(
           {fractions, subset_seed, static_cast<idx>(pairs.size())}))
    subset_of[f] = std::move(idxs);

  const std::size_t n_eval =
      eval_limit > 0 ? std::min<std::size_t>(eval_limit, eval_pairs.size())
                     : eval_pairs.size();
  std::vector<std::vector<int>> eval_src(n_eval);
  for (std::size_t i = 0; i < n_eval; ++i)
    eval_src[i] = tok.encode(eval_pairs[i].article);

  std::string csv =
      "variant,strategy,fraction,seed,r1,r2,rl,train_time_s,status\n";
  int error_rows = 0;
  for (const auto& [variant, strategy] : cells) {
    for (const double fraction : fractions) {
      for (const std::uint64_t seed : seeds) {
        std::string row = to_string(variant) + "," + to_string(strategy) +
                          "," + gfmt(fraction) + "," + std::to_string(seed) +
                          ",";
        try {
          TrainSettings ts =
              strategy == TransferStrategy::none ? scratch : pretrained_ts;
          ts.cfg.seed = seed;
          const auto t0 = std::chrono::steady_clock::now();
          auto [weights, report] = apply_transfer<float>(
              strategy, variant,
              pretrained ? pretrained->state.weights : WeightSet<float>{},
              pretrained ? pretrained->config : mcfg, mcfg,
              rng::derive_seed(seed, "transfer"));
          auto result =
              train::finetune(examples, subset_of.at(fraction), ts.cfg, mcfg,
                              variant, {std::move(weights), {}, 0},
                              ts.max_steps);
          const double secs =
              std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                            t0)
                  .count();
          std::vector<metrics::RougeScore> scores;
          scores.reserve(n_eval);
          for (std::size_t i = 0; i < n_eval; ++i) {
            const auto hyps =
                decode::beam_search(result.state.weights, mcfg, variant,
                                    eval_src[i], dec_params);
            scores.push_back(metrics::rouge_all(
                detokenize(tok, hyps.front().ids), eval_pairs[i].summary));
          }
          const auto agg = metrics::aggregate(scores);
          row += metrics::format_score(agg.r1.f1) + "," +
                 metrics::format_score(agg.r2.f1) + "," +
                 metrics::format_score(agg.rl.f1) + "," +
                 time_cell(secs, opt.fast) + ",ok\n";
        } catch (const std::exception& e) {
          ++error_rows;
          row += ",,,,error: " + sanitize_csv(e.what()) + "\n";
        }
        csv += row;
      }
    }
  }
  data::write_text_file(dir + "/sweep.csv", csv);

  ManifestBuilder mb(where, opt);
  mb.input("pairs", pairs_path);
  mb.input("eval_pairs", eval_path);
  mb.input("tokenizer", tok_path);
  if (ck_key) mb.input("pretrained_checkpoint", ck_path);
  json cells_echo = json::array();
  for (const auto& [v, s] : cells)
    cells_echo.push_back({{"variant", to_string(v)},
                          {"strategy", to_string(s)}});
  mb.m["config"] = {
      {"schema_version", kConfigSchemaVersion},
      {"pairs", pairs_path},
      {"eval_pairs", eval_path},
      {"tokenizer", tok_path},
      {"pretrained_checkpoint", ck_key ? json(ck_path) : json(nullptr)},
      {"model", model_json(mcfg)},
      {"cells", std::move(cells_echo)},
      {"fractions", fractions},
      {"seeds", seeds},
      {"subset_seed", subset_seed},
      {"train_scratch", train_json(scratch)},
      {"train_pretrained", train_json(pretrained_ts)},
      {"decode", decode_json(dec_params)},
      {"pack", pack_json(budget)},
      {"eval_limit", eval_limit}};
  mb.m["results"] = {
      {"rows", cells.size() * fractions.size() * seeds.size()},
      {"error_rows", error_rows},
      {"eval_examples", n_eval}};
  // Published full-scale numbers, recorded for orientation only: this
  // configuration cannot reproduce them and makes no attempt to.
  mb.m["reference_context"] = {
      {"note",
       "full-scale published results for orientation; not reproducible at "
       "this scale"},
      {"full_scale",
       {{"architecture", "12-layer decoder-only LM, 135M parameters"},
        {"pretrain_perplexity", 20.5},
        {"rouge2_at_1pct",
         {{"pretrained_lm", 13.1}, {"pretrained_encdec", 2.3}}},
        {"copied_10gram_fraction",
         {{"pretrained_lm", 0.27}, {"pointer_generator", 0.70}}}}}};
  mb.output("sweep.csv");
  mb.write(dir);
  return dir;
}

// ------------------------------------------------------------------- cli

int run(int argc, const char* const* argv) {
  CLI::App app{"delimiter-packed language-model summarization toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolkitVersion));

  using RunFn = std::string (*)(const json&, const CliOptions&);
  struct Sub {
    const char* name;
    const char* desc;
    RunFn fn;
  };
  const std::vector<Sub> subs{
      {"pretrain", "pre-train the language model on a text corpus",
       run_pretrain},
      {"finetune",
       "transfer pre-trained weights and fine-tune on summary pairs",
       run_finetune},
      {"decode", "generate summaries for a pair file with beam search",
       run_decode},
      {"evaluate", "score predictions against gold summaries (ROUGE-1/2/L)",
       run_evaluate},
      {"analyze-overlap",
       "n-gram overlap of summaries with their source articles",
       run_analyze_overlap},
      {"bpe-train", "learn a BPE tokenizer from a text corpus", run_bpe_train},
      {"sweep", "variant x subset-fraction x seed sample-efficiency grid",
       run_sweep},
      {"synth-data", "generate the synthetic salient-word task corpus",
       run_synth_data},
  };

  std::string config_path;
  CliOptions opt;
  std::map<std::string, RunFn> dispatch;
  std::map<std::string, CLI::App*> apps;
  for (const Sub& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.desc);
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option("--seed", opt.seed, "override the config seed");
    sub->add_option("--out", opt.out_dir,
                    "run directory (default runs/<subcommand>)");
    sub->add_flag("--force", opt.force,
                  "overwrite a completed run directory");
    sub->add_flag("--fast", opt.fast,
                  "OpenMP kernels; excluded from bit-exactness claims");
    if (std::string(s.name) == "bpe-train")
      sub->add_option("--merges", opt.merges_override,
                      "override the config merge count");
    dispatch[s.name] = s.fn;
    apps[s.name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "minigen: error: usage: " << e.what() << "\n";
    return 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  opt.has_seed = apps.at(name)->count("--seed") > 0;
  try {
    const json config = load_config(config_path);
    const std::string dir = dispatch.at(name)(config, opt);
    std::cout << dir << "\n";
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "minigen: error: config: " << e.what() << "\n";
    return 2;
  } catch (const PreconditionError& e) {
    std::cerr << "minigen: error: config: " << e.what() << "\n";
    return 2;
  } catch (const DegenerateInputError& e) {
    std::cerr << "minigen: error: config: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "minigen: error: io: " << e.what() << "\n";
    return 1;
  } catch (const NumericsError& e) {
    std::cerr << "minigen: error: numerics: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "minigen: error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace minigen::cli
