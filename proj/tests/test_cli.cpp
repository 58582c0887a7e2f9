#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "minigen/cli.hpp"
#include "minigen/data.hpp"
#include "minigen/decode.hpp"
#include "minigen/error.hpp"
#include "minigen/train.hpp"

using namespace minigen;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

cli::CliOptions out_to(const fs::path& dir) {
  cli::CliOptions opt;
  opt.out_dir = dir.string();
  return opt;
}

json read_manifest(const std::string& dir) {
  return json::parse(data::read_text_file(dir + "/" + cli::kManifestFile));
}

// Small end-to-end world shared by the cases below: synthetic corpus,
// tokenizer, and a briefly pre-trained LM checkpoint.
struct World {
  fs::path root;
  std::string data_dir, tok_dir, pre_dir;
  std::string pairs_train, pairs_test, pretrain_txt, tokenizer, checkpoint;
  json model;
};

const World& world() {
  static const World w = [] {
    World w;
    w.root = fs::temp_directory_path() / "minigen-cli-tests";
    fs::remove_all(w.root);
    fs::create_directories(w.root);

    w.data_dir = cli::run_synth_data(
        {{"schema_version", 1},
         {"num_pairs", 40},
         {"test_pairs", 8},
         {"seed", 11},
         {"synth",
          {{"vocab_words", 60},
           {"article_words", 12},
           {"salient_k", 2},
           {"doc_words", 40},
           {"pretrain_chars", 8000}}}},
        out_to(w.root / "data"));
    w.pairs_train = w.data_dir + "/pairs_train.jsonl";
    w.pairs_test = w.data_dir + "/pairs_test.jsonl";
    w.pretrain_txt = w.data_dir + "/pretrain.txt";

    w.tok_dir = cli::run_bpe_train({{"schema_version", 1},
                                    {"corpus", w.pretrain_txt},
                                    {"merges", 60}},
                                   out_to(w.root / "tok"));
    w.tokenizer = w.tok_dir + "/tokenizer.json";

    w.model = {{"num_layers", 1},   {"d_model", 32},
               {"num_heads", 2},    {"d_ff", 64},
               {"context_length", 48}, {"dropout_rate", 0.0}};
    w.pre_dir = cli::run_pretrain(
        {{"schema_version", 1},
         {"corpus", w.pretrain_txt},
         {"tokenizer", w.tokenizer},
         {"model", w.model},
         {"train",
          {{"epochs", 2}, {"learning_rate", 0.003}, {"batch_size", 8},
           {"warmup_steps", 10}, {"seed", 3}}}},
        out_to(w.root / "pre"));
    w.checkpoint = w.pre_dir + "/checkpoint.bin";
    return w;
  }();
  return w;
}

json sweep_config(const World& w) {
  return {{"schema_version", 1},
          {"pairs", w.pairs_train},
          {"eval_pairs", w.pairs_test},
          {"tokenizer", w.tokenizer},
          {"pretrained_checkpoint", w.checkpoint},
          {"cells",
           json::array({{{"variant", "lm"}, {"strategy", "lm_direct"}},
                        {{"variant", "encdec"}, {"strategy", "none"}}})},
          {"fractions", {0.25, 1.0}},
          {"seeds", {1}},
          {"subset_seed", 9},
          {"train", {{"epochs", 2}, {"batch_size", 4}, {"dropout_rate", 0.0}}},
          {"decode", {{"beam_size", 1}, {"max_len", 8}}},
          {"eval_limit", 4}};
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

TEST_CASE("every run directory gets a manifest whose input hashes verify") {
  const World& w = world();
  for (const std::string& dir : {w.data_dir, w.tok_dir, w.pre_dir}) {
    const json m = read_manifest(dir);
    CHECK(m.at("schema_version") == 1);
    CHECK(m.at("toolkit_version") == cli::kToolkitVersion);
    CHECK(m.at("mode") == "determinism");
    for (const auto& [role, entry] : m.at("inputs").items()) {
      (void)role;
      CHECK(cli::file_hash(entry.at("path")) == entry.at("fnv1a64"));
    }
    for (const auto& name : m.at("outputs"))
      CHECK(fs::exists(fs::path(dir) / name.get<std::string>()));
  }
}

TEST_CASE("synth-data splits the pairs and writes the pre-training stream") {
  const World& w = world();
  CHECK(data::load_pairs(w.pairs_train).size() == 40);
  CHECK(data::load_pairs(w.pairs_test).size() == 8);
  CHECK(!data::read_text_file(w.pretrain_txt).empty());
  const json m = read_manifest(w.data_dir);
  CHECK(m.at("results").at("train_pairs") == 40);
  CHECK(m.at("results").at("test_pairs") == 8);
}

TEST_CASE("bpe-train with zero merges produces a character vocabulary") {
  const World& w = world();
  const auto dir = cli::run_bpe_train(
      {{"schema_version", 1}, {"corpus", w.pretrain_txt}, {"merges", 0}},
      out_to(w.root / "tok0"));
  const json m = read_manifest(dir);
  CHECK(m.at("results").at("merges_learned") == 0);
  CHECK(m.at("results").at("vocab_size") > 3);  // specials + base symbols
  CHECK(m.at("config").at("merges") == 0);
}

TEST_CASE("pretrain ties its checkpoint to the manifest bytes") {
  const World& w = world();
  const auto ck = train::load_checkpoint(w.checkpoint);
  CHECK(ck.variant == Variant::lm);
  CHECK(ck.config.num_layers == 1);
  CHECK(ck.config.d_model == 32);
  CHECK(ck.manifest_hash ==
        cli::file_hash(w.pre_dir + "/" + cli::kManifestFile));
  const json m = read_manifest(w.pre_dir);
  CHECK(m.at("results").at("heldout_perplexity").size() == 2);
  CHECK(m.at("results").at("tokenizer_hash") == ck.tokenizer_hash);
  CHECK(m.at("seed") == 3);
}

TEST_CASE("finetune transfers, trains the chosen subset, and reports it") {
  const World& w = world();
  const auto dir = cli::run_finetune(
      {{"schema_version", 1},
       {"pairs", w.pairs_train},
       {"tokenizer", w.tokenizer},
       {"variant", "lm"},
       {"strategy", "lm_direct"},
       {"checkpoint", w.checkpoint},
       {"subset", {{"fraction", 0.5}, {"seed", 4}}},
       {"train",
        {{"epochs", 2}, {"learning_rate", 0.002}, {"batch_size", 4},
         {"seed", 5}, {"dropout_rate", 0.0}}}},
      out_to(w.root / "ft"));
  CHECK(data::read_subset(dir + "/subset_0.5_4.idx").size() == 20);
  const json transfer = json::parse(data::read_text_file(dir + "/transfer.json"));
  CHECK(transfer.at("strategy") == "lm_direct");
  CHECK(transfer.at("provenance").at("tok_embed") == "pretrained");
  CHECK(transfer.at("random_params") == 32);  // only the re-drawn delim row
  const auto ck = train::load_checkpoint(dir + "/checkpoint.bin");
  CHECK(ck.variant == Variant::lm);
  CHECK(ck.state.step == 10);  // ceil(20 examples / batch 4) * 2 epochs
  CHECK(ck.manifest_hash == cli::file_hash(dir + "/" + cli::kManifestFile));
}

TEST_CASE("finetune rejects contradictory transfer configs upfront") {
  const World& w = world();
  json base = {{"schema_version", 1},
               {"pairs", w.pairs_train},
               {"tokenizer", w.tokenizer},
               {"variant", "lm"},
               {"strategy", "none"},
               {"checkpoint", w.checkpoint}};
  CHECK_THROWS_AS(cli::run_finetune(base, out_to(w.root / "bad1")),
                  cli::ConfigError);  // checkpoint unused by 'none'
  base.erase("checkpoint");
  base["strategy"] = "both";
  CHECK_THROWS_AS(cli::run_finetune(base, out_to(w.root / "bad2")),
                  cli::ConfigError);  // 'both' needs a checkpoint
  base["checkpoint"] = w.checkpoint;
  CHECK_THROWS_AS(cli::run_finetune(base, out_to(w.root / "bad3")),
                  PreconditionError);  // 'both' cannot target the LM variant
}

TEST_CASE("decode, evaluate, and analyze-overlap chain into reports") {
  const World& w = world();
  const auto dec = cli::run_decode({{"schema_version", 1},
                                    {"checkpoint", w.checkpoint},
                                    {"tokenizer", w.tokenizer},
                                    {"pairs", w.pairs_test},
                                    {"decode",
                                     {{"beam_size", 1}, {"max_len", 6}}},
                                    {"limit", 4}},
                                   out_to(w.root / "dec"));
  const auto rows = decode::load_predictions(dec + "/predictions.jsonl");
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 0; i < rows.size(); ++i)
    CHECK(rows[i].id == static_cast<int>(i));

  const auto ev = cli::run_evaluate({{"schema_version", 1},
                                     {"predictions", dec + "/predictions.jsonl"},
                                     {"gold", w.pairs_test}},
                                    out_to(w.root / "ev"));
  const auto csv = lines_of(data::read_text_file(ev + "/evaluation.csv"));
  REQUIRE(csv.size() == 6);  // header + 4 rows + aggregate
  CHECK(csv[0] == "id,r1_f,r2_f,rl_f");
  CHECK(csv[1].substr(0, 2) == "0,");
  CHECK(csv[5].substr(0, 10) == "aggregate,");

  // The barely-trained model produces empty predictions (no n-grams at all),
  // so use verbatim copies of the gold summaries to exercise the model system.
  const auto copies = (w.root / "copy_preds.jsonl").string();
  const auto gold = data::load_pairs(w.pairs_test);
  std::vector<decode::PredictionRow> copy_rows;
  for (int i = 0; i < 4; ++i)
    copy_rows.push_back({i, gold[i].summary, 0.0});
  decode::write_predictions(copies, copy_rows);
  const auto ov = cli::run_analyze_overlap({{"schema_version", 1},
                                            {"gold", w.pairs_test},
                                            {"predictions", copies},
                                            {"n_max", 3}},
                                           out_to(w.root / "ov"));
  const auto oc = lines_of(data::read_text_file(ov + "/overlap.csv"));
  CHECK(oc[0] == "n,fraction,system");
  CHECK(oc[1] == "1,1.000000,gold");  // synthetic summaries copy article words
  bool has_model = false;
  for (const auto& line : oc) has_model = has_model || line == "1,1.000000,model";
  CHECK(has_model);
}

TEST_CASE("evaluate rejects prediction ids without a gold pair") {
  const World& w = world();
  const auto bad = (w.root / "bad_preds.jsonl").string();
  decode::write_predictions(bad, {{99, "xx", 0.0}});
  CHECK_THROWS_AS(cli::run_evaluate({{"schema_version", 1},
                                     {"predictions", bad},
                                     {"gold", w.pairs_test}},
                                    out_to(w.root / "ev_bad")),
                  cli::ConfigError);
}

TEST_CASE("completed run directories are immutable without --force") {
  const World& w = world();
  const json cfg = {{"schema_version", 1},
                    {"corpus", w.pretrain_txt},
                    {"merges", 5}};
  auto opt = out_to(w.root / "lock");
  cli::run_bpe_train(cfg, opt);
  CHECK_THROWS_AS(cli::run_bpe_train(cfg, opt), IoError);
  opt.force = true;
  CHECK(cli::run_bpe_train(cfg, opt) == opt.out_dir);
}

TEST_CASE("configs are validated strictly before any compute") {
  const World& w = world();
  const auto opt = out_to(w.root / "never");
  const json ok = {{"schema_version", 1},
                   {"corpus", w.pretrain_txt},
                   {"merges", 5}};
  json bad = ok;
  bad["schema_version"] = 2;
  CHECK_THROWS_WITH_AS(cli::run_bpe_train(bad, opt),
                       doctest::Contains("schema_version"), cli::ConfigError);
  bad = ok;
  bad["surprise"] = 1;
  CHECK_THROWS_WITH_AS(cli::run_bpe_train(bad, opt),
                       doctest::Contains("surprise"), cli::ConfigError);
  bad = ok;
  bad["merges"] = "ten";
  CHECK_THROWS_WITH_AS(cli::run_bpe_train(bad, opt),
                       doctest::Contains("integer"), cli::ConfigError);
  bad = ok;
  bad.erase("corpus");
  CHECK_THROWS_WITH_AS(cli::run_bpe_train(bad, opt),
                       doctest::Contains("corpus"), cli::ConfigError);
  bad = ok;
  bad["corpus"] = "no/such/file.txt";
  CHECK_THROWS_WITH_AS(cli::run_bpe_train(bad, opt),
                       doctest::Contains("not found"), cli::ConfigError);
  CHECK(!fs::exists(opt.out_dir));  // nothing was written for any of these
}

TEST_CASE("sweep emits the fixed grid schema with shared subsets") {
  const World& w = world();
  const auto dir = cli::run_sweep(sweep_config(w), out_to(w.root / "sw1"));
  const auto csv = lines_of(data::read_text_file(dir + "/sweep.csv"));
  REQUIRE(csv.size() == 5);  // header + 2 cells x 2 fractions x 1 seed
  CHECK(csv[0] == "variant,strategy,fraction,seed,r1,r2,rl,train_time_s,status");
  CHECK(csv[1].substr(0, 17) == "lm,lm_direct,0.25");
  CHECK(csv[3].substr(0, 17) == "encdec,none,0.25,");
  for (std::size_t i = 1; i < csv.size(); ++i) {
    CHECK(std::count(csv[i].begin(), csv[i].end(), ',') == 8);
    CHECK(csv[i].ends_with(",ok"));
    CHECK(csv[i].find(",0.00,ok") != std::string::npos);  // determinism time
  }
  const json m = read_manifest(dir);
  CHECK(m.at("results").at("rows") == 4);
  CHECK(m.at("results").at("error_rows") == 0);
  CHECK(m.at("config").at("subset_seed") == 9);
  CHECK(m.contains("reference_context"));
}

TEST_CASE("sweep records failing cells as error rows and continues") {
  const World& w = world();
  json cfg = sweep_config(w);
  // max_len 47 exhausts a 48-token context for the LM prefix, so every LM
  // cell fails while the encoder-decoder cells still run.
  cfg["decode"] = {{"beam_size", 1}, {"max_len", 47}};
  const auto dir = cli::run_sweep(cfg, out_to(w.root / "sw_err"));
  const auto csv = lines_of(data::read_text_file(dir + "/sweep.csv"));
  REQUIRE(csv.size() == 5);
  int errors = 0;
  for (std::size_t i = 1; i < csv.size(); ++i) {
    CHECK(std::count(csv[i].begin(), csv[i].end(), ',') == 8);
    if (csv[i].find(",error: ") != std::string::npos) ++errors;
  }
  CHECK(errors == 2);
  CHECK(read_manifest(dir).at("results").at("error_rows") == 2);
}

TEST_CASE("identical sweep configs give byte-identical results") {
  const World& w = world();
  const auto a = cli::run_sweep(sweep_config(w), out_to(w.root / "det_a"));
  const auto b = cli::run_sweep(sweep_config(w), out_to(w.root / "det_b"));
  CHECK(data::read_text_file(a + "/sweep.csv") ==
        data::read_text_file(b + "/sweep.csv"));
  CHECK(data::read_text_file(a + "/" + cli::kManifestFile) ==
        data::read_text_file(b + "/" + cli::kManifestFile));
}

TEST_CASE("argv entry point dispatches and reports exit codes") {
  const World& w = world();
  const auto cfg_path = (w.root / "cli_cfg.json").string();
  data::write_text_file(cfg_path,
                        json{{"schema_version", 1},
                             {"corpus", w.pretrain_txt},
                             {"merges", 4}}
                            .dump());
  const auto out = (w.root / "cli_out").string();
  const std::vector<const char*> ok{"minigen", "bpe-train", "--config",
                                    cfg_path.c_str(), "--out", out.c_str()};
  CHECK(cli::run(static_cast<int>(ok.size()), ok.data()) == 0);
  CHECK(fs::exists(fs::path(out) / "tokenizer.json"));

  // second run refuses to overwrite: io failure, exit 1
  CHECK(cli::run(static_cast<int>(ok.size()), ok.data()) == 1);

  const std::vector<const char*> usage{"minigen", "bpe-train"};
  CHECK(cli::run(static_cast<int>(usage.size()), usage.data()) == 2);

  const std::vector<const char*> missing{"minigen", "bpe-train", "--config",
                                         "nope.json"};
  CHECK(cli::run(static_cast<int>(missing.size()), missing.data()) == 2);
}
