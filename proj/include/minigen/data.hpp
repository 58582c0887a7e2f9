#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "minigen/bpe.hpp"
#include "minigen/tensor.hpp"

namespace minigen::data {

struct ExamplePair {
  std::string article;
  std::string summary;
};

// One training sequence: article ++ <delim> ++ summary ++ <eos>, with loss
// over the summary span and <eos> only.
struct PackedExample {
  std::vector<int> ids;
  std::vector<std::uint8_t> loss_mask;
};

// Truncation budgets applied before fitting into the model context. The
// article may be cut from its end; the summary is never cut.
struct PackBudget {
  int max_article = 400;
  int max_summary = 100;
};

PackedExample pack_ids(const std::vector<int>& article,
                       const std::vector<int>& summary, int context_length,
                       PackBudget budget = {});

PackedExample pack(const ExamplePair& example, const bpe::Tokenizer& tok,
                   int context_length, PackBudget budget = {});

// Nested fraction subsets drawn from one seeded permutation of 0..n-1, so
// every model variant trains on literally the same examples.
struct SubsetSpec {
  std::vector<double> fractions{0.01, 0.02, 0.05, 0.10, 0.20, 0.50, 1.0};
  std::uint64_t seed = 0;
  idx n = 0;
};

std::vector<std::pair<double, std::vector<int>>> make_subsets(
    const SubsetSpec& spec);

std::string subset_filename(double fraction, std::uint64_t seed);
void write_subset(const std::string& path, const std::vector<int>& indices);
std::vector<int> read_subset(const std::string& path);

// Synthetic extraction task: each article is a stream of lexicon words in
// which k salient words are preceded by a marker; the reference summary is
// those words in order. The pre-training stream draws from the same word
// distribution but carries no markers.
struct SynthParams {
  int vocab_words = 200;
  int article_words = 30;   // words per article, excluding markers
  int salient_k = 3;
  std::string marker = "@@";
  int doc_words = 120;              // words per pre-training document
  std::int64_t pretrain_chars = 200000;  // approximate stream size
};

struct SynthCorpus {
  std::vector<ExamplePair> pairs;
  std::string pretrain_text;  // blank-line separated documents
};

SynthCorpus synth_task(int n_examples, std::uint64_t seed,
                       const SynthParams& params = {});

// JSON-lines pair files ({"article": ..., "summary": ...} per line) with a
// canonical serialization: save(load(f)) is byte-identical.
std::vector<ExamplePair> load_pairs(const std::string& path);
void save_pairs(const std::string& path, const std::vector<ExamplePair>& pairs);
std::string pairs_to_jsonl(const std::vector<ExamplePair>& pairs);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);
std::vector<std::string> split_documents(const std::string& text);

}  // namespace minigen::data
