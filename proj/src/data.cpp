#include "minigen/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "minigen/error.hpp"
#include "minigen/rng.hpp"

namespace minigen::data {

PackedExample pack_ids(const std::vector<int>& article,
                       const std::vector<int>& summary, int context_length,
                       PackBudget budget) {
  if (article.empty() || summary.empty())
    throw DegenerateInputError("pack: article and summary must be non-empty");
  const int s_cap = std::min(budget.max_summary, context_length - 2);
  if (static_cast<int>(summary.size()) > s_cap)
    throw DegenerateInputError(
        "pack: summary of " + std::to_string(summary.size()) +
        " tokens cannot fit (cap " + std::to_string(s_cap) + ")");
  const int a_cap = std::min(budget.max_article,
                             context_length - 2 - static_cast<int>(summary.size()));
  if (a_cap < 1)
    throw DegenerateInputError("pack: no room left for any article token");

  PackedExample out;
  const int a_len = std::min<int>(a_cap, article.size());
  out.ids.reserve(a_len + summary.size() + 2);
  out.ids.assign(article.begin(), article.begin() + a_len);
  out.ids.push_back(bpe::kDelim);
  out.ids.insert(out.ids.end(), summary.begin(), summary.end());
  out.ids.push_back(bpe::kEos);
  out.loss_mask.assign(out.ids.size(), 1);
  std::fill(out.loss_mask.begin(), out.loss_mask.begin() + a_len + 1, 0);
  return out;
}

PackedExample pack(const ExamplePair& example, const bpe::Tokenizer& tok,
                   int context_length, PackBudget budget) {
  return pack_ids(tok.encode(example.article), tok.encode(example.summary),
                  context_length, budget);
}

std::vector<std::pair<double, std::vector<int>>> make_subsets(
    const SubsetSpec& spec) {
  if (spec.n < 1) throw PreconditionError("make_subsets: dataset size must be >= 1");
  for (double f : spec.fractions)
    if (!(f > 0.0) || f > 1.0)
      throw PreconditionError("make_subsets: fraction " + std::to_string(f) +
                              " outside (0,1]");
  std::mt19937_64 gen(rng::derive_seed(spec.seed, "subsets"));
  const auto perm = rng::permutation(spec.n, gen);

  auto fractions = spec.fractions;
  std::sort(fractions.begin(), fractions.end());
  std::vector<std::pair<double, std::vector<int>>> out;
  for (double f : fractions) {
    // +1e-9 so decimal fractions hit their exact real-valued floor
    // (0.29 * 100 evaluates to 28.999... in binary floating point)
    const auto k = std::max<idx>(1, static_cast<idx>(f * double(spec.n) + 1e-9));
    out.emplace_back(f, std::vector<int>(perm.begin(), perm.begin() + k));
  }
  return out;
}

std::string subset_filename(double fraction, std::uint64_t seed) {
  char frac[32];
  std::snprintf(frac, sizeof frac, "%g", fraction);
  return "subset_" + std::string(frac) + "_" + std::to_string(seed) + ".idx";
}

void write_subset(const std::string& path, const std::vector<int>& indices) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write subset file " + path);
  for (int i : indices) f << i << '\n';
  if (!f) throw IoError("short write to subset file " + path);
}

std::vector<int> read_subset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read subset file " + path);
  std::vector<int> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(std::stoi(line));
    } catch (const std::exception&) {
      throw IoError("subset file " + path + ": bad line '" + line + "'");
    }
  }
  return out;
}

namespace {

// Deterministic word-like lexicon: CV syllables indexed in base
// (consonants x vowels), e.g. "bami", "royu".
std::string lexicon_word(int i) {
  static const std::string cons = "bdfgklmnprstvz";
  static const std::string vowels = "aeiou";
  const int syllables = static_cast<int>(cons.size() * vowels.size());
  std::string w;
  int x = i;
  do {
    const int s = x % syllables;
    w += cons[s / vowels.size()];
    w += vowels[s % vowels.size()];
    x = x / syllables - 1;
  } while (x >= 0);
  return w;
}

// Zipf-flavoured sampler over the lexicon; low indices dominate.
class WordSampler {
 public:
  explicit WordSampler(int vocab_words) : cumulative_(vocab_words) {
    double total = 0;
    for (int i = 0; i < vocab_words; ++i) {
      total += 1.0 / double(i + 4);
      cumulative_[i] = total;
    }
    for (auto& c : cumulative_) c /= total;
  }
  int draw(std::mt19937_64& gen) const {
    const double u = rng::uniform01(gen);
    const auto it =
        std::lower_bound(cumulative_.begin(), cumulative_.end(), u);
    return static_cast<int>(std::min<std::size_t>(
        it - cumulative_.begin(), cumulative_.size() - 1));
  }

 private:
  std::vector<double> cumulative_;
};

}  // namespace

SynthCorpus synth_task(int n_examples, std::uint64_t seed,
                       const SynthParams& params) {
  if (n_examples < 1) throw PreconditionError("synth_task: need n_examples >= 1");
  if (params.vocab_words < 2 || params.article_words < 1 ||
      params.doc_words < 1)
    throw PreconditionError("synth_task: degenerate task parameters");
  if (params.salient_k < 1 || params.salient_k > params.article_words)
    throw PreconditionError("synth_task: salient_k " +
                            std::to_string(params.salient_k) +
                            " outside [1, article_words]");

  const WordSampler sampler(params.vocab_words);
  SynthCorpus out;
  out.pairs.reserve(n_examples);

  std::mt19937_64 pair_gen(rng::derive_seed(seed, "synth/pairs"));
  for (int e = 0; e < n_examples; ++e) {
    std::vector<int> words(params.article_words);
    for (auto& w : words) w = sampler.draw(pair_gen);
    // k distinct marked positions
    auto slots = rng::permutation(params.article_words, pair_gen);
    slots.resize(params.salient_k);
    std::sort(slots.begin(), slots.end());
    std::vector<bool> marked(params.article_words, false);
    for (int s : slots) marked[s] = true;

    std::string article, summary;
    for (int i = 0; i < params.article_words; ++i) {
      if (!article.empty()) article += ' ';
      if (marked[i]) {
        article += params.marker + ' ';
        if (!summary.empty()) summary += ' ';
        summary += lexicon_word(words[i]);
      }
      article += lexicon_word(words[i]);
    }
    out.pairs.push_back({std::move(article), std::move(summary)});
  }

  std::mt19937_64 lm_gen(rng::derive_seed(seed, "synth/pretrain"));
  std::string& text = out.pretrain_text;
  while (static_cast<std::int64_t>(text.size()) < params.pretrain_chars) {
    for (int i = 0; i < params.doc_words; ++i) {
      if (i) text += ' ';
      text += lexicon_word(sampler.draw(lm_gen));
    }
    text += "\n\n";
  }
  return out;
}

std::vector<ExamplePair> load_pairs(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read pair file " + path);
  std::vector<ExamplePair> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("article") ||
        !j.contains("summary") || !j["article"].is_string() ||
        !j["summary"].is_string())
      throw IoError("pair file " + path + ": bad record at line " +
                    std::to_string(lineno));
    out.push_back({j["article"].get<std::string>(),
                   j["summary"].get<std::string>()});
  }
  return out;
}

std::string pairs_to_jsonl(const std::vector<ExamplePair>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    nlohmann::json j;
    j["article"] = p.article;
    j["summary"] = p.summary;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void save_pairs(const std::string& path, const std::vector<ExamplePair>& pairs) {
  write_text_file(path, pairs_to_jsonl(pairs));
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << text;
  if (!f) throw IoError("short write to " + path);
}

std::vector<std::string> split_documents(const std::string& text) {
  std::vector<std::string> docs;
  std::string cur;
  std::istringstream is(text);
  std::string line;
  auto flush = [&] {
    // a document must contain something other than whitespace
    if (cur.find_first_not_of(" \t\n\r") != std::string::npos)
      docs.push_back(cur);
    cur.clear();
  };
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      flush();
    } else {
      if (!cur.empty()) cur += '\n';
      cur += line;
    }
  }
  flush();
  return docs;
}

}  // namespace minigen::data
