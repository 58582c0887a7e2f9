#include "minigen/decode.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "minigen/bpe.hpp"
#include "minigen/data.hpp"
#include "minigen/error.hpp"
#include "minigen/tape.hpp"

namespace minigen::decode {

namespace {

// LM conditioning prefix: article (head-truncated so the generation budget
// always fits the context) followed by <delim>.
std::vector<int> lm_prefix(const ModelConfig& cfg, const std::vector<int>& src,
                           int max_len) {
  const int a_cap = cfg.context_length - max_len - 1;
  if (a_cap < 1)
    throw DegenerateInputError(
        "generation budget of " + std::to_string(max_len) +
        " leaves no room for the source in a context of " +
        std::to_string(cfg.context_length));
  std::vector<int> prefix(src.begin(),
                          src.begin() + std::min<std::size_t>(a_cap, src.size()));
  prefix.push_back(bpe::kDelim);
  return prefix;
}

std::vector<int> encdec_source(const ModelConfig& cfg,
                               const std::vector<int>& src) {
  return {src.begin(),
          src.begin() + std::min<std::size_t>(cfg.context_length, src.size())};
}

void check_inputs(const std::vector<int>& src, int max_len) {
  if (src.empty()) throw DegenerateInputError("decoding needs a non-empty source");
  if (max_len < 1) throw DegenerateInputError("zero generation budget");
}

int generation_budget(const ModelConfig& cfg, Variant variant, int max_len) {
  if (variant == Variant::lm) return max_len;  // reserved by lm_prefix
  const int budget = std::min(max_len, cfg.context_length - 1);
  if (budget < 1) throw DegenerateInputError("zero generation budget");
  return budget;
}

// Log softmax of the last logits row, in double for stable accumulation.
std::vector<double> next_token_logprobs(const WeightSet<float>& w,
                                        const ModelConfig& cfg, Variant variant,
                                        const std::vector<int>& prefix_or_src,
                                        const std::vector<int>& generated) {
  Tape<float> tape;
  Tape<float>::NodeId logits;
  std::size_t row;
  if (variant == Variant::lm) {
    std::vector<int> ids = prefix_or_src;
    ids.insert(ids.end(), generated.begin(), generated.end());
    logits = lm_forward(tape, w, cfg, ids);
    row = ids.size() - 1;
  } else {
    std::vector<int> dec{bpe::kDelim};
    dec.insert(dec.end(), generated.begin(), generated.end());
    logits = encdec_forward(tape, w, cfg, prefix_or_src, dec);
    row = dec.size() - 1;
  }
  const auto& t = tape.value(logits);
  const idx v = t.shape[1];
  const float* r = t.data.data() + static_cast<idx>(row) * v;
  double mx = r[0];
  for (idx j = 1; j < v; ++j) mx = std::max(mx, double(r[j]));
  double lse = 0;
  for (idx j = 0; j < v; ++j) lse += std::exp(double(r[j]) - mx);
  const double logz = std::log(lse) + mx;
  std::vector<double> lp(v);
  for (idx j = 0; j < v; ++j) lp[j] = double(r[j]) - logz;
  return lp;
}

double rank_key(const Hypothesis& h, bool length_normalize) {
  if (!length_normalize || h.ids.empty()) return h.score;
  return h.score / double(h.ids.size());
}

// Score descending; ties by lexicographically smaller token sequence.
bool ranks_before(const Hypothesis& a, const Hypothesis& b,
                  bool length_normalize) {
  const double ka = rank_key(a, length_normalize);
  const double kb = rank_key(b, length_normalize);
  if (ka != kb) return ka > kb;
  return a.ids < b.ids;
}

}  // namespace

Hypothesis greedy_decode(const WeightSet<float>& weights,
                         const ModelConfig& cfg, Variant variant,
                         const std::vector<int>& src, int max_len) {
  check_inputs(src, max_len);
  const auto cond = variant == Variant::lm ? lm_prefix(cfg, src, max_len)
                                           : encdec_source(cfg, src);
  const int budget = generation_budget(cfg, variant, max_len);

  Hypothesis hyp;
  for (int step = 0; step < budget; ++step) {
    const auto lp = next_token_logprobs(weights, cfg, variant, cond, hyp.ids);
    int best = 0;
    for (std::size_t j = 1; j < lp.size(); ++j)
      if (lp[j] > lp[best]) best = static_cast<int>(j);
    hyp.ids.push_back(best);
    hyp.score += lp[best];
    if (best == bpe::kEos) {
      hyp.finished = true;
      break;
    }
  }
  return hyp;
}

std::vector<Hypothesis> beam_search(const WeightSet<float>& weights,
                                    const ModelConfig& cfg, Variant variant,
                                    const std::vector<int>& src,
                                    const DecodeParams& params) {
  if (params.beam_size < 1)
    throw PreconditionError("beam_size must be >= 1");
  check_inputs(src, params.max_len);
  const auto cond = variant == Variant::lm
                        ? lm_prefix(cfg, src, params.max_len)
                        : encdec_source(cfg, src);
  const int budget = generation_budget(cfg, variant, params.max_len);
  const auto before = [&params](const Hypothesis& a, const Hypothesis& b) {
    return ranks_before(a, b, params.length_normalize);
  };

  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> finished;
  for (int step = 0; step < budget && !live.empty(); ++step) {
    std::vector<Hypothesis> candidates;
    candidates.reserve(live.size() * static_cast<std::size_t>(cfg.vocab_size));
    for (const auto& hyp : live) {
      const auto lp = next_token_logprobs(weights, cfg, variant, cond, hyp.ids);
      for (std::size_t j = 0; j < lp.size(); ++j) {
        Hypothesis next = hyp;
        next.ids.push_back(static_cast<int>(j));
        next.score += lp[j];
        next.finished = static_cast<int>(j) == bpe::kEos;
        candidates.push_back(std::move(next));
      }
    }
    const std::size_t keep =
        std::min<std::size_t>(params.beam_size, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + keep,
                      candidates.end(), before);
    candidates.resize(keep);

    live.clear();
    for (auto& hyp : candidates) {
      if (hyp.finished)
        finished.push_back(std::move(hyp));
      else
        live.push_back(std::move(hyp));
    }
  }

  // hypotheses that ran out of budget compete with the finished ones
  for (auto& hyp : live) finished.push_back(std::move(hyp));
  std::sort(finished.begin(), finished.end(), before);
  if (finished.size() > static_cast<std::size_t>(params.beam_size))
    finished.resize(params.beam_size);
  return finished;
}

double rescore(const WeightSet<float>& weights, const ModelConfig& cfg,
               Variant variant, const std::vector<int>& src,
               const std::vector<int>& generated, int max_len) {
  check_inputs(src, max_len);
  if (generated.empty())
    throw DegenerateInputError("rescore needs at least one generated token");

  Tape<float> tape;
  Tape<float>::NodeId logits;
  std::size_t first_row;
  if (variant == Variant::lm) {
    auto ids = lm_prefix(cfg, src, max_len);
    first_row = ids.size() - 1;
    ids.insert(ids.end(), generated.begin(), generated.end());
    logits = lm_forward(tape, weights, cfg, ids);
  } else {
    std::vector<int> dec{bpe::kDelim};
    dec.insert(dec.end(), generated.begin(), generated.end());
    first_row = 0;
    logits = encdec_forward(tape, weights, cfg, encdec_source(cfg, src), dec);
  }

  const auto& t = tape.value(logits);
  const idx v = t.shape[1];
  double total = 0;
  for (std::size_t k = 0; k < generated.size(); ++k) {
    const float* r = t.data.data() + static_cast<idx>(first_row + k) * v;
    double mx = r[0];
    for (idx j = 1; j < v; ++j) mx = std::max(mx, double(r[j]));
    double lse = 0;
    for (idx j = 0; j < v; ++j) lse += std::exp(double(r[j]) - mx);
    total += double(r[generated[k]]) - (std::log(lse) + mx);
  }
  return total;
}

std::string predictions_to_jsonl(const std::vector<PredictionRow>& rows) {
  std::string out;
  for (const auto& r : rows) {
    nlohmann::json j;
    j["id"] = r.id;
    j["prediction"] = r.prediction;
    j["score"] = r.score;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void write_predictions(const std::string& path,
                       const std::vector<PredictionRow>& rows) {
  data::write_text_file(path, predictions_to_jsonl(rows));
}

std::vector<PredictionRow> load_predictions(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read prediction file " + path);
  std::vector<PredictionRow> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("id") ||
        !j.contains("prediction") || !j.contains("score"))
      throw IoError("prediction file " + path + ": bad record at line " +
                    std::to_string(lineno));
    out.push_back({j["id"].get<int>(), j["prediction"].get<std::string>(),
                   j["score"].get<double>()});
  }
  return out;
}

}  // namespace minigen::decode
