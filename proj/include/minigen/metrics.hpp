#pragma once

#include <string>
#include <utility>
#include <vector>

namespace minigen::metrics {

// One ROUGE variant's triple. `defined` is false when a text was too short
// for the order (candidate or reference shorter than n); the numbers are
// zero in that case rather than an exception.
struct Score {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  bool defined = true;
};

struct RougeScore {
  Score r1;
  Score r2;
  Score rl;
};

// Scoring tokenization: lowercased whitespace split, independent of the BPE
// vocabulary. ROUGE conventionally operates on words.
std::vector<std::string> metric_tokens(const std::string& text);

// Clipped n-gram overlap: precision over candidate n-grams, recall over
// reference n-grams, f1 = 2pr/(p+r) (0 when both are 0).
Score rouge_n(const std::vector<std::string>& candidate,
              const std::vector<std::string>& reference, int n);

// Longest common subsequence over the whole token sequences (no sentence
// splitting): p = LCS/|candidate|, r = LCS/|reference|.
Score rouge_l(const std::vector<std::string>& candidate,
              const std::vector<std::string>& reference);

// R1/R2/RL of one candidate/reference pair of raw texts.
RougeScore rouge_all(const std::string& candidate, const std::string& reference);

// For each n in 1..n_max with at least one summary n-gram: the fraction of
// the summary's n-grams (counted with multiplicity over positions) that
// occur anywhere in the article. Orders the summary is too short for are
// absent, not zero.
using OverlapProfile = std::vector<std::pair<int, double>>;

OverlapProfile overlap_profile(const std::vector<std::string>& summary,
                               const std::vector<std::string>& article,
                               int n_max = 10);

// Corpus-level curve: matched summary n-gram positions pooled over all
// (summary, article) pairs divided by the pooled position totals, i.e. a
// micro-average that weights longer summaries proportionally. Orders no
// summary reaches are absent.
OverlapProfile pooled_overlap_profile(
    const std::vector<std::pair<std::vector<std::string>,
                                std::vector<std::string>>>& pairs,
    int n_max = 10);

// Arithmetic mean of the per-example triples. Each field is summed in
// sorted order, so the result is exactly invariant to corpus order.
RougeScore aggregate(const std::vector<RougeScore>& scores);

// Reporting convention: scores are shown x100 with two decimals ("50.00").
std::string format_score(double x);

// Per-example report: header id,r1_f,r2_f,rl_f, one row per example, and a
// final aggregate row. The first overload labels rows 0..n-1; the second
// takes explicit example ids (one per score, same order).
std::string evaluation_csv(const std::vector<RougeScore>& per_example);
std::string evaluation_csv(const std::vector<int>& ids,
                           const std::vector<RougeScore>& per_example);

// Plot-ready overlap curves: header n,fraction,system, one row per defined
// order per labelled system.
std::string overlap_csv(
    const std::vector<std::pair<std::string, OverlapProfile>>& systems);

}  // namespace minigen::metrics
