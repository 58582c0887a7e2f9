#include "minigen/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "minigen/error.hpp"

namespace minigen::metrics {

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, int> ngram_counts(const std::vector<std::string>& tokens, int n) {
  std::map<Ngram, int> counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[Ngram(tokens.begin() + i, tokens.begin() + i + n)];
  return counts;
}

double f1_of(double p, double r) {
  return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

// (hits, total) of summary n-gram positions whose n-gram occurs in article.
std::pair<std::size_t, std::size_t> overlap_hits(
    const std::vector<std::string>& summary,
    const std::vector<std::string>& article, int n) {
  std::set<Ngram> in_article;
  for (std::size_t i = 0; i + n <= article.size(); ++i)
    in_article.insert(Ngram(article.begin() + i, article.begin() + i + n));
  std::size_t hits = 0, total = 0;
  for (std::size_t i = 0; i + n <= summary.size(); ++i) {
    ++total;
    if (in_article.count(Ngram(summary.begin() + i, summary.begin() + i + n)))
      ++hits;
  }
  return {hits, total};
}

}  // namespace

std::vector<std::string> metric_tokens(const std::string& text) {
  std::string folded = text;
  for (char& c : folded)
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  std::istringstream is(folded);
  std::vector<std::string> out;
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

Score rouge_n(const std::vector<std::string>& candidate,
              const std::vector<std::string>& reference, int n) {
  if (n < 1) throw PreconditionError("rouge_n: order must be >= 1");
  const std::size_t un = static_cast<std::size_t>(n);
  if (candidate.size() < un || reference.size() < un) return {0, 0, 0, false};

  const auto cand = ngram_counts(candidate, n);
  const auto ref = ngram_counts(reference, n);
  long long overlap = 0;
  for (const auto& [gram, count] : cand) {
    const auto it = ref.find(gram);
    if (it != ref.end()) overlap += std::min(count, it->second);
  }
  const double p = double(overlap) / double(candidate.size() - un + 1);
  const double r = double(overlap) / double(reference.size() - un + 1);
  return {p, r, f1_of(p, r), true};
}

Score rouge_l(const std::vector<std::string>& candidate,
              const std::vector<std::string>& reference) {
  if (candidate.empty() || reference.empty()) return {0, 0, 0, false};
  const std::size_t m = candidate.size(), n = reference.size();
  std::vector<int> prev(n + 1, 0), cur(n + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j) {
      cur[j] = candidate[i - 1] == reference[j - 1]
                   ? prev[j - 1] + 1
                   : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = prev[n];
  const double p = lcs / double(m);
  const double r = lcs / double(n);
  return {p, r, f1_of(p, r), true};
}

RougeScore rouge_all(const std::string& candidate, const std::string& reference) {
  const auto c = metric_tokens(candidate);
  const auto r = metric_tokens(reference);
  return {rouge_n(c, r, 1), rouge_n(c, r, 2), rouge_l(c, r)};
}

OverlapProfile overlap_profile(const std::vector<std::string>& summary,
                               const std::vector<std::string>& article,
                               int n_max) {
  if (n_max < 1) throw PreconditionError("overlap_profile: n_max must be >= 1");
  OverlapProfile out;
  for (int n = 1; n <= n_max; ++n) {
    if (summary.size() < static_cast<std::size_t>(n)) break;
    const auto [hits, total] = overlap_hits(summary, article, n);
    out.emplace_back(n, double(hits) / double(total));
  }
  return out;
}

OverlapProfile pooled_overlap_profile(
    const std::vector<std::pair<std::vector<std::string>,
                                std::vector<std::string>>>& pairs,
    int n_max) {
  if (n_max < 1)
    throw PreconditionError("pooled_overlap_profile: n_max must be >= 1");
  OverlapProfile out;
  for (int n = 1; n <= n_max; ++n) {
    std::size_t hits = 0, total = 0;
    for (const auto& [summary, article] : pairs) {
      if (summary.size() < static_cast<std::size_t>(n)) continue;
      const auto [h, t] = overlap_hits(summary, article, n);
      hits += h;
      total += t;
    }
    if (total == 0) break;
    out.emplace_back(n, double(hits) / double(total));
  }
  return out;
}

RougeScore aggregate(const std::vector<RougeScore>& scores) {
  if (scores.empty())
    throw DegenerateInputError("aggregate over an empty corpus");
  const auto mean_of = [&scores](double Score::* field, Score RougeScore::* variant) {
    std::vector<double> values;
    values.reserve(scores.size());
    for (const auto& s : scores) values.push_back(s.*variant.*field);
    std::sort(values.begin(), values.end());  // order-independent sum
    double total = 0;
    for (const double v : values) total += v;
    return total / double(scores.size());
  };
  RougeScore out;
  for (const auto variant : {&RougeScore::r1, &RougeScore::r2, &RougeScore::rl}) {
    Score s;
    s.precision = mean_of(&Score::precision, variant);
    s.recall = mean_of(&Score::recall, variant);
    s.f1 = mean_of(&Score::f1, variant);
    out.*variant = s;
  }
  return out;
}

std::string format_score(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * x);
  return buf;
}

std::string evaluation_csv(const std::vector<int>& ids,
                           const std::vector<RougeScore>& per_example) {
  if (ids.size() != per_example.size())
    throw PreconditionError("evaluation_csv: one id per score required");
  std::string out = "id,r1_f,r2_f,rl_f\n";
  for (std::size_t i = 0; i < per_example.size(); ++i) {
    const auto& s = per_example[i];
    out += std::to_string(ids[i]) + "," + format_score(s.r1.f1) + "," +
           format_score(s.r2.f1) + "," + format_score(s.rl.f1) + "\n";
  }
  const auto mean = aggregate(per_example);
  out += "aggregate," + format_score(mean.r1.f1) + "," +
         format_score(mean.r2.f1) + "," + format_score(mean.rl.f1) + "\n";
  return out;
}

std::string evaluation_csv(const std::vector<RougeScore>& per_example) {
  std::vector<int> ids(per_example.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  return evaluation_csv(ids, per_example);
}

std::string overlap_csv(
    const std::vector<std::pair<std::string, OverlapProfile>>& systems) {
  std::string out = "n,fraction,system\n";
  char buf[64];
  for (const auto& [label, profile] : systems) {
    for (const auto& [n, fraction] : profile) {
      std::snprintf(buf, sizeof buf, "%d,%.6f,", n, fraction);
      out += buf;
      out += label;
      out += '\n';
    }
  }
  return out;
}

}  // namespace minigen::metrics
