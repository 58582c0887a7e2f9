#include "minigen/bpe.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "minigen/error.hpp"
#include "minigen/rng.hpp"

namespace minigen::bpe {

int Vocabulary::add(std::string tok) {
  auto [it, inserted] = ids.emplace(tok, static_cast<int>(tokens.size()));
  if (!inserted)
    throw DegenerateInputError("vocabulary: duplicate token '" + tok + "'");
  tokens.push_back(std::move(tok));
  return it->second;
}

int Vocabulary::id_of(std::string_view tok) const {
  auto it = ids.find(std::string(tok));
  return it == ids.end() ? -1 : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
  if (id < 0 || id >= size())
    throw PreconditionError("vocabulary: unknown id " + std::to_string(id));
  return tokens[id];
}

std::vector<std::string> codepoints(std::string_view word) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < word.size();) {
    std::size_t len = 1;
    const auto lead = static_cast<unsigned char>(word[i]);
    if (lead >= 0xF0) len = 4;
    else if (lead >= 0xE0) len = 3;
    else if (lead >= 0xC0) len = 2;
    len = std::min(len, word.size() - i);
    out.emplace_back(word.substr(i, len));
    i += len;
  }
  return out;
}

std::vector<std::string> split_words(std::string_view text, bool lowercase) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (static_cast<unsigned char>(c) <= 0x20) {
      if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(lowercase ? static_cast<char>(std::tolower(
                                    static_cast<unsigned char>(c)))
                              : c);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

namespace {

std::vector<std::string> word_symbols(const std::string& word) {
  auto syms = codepoints(word);
  syms.emplace_back(kEow);
  return syms;
}

void apply_rule(std::vector<std::string>& syms,
                const std::pair<std::string, std::string>& rule) {
  std::size_t w = 0;
  for (std::size_t r = 0; r < syms.size();) {
    if (r + 1 < syms.size() && syms[r] == rule.first &&
        syms[r + 1] == rule.second) {
      syms[w++] = rule.first + rule.second;
      r += 2;
    } else {
      if (w != r) syms[w] = std::move(syms[r]);
      ++w;
      ++r;
    }
  }
  syms.resize(w);
}

// Tie-break order: the bare end-of-word sentinel sorts after every ordinary
// symbol, everything else is plain lexicographic. Pairs involving only real
// characters therefore win ties against sentinel pairs.
bool sym_less(const std::string& a, const std::string& b) {
  const bool ae = a == kEow, be = b == kEow;
  if (ae != be) return be;
  return a < b;
}

struct PairLess {
  bool operator()(const std::pair<std::string, std::string>& a,
                  const std::pair<std::string, std::string>& b) const {
    if (a.first != b.first) return sym_less(a.first, b.first);
    return sym_less(a.second, b.second);
  }
};

}  // namespace

Tokenizer train_bpe(const std::string& corpus, int num_merges, bool lowercase) {
  if (num_merges < 0) throw PreconditionError("train_bpe: num_merges < 0");
  // Distinct words with frequencies; the sorted map keeps everything
  // downstream deterministic.
  std::map<std::string, long long> freq;
  for (auto& w : split_words(corpus, lowercase)) ++freq[w];
  if (freq.empty()) throw DegenerateInputError("train_bpe: empty corpus");

  struct Entry {
    std::vector<std::string> syms;
    long long n;
  };
  std::vector<Entry> words;
  std::set<std::string> base;
  words.reserve(freq.size());
  for (const auto& [w, n] : freq) {
    auto syms = word_symbols(w);
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) base.insert(syms[i]);
    words.push_back({std::move(syms), n});
  }

  Tokenizer tok;
  tok.lowercase = lowercase;
  for (int m = 0; m < num_merges; ++m) {
    // Full recount each round; distinct-word weighting keeps this cheap.
    std::map<std::pair<std::string, std::string>, long long, PairLess> counts;
    for (const auto& w : words)
      for (std::size_t i = 0; i + 1 < w.syms.size(); ++i)
        counts[{w.syms[i], w.syms[i + 1]}] += w.n;
    if (counts.empty()) break;
    // First map entry reaching the max count is the lexicographically
    // smallest pair — the documented tie-break.
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it)
      if (it->second > best->second) best = it;
    tok.merges.rules.push_back(best->first);
    for (auto& w : words) apply_rule(w.syms, best->first);
  }

  tok.vocab.add(kPadTok);
  tok.vocab.add(kDelimTok);
  tok.vocab.add(kEosTok);
  tok.vocab.add(kUnkTok);
  tok.vocab.add(kEow);
  for (const auto& s : base) tok.vocab.add(s);
  for (const auto& [l, r] : tok.merges.rules) tok.vocab.add(l + r);
  return tok;
}

std::vector<int> Tokenizer::encode_word(std::string_view word) const {
  auto syms = word_symbols(std::string(word));
  for (const auto& rule : merges.rules) apply_rule(syms, rule);
  std::vector<int> out;
  out.reserve(syms.size());
  const int unk = vocab.id_of(kUnkTok);
  for (const auto& s : syms) {
    const int id = vocab.id_of(s);
    out.push_back(id < 0 ? unk : id);
  }
  return out;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> out;
  for (const auto& w : split_words(text, lowercase)) {
    auto ids = encode_word(w);
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out, word;
  auto flush = [&](bool boundary) {
    if (word.empty() && !boundary) return;
    if (!out.empty()) out.push_back(' ');
    out += word;
    word.clear();
  };
  for (int id : ids) {
    const std::string& tok = vocab.token_of(id);
    if (id < kNumSpecials) {  // specials act as word separators
      if (!word.empty()) flush(false);
      continue;
    }
    if (tok.size() >= 4 && tok.compare(tok.size() - 4, 4, kEow) == 0) {
      word += tok.substr(0, tok.size() - 4);
      flush(true);
    } else {
      word += tok;
    }
  }
  if (!word.empty()) flush(false);
  return out;
}

std::string Tokenizer::serialize() const {
  std::ostringstream os;
  const int num_base = vocab.size() - kNumSpecials -
                       static_cast<int>(merges.rules.size());
  os << "bpe 1 " << (lowercase ? 1 : 0) << ' ' << num_base << ' '
     << merges.rules.size() << '\n';
  for (int id = kNumSpecials; id < kNumSpecials + num_base; ++id)
    os << vocab.tokens[id] << '\n';
  for (const auto& [l, r] : merges.rules) os << l << ' ' << r << '\n';
  return os.str();
}

void Tokenizer::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write tokenizer file " + path);
  f << serialize();
  if (!f) throw IoError("short write to tokenizer file " + path);
}

Tokenizer Tokenizer::deserialize(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw IoError("tokenizer file: missing header");
  std::istringstream header(line);
  std::string magic;
  int version = 0, lc = 0, num_base = 0;
  std::size_t num_merges = 0;
  header >> magic >> version >> lc >> num_base >> num_merges;
  if (magic != "bpe" || version != 1 || header.fail() || num_base < 2)
    throw IoError("tokenizer file: bad header '" + line + "'");

  Tokenizer tok;
  tok.lowercase = lc != 0;
  tok.vocab.add(kPadTok);
  tok.vocab.add(kDelimTok);
  tok.vocab.add(kEosTok);
  std::vector<std::string> base(num_base);
  for (auto& s : base) {
    if (!std::getline(is, s) || s.empty())
      throw IoError("tokenizer file: truncated base symbol list");
    tok.vocab.add(s);
  }
  if (base[0] != kUnkTok || base[1] != kEow)
    throw IoError("tokenizer file: reserved base symbols out of place");
  for (std::size_t i = 0; i < num_merges; ++i) {
    if (!std::getline(is, line))
      throw IoError("tokenizer file: truncated merge list");
    const auto sp = line.find(' ');
    if (sp == std::string::npos || sp == 0 || sp + 1 == line.size())
      throw IoError("tokenizer file: bad merge line '" + line + "'");
    tok.merges.rules.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    tok.vocab.add(line.substr(0, sp) + line.substr(sp + 1));
  }
  return tok;
}

Tokenizer Tokenizer::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read tokenizer file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

std::uint64_t Tokenizer::hash() const { return rng::fnv1a(serialize()); }

}  // namespace minigen::bpe
