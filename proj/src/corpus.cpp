#include "cpcfg/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cpcfg {

const std::string Vocab::kUnkToken = "<unk>";

int64_t RawTree::num_leaves() const {
  if (is_leaf()) return 1;
  int64_t n = 0;
  for (const auto& c : children) n += c.num_leaves();
  return n;
}

std::vector<std::string> RawTree::yield() const {
  std::vector<std::string> out;
  std::function<void(const RawTree&)> rec = [&](const RawTree& t) {
    if (t.is_leaf()) {
      out.push_back(t.token);
      return;
    }
    for (const auto& c : t.children) rec(c);
  };
  rec(*this);
  return out;
}

namespace {

struct BracketScanner {
  const std::string& text;
  size_t pos = 0;
  int line = 1;

  explicit BracketScanner(const std::string& t) : text(t) {}

  [[noreturn]] void fail(const std::string& msg) const {
    throw std::runtime_error("bracketed parse error at line " + std::to_string(line) +
                             " (offset " + std::to_string(pos) + "): " + msg);
  }

  void skip_space() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) {
      if (text[pos] == '\n') ++line;
      ++pos;
    }
  }

  bool done() {
    skip_space();
    return pos >= text.size();
  }

  std::string atom() {
    const size_t start = pos;
    while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos])) &&
           text[pos] != '(' && text[pos] != ')')
      ++pos;
    return text.substr(start, pos - start);
  }

  RawTree node() {
    skip_space();
    if (pos >= text.size() || text[pos] != '(') fail("expected '('");
    ++pos;
    skip_space();
    RawTree t;
    t.label = atom();
    skip_space();
    if (pos >= text.size()) fail("unbalanced brackets: unexpected end of input");
    if (text[pos] != '(') {
      // Leaf: (TAG token)
      t.token = atom();
      if (t.token.empty()) fail("leaf without a token");
      skip_space();
      if (pos >= text.size() || text[pos] != ')') fail("unbalanced brackets: expected ')'");
      ++pos;
      return t;
    }
    while (true) {
      skip_space();
      if (pos >= text.size()) fail("unbalanced brackets: unexpected end of input");
      if (text[pos] == ')') {
        ++pos;
        break;
      }
      if (text[pos] != '(') fail("expected '(' or ')'");
      t.children.push_back(node());
    }
    if (t.children.empty()) fail("empty tree node");
    return t;
  }
};

}  // namespace

std::vector<RawTree> read_bracketed(const std::string& text) {
  BracketScanner scan(text);
  std::vector<RawTree> trees;
  while (!scan.done()) {
    RawTree t = scan.node();
    if (t.label.empty() && !t.is_leaf() && t.children.size() == 1)
      t = std::move(t.children[0]);  // PTB outer wrapper
    trees.push_back(std::move(t));
  }
  if (trees.empty()) throw std::runtime_error("bracketed parse error: no trees in input");
  return trees;
}

std::vector<RawTree> read_bracketed_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open treebank file: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return read_bracketed(buf.str());
}

std::string write_bracketed(const RawTree& tree) {
  std::ostringstream os;
  std::function<void(const RawTree&)> emit = [&](const RawTree& t) {
    os << '(' << t.label;
    if (t.is_leaf()) {
      os << ' ' << t.token << ')';
      return;
    }
    for (const auto& c : t.children) {
      os << ' ';
      emit(c);
    }
    os << ')';
  };
  emit(tree);
  return os.str();
}

int64_t Vocab::id_of(const std::string& token) const {
  auto it = ids.find(token);
  return it == ids.end() ? kUnkId : it->second;
}

void Vocab::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write vocab file: " + path);
  for (const auto& t : tokens) os << t << '\n';
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open vocab file: " + path);
  Vocab v;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    v.ids[line] = static_cast<int64_t>(v.tokens.size());
    v.tokens.push_back(line);
  }
  if (v.tokens.empty() || v.tokens[0] != kUnkToken)
    throw std::runtime_error("vocab file must start with " + kUnkToken + ": " + path);
  return v;
}

const std::set<std::string>& default_punct_tags() {
  static const std::set<std::string> tags = {".", ",", ":", "''", "``", "-LRB-", "-RRB-"};
  return tags;
}

std::optional<RawTree> strip_punctuation(const RawTree& tree,
                                         const std::set<std::string>& punct_tags) {
  if (tree.is_leaf()) {
    if (punct_tags.count(tree.label) || tree.label == "-NONE-") return std::nullopt;
    return tree;
  }
  RawTree out;
  out.label = tree.label;
  for (const auto& c : tree.children) {
    auto kept = strip_punctuation(c, punct_tags);
    if (kept) out.children.push_back(std::move(*kept));
  }
  if (out.children.empty()) return std::nullopt;
  return out;
}

std::vector<GoldSpan> gold_spans(const RawTree& tree) {
  // Pre-order: parents precede children, unary chains listed top-down.
  std::vector<GoldSpan> spans;
  std::function<int64_t(const RawTree&, int64_t)> rec = [&](const RawTree& t,
                                                            int64_t offset) -> int64_t {
    if (t.is_leaf()) return offset + 1;
    const size_t at = spans.size();
    spans.push_back({offset, -1, t.label});
    int64_t end = offset;
    for (const auto& c : t.children) end = rec(c, end);
    spans[at].j = end - 1;
    return end;
  };
  rec(tree, 0);
  return spans;
}

RawTree binarize_right(const RawTree& tree) {
  if (tree.is_leaf()) return tree;
  if (tree.children.size() == 1) {
    // Tag-level unaries (node over a leaf) stay; chains over internal nodes
    // collapse to the child so the result is binary.
    if (tree.children[0].is_leaf()) return tree;
    return binarize_right(tree.children[0]);
  }
  RawTree out;
  out.label = tree.label;
  out.children.push_back(binarize_right(tree.children[0]));
  if (tree.children.size() == 2) {
    out.children.push_back(binarize_right(tree.children[1]));
    return out;
  }
  RawTree rest;
  rest.label = tree.label;
  rest.children.assign(tree.children.begin() + 1, tree.children.end());
  out.children.push_back(binarize_right(rest));
  return out;
}

namespace {

std::string lowercased(const std::string& s) {
  std::string out = s;
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

RawTree lowercase_leaves(RawTree tree) {
  if (tree.is_leaf()) {
    tree.token = lowercased(tree.token);
    return tree;
  }
  for (auto& c : tree.children) c = lowercase_leaves(std::move(c));
  return tree;
}

std::vector<RawTree> clean_trees(const std::vector<RawTree>& trees, const PreprocessOptions& opts,
                                 int64_t* dropped) {
  std::vector<RawTree> out;
  out.reserve(trees.size());
  for (size_t i = 0; i < trees.size(); ++i) {
    auto stripped = strip_punctuation(trees[i], opts.punct_tags);
    if (!stripped || stripped->num_leaves() < 2) {
      std::cerr << "warning: dropping tree " << i << " ("
                << (stripped ? "fewer than 2 tokens" : "all punctuation") << ")\n";
      ++*dropped;
      continue;
    }
    out.push_back(opts.lowercase ? lowercase_leaves(std::move(*stripped)) : std::move(*stripped));
  }
  return out;
}

std::vector<std::string> leaf_tags(const RawTree& tree) {
  std::vector<std::string> out;
  std::function<void(const RawTree&)> rec = [&](const RawTree& t) {
    if (t.is_leaf()) {
      out.push_back(t.label);
      return;
    }
    for (const auto& c : t.children) rec(c);
  };
  rec(tree);
  return out;
}

std::vector<ProcessedExample> make_examples(const std::vector<RawTree>& clean,
                                            const Vocab& vocab) {
  std::vector<ProcessedExample> out;
  out.reserve(clean.size());
  for (const auto& t : clean) {
    ProcessedExample ex;
    ex.tokens = t.yield();
    ex.tags = leaf_tags(t);
    ex.gold = gold_spans(t);
    ex.ids.reserve(ex.tokens.size());
    for (const auto& tok : ex.tokens) ex.ids.push_back(vocab.id_of(tok));
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

Vocab build_vocab(const std::vector<RawTree>& trees, int64_t cap) {
  std::map<std::string, int64_t> counts;
  for (const auto& t : trees)
    for (const auto& tok : t.yield()) ++counts[tok];
  std::vector<std::pair<std::string, int64_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  v.tokens.push_back(Vocab::kUnkToken);
  v.ids[Vocab::kUnkToken] = 0;
  for (const auto& [tok, count] : ranked) {
    if (static_cast<int64_t>(v.tokens.size()) > cap) break;
    v.ids[tok] = static_cast<int64_t>(v.tokens.size());
    v.tokens.push_back(tok);
  }
  return v;
}

PreprocessedCorpus preprocess(const std::vector<RawTree>& trees, const PreprocessOptions& opts) {
  PreprocessedCorpus out;
  auto clean = clean_trees(trees, opts, &out.dropped);
  out.vocab = build_vocab(clean, opts.vocab_cap);
  out.examples = make_examples(clean, out.vocab);
  return out;
}

PreprocessedCorpus preprocess_with_vocab(const std::vector<RawTree>& trees, const Vocab& vocab,
                                         const PreprocessOptions& opts) {
  PreprocessedCorpus out;
  out.vocab = vocab;
  auto clean = clean_trees(trees, opts, &out.dropped);
  out.examples = make_examples(clean, vocab);
  return out;
}

void write_ids_file(const std::vector<ProcessedExample>& examples, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write corpus file: " + path);
  for (const auto& ex : examples) {
    for (size_t i = 0; i < ex.ids.size(); ++i) {
      if (i) os << ' ';
      os << ex.ids[i];
    }
    os << '\n';
  }
}

void write_gold_spans_file(const std::vector<ProcessedExample>& examples,
                           const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write gold span file: " + path);
  for (size_t s = 0; s < examples.size(); ++s) {
    os << s;
    for (const auto& sp : examples[s].gold) os << ' ' << sp.i << ':' << sp.j << ':' << sp.label;
    os << '\n';
  }
}

}  // namespace cpcfg
