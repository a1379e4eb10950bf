#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "cpcfg/chart.hpp"

namespace cpcfg {

/// Node of a bracketed treebank tree. Leaves carry a POS tag (label) and a
/// token; internal nodes carry a constituent label and children.
struct RawTree {
  std::string label;
  std::string token;  // leaves only
  std::vector<RawTree> children;

  bool is_leaf() const { return children.empty(); }
  int64_t num_leaves() const;
  std::vector<std::string> yield() const;
};

/// Parses one or more s-expression trees. A top-level wrapper with an empty
/// label and a single child (PTB style "( (S ...) )") is unwrapped. Throws
/// with the line number on unbalanced brackets or an empty tree.
std::vector<RawTree> read_bracketed(const std::string& text);
std::vector<RawTree> read_bracketed_file(const std::string& path);

/// Canonical single-line serialization with single spaces.
std::string write_bracketed(const RawTree& tree);

struct Vocab {
  static constexpr int64_t kUnkId = 0;
  static const std::string kUnkToken;

  std::vector<std::string> tokens;  // rank order; tokens[0] == "<unk>"
  std::unordered_map<std::string, int64_t> ids;

  int64_t id_of(const std::string& token) const;
  size_t size() const { return tokens.size(); }

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);
};

struct GoldSpan {
  int64_t i, j;
  std::string label;
  bool operator==(const GoldSpan&) const = default;
};

struct ProcessedExample {
  Sentence ids;
  std::vector<std::string> tokens;  // lowercased, punctuation removed
  std::vector<std::string> tags;    // gold POS tags per remaining token
  std::vector<GoldSpan> gold;       // spans re-indexed after punctuation removal
};

/// The conventional PTB punctuation POS tags.
const std::set<std::string>& default_punct_tags();

/// Removes punctuation leaves (by POS tag) and -NONE- trace leaves, pruning
/// nodes left childless. Returns nullopt when every leaf was punctuation.
std::optional<RawTree> strip_punctuation(const RawTree& tree,
                                         const std::set<std::string>& punct_tags);

/// Every internal node as a labeled span over leaf positions; n-ary nodes
/// and unary chains allowed, width-one spans retained (filtered at eval).
std::vector<GoldSpan> gold_spans(const RawTree& tree);

/// Right binarization: (c1 c2 ... ck) becomes (c1 (c2 (...))). Unary chains
/// over internal nodes collapse to their child; tag-level unaries (a node
/// directly over a leaf) are kept, their spans being trivial anyway. Yield
/// is preserved.
RawTree binarize_right(const RawTree& tree);

/// Frequency-ranked vocabulary over the trees' (already preprocessed) leaf
/// tokens; ties break lexicographically; unk reserved at index 0.
Vocab build_vocab(const std::vector<RawTree>& trees, int64_t cap);

struct PreprocessOptions {
  int64_t vocab_cap = 10000;
  std::set<std::string> punct_tags = default_punct_tags();
  bool lowercase = true;
};

struct PreprocessedCorpus {
  Vocab vocab;
  std::vector<ProcessedExample> examples;
  int64_t dropped = 0;  // trees removed entirely (all punctuation or length < 2)
};

/// Builds the vocabulary from these trees (training split) and processes them.
PreprocessedCorpus preprocess(const std::vector<RawTree>& trees, const PreprocessOptions& opts);

/// Processes trees against an existing vocabulary (validation/test splits).
PreprocessedCorpus preprocess_with_vocab(const std::vector<RawTree>& trees, const Vocab& vocab,
                                         const PreprocessOptions& opts);

void write_ids_file(const std::vector<ProcessedExample>& examples, const std::string& path);
void write_gold_spans_file(const std::vector<ProcessedExample>& examples, const std::string& path);

}  // namespace cpcfg
