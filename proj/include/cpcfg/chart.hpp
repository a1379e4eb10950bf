#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cpcfg/grammar.hpp"
#include "cpcfg/tensor.hpp"

namespace cpcfg {

/// Token ids; valid sentences have every id < vocab and length >= 2.
using Sentence = std::vector<int64_t>;

/// Binary parse tree stored as labeled spans with child links. Token indices
/// are inclusive: leaves cover (i, i), the root covers (0, len - 1).
struct Tree {
  struct Node {
    int64_t symbol;    // nonterminal index, or preterminal index for leaves
    bool preterminal;
    int64_t i, j;
    int left = -1, right = -1;
  };
  std::vector<Node> nodes;
  int root = -1;
  int64_t num_leaves = 0;

  struct LabeledSpan {
    int64_t i, j, symbol;
    bool preterminal;
  };
  std::vector<LabeledSpan> labeled_spans() const;

  /// Single-line bracketed form "(NT-01 (T-02 word) ...)".
  std::string to_bracketed(const std::vector<std::string>& tokens, int64_t num_nonterminals) const;
};

std::string symbol_name(int64_t combined_index, int64_t num_nonterminals);

struct ViterbiParse {
  Tree tree;
  double log_prob;
};

struct TableSizes {
  int64_t num_nonterminals, num_preterminals, vocab_size;
  int64_t num_symbols() const { return num_nonterminals + num_preterminals; }
};

TableSizes table_sizes(const RuleLogProbs& rules);

/// Log inside score of the sentence under the rule tables, recorded on the
/// tape: log p(x) for a global grammar, log p(x | z) when the tables came
/// from compound_rule_logprobs. O(|R| |x|^3).
TensorPtr inside_logprob(Tape& tape, const Sentence& sentence, const RuleLogProbs& rules);

/// Max-probability binary tree (CKY). Ties break toward the smallest split
/// point, then the smallest (B, C) pair, then the smallest root symbol.
ViterbiParse viterbi_parse(const Sentence& sentence, const RuleLogProbs& rules);

/// Recomputes a tree's log probability from the tables, accumulating in the
/// same association order as viterbi_parse so scores compare exactly.
double tree_log_prob(const Tree& tree, const Sentence& sentence, const RuleLogProbs& rules);

/// Viterbi parse under rule tables conditioned at the posterior mode.
ViterbiParse map_parse_compound(const Sentence& sentence, const GrammarParams& params,
                                const std::vector<double>& posterior_mean);

struct RuleUse {
  enum Kind { Root, Binary, Terminal } kind;
  int64_t a = -1, b = -1, c = -1;  // Root: a. Binary: a -> b c. Terminal: a -> word c.
};

/// Visits every derivation of the sentence: all binary tree shapes with all
/// symbol assignments. score uses the same association order as tree_log_prob;
/// uses lists the derivation's rules in pre-order. Throws when the number of
/// derivations exceeds max_derivations.
void enumerate_derivations(const Sentence& sentence, const RuleLogProbs& rules,
                           const std::function<void(double score, const std::vector<RuleUse>&)>& visit,
                           int64_t max_derivations = 10'000'000);

/// log of the exact sum over all derivations of prod pi_r. Enumeration oracle;
/// independent of inside_logprob. Guard: |x| <= 8 and at most max_derivations.
double brute_force_logprob(const Sentence& sentence, const RuleLogProbs& rules,
                           int64_t max_derivations = 10'000'000);

/// Maximum derivation score by enumeration.
double brute_force_best(const Sentence& sentence, const RuleLogProbs& rules,
                        int64_t max_derivations = 10'000'000);

int64_t count_derivations(const Sentence& sentence, const RuleLogProbs& rules,
                          int64_t max_derivations = 10'000'000);

}  // namespace cpcfg
