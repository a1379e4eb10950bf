#include "cpcfg/chart.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace cpcfg {

namespace {

namespace o = op;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void validate_sentence(const char* where, const Sentence& sentence, int64_t vocab) {
  if (sentence.size() < 2)
    throw std::invalid_argument(std::string(where) + ": sentence length must be >= 2");
  for (int64_t id : sentence)
    if (id < 0 || id >= vocab)
      throw std::invalid_argument(std::string(where) + ": token id out of range");
}

// Softmax-produced tables are fully finite; hand-built tables may use -inf
// for impossible rules. NaN and +inf are always invalid.
void validate_rules(const char* where, const RuleLogProbs& rules) {
  for (const TensorPtr& t : {rules.root, rules.binary, rules.terminal}) {
    if (!t) throw std::invalid_argument(std::string(where) + ": missing rule table");
    for (double v : t->data)
      if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
        throw std::invalid_argument(std::string(where) + ": non-finite rule entry");
  }
}

}  // namespace

TableSizes table_sizes(const RuleLogProbs& rules) {
  TableSizes s;
  s.num_nonterminals = rules.root->dim(0);
  s.num_preterminals = rules.terminal->dim(0);
  s.vocab_size = rules.terminal->dim(1);
  const int64_t ss = s.num_symbols() * s.num_symbols();
  if (rules.binary->ndim() != 2 || rules.binary->dim(0) != s.num_nonterminals ||
      rules.binary->dim(1) != ss)
    throw ShapeError("table_sizes", rules.binary->shape, {s.num_nonterminals, ss});
  return s;
}

std::string symbol_name(int64_t combined_index, int64_t num_nonterminals) {
  std::ostringstream os;
  const bool pre = combined_index >= num_nonterminals;
  const int64_t id = pre ? combined_index - num_nonterminals + 1 : combined_index + 1;
  os << (pre ? "T-" : "NT-");
  if (id < 10) os << '0';
  os << id;
  return os.str();
}

std::vector<Tree::LabeledSpan> Tree::labeled_spans() const {
  std::vector<LabeledSpan> spans;
  spans.reserve(nodes.size());
  for (const Node& n : nodes) spans.push_back({n.i, n.j, n.symbol, n.preterminal});
  return spans;
}

std::string Tree::to_bracketed(const std::vector<std::string>& tokens,
                               int64_t num_nonterminals) const {
  if (root < 0) return "()";
  std::ostringstream os;
  std::function<void(int)> emit = [&](int idx) {
    const Node& n = nodes[static_cast<size_t>(idx)];
    if (n.preterminal) {
      os << '(' << symbol_name(n.symbol + num_nonterminals, num_nonterminals) << ' '
         << tokens[static_cast<size_t>(n.i)] << ')';
      return;
    }
    os << '(' << symbol_name(n.symbol, num_nonterminals) << ' ';
    emit(n.left);
    os << ' ';
    emit(n.right);
    os << ')';
  };
  emit(root);
  return os.str();
}

TensorPtr inside_logprob(Tape& tape, const Sentence& sentence, const RuleLogProbs& rules) {
  validate_rules("inside_logprob", rules);
  const TableSizes sz = table_sizes(rules);
  validate_sentence("inside_logprob", sentence, sz.vocab_size);
  const int64_t n = static_cast<int64_t>(sentence.size());
  const int64_t nn = sz.num_nonterminals;
  const int64_t s = sz.num_symbols();

  // cell(i, j): [S] vector over the combined symbol space; impossible symbols
  // are -inf (preterminals on wide spans, nonterminals on width-1 spans).
  std::vector<TensorPtr> cells(static_cast<size_t>(n * n));
  auto cell = [&](int64_t i, int64_t j) -> TensorPtr& {
    return cells[static_cast<size_t>(i * n + j)];
  };

  for (int64_t i = 0; i < n; ++i)
    cell(i, i) = o::embed_segment(tape, o::col(tape, rules.terminal, sentence[i]), nn, s, kNegInf);

  for (int64_t width = 2; width <= n; ++width) {
    for (int64_t i = 0; i + width - 1 < n; ++i) {
      const int64_t j = i + width - 1;
      std::vector<TensorPtr> split_scores;
      split_scores.reserve(static_cast<size_t>(width - 1));
      for (int64_t k = i; k < j; ++k) {
        auto pair_scores = o::outer_add(tape, cell(i, k), cell(k + 1, j));
        split_scores.push_back(o::reshape(tape, pair_scores, {1, s * s}));
      }
      auto over_splits = o::logsumexp(tape, o::concat_rows(tape, split_scores), 0);
      auto scores = o::log_matvec(tape, rules.binary, over_splits);
      cell(i, j) = width == n ? scores : o::embed_segment(tape, scores, 0, s, kNegInf);
    }
  }

  return o::logsumexp_vec(tape, o::add(tape, rules.root, cell(0, n - 1)));
}

ViterbiParse viterbi_parse(const Sentence& sentence, const RuleLogProbs& rules) {
  validate_rules("viterbi_parse", rules);
  const TableSizes sz = table_sizes(rules);
  validate_sentence("viterbi_parse", sentence, sz.vocab_size);
  const int64_t n = static_cast<int64_t>(sentence.size());
  const int64_t nn = sz.num_nonterminals;
  const int64_t s = sz.num_symbols();
  const double* bin = rules.binary->data.data();
  const double* term = rules.terminal->data.data();

  std::vector<double> best(static_cast<size_t>(n * n * s), kNegInf);
  struct BackPointer {
    int64_t split = -1, left_sym = -1, right_sym = -1;
  };
  std::vector<BackPointer> back(static_cast<size_t>(n * n * s));
  auto at = [&](int64_t i, int64_t j, int64_t sym) { return (i * n + j) * s + sym; };

  for (int64_t i = 0; i < n; ++i)
    for (int64_t t = 0; t < sz.num_preterminals; ++t)
      best[at(i, i, nn + t)] = term[t * sz.vocab_size + sentence[i]];

  for (int64_t width = 2; width <= n; ++width) {
    for (int64_t i = 0; i + width - 1 < n; ++i) {
      const int64_t j = i + width - 1;
      for (int64_t a = 0; a < nn; ++a) {
        double cur = kNegInf;
        BackPointer bp;
        const double* bin_a = bin + a * s * s;
        for (int64_t k = i; k < j; ++k) {
          const double* left = best.data() + at(i, k, 0);
          const double* right = best.data() + at(k + 1, j, 0);
          for (int64_t b = 0; b < s; ++b) {
            if (left[b] == kNegInf) continue;
            for (int64_t c = 0; c < s; ++c) {
              if (right[c] == kNegInf) continue;
              const double cand = bin_a[b * s + c] + left[b] + right[c];
              if (cand > cur) {
                cur = cand;
                bp = {k, b, c};
              }
            }
          }
        }
        best[at(i, j, a)] = cur;
        back[at(i, j, a)] = bp;
      }
    }
  }

  int64_t root_sym = 0;
  double total = kNegInf;
  for (int64_t a = 0; a < nn; ++a) {
    const double cand = rules.root->data[a] + best[at(0, n - 1, a)];
    if (cand > total) {
      total = cand;
      root_sym = a;
    }
  }

  ViterbiParse result;
  result.log_prob = total;
  result.tree.num_leaves = n;
  std::function<int(int64_t, int64_t, int64_t)> build = [&](int64_t i, int64_t j,
                                                            int64_t sym) -> int {
    Tree::Node node;
    node.i = i;
    node.j = j;
    if (i == j) {
      node.symbol = sym - nn;
      node.preterminal = true;
    } else {
      node.symbol = sym;
      node.preterminal = false;
      const BackPointer& bp = back[at(i, j, sym)];
      node.left = build(i, bp.split, bp.left_sym);
      node.right = build(bp.split + 1, j, bp.right_sym);
    }
    result.tree.nodes.push_back(node);
    return static_cast<int>(result.tree.nodes.size()) - 1;
  };
  result.tree.root = build(0, n - 1, root_sym);
  return result;
}

double tree_log_prob(const Tree& tree, const Sentence& sentence, const RuleLogProbs& rules) {
  const TableSizes sz = table_sizes(rules);
  const int64_t s = sz.num_symbols();
  if (tree.root < 0) throw std::invalid_argument("tree_log_prob: empty tree");
  std::function<double(int)> rec = [&](int idx) -> double {
    const Tree::Node& n = tree.nodes[static_cast<size_t>(idx)];
    if (n.preterminal)
      return rules.terminal->data[n.symbol * sz.vocab_size + sentence[static_cast<size_t>(n.i)]];
    const Tree::Node& l = tree.nodes[static_cast<size_t>(n.left)];
    const Tree::Node& r = tree.nodes[static_cast<size_t>(n.right)];
    const int64_t bsym = l.preterminal ? l.symbol + sz.num_nonterminals : l.symbol;
    const int64_t csym = r.preterminal ? r.symbol + sz.num_nonterminals : r.symbol;
    const double rule_lp = rules.binary->data[n.symbol * s * s + bsym * s + csym];
    return rule_lp + rec(n.left) + rec(n.right);
  };
  const int64_t root_sym = tree.nodes[static_cast<size_t>(tree.root)].symbol;
  return rules.root->data[root_sym] + rec(tree.root);
}

ViterbiParse map_parse_compound(const Sentence& sentence, const GrammarParams& params,
                                const std::vector<double>& posterior_mean) {
  if (static_cast<int64_t>(posterior_mean.size()) != params.spec.z_dim)
    throw ShapeError("map_parse_compound", {static_cast<int64_t>(posterior_mean.size())},
                     {params.spec.z_dim});
  Tape tape(false);
  auto z = Tensor::vector(posterior_mean);
  auto rules = compound_rule_logprobs(tape, params, z);
  return viterbi_parse(sentence, rules);
}

namespace {

/// Non-allocating type-erased continuation; the enumeration nests callbacks
/// to unbounded runtime depth, which rules out templated sinks.
struct ScoreSink {
  void* ctx;
  void (*fn)(void*, double);
  void operator()(double v) const { fn(ctx, v); }
};

template <class F>
ScoreSink make_sink(F& f) {
  return {&f, [](void* ctx, double v) { (*static_cast<F*>(ctx))(v); }};
}

/// Shared state for derivation enumeration. subtrees() invokes the sink once
/// per labeled subtree of a span with the subtree's score. Scores accumulate
/// as rule + left + right, matching the Viterbi chart's association order, so
/// enumerated maxima compare exactly against CKY scores. Terminal uses are
/// pushed just before yield and binary uses wrap both child enumerations, so
/// at visit time path_ holds the full derivation in pre-order.
class DerivationEnum {
 public:
  DerivationEnum(const Sentence& sentence, const RuleLogProbs& rules, int64_t cap, bool track_path)
      : x_(sentence),
        sz_(table_sizes(rules)),
        s_(sz_.num_symbols()),
        bin_(rules.binary->data.data()),
        term_(rules.terminal->data.data()),
        root_(rules.root->data.data()),
        cap_(cap),
        track_path_(track_path) {}

  void run(const std::function<void(double, const std::vector<RuleUse>&)>& visit) {
    const int64_t n = static_cast<int64_t>(x_.size());
    for (int64_t a = 0; a < sz_.num_nonterminals; ++a) {
      if (track_path_) path_.push_back({RuleUse::Root, a, -1, -1});
      auto top = [&](double score) {
        bump();
        visit(root_[a] + score, path_);
      };
      subtrees(0, n - 1, a, make_sink(top));
      if (track_path_) path_.pop_back();
    }
  }

  int64_t count() const { return count_; }

 private:
  void subtrees(int64_t i, int64_t j, int64_t sym, ScoreSink yield) {
    if (i == j) {
      if (track_path_) path_.push_back({RuleUse::Terminal, sym, x_[static_cast<size_t>(i)], -1});
      yield(term_[(sym - sz_.num_nonterminals) * sz_.vocab_size + x_[static_cast<size_t>(i)]]);
      if (track_path_) path_.pop_back();
      return;
    }
    for (int64_t k = i; k < j; ++k) {
      const auto [b_lo, b_hi] = child_range(i, k);
      const auto [c_lo, c_hi] = child_range(k + 1, j);
      for (int64_t b = b_lo; b < b_hi; ++b) {
        for (int64_t c = c_lo; c < c_hi; ++c) {
          const double rule_lp = bin_[sym * s_ * s_ + b * s_ + c];
          if (track_path_) path_.push_back({RuleUse::Binary, sym, b, c});
          auto left_done = [&](double sl) {
            auto right_done = [&](double sr) { yield(rule_lp + sl + sr); };
            subtrees(k + 1, j, c, make_sink(right_done));
          };
          subtrees(i, k, b, make_sink(left_done));
          if (track_path_) path_.pop_back();
        }
      }
    }
  }

  std::pair<int64_t, int64_t> child_range(int64_t i, int64_t j) const {
    if (i == j) return {sz_.num_nonterminals, s_};
    return {0, sz_.num_nonterminals};
  }

  void bump() {
    if (++count_ > cap_) throw std::runtime_error("enumerate_derivations: derivation cap exceeded");
  }

  const Sentence& x_;
  TableSizes sz_;
  int64_t s_;
  const double* bin_;
  const double* term_;
  const double* root_;
  int64_t cap_;
  bool track_path_;
  std::vector<RuleUse> path_;
  int64_t count_ = 0;
};

void check_enum_preconditions(const char* where, const Sentence& sentence,
                              const RuleLogProbs& rules) {
  validate_rules(where, rules);
  const TableSizes sz = table_sizes(rules);
  validate_sentence(where, sentence, sz.vocab_size);
  if (sentence.size() > 8)
    throw std::invalid_argument(std::string(where) + ": sentence too long to enumerate");
}

}  // namespace

void enumerate_derivations(const Sentence& sentence, const RuleLogProbs& rules,
                           const std::function<void(double, const std::vector<RuleUse>&)>& visit,
                           int64_t max_derivations) {
  check_enum_preconditions("enumerate_derivations", sentence, rules);
  DerivationEnum e(sentence, rules, max_derivations, true);
  e.run(visit);
}

double brute_force_logprob(const Sentence& sentence, const RuleLogProbs& rules,
                           int64_t max_derivations) {
  check_enum_preconditions("brute_force_logprob", sentence, rules);
  // Streaming logsumexp in extended precision.
  long double sum = 0.0L;
  double max_seen = kNegInf;
  DerivationEnum e(sentence, rules, max_derivations, false);
  e.run([&](double lp, const std::vector<RuleUse>&) {
    if (lp == kNegInf) return;
    if (lp > max_seen) {
      sum = sum * std::exp(static_cast<long double>(max_seen - lp)) + 1.0L;
      max_seen = lp;
    } else {
      sum += std::exp(static_cast<long double>(lp - max_seen));
    }
  });
  if (max_seen == kNegInf) return kNegInf;
  return max_seen + static_cast<double>(std::log(sum));
}

double brute_force_best(const Sentence& sentence, const RuleLogProbs& rules,
                        int64_t max_derivations) {
  check_enum_preconditions("brute_force_best", sentence, rules);
  double best = kNegInf;
  DerivationEnum e(sentence, rules, max_derivations, false);
  e.run([&](double lp, const std::vector<RuleUse>&) { best = std::max(best, lp); });
  return best;
}

int64_t count_derivations(const Sentence& sentence, const RuleLogProbs& rules,
                          int64_t max_derivations) {
  check_enum_preconditions("count_derivations", sentence, rules);
  DerivationEnum e(sentence, rules, max_derivations, false);
  e.run([](double, const std::vector<RuleUse>&) {});
  return e.count();
}

}  // namespace cpcfg
