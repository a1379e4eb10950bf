#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cpcfg/corpus.hpp"
#include "cpcfg/model.hpp"

namespace cpcfg {

/// Unlabeled span set over inclusive token indices; duplicates collapse.
using SpanSet = std::set<std::pair<int64_t, int64_t>>;

SpanSet spans_of_tree(const Tree& tree);
SpanSet spans_of_gold(const std::vector<GoldSpan>& gold);

/// Removes trivial spans: width-one and the whole-sentence span.
SpanSet filter_trivial(const SpanSet& spans, int64_t sentence_len);

enum class F1Mode { Sentence, Corpus };

/// Convention for sentences whose filtered gold AND prediction are both
/// empty: full credit (100) by default, or skip the sentence entirely.
enum class VacuousPolicy { FullCredit, Skip };

/// Per-sentence F1 in percentage points, trivial spans removed from both
/// sides. Both empty -> 100 under FullCredit; gold empty, pred not -> 0.
std::optional<double> sentence_f1(const SpanSet& pred, const SpanSet& gold, int64_t sentence_len,
                                  VacuousPolicy policy = VacuousPolicy::FullCredit);

/// Accumulates both evaluation modes over a corpus.
class F1Accumulator {
 public:
  explicit F1Accumulator(VacuousPolicy policy = VacuousPolicy::FullCredit) : policy_(policy) {}
  void add(const SpanSet& pred, const SpanSet& gold, int64_t sentence_len);
  double sentence_f1() const;  // mean of per-sentence F1
  double corpus_f1() const;    // from global TP/FP/FN
  int64_t tp() const { return tp_; }
  int64_t fp() const { return fp_; }
  int64_t fn() const { return fn_; }

 private:
  VacuousPolicy policy_;
  int64_t tp_ = 0, fp_ = 0, fn_ = 0;
  double sent_sum_ = 0.0;
  int64_t sent_count_ = 0;
};

struct EvalReport {
  double sentence_f1 = 0.0;
  double corpus_f1 = 0.0;
  std::map<std::string, double> label_recall;  // percentage per label
  int64_t sentences = 0;
  int64_t tp = 0, fp = 0, fn = 0;
};

EvalReport evaluate_spans(const std::vector<SpanSet>& preds,
                          const std::vector<std::vector<GoldSpan>>& golds,
                          const std::vector<int64_t>& lens,
                          VacuousPolicy policy = VacuousPolicy::FullCredit);

/// Fraction of non-trivial gold spans with the given label whose unlabeled
/// (i, j) appears in the prediction. Labels absent from gold are omitted.
std::map<std::string, double> label_recall(const std::vector<SpanSet>& preds,
                                           const std::vector<std::vector<GoldSpan>>& golds,
                                           const std::vector<int64_t>& lens);

/// Mean pairwise sentence-level F1 over all k(k-1)/2 unordered run pairs.
double self_f1(const std::vector<std::vector<SpanSet>>& runs, const std::vector<int64_t>& lens,
               VacuousPolicy policy = VacuousPolicy::FullCredit);

struct PredictedConstituent {
  int64_t i, j;
  int64_t symbol;  // induced nonterminal id
};

struct AlignmentRow {
  int64_t symbol;
  std::map<std::string, double> label_share;  // over gold_labels + "Other"; sums to 1
  double frequency = 0.0;                     // share of all predicted constituents
  double precision = 0.0;
  int64_t predicted = 0, correct = 0;
};

/// Per induced nonterminal: the distribution over gold labels among its
/// correct (non-trivial) predictions, its predicted-frequency share, and its
/// precision. Symbols with zero correct predictions are omitted. Rows are
/// ordered by descending frequency.
std::vector<AlignmentRow> alignment_table(
    const std::vector<std::vector<PredictedConstituent>>& preds,
    const std::vector<std::vector<GoldSpan>>& golds, const std::vector<int64_t>& lens,
    const std::vector<std::string>& gold_labels);

void write_alignment_csv(const std::vector<AlignmentRow>& rows,
                         const std::vector<std::string>& gold_labels, std::ostream& os);

/// Many-to-one tag accuracy: each induced preterminal maps to its most
/// frequent gold tag corpus-wide (lexicographic tie-break), then token
/// accuracy under that map.
double many_to_one(const std::vector<std::vector<int64_t>>& pred_tags,
                   const std::vector<std::vector<std::string>>& gold_tags);

/// Test-set perplexity. Compound: importance-weighted estimate with
/// num_samples draws from q(z|x) per sentence. Neural/scalar: exact from the
/// inside algorithm.
double iw_perplexity(const Model& model, const std::vector<Sentence>& sentences,
                     int64_t num_samples, Rng& rng);

/// Per-sentence importance-weighted log marginal likelihood estimate.
double iw_log_marginal(const Model& model, const Sentence& sentence, int64_t num_samples,
                       Rng& rng);

enum class BaselineKind { LeftBranching, RightBranching, RandomTree };

/// Span sets for the trivial-tree baselines (pre-filter, whole-sentence span
/// included). Random trees use recursive uniform split points, which is not
/// uniform over tree shapes.
SpanSet baseline_spans(BaselineKind kind, int64_t sentence_len, Rng* rng = nullptr);

}  // namespace cpcfg
