#include "cpcfg/eval.hpp"

#include <cmath>
#include <iostream>
#include <limits>
#include <stdexcept>

namespace cpcfg {

SpanSet spans_of_tree(const Tree& tree) {
  SpanSet out;
  for (const auto& n : tree.nodes) out.insert({n.i, n.j});
  return out;
}

SpanSet spans_of_gold(const std::vector<GoldSpan>& gold) {
  SpanSet out;
  for (const auto& g : gold) out.insert({g.i, g.j});
  return out;
}

SpanSet filter_trivial(const SpanSet& spans, int64_t sentence_len) {
  SpanSet out;
  for (const auto& [i, j] : spans) {
    if (i == j) continue;
    if (i == 0 && j == sentence_len - 1) continue;
    out.insert({i, j});
  }
  return out;
}

namespace {

double f1_from_counts(int64_t tp, int64_t fp, int64_t fn) {
  if (tp == 0) return 0.0;
  const double p = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double r = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 200.0 * p * r / (p + r);
}

int64_t intersection_size(const SpanSet& a, const SpanSet& b) {
  int64_t n = 0;
  for (const auto& s : a) n += b.count(s);
  return n;
}

}  // namespace

std::optional<double> sentence_f1(const SpanSet& pred, const SpanSet& gold, int64_t sentence_len,
                                  VacuousPolicy policy) {
  const SpanSet p = filter_trivial(pred, sentence_len);
  const SpanSet g = filter_trivial(gold, sentence_len);
  if (g.empty() && p.empty())
    return policy == VacuousPolicy::FullCredit ? std::optional<double>(100.0) : std::nullopt;
  const int64_t tp = intersection_size(p, g);
  return f1_from_counts(tp, static_cast<int64_t>(p.size()) - tp,
                        static_cast<int64_t>(g.size()) - tp);
}

void F1Accumulator::add(const SpanSet& pred, const SpanSet& gold, int64_t sentence_len) {
  const SpanSet p = filter_trivial(pred, sentence_len);
  const SpanSet g = filter_trivial(gold, sentence_len);
  const int64_t tp = intersection_size(p, g);
  tp_ += tp;
  fp_ += static_cast<int64_t>(p.size()) - tp;
  fn_ += static_cast<int64_t>(g.size()) - tp;
  if (auto f = cpcfg::sentence_f1(pred, gold, sentence_len, policy_)) {
    sent_sum_ += *f;
    sent_count_ += 1;
  }
}

double F1Accumulator::sentence_f1() const {
  return sent_count_ == 0 ? 0.0 : sent_sum_ / static_cast<double>(sent_count_);
}

double F1Accumulator::corpus_f1() const { return f1_from_counts(tp_, fp_, fn_); }

EvalReport evaluate_spans(const std::vector<SpanSet>& preds,
                          const std::vector<std::vector<GoldSpan>>& golds,
                          const std::vector<int64_t>& lens, VacuousPolicy policy) {
  if (preds.size() != golds.size() || preds.size() != lens.size())
    throw std::runtime_error("evaluate_spans: misaligned inputs");
  F1Accumulator acc(policy);
  for (size_t s = 0; s < preds.size(); ++s) acc.add(preds[s], spans_of_gold(golds[s]), lens[s]);
  EvalReport report;
  report.sentence_f1 = acc.sentence_f1();
  report.corpus_f1 = acc.corpus_f1();
  report.label_recall = label_recall(preds, golds, lens);
  report.sentences = static_cast<int64_t>(preds.size());
  report.tp = acc.tp();
  report.fp = acc.fp();
  report.fn = acc.fn();
  return report;
}

std::map<std::string, double> label_recall(const std::vector<SpanSet>& preds,
                                           const std::vector<std::vector<GoldSpan>>& golds,
                                           const std::vector<int64_t>& lens) {
  if (preds.size() != golds.size() || preds.size() != lens.size())
    throw std::runtime_error("label_recall: misaligned inputs");
  std::map<std::string, int64_t> total, hit;
  for (size_t s = 0; s < golds.size(); ++s) {
    const SpanSet p = filter_trivial(preds[s], lens[s]);
    for (const auto& g : golds[s]) {
      if (g.i == g.j) continue;
      if (g.i == 0 && g.j == lens[s] - 1) continue;
      ++total[g.label];
      if (p.count({g.i, g.j})) ++hit[g.label];
    }
  }
  std::map<std::string, double> out;
  for (const auto& [label, n] : total)
    out[label] = 100.0 * static_cast<double>(hit[label]) / static_cast<double>(n);
  return out;
}

double self_f1(const std::vector<std::vector<SpanSet>>& runs, const std::vector<int64_t>& lens,
               VacuousPolicy policy) {
  if (runs.size() < 2) throw std::runtime_error("self_f1: need at least 2 runs");
  for (const auto& run : runs)
    if (run.size() != lens.size()) throw std::runtime_error("self_f1: run length mismatch");
  double total = 0.0;
  int64_t pairs = 0;
  for (size_t a = 0; a < runs.size(); ++a)
    for (size_t b = a + 1; b < runs.size(); ++b) {
      F1Accumulator acc(policy);
      for (size_t s = 0; s < lens.size(); ++s) acc.add(runs[a][s], runs[b][s], lens[s]);
      total += acc.sentence_f1();
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

std::vector<AlignmentRow> alignment_table(
    const std::vector<std::vector<PredictedConstituent>>& preds,
    const std::vector<std::vector<GoldSpan>>& golds, const std::vector<int64_t>& lens,
    const std::vector<std::string>& gold_labels) {
  if (preds.size() != golds.size() || preds.size() != lens.size())
    throw std::runtime_error("alignment_table: misaligned inputs");
  const std::set<std::string> label_set(gold_labels.begin(), gold_labels.end());

  std::map<int64_t, int64_t> predicted_count, correct_count;
  std::map<int64_t, std::map<std::string, int64_t>> label_count;
  int64_t predicted_total = 0;

  for (size_t s = 0; s < preds.size(); ++s) {
    for (const auto& c : preds[s]) {
      if (c.i == c.j) continue;
      if (c.i == 0 && c.j == lens[s] - 1) continue;
      ++predicted_count[c.symbol];
      ++predicted_total;
      // First matching gold node; gold_spans lists unary chains top-down.
      const GoldSpan* match = nullptr;
      for (const auto& g : golds[s])
        if (g.i == c.i && g.j == c.j) {
          match = &g;
          break;
        }
      if (!match) continue;
      ++correct_count[c.symbol];
      ++label_count[c.symbol][label_set.count(match->label) ? match->label : "Other"];
    }
  }

  std::vector<AlignmentRow> rows;
  for (const auto& [symbol, n_pred] : predicted_count) {
    const int64_t n_correct = correct_count.count(symbol) ? correct_count.at(symbol) : 0;
    if (n_correct == 0) continue;
    AlignmentRow row;
    row.symbol = symbol;
    row.predicted = n_pred;
    row.correct = n_correct;
    row.precision = 100.0 * static_cast<double>(n_correct) / static_cast<double>(n_pred);
    row.frequency = 100.0 * static_cast<double>(n_pred) / static_cast<double>(predicted_total);
    for (const auto& label : gold_labels) row.label_share[label] = 0.0;
    row.label_share["Other"] = 0.0;
    for (const auto& [label, n] : label_count[symbol])
      row.label_share[label] = static_cast<double>(n) / static_cast<double>(n_correct);
    rows.push_back(std::move(row));
  }
  std::sort(rows.begin(), rows.end(), [](const AlignmentRow& a, const AlignmentRow& b) {
    if (a.frequency != b.frequency) return a.frequency > b.frequency;
    return a.symbol < b.symbol;
  });
  return rows;
}

void write_alignment_csv(const std::vector<AlignmentRow>& rows,
                         const std::vector<std::string>& gold_labels, std::ostream& os) {
  os << "symbol";
  for (const auto& label : gold_labels) os << ',' << label;
  os << ",Other,Freq.,Acc.\n";
  for (const auto& row : rows) {
    os << "NT-" << (row.symbol + 1);
    for (const auto& label : gold_labels) os << ',' << 100.0 * row.label_share.at(label);
    os << ',' << 100.0 * row.label_share.at("Other") << ',' << row.frequency << ','
       << row.precision << '\n';
  }
}

double many_to_one(const std::vector<std::vector<int64_t>>& pred_tags,
                   const std::vector<std::vector<std::string>>& gold_tags) {
  if (pred_tags.size() != gold_tags.size())
    throw std::runtime_error("many_to_one: corpus size mismatch");
  std::map<int64_t, std::map<std::string, int64_t>> counts;
  int64_t tokens = 0;
  for (size_t s = 0; s < pred_tags.size(); ++s) {
    if (pred_tags[s].size() != gold_tags[s].size())
      throw std::runtime_error("many_to_one: sequence length mismatch at sentence " +
                               std::to_string(s));
    for (size_t t = 0; t < pred_tags[s].size(); ++t) ++counts[pred_tags[s][t]][gold_tags[s][t]];
    tokens += static_cast<int64_t>(pred_tags[s].size());
  }
  if (tokens == 0) return 0.0;
  // Most frequent gold tag per induced tag; std::map iteration makes the
  // lexicographically smallest tag win ties.
  std::map<int64_t, std::string> mapping;
  for (const auto& [induced, gold_counts] : counts) {
    int64_t best = -1;
    for (const auto& [gold, n] : gold_counts)
      if (n > best) {
        best = n;
        mapping[induced] = gold;
      }
  }
  int64_t correct = 0;
  for (size_t s = 0; s < pred_tags.size(); ++s)
    for (size_t t = 0; t < pred_tags[s].size(); ++t)
      if (mapping[pred_tags[s][t]] == gold_tags[s][t]) ++correct;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(tokens);
}

double iw_log_marginal(const Model& model, const Sentence& sentence, int64_t num_samples,
                       Rng& rng) {
  if (num_samples < 1) throw std::runtime_error("iw_log_marginal: need at least 1 sample");
  if (model.kind != ModelKind::Compound) {
    Tape tape(false);
    return inside_logprob(tape, sentence, rule_logprobs(tape, model.grammar))->value();
  }
  Tape tape(false);
  auto q = encode(tape, sentence, model.encoder);
  std::vector<double> log_weights;
  log_weights.reserve(static_cast<size_t>(num_samples));
  std::vector<double> z(static_cast<size_t>(model.spec.z_dim));
  for (int64_t k = 0; k < num_samples; ++k) {
    for (size_t d = 0; d < z.size(); ++d)
      z[d] = q.mean->data[d] + std::exp(0.5 * q.log_variance->data[d]) * rng.normal();
    Tape inner(false);
    auto rules = compound_rule_logprobs(inner, model.grammar, Tensor::vector(z));
    const double ll = inside_logprob(inner, sentence, rules)->value();
    log_weights.push_back(ll + log_standard_normal_density(z) - log_gaussian_density(z, q));
  }
  double m = -std::numeric_limits<double>::infinity();
  for (double w : log_weights) m = std::max(m, w);
  double s = 0.0;
  for (double w : log_weights) s += std::exp(w - m);
  return m + std::log(s) - std::log(static_cast<double>(num_samples));
}

double iw_perplexity(const Model& model, const std::vector<Sentence>& sentences,
                     int64_t num_samples, Rng& rng) {
  if (num_samples < 1) throw std::runtime_error("iw_perplexity: need at least 1 sample");
  double total = 0.0;
  int64_t tokens = 0;
  for (const auto& x : sentences) {
    total += iw_log_marginal(model, x, num_samples, rng);
    tokens += static_cast<int64_t>(x.size());
  }
  if (tokens == 0) return std::numeric_limits<double>::infinity();
  return std::exp(-total / static_cast<double>(tokens));
}

namespace {

void random_tree_spans(int64_t i, int64_t j, Rng& rng, SpanSet& out) {
  out.insert({i, j});
  if (i == j) return;
  const int64_t k = i + rng.below(j - i);  // split after position k
  random_tree_spans(i, k, rng, out);
  random_tree_spans(k + 1, j, rng, out);
}

}  // namespace

SpanSet baseline_spans(BaselineKind kind, int64_t sentence_len, Rng* rng) {
  if (sentence_len < 2) throw std::runtime_error("baseline_spans: length must be >= 2");
  SpanSet out;
  switch (kind) {
    case BaselineKind::LeftBranching:
      for (int64_t j = 1; j < sentence_len; ++j) out.insert({0, j});
      break;
    case BaselineKind::RightBranching:
      for (int64_t i = 0; i + 1 < sentence_len; ++i) out.insert({i, sentence_len - 1});
      break;
    case BaselineKind::RandomTree: {
      if (!rng) throw std::runtime_error("baseline_spans: random trees need an rng");
      random_tree_spans(0, sentence_len - 1, *rng, out);
      SpanSet wide;
      for (const auto& [i, j] : out)
        if (i != j) wide.insert({i, j});
      return wide;
    }
  }
  return out;
}

}  // namespace cpcfg
