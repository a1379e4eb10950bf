#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cpcfg/eval.hpp"
#include "cpcfg/trainer.hpp"

namespace cpcfg::test {

/// Central finite-difference gradient check. build must reconstruct the loss
/// from the params' current data on the given tape. Relative error uses a
/// unit floor: |analytic - fd| / max(1, |analytic|, |fd|).
struct GradCheck {
  double max_rel_err = 0.0;
  bool ok = true;
  std::string worst;  // param index / element of the worst entry
};

GradCheck gradcheck(const std::vector<TensorPtr>& params,
                    const std::function<TensorPtr(Tape&)>& build, double h = 1e-5,
                    double tol = 1e-6);

/// Finite-difference checks for every diffmath primitive. Returns one
/// (name, max_rel_err) entry per primitive; tol applies to each.
std::vector<std::pair<std::string, double>> primitive_gradcheck_suite(double tol = 1e-6);

/// Random normalized rule tables as leaf tensors.
RuleLogProbs random_rule_tables(int64_t num_nt, int64_t num_pt, int64_t vocab, Rng& rng,
                                bool requires_grad = false);

/// Ancestral sample from a PCFG; nullopt when the yield exceeds max_len.
struct SampledTree {
  Sentence sentence;
  Tree tree;
};
std::optional<SampledTree> sample_pcfg(const RuleLogProbs& rules, Rng& rng, int64_t max_len);

/// The fixed synthetic generator used by the recovery experiments:
/// 2 nonterminals, 3 preterminals, 20 words, hand-set rule probabilities.
RuleLogProbs synthetic_generator();

/// Expected rule-count tables under p(t|x) computed by full enumeration.
struct ExpectedCounts {
  std::vector<double> root;      // [|N|]
  std::vector<double> binary;    // [|N| * S * S]
  std::vector<double> terminal;  // [|P| * vocab]
};
ExpectedCounts enumerate_expected_counts(const Sentence& sentence, const RuleLogProbs& rules);

/// log p(x) for a 1-dimensional-z compound model by trapezoid quadrature
/// over z in [lo, hi].
double quadrature_logpx(const Model& model, const Sentence& sentence, double lo = -8.0,
                        double hi = 8.0, int64_t points = 1601);

/// logsumexp oracle in extended precision (plain shifted sum).
double lse_reference(const std::vector<double>& xs);

}  // namespace cpcfg::test
