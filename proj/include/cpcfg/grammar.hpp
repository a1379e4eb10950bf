#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cpcfg/rng.hpp"
#include "cpcfg/tensor.hpp"

namespace cpcfg {

enum class ModelKind { Scalar, Neural, Compound };

std::string model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);

/// Symbol inventory sizes. Combined symbol indexing used throughout:
/// nonterminals occupy [0, |N|), preterminals [|N|, |N|+|P|).
struct GrammarSpec {
  int64_t num_nonterminals = 30;
  int64_t num_preterminals = 60;
  int64_t vocab_size = 10000;
  int64_t symbol_dim = 256;
  int64_t z_dim = 0;  // latent width; 0 unless compound

  int64_t num_symbols() const { return num_nonterminals + num_preterminals; }
  int64_t rule_space() const { return num_symbols() * num_symbols(); }
  void validate() const;
};

/// Two-residual-layer MLP: f(x) = g1(g2(W x + b)),
/// g(y) = relu(V relu(U y + p) + q) + y.
struct ResidualBlock {
  TensorPtr u, p, v, q;
};

struct Mlp {
  TensorPtr w, b;
  ResidualBlock block1, block2;  // g2 applied first, then g1
};

/// Normalized log-probability tables for the three rule shapes. Binary rows
/// are indexed by the left-hand nonterminal; the flattened right-hand pair
/// (B, C) maps to column B * num_symbols + C.
struct RuleLogProbs {
  TensorPtr root;      // [|N|]
  TensorPtr binary;    // [|N|, S*S]
  TensorPtr terminal;  // [|P|, |Sigma|]
};

struct GrammarParams {
  ModelKind kind = ModelKind::Neural;
  GrammarSpec spec;

  // Scalar parameterization: free score tables, one categorical per LHS.
  TensorPtr score_root, score_binary, score_terminal;

  // Neural/compound parameterization.
  TensorPtr w_start;              // [d] input embedding for the start symbol
  TensorPtr w_nt, w_pt;           // [|N|, d], [|P|, d] input embeddings
  TensorPtr u_nt;                 // [|N|, d] output embeddings for S -> A
  TensorPtr u_rule;               // [S*S, d] (neural) or [S*S, d + z] (compound)
  TensorPtr u_word;               // [|Sigma|, d]
  TensorPtr b_nt, b_rule, b_word; // per-output bias scalars
  Mlp f1, f2;

  std::vector<std::pair<std::string, TensorPtr>> parameters() const;
  bool all_finite() const;
};

GrammarParams make_scalar_grammar(const GrammarSpec& spec, Rng& rng);
GrammarParams make_neural_grammar(const GrammarSpec& spec, Rng& rng);
GrammarParams make_compound_grammar(const GrammarSpec& spec, Rng& rng);

TensorPtr residual_mlp_forward(Tape& tape, const Mlp& mlp, const TensorPtr& x);       // [in] -> [d]
TensorPtr residual_mlp_forward_rows(Tape& tape, const Mlp& mlp, const TensorPtr& x);  // [m,in] -> [m,d]

/// Raw score tables -> row-normalized log probabilities.
RuleLogProbs scalar_rule_logprobs(Tape& tape, const TensorPtr& root_scores,
                                  const TensorPtr& binary_scores,
                                  const TensorPtr& terminal_scores);

RuleLogProbs neural_rule_logprobs(Tape& tape, const GrammarParams& params);

RuleLogProbs compound_rule_logprobs(Tape& tape, const GrammarParams& params, const TensorPtr& z);

/// Dispatch on params.kind; z may be null for scalar/neural.
RuleLogProbs rule_logprobs(Tape& tape, const GrammarParams& params, const TensorPtr& z = nullptr);

/// Checks every row logsumexps to 0 within tol and all entries are finite.
void check_normalized(const RuleLogProbs& rules, double tol = 1e-8);

}  // namespace cpcfg
