#include "cpcfg/grammar.hpp"

#include <cmath>
#include <stdexcept>

namespace cpcfg {

namespace {

namespace o = op;

void check_finite_params(const GrammarParams& params, const char* where) {
  if (!params.all_finite())
    throw std::runtime_error(std::string(where) + ": non-finite parameter");
}

Mlp make_mlp(int64_t in_dim, int64_t out_dim, Rng& rng) {
  Mlp m;
  m.w = xavier_uniform({out_dim, in_dim}, rng);
  m.b = Tensor::zeros({out_dim}, true);
  for (ResidualBlock* blk : {&m.block1, &m.block2}) {
    blk->u = xavier_uniform({out_dim, out_dim}, rng);
    blk->p = Tensor::zeros({out_dim}, true);
    blk->v = xavier_uniform({out_dim, out_dim}, rng);
    blk->q = Tensor::zeros({out_dim}, true);
  }
  return m;
}

void push_mlp_params(std::vector<std::pair<std::string, TensorPtr>>& out, const std::string& name,
                     const Mlp& m) {
  out.emplace_back(name + ".w", m.w);
  out.emplace_back(name + ".b", m.b);
  const ResidualBlock* blocks[2] = {&m.block1, &m.block2};
  for (int i = 0; i < 2; ++i) {
    const std::string base = name + ".block" + std::to_string(i + 1);
    out.emplace_back(base + ".u", blocks[i]->u);
    out.emplace_back(base + ".p", blocks[i]->p);
    out.emplace_back(base + ".v", blocks[i]->v);
    out.emplace_back(base + ".q", blocks[i]->q);
  }
}

TensorPtr residual_block_vec(Tape& tape, const ResidualBlock& blk, const TensorPtr& y) {
  auto inner = o::relu(tape, o::linear_vec(tape, y, blk.u, blk.p));
  auto outer = o::relu(tape, o::linear_vec(tape, inner, blk.v, blk.q));
  return o::add(tape, outer, y);
}

TensorPtr residual_block_rows(Tape& tape, const ResidualBlock& blk, const TensorPtr& y) {
  auto inner = o::relu(tape, o::linear(tape, y, blk.u, blk.p));
  auto outer = o::relu(tape, o::linear(tape, inner, blk.v, blk.q));
  return o::add(tape, outer, y);
}

}  // namespace

std::string model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::Scalar: return "scalar";
    case ModelKind::Neural: return "neural";
    case ModelKind::Compound: return "compound";
  }
  return "unknown";
}

ModelKind model_kind_from_name(const std::string& name) {
  if (name == "scalar") return ModelKind::Scalar;
  if (name == "neural") return ModelKind::Neural;
  if (name == "compound") return ModelKind::Compound;
  throw std::runtime_error("unknown model kind: " + name);
}

void GrammarSpec::validate() const {
  if (num_nonterminals < 1 || num_preterminals < 1 || vocab_size < 1 || symbol_dim < 1)
    throw std::runtime_error("GrammarSpec: all sizes must be >= 1");
  if (z_dim < 0) throw std::runtime_error("GrammarSpec: z_dim must be >= 0");
}

std::vector<std::pair<std::string, TensorPtr>> GrammarParams::parameters() const {
  std::vector<std::pair<std::string, TensorPtr>> out;
  if (kind == ModelKind::Scalar) {
    out.emplace_back("score_root", score_root);
    out.emplace_back("score_binary", score_binary);
    out.emplace_back("score_terminal", score_terminal);
    return out;
  }
  out.emplace_back("w_start", w_start);
  out.emplace_back("w_nt", w_nt);
  out.emplace_back("w_pt", w_pt);
  out.emplace_back("u_nt", u_nt);
  out.emplace_back("u_rule", u_rule);
  out.emplace_back("u_word", u_word);
  out.emplace_back("b_nt", b_nt);
  out.emplace_back("b_rule", b_rule);
  out.emplace_back("b_word", b_word);
  push_mlp_params(out, "f1", f1);
  push_mlp_params(out, "f2", f2);
  return out;
}

bool GrammarParams::all_finite() const {
  for (const auto& [name, t] : parameters())
    if (!t->all_finite()) return false;
  return true;
}

GrammarParams make_scalar_grammar(const GrammarSpec& spec, Rng& rng) {
  spec.validate();
  if (spec.z_dim != 0) throw std::runtime_error("scalar grammar: z_dim must be 0");
  GrammarParams g;
  g.kind = ModelKind::Scalar;
  g.spec = spec;
  g.score_root = xavier_uniform({spec.num_nonterminals}, rng);
  g.score_binary = xavier_uniform({spec.num_nonterminals, spec.rule_space()}, rng);
  g.score_terminal = xavier_uniform({spec.num_preterminals, spec.vocab_size}, rng);
  return g;
}

namespace {

GrammarParams make_embedding_grammar(const GrammarSpec& spec, Rng& rng, ModelKind kind) {
  spec.validate();
  GrammarParams g;
  g.kind = kind;
  g.spec = spec;
  const int64_t d = spec.symbol_dim;
  const int64_t mlp_in = d + spec.z_dim;
  const int64_t rule_dim = d + spec.z_dim;  // u_BC scores [w_A ; z]
  g.w_start = xavier_uniform({d}, rng);
  g.w_nt = xavier_uniform({spec.num_nonterminals, d}, rng);
  g.w_pt = xavier_uniform({spec.num_preterminals, d}, rng);
  g.u_nt = xavier_uniform({spec.num_nonterminals, d}, rng);
  g.u_rule = xavier_uniform({spec.rule_space(), rule_dim}, rng);
  g.u_word = xavier_uniform({spec.vocab_size, d}, rng);
  g.b_nt = Tensor::zeros({spec.num_nonterminals}, true);
  g.b_rule = Tensor::zeros({spec.rule_space()}, true);
  g.b_word = Tensor::zeros({spec.vocab_size}, true);
  g.f1 = make_mlp(mlp_in, d, rng);
  g.f2 = make_mlp(mlp_in, d, rng);
  return g;
}

}  // namespace

GrammarParams make_neural_grammar(const GrammarSpec& spec, Rng& rng) {
  if (spec.z_dim != 0) throw std::runtime_error("neural grammar: z_dim must be 0");
  return make_embedding_grammar(spec, rng, ModelKind::Neural);
}

GrammarParams make_compound_grammar(const GrammarSpec& spec, Rng& rng) {
  if (spec.z_dim < 1) throw std::runtime_error("compound grammar: z_dim must be >= 1");
  return make_embedding_grammar(spec, rng, ModelKind::Compound);
}

TensorPtr residual_mlp_forward(Tape& tape, const Mlp& mlp, const TensorPtr& x) {
  auto h = o::linear_vec(tape, x, mlp.w, mlp.b);
  h = residual_block_vec(tape, mlp.block2, h);
  return residual_block_vec(tape, mlp.block1, h);
}

TensorPtr residual_mlp_forward_rows(Tape& tape, const Mlp& mlp, const TensorPtr& x) {
  auto h = o::linear(tape, x, mlp.w, mlp.b);
  h = residual_block_rows(tape, mlp.block2, h);
  return residual_block_rows(tape, mlp.block1, h);
}

RuleLogProbs scalar_rule_logprobs(Tape& tape, const TensorPtr& root_scores,
                                  const TensorPtr& binary_scores,
                                  const TensorPtr& terminal_scores) {
  if (root_scores->ndim() != 1) throw ShapeError("scalar_rule_logprobs", root_scores->shape, {});
  if (binary_scores->ndim() != 2 || terminal_scores->ndim() != 2)
    throw ShapeError("scalar_rule_logprobs", binary_scores->shape, terminal_scores->shape);
  RuleLogProbs rules;
  rules.root = o::log_softmax(tape, root_scores);
  rules.binary = o::log_softmax(tape, binary_scores);
  rules.terminal = o::log_softmax(tape, terminal_scores);
  return rules;
}

RuleLogProbs neural_rule_logprobs(Tape& tape, const GrammarParams& params) {
  if (params.kind != ModelKind::Neural && params.kind != ModelKind::Scalar)
    throw std::runtime_error("neural_rule_logprobs: wrong model kind");
  if (params.kind == ModelKind::Scalar)
    return scalar_rule_logprobs(tape, params.score_root, params.score_binary,
                                params.score_terminal);
  if (params.spec.z_dim != 0)
    throw std::runtime_error("neural_rule_logprobs: z_dim must be 0");
  check_finite_params(params, "neural_rule_logprobs");

  RuleLogProbs rules;
  auto f1_out = residual_mlp_forward(tape, params.f1, params.w_start);
  rules.root = o::log_softmax(tape, o::linear_vec(tape, f1_out, params.u_nt, params.b_nt));

  // No MLP for A -> B C rules; scores are u_BC . w_A + b_BC directly.
  rules.binary = o::log_softmax(tape, o::linear(tape, params.w_nt, params.u_rule, params.b_rule));

  auto f2_out = residual_mlp_forward_rows(tape, params.f2, params.w_pt);
  rules.terminal = o::log_softmax(tape, o::linear(tape, f2_out, params.u_word, params.b_word));
  return rules;
}

RuleLogProbs compound_rule_logprobs(Tape& tape, const GrammarParams& params, const TensorPtr& z) {
  if (params.kind != ModelKind::Compound)
    throw std::runtime_error("compound_rule_logprobs: wrong model kind");
  if (!z || z->ndim() != 1 || z->dim(0) != params.spec.z_dim)
    throw ShapeError("compound_rule_logprobs", z ? z->shape : Shape{}, {params.spec.z_dim});
  check_finite_params(params, "compound_rule_logprobs");

  RuleLogProbs rules;
  auto f1_out = residual_mlp_forward(tape, params.f1, o::concat_vec(tape, params.w_start, z));
  rules.root = o::log_softmax(tape, o::linear_vec(tape, f1_out, params.u_nt, params.b_nt));

  auto z_nt = o::repeat_row(tape, z, params.spec.num_nonterminals);
  auto wa_z = o::concat_cols(tape, params.w_nt, z_nt);
  rules.binary = o::log_softmax(tape, o::linear(tape, wa_z, params.u_rule, params.b_rule));

  auto z_pt = o::repeat_row(tape, z, params.spec.num_preterminals);
  auto wt_z = o::concat_cols(tape, params.w_pt, z_pt);
  auto f2_out = residual_mlp_forward_rows(tape, params.f2, wt_z);
  rules.terminal = o::log_softmax(tape, o::linear(tape, f2_out, params.u_word, params.b_word));
  return rules;
}

RuleLogProbs rule_logprobs(Tape& tape, const GrammarParams& params, const TensorPtr& z) {
  switch (params.kind) {
    case ModelKind::Scalar:
      return scalar_rule_logprobs(tape, params.score_root, params.score_binary,
                                  params.score_terminal);
    case ModelKind::Neural:
      return neural_rule_logprobs(tape, params);
    case ModelKind::Compound:
      return compound_rule_logprobs(tape, params, z);
  }
  throw std::runtime_error("rule_logprobs: bad kind");
}

void check_normalized(const RuleLogProbs& rules, double tol) {
  auto check_rows = [tol](const TensorPtr& t, const char* what) {
    const int64_t m = t->ndim() == 1 ? 1 : t->dim(0);
    const int64_t n = t->ndim() == 1 ? t->dim(0) : t->dim(1);
    for (int64_t i = 0; i < m; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t j = 0; j < n; ++j) {
        const double v = t->data[i * n + j];
        if (!std::isfinite(v))
          throw std::runtime_error(std::string("check_normalized: non-finite entry in ") + what);
        mx = std::max(mx, v);
      }
      double s = 0.0;
      for (int64_t j = 0; j < n; ++j) s += std::exp(t->data[i * n + j] - mx);
      if (std::abs(mx + std::log(s)) > tol)
        throw std::runtime_error(std::string("check_normalized: row not normalized in ") + what);
    }
  };
  check_rows(rules.root, "root");
  check_rows(rules.binary, "binary");
  check_rows(rules.terminal, "terminal");
}

}  // namespace cpcfg
