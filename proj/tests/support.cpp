#include "support.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace cpcfg::test {

namespace {
namespace o = op;
}

GradCheck gradcheck(const std::vector<TensorPtr>& params,
                    const std::function<TensorPtr(Tape&)>& build, double h, double tol) {
  for (const auto& p : params) p->zero_grad();
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    auto loss = build(tape);
    tape.backward(loss);
    for (const auto& p : params) {
      p->ensure_grad();
      analytic.push_back(p->grad);
    }
  }
  auto eval = [&]() {
    Tape tape(false);
    return build(tape)->value();
  };
  GradCheck result;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    for (size_t i = 0; i < p->data.size(); ++i) {
      const double saved = p->data[i];
      p->data[i] = saved + h;
      const double f_plus = eval();
      p->data[i] = saved - h;
      const double f_minus = eval();
      p->data[i] = saved;
      const double fd = (f_plus - f_minus) / (2.0 * h);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        std::ostringstream os;
        os << "param " << pi << " elem " << i << ": analytic " << a << " fd " << fd;
        result.worst = os.str();
      }
    }
  }
  result.ok = result.max_rel_err < tol;
  return result;
}

namespace {

TensorPtr rand_tensor(Shape shape, Rng& rng, double lo = -1.5, double hi = 1.5,
                      bool requires_grad = true) {
  auto t = Tensor::zeros(std::move(shape), requires_grad);
  for (auto& v : t->data) v = rng.uniform(lo, hi);
  return t;
}

/// Random values kept away from zero so relu/max kinks stay off the FD path.
TensorPtr rand_tensor_off_kinks(Shape shape, Rng& rng) {
  auto t = Tensor::zeros(std::move(shape), true);
  for (auto& v : t->data) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    v = sign * rng.uniform(0.2, 1.5);
  }
  return t;
}

/// Returns a mixer with weights fixed at creation, so repeated builds of the
/// same loss (finite differences) see identical mixing.
std::function<TensorPtr(Tape&, const TensorPtr&)> make_mixer(Shape shape, Rng& rng) {
  auto w = Tensor::zeros(std::move(shape));
  for (auto& v : w->data) v = rng.uniform(0.25, 1.75);
  return [w](Tape& tape, const TensorPtr& x) { return o::sum(tape, o::mul(tape, x, w)); };
}

}  // namespace

std::vector<std::pair<std::string, double>> primitive_gradcheck_suite(double tol) {
  std::vector<std::pair<std::string, double>> results;
  Rng rng(20240517);
  auto check = [&](const char* name, const std::vector<TensorPtr>& params,
                   const std::function<TensorPtr(Tape&)>& build) {
    auto r = gradcheck(params, build, 1e-5, tol);
    if (!r.ok)
      throw std::runtime_error(std::string("gradcheck failed for ") + name + ": " + r.worst);
    results.emplace_back(name, r.max_rel_err);
  };

  {
    auto a = rand_tensor({3, 4}, rng), b = rand_tensor({3, 4}, rng);
    auto mix = make_mixer({3, 4}, rng);
    check("add", {a, b}, [&](Tape& t) { return mix(t, o::add(t, a, b)); });
    check("sub", {a, b}, [&](Tape& t) { return mix(t, o::sub(t, a, b)); });
    check("mul", {a, b}, [&](Tape& t) { return mix(t, o::mul(t, a, b)); });
  }
  {
    auto a = rand_tensor({5}, rng);
    auto mix = make_mixer({5}, rng);
    check("scale", {a}, [&](Tape& t) { return mix(t, o::scale(t, a, -2.5)); });
    check("add_const", {a}, [&](Tape& t) { return mix(t, o::add_const(t, a, 3.25)); });
    check("clamp", {a}, [&](Tape& t) { return mix(t, o::clamp(t, a, -2.0, 2.0)); });
  }
  {
    auto a = rand_tensor_off_kinks({4, 3}, rng);
    auto mix = make_mixer({4, 3}, rng);
    check("relu", {a}, [&](Tape& t) { return mix(t, o::relu(t, a)); });
    check("sigmoid", {a}, [&](Tape& t) { return mix(t, o::sigmoid(t, a)); });
    check("tanh", {a}, [&](Tape& t) { return mix(t, o::tanh(t, a)); });
  }
  {
    auto a = rand_tensor({4}, rng);
    auto mix = make_mixer({4}, rng);
    check("exp", {a}, [&](Tape& t) { return mix(t, o::exp(t, a)); });
  }
  {
    auto a = rand_tensor({4}, rng, 0.3, 2.0);
    auto mix = make_mixer({4}, rng);
    check("log", {a}, [&](Tape& t) { return mix(t, o::log(t, a)); });
  }
  {
    auto a = rand_tensor({3, 4}, rng), b = rand_tensor({4, 2}, rng);
    auto mix = make_mixer({3, 2}, rng);
    check("matmul", {a, b}, [&](Tape& t) { return mix(t, o::matmul(t, a, b)); });
  }
  {
    auto x = rand_tensor({3, 4}, rng), w = rand_tensor({2, 4}, rng), b = rand_tensor({2}, rng);
    auto mix = make_mixer({3, 2}, rng);
    check("linear", {x, w, b}, [&](Tape& t) { return mix(t, o::linear(t, x, w, b)); });
  }
  {
    auto x = rand_tensor({4}, rng), w = rand_tensor({3, 4}, rng), b = rand_tensor({3}, rng);
    auto mix = make_mixer({3}, rng);
    check("linear_vec", {x, w, b}, [&](Tape& t) { return mix(t, o::linear_vec(t, x, w, b)); });
  }
  {
    auto m = rand_tensor({3, 5}, rng), v = rand_tensor({5}, rng);
    auto mix = make_mixer({3}, rng);
    check("log_matvec", {m, v}, [&](Tape& t) { return mix(t, o::log_matvec(t, m, v)); });
  }
  {
    auto x = rand_tensor({3, 4}, rng), v = rand_tensor({4}, rng);
    auto mix = make_mixer({3, 4}, rng);
    check("add_row_vector", {x, v}, [&](Tape& t) { return mix(t, o::add_row_vector(t, x, v)); });
  }
  {
    auto u = rand_tensor({3}, rng), v = rand_tensor({4}, rng);
    auto mix = make_mixer({3, 4}, rng);
    check("outer_add", {u, v}, [&](Tape& t) { return mix(t, o::outer_add(t, u, v)); });
  }
  {
    auto v = rand_tensor({4}, rng);
    auto mix = make_mixer({3, 4}, rng);
    check("repeat_row", {v}, [&](Tape& t) { return mix(t, o::repeat_row(t, v, 3)); });
  }
  {
    auto x = rand_tensor({3, 4}, rng);
    auto mix = make_mixer({2, 6}, rng);
    check("reshape", {x}, [&](Tape& t) { return mix(t, o::reshape(t, x, {2, 6})); });
  }
  {
    auto a = rand_tensor({3}, rng), b = rand_tensor({2}, rng);
    auto mix = make_mixer({5}, rng);
    check("concat_vec", {a, b}, [&](Tape& t) { return mix(t, o::concat_vec(t, a, b)); });
  }
  {
    auto a = rand_tensor({2, 3}, rng), b = rand_tensor({3}, rng), c = rand_tensor({1, 3}, rng);
    auto mix = make_mixer({4, 3}, rng);
    check("concat_rows", {a, b, c},
          [&](Tape& t) { return mix(t, o::concat_rows(t, {a, b, c})); });
  }
  {
    auto a = rand_tensor({3, 2}, rng), b = rand_tensor({3, 4}, rng);
    auto mix = make_mixer({3, 6}, rng);
    check("concat_cols", {a, b}, [&](Tape& t) { return mix(t, o::concat_cols(t, a, b)); });
  }
  {
    auto x = rand_tensor({7}, rng);
    auto mix = make_mixer({4}, rng);
    check("slice_vec", {x}, [&](Tape& t) { return mix(t, o::slice_vec(t, x, 2, 4)); });
  }
  {
    auto x = rand_tensor({3, 4}, rng);
    auto mix = make_mixer({4}, rng);
    check("row", {x}, [&](Tape& t) { return mix(t, o::row(t, x, 1)); });
  }
  {
    auto x = rand_tensor({3, 4}, rng);
    auto mix = make_mixer({3}, rng);
    check("col", {x}, [&](Tape& t) { return mix(t, o::col(t, x, 2)); });
  }
  {
    auto x = rand_tensor({5, 3}, rng);
    const std::vector<int64_t> ids = {4, 0, 2, 0};
    auto mix = make_mixer({4, 3}, rng);
    check("gather_rows", {x}, [&](Tape& t) { return mix(t, o::gather_rows(t, x, ids)); });
  }
  {
    auto x = rand_tensor({3}, rng);
    auto mix = make_mixer({7}, rng);
    check("embed_segment", {x},
          [&](Tape& t) { return mix(t, o::embed_segment(t, x, 2, 7, -4.0)); });
  }
  {
    auto x = rand_tensor({3, 4}, rng);
    auto mix0 = make_mixer({4}, rng);
    auto mix1 = make_mixer({3}, rng);
    check("logsumexp_axis0", {x}, [&](Tape& t) { return mix0(t, o::logsumexp(t, x, 0)); });
    check("logsumexp_axis1", {x}, [&](Tape& t) { return mix1(t, o::logsumexp(t, x, 1)); });
  }
  {
    auto x = rand_tensor({5}, rng);
    check("logsumexp_vec", {x}, [&](Tape& t) { return o::logsumexp_vec(t, x); });
  }
  {
    auto x = rand_tensor({3, 4}, rng);
    auto mix = make_mixer({3, 4}, rng);
    check("log_softmax_rows", {x}, [&](Tape& t) { return mix(t, o::log_softmax(t, x)); });
  }
  {
    auto x = rand_tensor({5}, rng);
    auto mix = make_mixer({5}, rng);
    check("log_softmax_vec", {x}, [&](Tape& t) { return mix(t, o::log_softmax(t, x)); });
  }
  {
    // Distinct entries keep the argmax stable under the FD step.
    auto x = Tensor::from({3, 2}, {0.1, 1.4, -0.7, 0.9, 0.8, -1.2}, true);
    auto mix = make_mixer({2}, rng);
    check("max_over_rows", {x}, [&](Tape& t) { return mix(t, o::max_over_rows(t, x)); });
  }
  {
    auto x = rand_tensor({3, 4}, rng);
    check("sum", {x}, [&](Tape& t) { return o::sum(t, x); });
    check("mean", {x}, [&](Tape& t) { return o::mean(t, x); });
  }
  return results;
}

RuleLogProbs random_rule_tables(int64_t num_nt, int64_t num_pt, int64_t vocab, Rng& rng,
                                bool requires_grad) {
  const int64_t s = num_nt + num_pt;
  auto make_rows = [&](int64_t rows, int64_t cols) {
    auto t = Tensor::zeros({rows, cols}, requires_grad);
    for (int64_t r = 0; r < rows; ++r) {
      std::vector<double> scores(static_cast<size_t>(cols));
      for (auto& v : scores) v = rng.normal();
      const double lse = lse_reference(scores);
      for (int64_t c = 0; c < cols; ++c) t->data[r * cols + c] = scores[static_cast<size_t>(c)] - lse;
    }
    return t;
  };
  RuleLogProbs rules;
  auto root2d = make_rows(1, num_nt);
  rules.root = Tensor::from({num_nt}, root2d->data, requires_grad);
  rules.binary = make_rows(num_nt, s * s);
  rules.terminal = make_rows(num_pt, vocab);
  return rules;
}

std::optional<SampledTree> sample_pcfg(const RuleLogProbs& rules, Rng& rng, int64_t max_len) {
  const TableSizes sz = table_sizes(rules);
  const int64_t s = sz.num_symbols();

  auto pick = [&](const double* logprobs, int64_t count) {
    const double u = rng.uniform();
    double cum = 0.0;
    for (int64_t i = 0; i < count; ++i) {
      cum += std::exp(logprobs[i]);
      if (u < cum) return i;
    }
    return count - 1;
  };

  SampledTree out;
  int64_t tokens = 0;
  bool overflow = false;
  std::function<int(int64_t)> expand = [&](int64_t sym) -> int {
    if (overflow) return -1;
    Tree::Node node;
    if (sym >= sz.num_nonterminals) {
      if (++tokens > max_len) {
        overflow = true;
        return -1;
      }
      node.preterminal = true;
      node.symbol = sym - sz.num_nonterminals;
      node.i = node.j = static_cast<int64_t>(out.sentence.size());
      out.sentence.push_back(pick(rules.terminal->data.data() + node.symbol * sz.vocab_size,
                                  sz.vocab_size));
      out.tree.nodes.push_back(node);
      return static_cast<int>(out.tree.nodes.size()) - 1;
    }
    const int64_t pair = pick(rules.binary->data.data() + sym * s * s, s * s);
    node.preterminal = false;
    node.symbol = sym;
    node.left = expand(pair / s);
    node.right = expand(pair % s);
    if (overflow) return -1;
    node.i = out.tree.nodes[static_cast<size_t>(node.left)].i;
    node.j = out.tree.nodes[static_cast<size_t>(node.right)].j;
    out.tree.nodes.push_back(node);
    return static_cast<int>(out.tree.nodes.size()) - 1;
  };

  const int64_t root_sym = pick(rules.root->data.data(), sz.num_nonterminals);
  out.tree.root = expand(root_sym);
  if (overflow) return std::nullopt;
  out.tree.num_leaves = static_cast<int64_t>(out.sentence.size());
  return out;
}

RuleLogProbs synthetic_generator() {
  // Symbols: A1=0, A2=1 (nonterminals); T1=2, T2=3, T3=4 (preterminals).
  // Word classes: T1 -> 0..5, T2 -> 6..12, T3 -> 13..19.
  const int64_t nn = 2, pp = 3, vocab = 20, s = 5;
  auto log_row = [](std::vector<double> probs) {
    for (auto& p : probs) p = std::log(p);
    return probs;
  };

  RuleLogProbs rules;
  rules.root = Tensor::vector(log_row({0.8, 0.2}));

  auto binary = Tensor::full({nn, s * s}, -std::numeric_limits<double>::infinity());
  auto set_rule = [&](int64_t a, int64_t b, int64_t c, double p) {
    binary->data[a * s * s + b * s + c] = std::log(p);
  };
  // A1: sentence-like distributions over clause shapes.
  set_rule(0, 1, 4, 0.40);  // A1 -> A2 T3
  set_rule(0, 4, 1, 0.30);  // A1 -> T3 A2
  set_rule(0, 1, 0, 0.20);  // A1 -> A2 A1
  set_rule(0, 3, 4, 0.10);  // A1 -> T2 T3
  // A2: noun-phrase-like.
  set_rule(1, 2, 3, 0.50);  // A2 -> T1 T2
  set_rule(1, 3, 3, 0.20);  // A2 -> T2 T2
  set_rule(1, 2, 1, 0.20);  // A2 -> T1 A2
  set_rule(1, 1, 3, 0.10);  // A2 -> A2 T2
  // Floor impossible rules at a tiny probability so tables stay finite, then
  // renormalize each row exactly.
  for (int64_t a = 0; a < nn; ++a) {
    for (int64_t i = 0; i < s * s; ++i)
      if (!std::isfinite(binary->data[a * s * s + i])) binary->data[a * s * s + i] = std::log(1e-9);
    std::vector<double> row(binary->data.begin() + a * s * s,
                            binary->data.begin() + (a + 1) * s * s);
    const double lse = lse_reference(row);
    for (int64_t i = 0; i < s * s; ++i) binary->data[a * s * s + i] -= lse;
  }
  rules.binary = binary;

  auto terminal = Tensor::full({pp, vocab}, std::log(1e-9));
  auto set_words = [&](int64_t t, int64_t lo, int64_t hi, std::vector<double> weights) {
    double total = 0;
    for (double w : weights) total += w;
    for (int64_t w = lo; w <= hi; ++w)
      terminal->data[t * vocab + w] = std::log(weights[static_cast<size_t>(w - lo)] / total);
    std::vector<double> row(terminal->data.begin() + t * vocab,
                            terminal->data.begin() + (t + 1) * vocab);
    const double lse = lse_reference(row);
    for (int64_t w = 0; w < vocab; ++w) terminal->data[t * vocab + w] -= lse;
  };
  set_words(0, 0, 5, {8, 5, 3, 2, 1, 1});
  set_words(1, 6, 12, {6, 5, 4, 3, 2, 1, 1});
  set_words(2, 13, 19, {7, 5, 3, 2, 2, 1, 1});
  rules.terminal = terminal;
  return rules;
}

ExpectedCounts enumerate_expected_counts(const Sentence& sentence, const RuleLogProbs& rules) {
  const TableSizes sz = table_sizes(rules);
  const int64_t s = sz.num_symbols();
  ExpectedCounts counts;
  counts.root.assign(static_cast<size_t>(sz.num_nonterminals), 0.0);
  counts.binary.assign(static_cast<size_t>(sz.num_nonterminals * s * s), 0.0);
  counts.terminal.assign(static_cast<size_t>(sz.num_preterminals * sz.vocab_size), 0.0);

  const double logpx = brute_force_logprob(sentence, rules);
  enumerate_derivations(sentence, rules, [&](double lp, const std::vector<RuleUse>& uses) {
    const double w = std::exp(lp - logpx);  // posterior weight of this derivation
    for (const auto& u : uses) {
      switch (u.kind) {
        case RuleUse::Root:
          counts.root[static_cast<size_t>(u.a)] += w;
          break;
        case RuleUse::Binary:
          counts.binary[static_cast<size_t>(u.a * s * s + u.b * s + u.c)] += w;
          break;
        case RuleUse::Terminal:
          counts.terminal[static_cast<size_t>((u.a - sz.num_nonterminals) * sz.vocab_size + u.b)] +=
              w;
          break;
      }
    }
  });
  return counts;
}

double quadrature_logpx(const Model& model, const Sentence& sentence, double lo, double hi,
                        int64_t points) {
  if (model.kind != ModelKind::Compound || model.spec.z_dim != 1)
    throw std::runtime_error("quadrature_logpx: needs a compound model with z_dim == 1");
  const double h = (hi - lo) / static_cast<double>(points - 1);
  std::vector<double> terms;
  terms.reserve(static_cast<size_t>(points));
  for (int64_t i = 0; i < points; ++i) {
    const double z = lo + h * static_cast<double>(i);
    Tape tape(false);
    auto rules = compound_rule_logprobs(tape, model.grammar, Tensor::vector({z}));
    const double ll = inside_logprob(tape, sentence, rules)->value();
    double term = ll + log_standard_normal_density({z});
    if (i == 0 || i == points - 1) term -= std::log(2.0);  // trapezoid end weights
    terms.push_back(term);
  }
  return lse_reference(terms) + std::log(h);
}

double lse_reference(const std::vector<double>& xs) {
  long double m = -std::numeric_limits<long double>::infinity();
  for (double x : xs) m = std::max<long double>(m, x);
  if (!std::isfinite(static_cast<double>(m))) return -std::numeric_limits<double>::infinity();
  long double sum = 0.0L;
  for (double x : xs) sum += std::exp(static_cast<long double>(x) - m);
  return static_cast<double>(m + std::log(sum));
}

}  // namespace cpcfg::test
