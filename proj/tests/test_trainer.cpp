#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "support.hpp"

using namespace cpcfg;
using cpcfg::test::sample_pcfg;
using cpcfg::test::synthetic_generator;
namespace o = op;

namespace {

std::vector<Sentence> synthetic_corpus(int count, uint64_t seed, int64_t max_len = 12) {
  Rng rng(seed);
  auto gen = synthetic_generator();
  std::vector<Sentence> out;
  while (static_cast<int>(out.size()) < count) {
    auto sample = sample_pcfg(gen, rng, max_len);
    if (sample) out.push_back(sample->sentence);
  }
  return out;
}

TrainConfig tiny_config(ModelKind kind) {
  TrainConfig c;
  c.model = kind;
  c.num_nonterminals = 2;
  c.num_preterminals = 3;
  c.symbol_dim = 8;
  c.z_dim = kind == ModelKind::Compound ? 2 : 0;
  c.encoder_embed_dim = 8;
  c.encoder_hidden_dim = 8;
  c.curriculum_start_len = 30;
  c.seed = 7;
  return c;
}

}  // namespace

TEST_CASE("config serialization round-trips and carries the defaults") {
  TrainConfig c;
  auto text = c.serialize();
  auto back = TrainConfig::deserialize(text);
  CHECK(back.serialize() == text);
  CHECK(back.adam_beta1 == 0.75);
  CHECK(back.adam_beta2 == 0.999);
  CHECK(back.learning_rate == 0.001);
  CHECK(back.grad_clip_norm == 3.0);
  CHECK(back.epochs == 10);
  CHECK(back.batch_size == 4);
  CHECK(back.curriculum_start_len == 30);
  CHECK(back.curriculum_increment == 1);
  CHECK(back.num_nonterminals == 30);
  CHECK(back.num_preterminals == 60);
  CHECK(back.symbol_dim == 256);
  CHECK(back.z_dim == 64);
  CHECK(back.encoder_hidden_dim == 512);
  CHECK(back.vocab_cap == 10000);
  CHECK(back.early_stop_metric == "validation_perplexity");
  CHECK_THROWS(TrainConfig::deserialize("nonsense line"));
}

TEST_CASE("adam with constant unit gradient shrinks the parameter within the step bound") {
  TrainConfig c = tiny_config(ModelKind::Neural);
  auto p = Tensor::scalar(1.0, true);
  std::vector<std::pair<std::string, TensorPtr>> params = {{"p", p}};
  auto state = AdamState::init(params);
  double prev = p->data[0];
  for (int step = 0; step < 10; ++step) {
    p->zero_grad();
    p->grad[0] = 1.0;
    CHECK(adam_step(params, state, c));
    // Constant gradients give m_hat / sqrt(v_hat) = 1, so each step moves by
    // at most the learning rate.
    CHECK(prev - p->data[0] <= c.learning_rate + 1e-15);
    CHECK(p->data[0] < prev);
    prev = p->data[0];
  }
}

TEST_CASE("global norm clipping scales gradients to the threshold") {
  auto a = Tensor::vector({3.0, 4.0}, true);  // norm 5
  auto b = Tensor::vector({0.0, 0.0}, true);
  a->ensure_grad();
  b->ensure_grad();
  a->grad = {18.0, 24.0};  // contributes 30^2 = 900
  b->grad = {0.0, 0.0};
  std::vector<std::pair<std::string, TensorPtr>> params = {{"a", a}, {"b", b}};
  const double norm = clip_global_norm(params, 3.0);
  CHECK(norm == doctest::Approx(30.0));
  CHECK(a->grad[0] == doctest::Approx(1.8).epsilon(1e-12));
  CHECK(a->grad[1] == doctest::Approx(2.4).epsilon(1e-12));
  double post = std::sqrt(a->grad[0] * a->grad[0] + a->grad[1] * a->grad[1]);
  CHECK(post <= 3.0 + 1e-9);
}

TEST_CASE("adam matches a hand-stepped reference trace") {
  TrainConfig c = tiny_config(ModelKind::Neural);
  c.grad_clip_norm = 100.0;  // keep clipping out of the trace
  auto p = Tensor::scalar(1.0, true);
  std::vector<std::pair<std::string, TensorPtr>> params = {{"p", p}};
  auto state = AdamState::init(params);
  const double hand_stepped[3] = {0.99900000002, 0.998819271319089, 0.9981044077787697};
  const double grads[3] = {0.5, -0.25, 1.0};
  for (int t = 0; t < 3; ++t) {
    p->zero_grad();
    p->grad[0] = grads[t];
    CHECK(adam_step(params, state, c));
    CHECK(std::abs(p->data[0] - hand_stepped[t]) < 1e-12);
  }
}

TEST_CASE("adam aborts the step on non-finite gradients") {
  TrainConfig c = tiny_config(ModelKind::Neural);
  auto p = Tensor::scalar(1.0, true);
  std::vector<std::pair<std::string, TensorPtr>> params = {{"p", p}};
  auto state = AdamState::init(params);
  p->ensure_grad();
  p->grad[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(adam_step(params, state, c));
  CHECK(p->data[0] == 1.0);
  CHECK(state.step == 0);
}

TEST_CASE("neural objective delegates to the inside algorithm") {
  Rng rng(3);
  GrammarSpec spec;
  spec.num_nonterminals = 2;
  spec.num_preterminals = 2;
  spec.vocab_size = 5;
  spec.symbol_dim = 4;
  auto g = make_neural_grammar(spec, rng);
  const Sentence x = {0, 3, 2};
  Tape t1(false), t2(false);
  CHECK(neural_objective(t1, x, g)->value() ==
        inside_logprob(t2, x, neural_rule_logprobs(t2, g))->value());
}

TEST_CASE("elbo reduces to the conditional likelihood when the posterior is standard") {
  Model m = make_model(ModelKind::Compound,
                       {.num_nonterminals = 1, .num_preterminals = 2, .vocab_size = 4,
                        .symbol_dim = 4, .z_dim = 2},
                       4, 4, 11);
  // Zero head: mean = 0, log variance = 0, so KL = 0 and z = eps.
  std::fill(m.encoder.w_head->data.begin(), m.encoder.w_head->data.end(), 0.0);
  std::fill(m.encoder.b_head->data.begin(), m.encoder.b_head->data.end(), 0.0);
  Rng rng(5);
  auto eps = normal_tensor({2}, rng);
  const Sentence x = {1, 3, 0};
  Tape t1(false), t2(false);
  const double e = elbo(t1, x, m.grammar, m.encoder, eps)->value();
  const double ll =
      inside_logprob(t2, x, compound_rule_logprobs(t2, m.grammar, eps))->value();
  CHECK(e == doctest::Approx(ll).epsilon(1e-14));
}

TEST_CASE("averaged elbo lower-bounds the quadrature marginal likelihood") {
  Model m = make_model(ModelKind::Compound,
                       {.num_nonterminals = 1, .num_preterminals = 2, .vocab_size = 3,
                        .symbol_dim = 3, .z_dim = 1},
                       3, 3, 13);
  const Sentence x = {0, 2};
  const double logpx = cpcfg::test::quadrature_logpx(m, x);
  Rng rng(17);
  double acc = 0.0;
  const int draws = 64;
  Tape tape(false);
  for (int i = 0; i < draws; ++i)
    acc += elbo(tape, x, m.grammar, m.encoder, normal_tensor({1}, rng))->value();
  CHECK(acc / draws <= logpx + 1e-2);
}

TEST_CASE("full elbo gradient passes finite differences") {
  Model m = make_model(ModelKind::Compound,
                       {.num_nonterminals = 1, .num_preterminals = 1, .vocab_size = 2,
                        .symbol_dim = 2, .z_dim = 1},
                       2, 2, 19);
  Rng rng(23);
  auto eps = normal_tensor({1}, rng);
  const Sentence x = {0, 1};
  std::vector<TensorPtr> params;
  for (auto& [name, t] : m.parameters()) params.push_back(t);
  // Zero-initialized biases put relu pre-activations exactly on the kink,
  // where finite differences disagree by construction; jitter off it.
  for (auto& t : params)
    for (auto& v : t->data) v += rng.uniform(0.05, 0.2) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  auto check = cpcfg::test::gradcheck(
      params, [&](Tape& t) { return elbo(t, x, m.grammar, m.encoder, eps); }, 1e-5, 1e-5);
  INFO(check.worst);
  CHECK(check.ok);
}

TEST_CASE("training objective improves over full-batch steps") {
  auto corpus = synthetic_corpus(50, 31);
  TrainConfig c = tiny_config(ModelKind::Neural);
  c.epochs = 20;
  c.batch_size = 50;  // full batch: one Adam step per epoch
  auto result = train(c, corpus, corpus, 20);
  REQUIRE(result.log.size() == 20);
  int drops = 0;
  for (size_t e = 1; e < result.log.size(); ++e)
    if (result.log[e].train_objective < result.log[e - 1].train_objective - 1e-9) ++drops;
  CHECK(drops <= 2);
  CHECK(result.log.back().train_objective > result.log.front().train_objective);
}

TEST_CASE("curriculum visits exactly the length-filtered sentences") {
  std::vector<Sentence> corpus;
  Rng rng(37);
  for (int64_t len : {28, 30, 31, 31, 32, 5}) {
    Sentence x;
    for (int64_t i = 0; i < len; ++i) x.push_back(rng.below(20));
    corpus.push_back(x);
  }
  TrainConfig c = tiny_config(ModelKind::Neural);
  c.epochs = 3;
  std::vector<std::vector<size_t>> visited_per_epoch;
  TrainHooks hooks;
  hooks.on_epoch = [&](int64_t, int64_t, const std::vector<size_t>& visited) {
    visited_per_epoch.push_back(visited);
  };
  train(c, corpus, {corpus[5]}, 20, hooks);
  REQUIRE(visited_per_epoch.size() == 3);
  CHECK(visited_per_epoch[0] == std::vector<size_t>{0, 1, 5});        // max_len 30
  CHECK(visited_per_epoch[1] == std::vector<size_t>{0, 1, 2, 3, 5});  // max_len 31 includes 31s
  CHECK(visited_per_epoch[2] == std::vector<size_t>{0, 1, 2, 3, 4, 5});
}

TEST_CASE("an empty curriculum slice warns and skips the epoch") {
  std::vector<Sentence> corpus;
  Rng rng(43);
  for (int i = 0; i < 4; ++i) {
    Sentence x;
    for (int64_t t = 0; t < 6; ++t) x.push_back(rng.below(20));
    corpus.push_back(x);
  }
  TrainConfig c = tiny_config(ModelKind::Neural);
  c.curriculum_start_len = 2;  // epochs 1..4 see nothing until length 6
  c.epochs = 5;
  auto result = train(c, corpus, corpus, 20);
  REQUIRE(result.log.size() == 5);
  for (int e = 0; e < 4; ++e) CHECK(std::isnan(result.log[e].train_objective));
  CHECK_FALSE(std::isnan(result.log[4].train_objective));
}

TEST_CASE("early stopping keeps the checkpoint with minimum validation perplexity") {
  auto corpus = synthetic_corpus(30, 41);
  auto val = synthetic_corpus(10, 47);
  TrainConfig c = tiny_config(ModelKind::Neural);
  c.epochs = 5;
  auto result = train(c, corpus, val, 20);
  double best = std::numeric_limits<double>::infinity();
  int64_t best_epoch = 0;
  for (const auto& e : result.log)
    if (e.val_perplexity < best) {
      best = e.val_perplexity;
      best_epoch = e.epoch;
    }
  CHECK(result.best_epoch == best_epoch);
  CHECK(result.best_val_perplexity == best);
  // The returned model reproduces the best epoch's validation perplexity.
  CHECK(validation_perplexity(result.model, val, c.seed + 0xe4a1) ==
        doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("identical config and corpus give byte-identical checkpoints") {
  auto corpus = synthetic_corpus(16, 53);
  auto val = synthetic_corpus(6, 59);
  for (ModelKind kind : {ModelKind::Neural, ModelKind::Compound, ModelKind::Scalar}) {
    TrainConfig c = tiny_config(kind);
    c.epochs = 2;
    auto r1 = train(c, corpus, val, 20);
    auto r2 = train(c, corpus, val, 20);
    const auto p1 = r1.model.parameters();
    const auto p2 = r2.model.parameters();
    REQUIRE(p1.size() == p2.size());
    for (size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].second->data == p2[i].second->data);

    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path();
    const std::string f1 = (dir / "cpcfg_repro_1.ckpt").string();
    const std::string f2 = (dir / "cpcfg_repro_2.ckpt").string();
    save_checkpoint(r1.model, f1);
    save_checkpoint(r2.model, f2);
    std::ifstream a(f1, std::ios::binary), b(f2, std::ios::binary);
    std::string ba((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string bb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(ba == bb);
    fs::remove(f1);
    fs::remove(f2);
  }
}

TEST_CASE("checkpoints round-trip through save and load") {
  auto corpus = synthetic_corpus(8, 61);
  TrainConfig c = tiny_config(ModelKind::Compound);
  c.epochs = 1;
  auto result = train(c, corpus, corpus, 20);
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "cpcfg_roundtrip.ckpt").string();
  save_checkpoint(result.model, path);
  Model loaded = load_checkpoint(path);
  CHECK(loaded.kind == ModelKind::Compound);
  CHECK(loaded.spec.z_dim == 2);
  const auto p1 = result.model.parameters();
  const auto p2 = loaded.parameters();
  REQUIRE(p1.size() == p2.size());
  for (size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i].first == p2[i].first);
    CHECK(p1[i].second->data == p2[i].second->data);
  }
  fs::remove(path);
}
