#include "cpcfg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cpcfg {

namespace {

namespace o = op;

std::vector<std::pair<std::string, std::string>> config_fields(const TrainConfig& c) {
  auto num = [](auto v) { return std::to_string(v); };
  auto real = [](double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  };
  return {
      {"model", model_kind_name(c.model)},
      {"epochs", num(c.epochs)},
      {"batch_size", num(c.batch_size)},
      {"learning_rate", real(c.learning_rate)},
      {"adam_beta1", real(c.adam_beta1)},
      {"adam_beta2", real(c.adam_beta2)},
      {"adam_eps", real(c.adam_eps)},
      {"grad_clip_norm", real(c.grad_clip_norm)},
      {"curriculum_start_len", num(c.curriculum_start_len)},
      {"curriculum_increment", num(c.curriculum_increment)},
      {"seed", num(c.seed)},
      {"early_stop_metric", c.early_stop_metric},
      {"checkpoint_path", c.checkpoint_path},
      {"num_nonterminals", num(c.num_nonterminals)},
      {"num_preterminals", num(c.num_preterminals)},
      {"symbol_dim", num(c.symbol_dim)},
      {"z_dim", num(c.z_dim)},
      {"encoder_embed_dim", num(c.encoder_embed_dim)},
      {"encoder_hidden_dim", num(c.encoder_hidden_dim)},
      {"vocab_cap", num(c.vocab_cap)},
  };
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw std::runtime_error("TrainConfig: epochs/batch_size >= 1");
  if (learning_rate <= 0 || adam_beta1 <= 0 || adam_beta2 <= 0 || grad_clip_norm <= 0)
    throw std::runtime_error("TrainConfig: rates must be positive");
  if (curriculum_start_len < 2) throw std::runtime_error("TrainConfig: curriculum_start_len >= 2");
  if (num_nonterminals < 1 || num_preterminals < 1 || symbol_dim < 1 || vocab_cap < 1)
    throw std::runtime_error("TrainConfig: grammar sizes must be >= 1");
  if (model == ModelKind::Compound && z_dim < 1)
    throw std::runtime_error("TrainConfig: compound model needs z_dim >= 1");
}

std::string TrainConfig::serialize() const {
  std::ostringstream os;
  for (const auto& [k, v] : config_fields(*this)) os << k << '=' << v << '\n';
  return os.str();
}

TrainConfig TrainConfig::deserialize(const std::string& text) {
  TrainConfig c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "model")
      c.model = model_kind_from_name(val);
    else if (key == "epochs")
      c.epochs = std::stoll(val);
    else if (key == "batch_size")
      c.batch_size = std::stoll(val);
    else if (key == "learning_rate")
      c.learning_rate = std::stod(val);
    else if (key == "adam_beta1")
      c.adam_beta1 = std::stod(val);
    else if (key == "adam_beta2")
      c.adam_beta2 = std::stod(val);
    else if (key == "adam_eps")
      c.adam_eps = std::stod(val);
    else if (key == "grad_clip_norm")
      c.grad_clip_norm = std::stod(val);
    else if (key == "curriculum_start_len")
      c.curriculum_start_len = std::stoll(val);
    else if (key == "curriculum_increment")
      c.curriculum_increment = std::stoll(val);
    else if (key == "seed")
      c.seed = std::stoull(val);
    else if (key == "early_stop_metric")
      c.early_stop_metric = val;
    else if (key == "checkpoint_path")
      c.checkpoint_path = val;
    else if (key == "num_nonterminals")
      c.num_nonterminals = std::stoll(val);
    else if (key == "num_preterminals")
      c.num_preterminals = std::stoll(val);
    else if (key == "symbol_dim")
      c.symbol_dim = std::stoll(val);
    else if (key == "z_dim")
      c.z_dim = std::stoll(val);
    else if (key == "encoder_embed_dim")
      c.encoder_embed_dim = std::stoll(val);
    else if (key == "encoder_hidden_dim")
      c.encoder_hidden_dim = std::stoll(val);
    else if (key == "vocab_cap")
      c.vocab_cap = std::stoll(val);
    else
      throw std::runtime_error("config line " + std::to_string(lineno) + ": unknown key " + key);
  }
  return c;
}

GrammarSpec TrainConfig::grammar_spec(int64_t vocab_size) const {
  GrammarSpec spec;
  spec.num_nonterminals = num_nonterminals;
  spec.num_preterminals = num_preterminals;
  spec.vocab_size = vocab_size;
  spec.symbol_dim = symbol_dim;
  spec.z_dim = model == ModelKind::Compound ? z_dim : 0;
  return spec;
}

AdamState AdamState::init(const std::vector<std::pair<std::string, TensorPtr>>& params) {
  AdamState state;
  state.slots.reserve(params.size());
  for (const auto& [name, t] : params) {
    Slot slot;
    slot.m.assign(t->data.size(), 0.0);
    slot.v.assign(t->data.size(), 0.0);
    state.slots.push_back(std::move(slot));
  }
  return state;
}

double clip_global_norm(const std::vector<std::pair<std::string, TensorPtr>>& params,
                        double clip) {
  double sq = 0.0;
  for (const auto& [name, t] : params) {
    t->ensure_grad();
    for (double g : t->grad) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > clip && norm > 0.0) {
    const double scale = clip / norm;
    for (const auto& [name, t] : params)
      for (double& g : t->grad) g *= scale;
  }
  return norm;
}

bool adam_step(const std::vector<std::pair<std::string, TensorPtr>>& params, AdamState& state,
               const TrainConfig& config) {
  if (params.size() != state.slots.size())
    throw std::runtime_error("adam_step: state/parameter count mismatch");
  for (const auto& [name, t] : params) {
    t->ensure_grad();
    for (double g : t->grad)
      if (!std::isfinite(g)) return false;
  }
  clip_global_norm(params, config.grad_clip_norm);
  state.step += 1;
  const double bc1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(state.step));
  for (size_t p = 0; p < params.size(); ++p) {
    auto& t = params[p].second;
    auto& slot = state.slots[p];
    for (size_t i = 0; i < t->data.size(); ++i) {
      const double g = t->grad[i];
      slot.m[i] = config.adam_beta1 * slot.m[i] + (1.0 - config.adam_beta1) * g;
      slot.v[i] = config.adam_beta2 * slot.v[i] + (1.0 - config.adam_beta2) * g * g;
      const double m_hat = slot.m[i] / bc1;
      const double v_hat = slot.v[i] / bc2;
      t->data[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_eps);
    }
  }
  return true;
}

TensorPtr elbo(Tape& tape, const Sentence& sentence, const GrammarParams& grammar,
               const EncoderParams& encoder, const TensorPtr& eps) {
  auto q = encode(tape, sentence, encoder);
  auto z = sample_posterior(tape, q, eps);
  auto rules = compound_rule_logprobs(tape, grammar, z);
  auto ll = inside_logprob(tape, sentence, rules);
  auto kl = kl_to_standard_normal(tape, q);
  return o::sub(tape, ll, kl);
}

TensorPtr neural_objective(Tape& tape, const Sentence& sentence, const GrammarParams& grammar) {
  return inside_logprob(tape, sentence, rule_logprobs(tape, grammar));
}

namespace {

double sentence_objective_value(const Model& model, const Sentence& sentence, Rng& eps_rng) {
  Tape tape(false);
  if (model.kind == ModelKind::Compound) {
    auto eps = normal_tensor({model.spec.z_dim}, eps_rng);
    return elbo(tape, sentence, model.grammar, model.encoder, eps)->value();
  }
  return neural_objective(tape, sentence, model.grammar)->value();
}

}  // namespace

double validation_perplexity(const Model& model, const std::vector<Sentence>& sentences,
                             uint64_t eps_seed) {
  Rng eps_rng(eps_seed);
  double total = 0.0;
  int64_t tokens = 0;
  for (const auto& x : sentences) {
    total += sentence_objective_value(model, x, eps_rng);
    tokens += static_cast<int64_t>(x.size());
  }
  if (tokens == 0) return std::numeric_limits<double>::infinity();
  return std::exp(-total / static_cast<double>(tokens));
}

TrainResult train(const TrainConfig& config, const std::vector<Sentence>& train_sentences,
                  const std::vector<Sentence>& val_sentences, int64_t vocab_size,
                  const TrainHooks& hooks) {
  config.validate();
  Model model = make_model(config.model, config.grammar_spec(vocab_size),
                           config.encoder_embed_dim, config.encoder_hidden_dim, config.seed);
  auto params = model.parameters();
  AdamState adam = AdamState::init(params);
  Rng train_rng(config.seed + 0x5eed);

  TrainResult result{model.clone(), {}, 0, std::numeric_limits<double>::infinity()};
  int64_t consecutive_skips = 0;

  for (int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const int64_t max_len =
        config.curriculum_start_len + (epoch - 1) * config.curriculum_increment;

    std::vector<size_t> visited;
    for (size_t i = 0; i < train_sentences.size(); ++i)
      if (static_cast<int64_t>(train_sentences[i].size()) <= max_len) visited.push_back(i);
    if (hooks.on_epoch) hooks.on_epoch(epoch, max_len, visited);

    double epoch_obj = 0.0;
    if (visited.empty()) {
      std::cerr << "warning: epoch " << epoch << " has no sentences of length <= " << max_len
                << ", skipping\n";
      epoch_obj = std::numeric_limits<double>::quiet_NaN();
    } else {
      // Same-length sentences grouped into batches; batch order shuffled.
      std::map<int64_t, std::vector<size_t>> by_len;
      for (size_t i : visited) by_len[static_cast<int64_t>(train_sentences[i].size())].push_back(i);
      std::vector<std::vector<size_t>> batches;
      for (auto& [len, idxs] : by_len)
        for (size_t at = 0; at < idxs.size(); at += static_cast<size_t>(config.batch_size)) {
          const size_t end = std::min(idxs.size(), at + static_cast<size_t>(config.batch_size));
          batches.emplace_back(idxs.begin() + static_cast<std::ptrdiff_t>(at),
                               idxs.begin() + static_cast<std::ptrdiff_t>(end));
        }
      for (size_t i = batches.size(); i > 1; --i)
        std::swap(batches[i - 1], batches[static_cast<size_t>(train_rng.below(static_cast<int64_t>(i)))]);

      double obj_sum = 0.0;
      int64_t obj_count = 0;
      for (const auto& batch : batches) {
        Tape tape;
        std::vector<TensorPtr> losses;
        RuleLogProbs shared_rules;
        if (model.kind != ModelKind::Compound)
          shared_rules = rule_logprobs(tape, model.grammar);
        for (size_t idx : batch) {
          const Sentence& x = train_sentences[idx];
          TensorPtr obj;
          if (model.kind == ModelKind::Compound) {
            auto eps = normal_tensor({model.spec.z_dim}, train_rng);
            obj = elbo(tape, x, model.grammar, model.encoder, eps);
          } else {
            obj = inside_logprob(tape, x, shared_rules);
          }
          losses.push_back(obj);
        }
        // Mean per-sentence objective; loss = -mean.
        TensorPtr total = losses[0];
        for (size_t i = 1; i < losses.size(); ++i) total = o::add(tape, total, losses[i]);
        auto loss = o::scale(tape, total, -1.0 / static_cast<double>(losses.size()));

        if (!std::isfinite(loss->value())) {
          std::cerr << "warning: non-finite loss, skipping batch\n";
          if (++consecutive_skips >= 50)
            throw std::runtime_error("train: aborted after 50 consecutive skipped batches");
          continue;
        }
        for (auto& [name, t] : params) t->zero_grad();
        tape.backward(loss);
        if (!adam_step(params, adam, config)) {
          std::cerr << "warning: non-finite gradient, skipping batch\n";
          if (++consecutive_skips >= 50)
            throw std::runtime_error("train: aborted after 50 consecutive skipped batches");
          continue;
        }
        consecutive_skips = 0;
        obj_sum += -loss->value() * static_cast<double>(losses.size());
        obj_count += static_cast<int64_t>(losses.size());
      }
      epoch_obj = obj_count > 0 ? obj_sum / static_cast<double>(obj_count)
                                : std::numeric_limits<double>::quiet_NaN();
    }

    const double val_ppl = validation_perplexity(model, val_sentences, config.seed + 0xe4a1);
    result.log.push_back({epoch, max_len, epoch_obj, val_ppl});
    if (val_ppl < result.best_val_perplexity) {
      result.best_val_perplexity = val_ppl;
      result.best_epoch = epoch;
      result.model = model.clone();
    }
  }
  if (!std::isfinite(result.best_val_perplexity)) result.model = model.clone();
  return result;
}

void write_train_log(const std::vector<EpochLog>& log, std::ostream& os) {
  os << "epoch\tmax_len\ttrain_objective\tval_perplexity\n";
  for (const auto& e : log)
    os << e.epoch << '\t' << e.max_len << '\t' << e.train_objective << '\t' << e.val_perplexity
       << '\n';
}

}  // namespace cpcfg
