#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cpcfg/model.hpp"

namespace cpcfg {

struct TrainConfig {
  ModelKind model = ModelKind::Neural;
  int64_t epochs = 10;
  int64_t batch_size = 4;
  double learning_rate = 0.001;
  double adam_beta1 = 0.75;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_norm = 3.0;
  int64_t curriculum_start_len = 30;
  int64_t curriculum_increment = 1;
  uint64_t seed = 1;
  std::string early_stop_metric = "validation_perplexity";
  std::string checkpoint_path = "model.ckpt";

  int64_t num_nonterminals = 30;
  int64_t num_preterminals = 60;
  int64_t symbol_dim = 256;
  int64_t z_dim = 64;
  int64_t encoder_embed_dim = 256;
  int64_t encoder_hidden_dim = 512;
  int64_t vocab_cap = 10000;

  void validate() const;
  std::string serialize() const;  // flat key=value lines, fixed order
  static TrainConfig deserialize(const std::string& text);
  GrammarSpec grammar_spec(int64_t vocab_size) const;
};

/// Per-parameter Adam moments; shapes mirror the parameter shapes.
struct AdamState {
  struct Slot {
    std::vector<double> m, v;
  };
  std::vector<Slot> slots;
  int64_t step = 0;

  static AdamState init(const std::vector<std::pair<std::string, TensorPtr>>& params);
};

/// Scales all gradients by clip/norm when the global norm exceeds clip.
/// Returns the pre-clip norm.
double clip_global_norm(const std::vector<std::pair<std::string, TensorPtr>>& params,
                        double clip);

/// Standard Adam update with bias correction, applied after global-norm
/// clipping. Returns false (and touches nothing) when any gradient is
/// non-finite.
bool adam_step(const std::vector<std::pair<std::string, TensorPtr>>& params, AdamState& state,
               const TrainConfig& config);

/// ELBO for one sentence of the compound model: inside log-likelihood at the
/// reparameterized sample minus the analytic KL.
TensorPtr elbo(Tape& tape, const Sentence& sentence, const GrammarParams& grammar,
               const EncoderParams& encoder, const TensorPtr& eps);

/// Log marginal likelihood for the neural/scalar models; maximizing it is
/// exact MLE.
TensorPtr neural_objective(Tape& tape, const Sentence& sentence, const GrammarParams& grammar);

struct EpochLog {
  int64_t epoch = 0;
  int64_t max_len = 0;
  double train_objective = 0.0;
  double val_perplexity = 0.0;
};

struct TrainResult {
  Model model;  // best checkpoint by validation perplexity
  std::vector<EpochLog> log;
  int64_t best_epoch = 0;
  double best_val_perplexity = 0.0;
};

struct TrainHooks {
  /// Called once per epoch with the exact set of training sentence indices
  /// visited under the curriculum filter.
  std::function<void(int64_t epoch, int64_t max_len, const std::vector<size_t>& visited)>
      on_epoch;
};

/// Full training loop: curriculum length filter per epoch, same-length batch
/// grouping with seeded shuffling, Adam with clipping, per-epoch validation
/// perplexity (exact for neural/scalar, ELBO-based upper bound for compound),
/// best-checkpoint selection. Deterministic given config + corpus.
TrainResult train(const TrainConfig& config, const std::vector<Sentence>& train_sentences,
                  const std::vector<Sentence>& val_sentences, int64_t vocab_size,
                  const TrainHooks& hooks = {});

void write_train_log(const std::vector<EpochLog>& log, std::ostream& os);

/// exp(-sum objective / sum tokens); exact log-likelihood objective for
/// neural/scalar, single-sample ELBO for compound (upper bound on true
/// perplexity, used for model selection).
double validation_perplexity(const Model& model, const std::vector<Sentence>& sentences,
                             uint64_t eps_seed);

}  // namespace cpcfg
