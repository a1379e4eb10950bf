#pragma once

#include <utility>
#include <vector>

#include "cpcfg/chart.hpp"
#include "cpcfg/rng.hpp"
#include "cpcfg/tensor.hpp"

namespace cpcfg {

/// Diagonal Gaussian q(z|x). log_variance is clamped to [-10, 10] by encode().
struct GaussianPosterior {
  TensorPtr mean;          // [z_dim]
  TensorPtr log_variance;  // [z_dim]
};

struct LstmDirection {
  TensorPtr w_ih;  // [4H, E], gate order i, f, g, o
  TensorPtr w_hh;  // [4H, H]
  TensorPtr b_ih;  // [4H]
  TensorPtr b_hh;  // [4H]
};

/// Amortized inference network: word embeddings, single-layer bidirectional
/// LSTM, max-pool over time, affine head producing mean and log-variance.
/// Encoder embeddings are separate from the grammar's terminal embeddings.
struct EncoderParams {
  int64_t vocab_size = 0;
  int64_t embed_dim = 0;
  int64_t hidden_dim = 0;  // per direction
  int64_t z_dim = 0;

  TensorPtr embedding;  // [vocab, E]
  LstmDirection fwd, bwd;
  TensorPtr w_head;  // [2 * z_dim, 2H]
  TensorPtr b_head;  // [2 * z_dim]

  std::vector<std::pair<std::string, TensorPtr>> parameters() const;
  bool all_finite() const;
};

EncoderParams make_encoder(int64_t vocab_size, int64_t embed_dim, int64_t hidden_dim,
                           int64_t z_dim, Rng& rng);

GaussianPosterior encode(Tape& tape, const Sentence& sentence, const EncoderParams& params);

/// Reparameterized draw z = mean + exp(log_variance / 2) * eps.
TensorPtr sample_posterior(Tape& tape, const GaussianPosterior& posterior, const TensorPtr& eps);

/// Analytic KL(q || N(0, I)) = 1/2 sum(mu^2 + sigma^2 - 1 - log sigma^2).
TensorPtr kl_to_standard_normal(Tape& tape, const GaussianPosterior& posterior);

/// Densities used by the importance-weighted estimator.
double log_standard_normal_density(const std::vector<double>& z);
double log_gaussian_density(const std::vector<double>& z, const GaussianPosterior& posterior);

}  // namespace cpcfg
