#include "cpcfg/posterior.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cpcfg {

namespace {

namespace o = op;

TensorPtr lstm_step(Tape& tape, const LstmDirection& dir, const TensorPtr& x, TensorPtr& h,
                    TensorPtr& c) {
  const int64_t hd = dir.w_hh->dim(1);
  auto gates = o::add(tape, o::linear_vec(tape, x, dir.w_ih, dir.b_ih),
                      o::linear_vec(tape, h, dir.w_hh, dir.b_hh));
  auto i_gate = o::sigmoid(tape, o::slice_vec(tape, gates, 0, hd));
  auto f_gate = o::sigmoid(tape, o::slice_vec(tape, gates, hd, hd));
  auto g_gate = o::tanh(tape, o::slice_vec(tape, gates, 2 * hd, hd));
  auto o_gate = o::sigmoid(tape, o::slice_vec(tape, gates, 3 * hd, hd));
  c = o::add(tape, o::mul(tape, f_gate, c), o::mul(tape, i_gate, g_gate));
  h = o::mul(tape, o_gate, o::tanh(tape, c));
  return h;
}

}  // namespace

std::vector<std::pair<std::string, TensorPtr>> EncoderParams::parameters() const {
  std::vector<std::pair<std::string, TensorPtr>> out;
  out.emplace_back("enc.embedding", embedding);
  const LstmDirection* dirs[2] = {&fwd, &bwd};
  const char* names[2] = {"enc.fwd", "enc.bwd"};
  for (int d = 0; d < 2; ++d) {
    out.emplace_back(std::string(names[d]) + ".w_ih", dirs[d]->w_ih);
    out.emplace_back(std::string(names[d]) + ".w_hh", dirs[d]->w_hh);
    out.emplace_back(std::string(names[d]) + ".b_ih", dirs[d]->b_ih);
    out.emplace_back(std::string(names[d]) + ".b_hh", dirs[d]->b_hh);
  }
  out.emplace_back("enc.w_head", w_head);
  out.emplace_back("enc.b_head", b_head);
  return out;
}

bool EncoderParams::all_finite() const {
  for (const auto& [name, t] : parameters())
    if (!t->all_finite()) return false;
  return true;
}

EncoderParams make_encoder(int64_t vocab_size, int64_t embed_dim, int64_t hidden_dim,
                           int64_t z_dim, Rng& rng) {
  if (vocab_size < 1 || embed_dim < 1 || hidden_dim < 1 || z_dim < 1)
    throw std::runtime_error("make_encoder: all dims must be >= 1");
  EncoderParams p;
  p.vocab_size = vocab_size;
  p.embed_dim = embed_dim;
  p.hidden_dim = hidden_dim;
  p.z_dim = z_dim;
  p.embedding = xavier_uniform({vocab_size, embed_dim}, rng);
  for (LstmDirection* dir : {&p.fwd, &p.bwd}) {
    dir->w_ih = xavier_uniform({4 * hidden_dim, embed_dim}, rng);
    dir->w_hh = xavier_uniform({4 * hidden_dim, hidden_dim}, rng);
    dir->b_ih = Tensor::zeros({4 * hidden_dim}, true);
    dir->b_hh = Tensor::zeros({4 * hidden_dim}, true);
  }
  p.w_head = xavier_uniform({2 * z_dim, 2 * hidden_dim}, rng);
  p.b_head = Tensor::zeros({2 * z_dim}, true);
  return p;
}

GaussianPosterior encode(Tape& tape, const Sentence& sentence, const EncoderParams& params) {
  if (sentence.empty()) throw std::invalid_argument("encode: empty sentence");
  for (int64_t id : sentence)
    if (id < 0 || id >= params.vocab_size)
      throw std::invalid_argument("encode: unknown token id (map OOV to unk first)");

  const int64_t n = static_cast<int64_t>(sentence.size());
  auto embeds = o::gather_rows(tape, params.embedding, sentence);

  std::vector<TensorPtr> h_fwd(static_cast<size_t>(n)), h_bwd(static_cast<size_t>(n));
  auto h = Tensor::zeros({params.hidden_dim});
  auto c = Tensor::zeros({params.hidden_dim});
  for (int64_t t = 0; t < n; ++t)
    h_fwd[static_cast<size_t>(t)] = lstm_step(tape, params.fwd, o::row(tape, embeds, t), h, c);
  h = Tensor::zeros({params.hidden_dim});
  c = Tensor::zeros({params.hidden_dim});
  for (int64_t t = n - 1; t >= 0; --t)
    h_bwd[static_cast<size_t>(t)] = lstm_step(tape, params.bwd, o::row(tape, embeds, t), h, c);

  std::vector<TensorPtr> states;
  states.reserve(static_cast<size_t>(n));
  for (int64_t t = 0; t < n; ++t)
    states.push_back(
        o::concat_vec(tape, h_fwd[static_cast<size_t>(t)], h_bwd[static_cast<size_t>(t)]));

  auto pooled = o::max_over_rows(tape, o::concat_rows(tape, states));
  auto head = o::linear_vec(tape, pooled, params.w_head, params.b_head);

  GaussianPosterior q;
  q.mean = o::slice_vec(tape, head, 0, params.z_dim);
  q.log_variance = o::clamp(tape, o::slice_vec(tape, head, params.z_dim, params.z_dim), -10.0, 10.0);
  return q;
}

TensorPtr sample_posterior(Tape& tape, const GaussianPosterior& posterior, const TensorPtr& eps) {
  if (eps->shape != posterior.mean->shape)
    throw ShapeError("sample_posterior", eps->shape, posterior.mean->shape);
  auto sigma = o::exp(tape, o::scale(tape, posterior.log_variance, 0.5));
  return o::add(tape, posterior.mean, o::mul(tape, sigma, eps));
}

TensorPtr kl_to_standard_normal(Tape& tape, const GaussianPosterior& posterior) {
  auto mu_sq = o::mul(tape, posterior.mean, posterior.mean);
  auto var = o::exp(tape, posterior.log_variance);
  auto terms = o::sub(tape, o::add_const(tape, o::add(tape, mu_sq, var), -1.0),
                      posterior.log_variance);
  return o::scale(tape, o::sum(tape, terms), 0.5);
}

double log_standard_normal_density(const std::vector<double>& z) {
  double lp = 0.0;
  for (double v : z) lp += -0.5 * (v * v + std::log(2.0 * std::numbers::pi));
  return lp;
}

double log_gaussian_density(const std::vector<double>& z, const GaussianPosterior& posterior) {
  if (z.size() != posterior.mean->data.size())
    throw ShapeError("log_gaussian_density", {static_cast<int64_t>(z.size())},
                     posterior.mean->shape);
  double lp = 0.0;
  for (size_t d = 0; d < z.size(); ++d) {
    const double lv = posterior.log_variance->data[d];
    const double diff = z[d] - posterior.mean->data[d];
    lp += -0.5 * (diff * diff / std::exp(lv) + lv + std::log(2.0 * std::numbers::pi));
  }
  return lp;
}

}  // namespace cpcfg
