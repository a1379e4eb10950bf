#include "cpcfg/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace cpcfg {

namespace {

constexpr char kMagic[4] = {'C', 'P', 'F', 'G'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

void write_i64(std::ostream& os, int64_t v) { write_u64(os, static_cast<uint64_t>(v)); }

void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<uint64_t>(v)); }

uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

int64_t read_i64(std::istream& is) { return static_cast<int64_t>(read_u64(is)); }

double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const uint32_t len = read_u32(is);
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

}  // namespace

std::vector<std::pair<std::string, TensorPtr>> Model::parameters() const {
  auto out = grammar.parameters();
  if (has_encoder()) {
    auto enc = encoder.parameters();
    out.insert(out.end(), enc.begin(), enc.end());
  }
  return out;
}

Model Model::clone() const {
  Model copy = *this;
  // GrammarParams/EncoderParams hold shared_ptrs; rebuild tensors so the
  // clone owns independent storage.
  auto deep = [](TensorPtr& t) {
    if (t) t = Tensor::from(t->shape, t->data, t->requires_grad);
  };
  auto deep_mlp = [&](Mlp& m) {
    deep(m.w);
    deep(m.b);
    for (ResidualBlock* blk : {&m.block1, &m.block2}) {
      deep(blk->u);
      deep(blk->p);
      deep(blk->v);
      deep(blk->q);
    }
  };
  deep(copy.grammar.score_root);
  deep(copy.grammar.score_binary);
  deep(copy.grammar.score_terminal);
  deep(copy.grammar.w_start);
  deep(copy.grammar.w_nt);
  deep(copy.grammar.w_pt);
  deep(copy.grammar.u_nt);
  deep(copy.grammar.u_rule);
  deep(copy.grammar.u_word);
  deep(copy.grammar.b_nt);
  deep(copy.grammar.b_rule);
  deep(copy.grammar.b_word);
  deep_mlp(copy.grammar.f1);
  deep_mlp(copy.grammar.f2);
  if (has_encoder()) {
    deep(copy.encoder.embedding);
    for (LstmDirection* dir : {&copy.encoder.fwd, &copy.encoder.bwd}) {
      deep(dir->w_ih);
      deep(dir->w_hh);
      deep(dir->b_ih);
      deep(dir->b_hh);
    }
    deep(copy.encoder.w_head);
    deep(copy.encoder.b_head);
  }
  return copy;
}

Model make_model(ModelKind kind, GrammarSpec spec, int64_t encoder_embed_dim,
                 int64_t encoder_hidden_dim, uint64_t seed) {
  Model m;
  m.kind = kind;
  m.seed = seed;
  Rng rng(seed);
  switch (kind) {
    case ModelKind::Scalar:
      spec.z_dim = 0;
      m.grammar = make_scalar_grammar(spec, rng);
      break;
    case ModelKind::Neural:
      spec.z_dim = 0;
      m.grammar = make_neural_grammar(spec, rng);
      break;
    case ModelKind::Compound:
      m.grammar = make_compound_grammar(spec, rng);
      m.encoder = make_encoder(spec.vocab_size, encoder_embed_dim, encoder_hidden_dim,
                               spec.z_dim, rng);
      break;
  }
  m.spec = spec;
  return m;
}

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u32(os, static_cast<uint32_t>(model.kind));
  write_i64(os, model.spec.num_nonterminals);
  write_i64(os, model.spec.num_preterminals);
  write_i64(os, model.spec.vocab_size);
  write_i64(os, model.spec.symbol_dim);
  write_i64(os, model.spec.z_dim);
  write_i64(os, model.has_encoder() ? model.encoder.embed_dim : 0);
  write_i64(os, model.has_encoder() ? model.encoder.hidden_dim : 0);
  write_u64(os, model.seed);

  const auto params = model.parameters();
  write_u64(os, params.size());
  for (const auto& [name, t] : params) {
    write_string(os, name);
    write_u32(os, static_cast<uint32_t>(t->ndim()));
    for (int64_t d : t->shape) write_i64(os, d);
    for (double v : t->data) write_f64(os, v);
  }
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  if (read_u32(is) != kVersion) throw std::runtime_error("load_checkpoint: unsupported version");
  const auto kind = static_cast<ModelKind>(read_u32(is));

  GrammarSpec spec;
  spec.num_nonterminals = read_i64(is);
  spec.num_preterminals = read_i64(is);
  spec.vocab_size = read_i64(is);
  spec.symbol_dim = read_i64(is);
  spec.z_dim = read_i64(is);
  const int64_t enc_embed = read_i64(is);
  const int64_t enc_hidden = read_i64(is);
  const uint64_t seed = read_u64(is);

  Model model = make_model(kind, spec, std::max<int64_t>(enc_embed, 1),
                           std::max<int64_t>(enc_hidden, 1), seed);

  const uint64_t count = read_u64(is);
  std::map<std::string, TensorPtr> by_name;
  for (const auto& [name, t] : model.parameters()) by_name[name] = t;
  if (count != by_name.size())
    throw std::runtime_error("load_checkpoint: tensor count mismatch in " + path);
  for (uint64_t i = 0; i < count; ++i) {
    const std::string name = read_string(is);
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("load_checkpoint: unexpected tensor " + name);
    const uint32_t ndim = read_u32(is);
    Shape shape(ndim);
    for (auto& d : shape) d = read_i64(is);
    if (shape != it->second->shape)
      throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
    for (double& v : it->second->data) v = read_f64(is);
  }
  return model;
}

}  // namespace cpcfg
