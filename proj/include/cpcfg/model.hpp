#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cpcfg/grammar.hpp"
#include "cpcfg/posterior.hpp"

namespace cpcfg {

/// A trained (or trainable) model: grammar parameters plus, for the compound
/// kind, the amortized inference network.
struct Model {
  ModelKind kind = ModelKind::Neural;
  GrammarSpec spec;
  uint64_t seed = 0;
  GrammarParams grammar;
  EncoderParams encoder;  // populated only for compound

  bool has_encoder() const { return kind == ModelKind::Compound; }

  /// Named parameters in fixed registration order (checkpoint layout order).
  std::vector<std::pair<std::string, TensorPtr>> parameters() const;

  Model clone() const;
};

Model make_model(ModelKind kind, GrammarSpec spec, int64_t encoder_embed_dim,
                 int64_t encoder_hidden_dim, uint64_t seed);

/// Binary checkpoint: little-endian, row-major; named tensors with shapes
/// plus grammar metadata and the RNG seed. Byte-identical for identical
/// models.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace cpcfg
