#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dhmlm/common/rng.hpp"
#include "dhmlm/ndgrad/ops.hpp"
#include "dhmlm/ndgrad/parameter.hpp"
#include "dhmlm/synlang/inventory.hpp"

namespace dhmlm::models {

using synlang::TokenId;
using ndgrad::Tape;
using ndgrad::Tensor;
using ndgrad::Var;

struct TransformerConfig {
    std::size_t num_layers = 2;
    std::size_t num_heads = 4;
    std::size_t model_dim = 128;
    std::size_t ff_dim = 512;
    std::size_t max_positions = 65;
    std::size_t vocab_size = 0;
    double dropout = 0.1;

    void validate() const;
    friend bool operator==(const TransformerConfig&, const TransformerConfig&) = default;
};

nlohmann::json to_json(const TransformerConfig& cfg);
TransformerConfig transformer_config_from_json(const nlohmann::json& j);

/// Padded token batch, row-major [batch, seq]. valid marks real tokens.
struct TokenBatch {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::vector<TokenId> ids;
    std::vector<std::uint8_t> valid;

    TokenId at(std::size_t b, std::size_t s) const { return ids[b * seq + s]; }
};

/// Lays out [CLS] + tokens (when prepend_cls) and pads with PAD to the longest row.
TokenBatch make_batch(std::span<const std::vector<TokenId>> rows, bool prepend_cls = true);

/// Pre-LN transformer encoder with an MLM head and a two-way classifier on
/// the CLS position.
template <class T>
class ModelBundle {
public:
    ModelBundle(const TransformerConfig& cfg, std::uint64_t seed);

    const TransformerConfig& config() const noexcept { return cfg_; }
    ndgrad::ParameterStore<T>& params() noexcept { return params_; }
    const ndgrad::ParameterStore<T>& params() const noexcept { return params_; }

    /// Final hidden states [batch*seq, d]. dropout_rng == nullptr means eval mode.
    Var<T> encode(Tape<T>& tape, const TokenBatch& batch, Rng* dropout_rng);

    /// MLM logits [rows.size(), vocab] for the flat positions in rows.
    Var<T> mlm_logits(Tape<T>& tape, Var<T> hidden, std::span<const std::size_t> rows);

    /// Classifier logits [batch, 2] read from each row's position 0.
    Var<T> cls_logits(Tape<T>& tape, Var<T> hidden, const TokenBatch& batch);

    /// Classifier head zero-initialised (fresh fine-tuning head).
    void reset_classifier();

private:
    struct LayerIds {
        std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b;
    };

    TransformerConfig cfg_;
    ndgrad::ParameterStore<T> params_;
    std::size_t tok_emb_ = 0, pos_emb_ = 0, lnf_g_ = 0, lnf_b_ = 0, mlm_w_ = 0, mlm_b_ = 0, cls_w_ = 0, cls_b_ = 0;
    std::vector<LayerIds> layers_;
};

/// Softmax distributions at the given flat positions, eval mode.
template <class T>
Tensor<T> forward_mlm(ModelBundle<T>& model, const TokenBatch& batch, std::span<const std::size_t> positions);

/// Two-class distributions per row, eval mode.
template <class T>
Tensor<T> forward_cls(ModelBundle<T>& model, const TokenBatch& batch);

template <class T>
void save_model(const std::string& path, const ModelBundle<T>& model, const nlohmann::json& extra = {});

template <class T>
ModelBundle<T> load_model(const std::string& path);

enum class ShuffleGranularity { Tensor, Module };

/// Permutes parameter elements uniformly at random, per tensor (default) or
/// across all tensors sharing a module prefix. Shapes are kept.
template <class T>
void shuffle_weights(ModelBundle<T>& model, std::uint64_t seed,
                     ShuffleGranularity granularity = ShuffleGranularity::Tensor);

}  // namespace dhmlm::models
