#include "dhmlm/models/transformer.hpp"

#include <algorithm>
#include <map>

#include "dhmlm/ndgrad/checkpoint.hpp"
#include "dhmlm/synlang/codec.hpp"

namespace dhmlm::models {

using namespace ndgrad;
namespace special = synlang::special;

void TransformerConfig::validate() const {
    auto check = [](bool ok, const std::string& msg) { require(ok, ErrorKind::InvalidArgument, msg); };
    check(num_layers >= 1, "num_layers must be >= 1");
    check(num_heads >= 1 && model_dim % num_heads == 0, "model_dim must be divisible by num_heads");
    check(ff_dim >= 1, "ff_dim must be >= 1");
    check(max_positions >= 2, "max_positions must be >= 2");
    check(vocab_size > special::kMask, "vocab_size must cover the special tokens");
    check(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
}

nlohmann::json to_json(const TransformerConfig& c) {
    return {{"num_layers", c.num_layers}, {"num_heads", c.num_heads},         {"model_dim", c.model_dim},
            {"ff_dim", c.ff_dim},         {"max_positions", c.max_positions}, {"vocab_size", c.vocab_size},
            {"dropout", c.dropout}};
}

TransformerConfig transformer_config_from_json(const nlohmann::json& j) {
    TransformerConfig c;
    c.num_layers = j.at("num_layers").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.model_dim = j.at("model_dim").get<std::size_t>();
    c.ff_dim = j.at("ff_dim").get<std::size_t>();
    c.max_positions = j.at("max_positions").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.validate();
    return c;
}

TokenBatch make_batch(std::span<const std::vector<TokenId>> rows, bool prepend_cls) {
    require(!rows.empty(), ErrorKind::InvalidArgument, "empty batch");
    TokenBatch b;
    b.batch = rows.size();
    const std::size_t extra = prepend_cls ? 1 : 0;
    for (const auto& r : rows) {
        b.seq = std::max(b.seq, r.size() + extra);
    }
    require(b.seq > 0, ErrorKind::InvalidArgument, "batch of empty rows");
    b.ids.assign(b.batch * b.seq, special::kPad);
    b.valid.assign(b.batch * b.seq, 0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        TokenId* dst = b.ids.data() + i * b.seq;
        if (prepend_cls) {
            dst[0] = special::kCls;
        }
        std::copy(rows[i].begin(), rows[i].end(), dst + extra);
        std::fill_n(b.valid.begin() + static_cast<std::ptrdiff_t>(i * b.seq), rows[i].size() + extra, 1);
    }
    return b;
}

namespace {

template <class T>
Tensor<T> normal_init(Shape shape, std::uint64_t seed, double sd) {
    Tensor<T> t(std::move(shape));
    Rng rng(seed);
    for (auto& v : t.values()) {
        v = static_cast<T>(sd * rng.normal());
    }
    return t;
}

constexpr double kInitSd = 0.02;

}  // namespace

template <class T>
ModelBundle<T>::ModelBundle(const TransformerConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t d = cfg_.model_dim;
    auto weight = [&](const std::string& name, Shape shape) {
        return params_.add(name, normal_init<T>(std::move(shape), derive_seed(seed, name), kInitSd));
    };
    auto zeros = [&](const std::string& name, Shape shape) { return params_.add(name, Tensor<T>(std::move(shape))); };
    auto ones = [&](const std::string& name, Shape shape) {
        return params_.add(name, Tensor<T>(std::move(shape), T(1)));
    };
    tok_emb_ = weight("tok_emb", {cfg_.vocab_size, d});
    pos_emb_ = weight("pos_emb", {cfg_.max_positions, d});
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        LayerIds ids{};
        ids.ln1_g = ones(p + "ln1.g", {d});
        ids.ln1_b = zeros(p + "ln1.b", {d});
        ids.wq = weight(p + "attn.wq", {d, d});
        ids.bq = zeros(p + "attn.bq", {d});
        ids.wk = weight(p + "attn.wk", {d, d});
        ids.bk = zeros(p + "attn.bk", {d});
        ids.wv = weight(p + "attn.wv", {d, d});
        ids.bv = zeros(p + "attn.bv", {d});
        ids.wo = weight(p + "attn.wo", {d, d});
        ids.bo = zeros(p + "attn.bo", {d});
        ids.ln2_g = ones(p + "ln2.g", {d});
        ids.ln2_b = zeros(p + "ln2.b", {d});
        ids.ff1_w = weight(p + "ff1.w", {d, cfg_.ff_dim});
        ids.ff1_b = zeros(p + "ff1.b", {cfg_.ff_dim});
        ids.ff2_w = weight(p + "ff2.w", {cfg_.ff_dim, d});
        ids.ff2_b = zeros(p + "ff2.b", {d});
        layers_.push_back(ids);
    }
    lnf_g_ = ones("final_ln.g", {d});
    lnf_b_ = zeros("final_ln.b", {d});
    mlm_w_ = weight("mlm.w", {d, cfg_.vocab_size});
    mlm_b_ = zeros("mlm.b", {cfg_.vocab_size});
    cls_w_ = zeros("cls.w", {d, 2});
    cls_b_ = zeros("cls.b", {2});
}

template <class T>
void ModelBundle<T>::reset_classifier() {
    params_[cls_w_].value.fill(T(0));
    params_[cls_b_].value.fill(T(0));
}

template <class T>
Var<T> ModelBundle<T>::encode(Tape<T>& tape, const TokenBatch& batch, Rng* dropout_rng) {
    require(batch.seq <= cfg_.max_positions, ErrorKind::InvalidArgument,
            "sequence of " + std::to_string(batch.seq) + " positions exceeds max_positions " +
                std::to_string(cfg_.max_positions));
    require(batch.ids.size() == batch.batch * batch.seq && batch.valid.size() == batch.ids.size(),
            ErrorKind::InvalidArgument, "malformed token batch");
    const double rate = dropout_rng != nullptr ? cfg_.dropout : 0.0;
    auto P = [&](std::size_t i) { return tape.param(params_[i]); };
    auto drop = [&](Var<T> x) { return rate > 0.0 ? dropout(x, rate, *dropout_rng) : x; };

    std::vector<std::int32_t> pos(batch.ids.size());
    for (std::size_t i = 0; i < pos.size(); ++i) {
        pos[i] = static_cast<std::int32_t>(i % batch.seq);
    }
    Var<T> x = add(embedding(P(tok_emb_), std::span<const std::int32_t>(batch.ids)),
                   embedding(P(pos_emb_), std::span<const std::int32_t>(pos)));
    x = drop(x);
    for (const auto& L : layers_) {
        auto h = layer_norm(x, P(L.ln1_g), P(L.ln1_b));
        auto q = linear(h, P(L.wq), P(L.bq));
        auto k = linear(h, P(L.wk), P(L.bk));
        auto v = linear(h, P(L.wv), P(L.bv));
        auto a = attention(q, k, v, batch.batch, batch.seq, cfg_.num_heads,
                           std::span<const std::uint8_t>(batch.valid));
        x = add(x, drop(linear(a, P(L.wo), P(L.bo))));
        h = layer_norm(x, P(L.ln2_g), P(L.ln2_b));
        h = linear(gelu(linear(h, P(L.ff1_w), P(L.ff1_b))), P(L.ff2_w), P(L.ff2_b));
        x = add(x, drop(h));
    }
    return layer_norm(x, P(lnf_g_), P(lnf_b_));
}

template <class T>
Var<T> ModelBundle<T>::mlm_logits(Tape<T>& tape, Var<T> hidden, std::span<const std::size_t> rows) {
    const std::size_t total = hidden.value().rows();
    for (std::size_t r : rows) {
        require(r < total, ErrorKind::InvalidArgument, "mask position " + std::to_string(r) + " out of range");
    }
    return linear(take_rows(hidden, rows), tape.param(params_[mlm_w_]), tape.param(params_[mlm_b_]));
}

template <class T>
Var<T> ModelBundle<T>::cls_logits(Tape<T>& tape, Var<T> hidden, const TokenBatch& batch) {
    std::vector<std::size_t> rows(batch.batch);
    for (std::size_t b = 0; b < batch.batch; ++b) {
        rows[b] = b * batch.seq;
    }
    return linear(take_rows(hidden, std::span<const std::size_t>(rows)), tape.param(params_[cls_w_]),
                  tape.param(params_[cls_b_]));
}

template <class T>
Tensor<T> forward_mlm(ModelBundle<T>& model, const TokenBatch& batch, std::span<const std::size_t> positions) {
    Tape<T> tape(false);
    auto h = model.encode(tape, batch, nullptr);
    return softmax_rows(model.mlm_logits(tape, h, positions).value());
}

template <class T>
Tensor<T> forward_cls(ModelBundle<T>& model, const TokenBatch& batch) {
    Tape<T> tape(false);
    auto h = model.encode(tape, batch, nullptr);
    return softmax_rows(model.cls_logits(tape, h, batch).value());
}

template <class T>
void save_model(const std::string& path, const ModelBundle<T>& model, const nlohmann::json& extra) {
    nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
    meta["model"] = to_json(model.config());
    save_checkpoint(path, model.params(), meta);
}

template <class T>
ModelBundle<T> load_model(const std::string& path) {
    const auto meta = read_checkpoint_meta(path);
    require(meta.contains("model"), ErrorKind::Validation, "checkpoint has no model config: " + path);
    ModelBundle<T> model(transformer_config_from_json(meta.at("model")), 0);
    load_checkpoint(path, model.params());
    return model;
}

template <class T>
void shuffle_weights(ModelBundle<T>& model, std::uint64_t seed, ShuffleGranularity granularity) {
    auto& params = model.params();
    if (granularity == ShuffleGranularity::Tensor) {
        for (auto& p : params) {
            Rng rng(derive_seed(seed, p.name));
            rng.shuffle(p.value.values());
        }
        return;
    }
    std::map<std::string, std::vector<Parameter<T>*>> modules;
    for (auto& p : params) {
        const auto dot = p.name.rfind('.');
        modules[dot == std::string::npos ? p.name : p.name.substr(0, dot)].push_back(&p);
    }
    for (auto& [name, members] : modules) {
        std::vector<T> pool;
        for (auto* p : members) {
            pool.insert(pool.end(), p->value.values().begin(), p->value.values().end());
        }
        Rng rng(derive_seed(seed, name));
        rng.shuffle(std::span<T>(pool));
        std::size_t off = 0;
        for (auto* p : members) {
            std::copy_n(pool.begin() + static_cast<std::ptrdiff_t>(off), p->value.size(), p->value.data());
            off += p->value.size();
        }
    }
}

#define DHMLM_INSTANTIATE_MODEL(T)                                                                           \
    template class ModelBundle<T>;                                                                          \
    template Tensor<T> forward_mlm(ModelBundle<T>&, const TokenBatch&, std::span<const std::size_t>);      \
    template Tensor<T> forward_cls(ModelBundle<T>&, const TokenBatch&);                                     \
    template void save_model(const std::string&, const ModelBundle<T>&, const nlohmann::json&);            \
    template ModelBundle<T> load_model(const std::string&);                                                 \
    template void shuffle_weights(ModelBundle<T>&, std::uint64_t, ShuffleGranularity);

DHMLM_INSTANTIATE_MODEL(float)
DHMLM_INSTANTIATE_MODEL(double)

}  // namespace dhmlm::models
