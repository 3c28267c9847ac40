#include "dhmlm/models/cbow.hpp"

#include <Eigen/Core>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dhmlm/common/text_io.hpp"
#include "dhmlm/ndgrad/adam.hpp"

namespace dhmlm::models {

namespace {

using RowMatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapF = Eigen::Map<RowMatF>;

MapF as_mat(Tensor<float>& t) {
    return MapF(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

}  // namespace

CbowModel train_cbow(const synlang::Corpus& corpus, std::size_t vocab_size, const CbowConfig& cfg) {
    require(cfg.window >= 1, ErrorKind::InvalidArgument, "CBOW window must be >= 1");
    require(cfg.dim >= 1 && cfg.epochs >= 1 && cfg.batch_size >= 1, ErrorKind::InvalidArgument,
            "CBOW dim, epochs and batch size must be positive");
    require(!corpus.records.empty(), ErrorKind::InvalidArgument, "CBOW needs a nonempty corpus");

    struct Center {
        std::uint32_t record;
        std::uint32_t pos;
    };
    std::vector<Center> centers;
    for (std::size_t r = 0; r < corpus.records.size(); ++r) {
        const auto& toks = corpus.records[r].tokens;
        if (toks.size() < 2) {
            continue;
        }
        for (std::size_t p = 0; p < toks.size(); ++p) {
            require(toks[p] >= 0 && static_cast<std::size_t>(toks[p]) < vocab_size, ErrorKind::InvalidArgument,
                    "corpus token outside the CBOW vocabulary");
            centers.push_back({static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(p)});
        }
    }
    require(!centers.empty(), ErrorKind::InvalidArgument, "corpus has no sequence with context");

    const std::size_t V = vocab_size;
    const std::size_t d = cfg.dim;
    ndgrad::ParameterStore<float> store;
    {
        Tensor<float> in({V, d});
        Rng rng(derive_seed(cfg.seed, "cbow.input"));
        for (auto& v : in.values()) {
            v = static_cast<float>((rng.uniform() - 0.5) / static_cast<double>(d));
        }
        store.add("cbow.input", std::move(in));
        store.add("cbow.output", Tensor<float>({V, d}));
    }
    ndgrad::Adam<float> opt(store, {.lr = cfg.lr});
    Rng order_rng(derive_seed(cfg.seed, "cbow.order"));

    CbowModel model;
    model.window = cfg.window;
    const std::size_t B = cfg.batch_size;
    RowMatF H(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(d));
    RowMatF Z;
    std::vector<std::int32_t> ctx_count(B);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        order_rng.shuffle(std::span<Center>(centers));
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < centers.size(); start += B) {
            const std::size_t nb = std::min(B, centers.size() - start);
            auto in = as_mat(store[0].value);
            auto out = as_mat(store[1].value);
            H.setZero();
            for (std::size_t i = 0; i < nb; ++i) {
                const auto& c = centers[start + i];
                const auto& toks = corpus.records[c.record].tokens;
                const std::size_t lo = c.pos >= cfg.window ? c.pos - cfg.window : 0;
                const std::size_t hi = std::min(toks.size() - 1, static_cast<std::size_t>(c.pos) + cfg.window);
                int cnt = 0;
                for (std::size_t p = lo; p <= hi; ++p) {
                    if (p != c.pos) {
                        H.row(static_cast<Eigen::Index>(i)) += in.row(toks[p]);
                        ++cnt;
                    }
                }
                ctx_count[i] = cnt;
                H.row(static_cast<Eigen::Index>(i)) /= static_cast<float>(cnt);
            }
            auto Hb = H.topRows(static_cast<Eigen::Index>(nb));
            Z.noalias() = Hb * out.transpose();
            for (std::size_t i = 0; i < nb; ++i) {
                const auto& c = centers[start + i];
                const std::int32_t target = corpus.records[c.record].tokens[c.pos];
                auto row = Z.row(static_cast<Eigen::Index>(i));
                const float mx = row.maxCoeff();
                row = (row.array() - mx).exp();
                const float z = row.sum();
                row /= z;
                loss_sum -= std::log(static_cast<double>(row(target)));
                row(target) -= 1.0f;
            }
            Z /= static_cast<float>(nb);  // now dL/dZ for the batch mean
            store.zero_grad();
            as_mat(store[1].grad).noalias() = Z.transpose() * Hb;
            const RowMatF dH = Z * out;
            auto gin = as_mat(store[0].grad);
            for (std::size_t i = 0; i < nb; ++i) {
                const auto& c = centers[start + i];
                const auto& toks = corpus.records[c.record].tokens;
                const std::size_t lo = c.pos >= cfg.window ? c.pos - cfg.window : 0;
                const std::size_t hi = std::min(toks.size() - 1, static_cast<std::size_t>(c.pos) + cfg.window);
                const float inv = 1.0f / static_cast<float>(ctx_count[i]);
                for (std::size_t p = lo; p <= hi; ++p) {
                    if (p != c.pos) {
                        gin.row(toks[p]) += inv * dH.row(static_cast<Eigen::Index>(i));
                    }
                }
            }
            opt.step(store);
        }
        const double mean_loss = loss_sum / static_cast<double>(centers.size());
        require(std::isfinite(mean_loss), ErrorKind::NumericalError,
                "CBOW loss diverged in epoch " + std::to_string(epoch));
        model.epoch_loss.push_back(mean_loss);
    }
    model.input = std::move(store[0].value);
    model.output = std::move(store[1].value);
    return model;
}

double synonym_nn_accuracy(const CbowModel& cbow, const synlang::SynsetInventory& inv,
                           const synlang::FeatureCodec& codec) {
    require(codec.mode() == synlang::CodecMode::SingleToken, ErrorKind::InvalidArgument,
            "nearest-neighbour synonym accuracy needs a single-token codec");
    const std::size_t V = cbow.vocab_size();
    const std::size_t d = cbow.dim();
    std::vector<double> norm(V, 0.0);
    for (std::size_t t = 0; t < V; ++t) {
        for (std::size_t c = 0; c < d; ++c) {
            norm[t] += static_cast<double>(cbow.input.at(t, c)) * cbow.input.at(t, c);
        }
        norm[t] = std::sqrt(norm[t]);
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < inv.size(); ++i) {
        const auto& s = inv.synset(static_cast<synlang::SynsetId>(i));
        const auto ta = static_cast<std::size_t>(codec.render(s.a)[0]);
        const auto tb = static_cast<std::size_t>(codec.render(s.b)[0]);
        std::size_t best = V;
        double best_cos = -2.0;
        for (std::size_t t = synlang::kFirstRegularToken; t < V; ++t) {
            if (t == ta) {
                continue;
            }
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                dot += static_cast<double>(cbow.input.at(ta, c)) * cbow.input.at(t, c);
            }
            const double cos = dot / std::max(norm[ta] * norm[t], 1e-300);
            if (cos > best_cos) {
                best_cos = cos;
                best = t;
            }
        }
        hits += best == tb ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(inv.size());
}

template <class T>
ModelBundle<T> init_from_cbow(const TransformerConfig& cfg, const CbowModel& cbow, std::uint64_t seed) {
    require(cbow.dim() == cfg.model_dim, ErrorKind::InvalidArgument,
            "CBOW dim " + std::to_string(cbow.dim()) + " differs from model_dim " + std::to_string(cfg.model_dim));
    require(cbow.vocab_size() <= cfg.vocab_size, ErrorKind::InvalidArgument, "CBOW vocabulary exceeds the model's");
    ModelBundle<T> model(cfg, seed);
    auto& emb = model.params().get("tok_emb").value;
    const std::size_t d = cfg.model_dim;
    for (std::size_t t = synlang::kFirstRegularToken; t < cbow.vocab_size(); ++t) {
        for (std::size_t c = 0; c < d; ++c) {
            emb.at(t, c) = static_cast<T>(cbow.input.at(t, c));
        }
    }
    return model;
}

void save_cbow_table(const std::string& path, const CbowModel& cbow) {
    text::write_file_atomic(path, [&](std::ostream& os) {
        nlohmann::json header = {{"format", "dhmlm-cbow"},
                                 {"version", 1},
                                 {"window", cbow.window},
                                 {"vocab_size", cbow.vocab_size()},
                                 {"dim", cbow.dim()},
                                 {"epoch_loss", cbow.epoch_loss}};
        os << header.dump() << '\n';
        for (std::size_t t = 0; t < cbow.vocab_size(); ++t) {
            os << t;
            for (std::size_t c = 0; c < cbow.dim(); ++c) {
                os << ' ' << text::format_double(cbow.input.at(t, c));
            }
            os << '\n';
        }
    });
}

CbowModel load_cbow_table(const std::string& path) {
    std::istringstream in(text::read_file(path));
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::Validation, "empty CBOW table " + path);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Validation, "malformed CBOW header in " + path);
    }
    require(header.value("format", "") == "dhmlm-cbow" && header.value("version", 0) == 1, ErrorKind::Validation,
            "not a CBOW table: " + path);
    CbowModel m;
    m.window = header.at("window").get<std::size_t>();
    m.epoch_loss = header.at("epoch_loss").get<std::vector<double>>();
    const auto V = header.at("vocab_size").get<std::size_t>();
    const auto d = header.at("dim").get<std::size_t>();
    m.input = Tensor<float>({V, d});
    for (std::size_t t = 0; t < V; ++t) {
        require(static_cast<bool>(std::getline(in, line)), ErrorKind::Validation, "truncated CBOW table " + path);
        const auto parts = text::split(line, ' ');
        require(parts.size() == d + 1 && text::parse_int(parts[0]) == static_cast<std::int64_t>(t),
                ErrorKind::Validation, "malformed CBOW row " + std::to_string(t) + " in " + path);
        for (std::size_t c = 0; c < d; ++c) {
            m.input.at(t, c) = static_cast<float>(text::parse_double(parts[c + 1]));
        }
    }
    return m;
}

template ModelBundle<float> init_from_cbow(const TransformerConfig&, const CbowModel&, std::uint64_t);
template ModelBundle<double> init_from_cbow(const TransformerConfig&, const CbowModel&, std::uint64_t);

}  // namespace dhmlm::models
