#include "dhmlm/probe/probe.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "dhmlm/common/text_io.hpp"

namespace dhmlm::probe {

namespace special = synlang::special;

double tv_distance(std::span<const double> p, std::span<const double> q) {
    require(p.size() == q.size(), ErrorKind::InvalidArgument,
            "TV over mismatched supports (" + std::to_string(p.size()) + " vs " + std::to_string(q.size()) + ")");
    require(!p.empty(), ErrorKind::InvalidArgument, "TV over an empty support");
    double sp = 0.0, sq = 0.0, l1 = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        require(p[i] >= 0.0 && q[i] >= 0.0, ErrorKind::InvalidArgument, "negative probability");
        sp += p[i];
        sq += q[i];
        l1 += std::abs(p[i] - q[i]);
    }
    require(std::abs(sp - 1.0) <= 1e-6 && std::abs(sq - 1.0) <= 1e-6, ErrorKind::InvalidArgument,
            "distribution does not sum to 1");
    return std::min(1.0, 0.5 * l1);
}

double pearson(std::span<const std::pair<double, double>> pairs) {
    require(pairs.size() >= 2, ErrorKind::InvalidArgument, "pearson needs at least 2 pairs");
    const double n = static_cast<double>(pairs.size());
    double mu = 0.0, mv = 0.0;
    for (const auto& [u, v] : pairs) {
        mu += u;
        mv += v;
    }
    mu /= n;
    mv /= n;
    double suv = 0.0, suu = 0.0, svv = 0.0;
    for (const auto& [u, v] : pairs) {
        suv += (u - mu) * (v - mv);
        suu += (u - mu) * (u - mu);
        svv += (v - mv) * (v - mv);
    }
    require(suu > 0.0 && svv > 0.0, ErrorKind::UndefinedCorrelation, "zero variance in a pearson coordinate");
    return std::clamp(suv / std::sqrt(suu * svv), -1.0, 1.0);
}

RankTest mann_whitney_less(std::span<const double> x, std::span<const double> y) {
    require(!x.empty() && !y.empty(), ErrorKind::InvalidArgument, "rank test needs two nonempty samples");
    const std::size_t n1 = x.size(), n2 = y.size();
    std::vector<std::pair<double, int>> all;
    for (double v : x) {
        all.emplace_back(v, 0);
    }
    for (double v : y) {
        all.emplace_back(v, 1);
    }
    std::sort(all.begin(), all.end());
    double rank_sum_x = 0.0, tie_term = 0.0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        while (j < all.size() && all[j].first == all[i].first) {
            ++j;
        }
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
        const double t = static_cast<double>(j - i);
        tie_term += t * t * t - t;
        for (std::size_t k = i; k < j; ++k) {
            if (all[k].second == 0) {
                rank_sum_x += avg_rank;
            }
        }
        i = j;
    }
    const double N1 = static_cast<double>(n1), N2 = static_cast<double>(n2), N = N1 + N2;
    RankTest r;
    r.u = rank_sum_x - N1 * (N1 + 1.0) / 2.0;
    const double var = N1 * N2 / 12.0 * ((N + 1.0) - tie_term / (N * (N - 1.0)));
    if (var <= 0.0) {
        return r;
    }
    r.z = (r.u - N1 * N2 / 2.0) / std::sqrt(var);
    r.p_value = 0.5 * std::erfc(-r.z / std::sqrt(2.0));  // P(Z <= z)
    return r;
}

double median(std::vector<double> v) {
    require(!v.empty(), ErrorKind::InvalidArgument, "median of an empty sample");
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::string to_string(PairKind k) { return k == PairKind::TrueSynonym ? "true" : "cross"; }

std::vector<Span> feature_spans(const task::LabeledExample& ex, const synlang::Language& lang) {
    const std::vector<synlang::Side> sides(ex.synsets.size(), task::side_of(ex.domain));
    std::vector<std::size_t> offsets;
    const auto tokens = lang.codec.render_sequence(lang.inventory, ex.synsets, sides, &offsets);
    require(tokens == ex.tokens, ErrorKind::InvalidArgument, "example tokens do not match its provenance");
    std::vector<Span> spans;
    for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
        spans.push_back({offsets[i], offsets[i + 1]});
    }
    return spans;
}

std::vector<TokenId> replace_span(std::span<const TokenId> x, Span span, std::span<const TokenId> b) {
    require(span.begin < span.end && span.end <= x.size(), ErrorKind::InvalidArgument,
            "feature span [" + std::to_string(span.begin) + ", " + std::to_string(span.end) + ") not in example");
    std::vector<TokenId> out(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(span.begin));
    out.insert(out.end(), b.begin(), b.end());
    out.insert(out.end(), x.begin() + static_cast<std::ptrdiff_t>(span.end), x.end());
    return out;
}

std::vector<FeaturePair> make_feature_pairs(const task::Dataset& pool, const synlang::Language& lang,
                                            std::uint64_t seed) {
    const std::size_t n = lang.inventory.size();
    require(n >= 2, ErrorKind::InvalidArgument, "cross pairs need at least 2 synsets");
    std::vector<FeaturePair> pairs;
    for (std::size_t i = 0; i < n; ++i) {
        const auto sid = static_cast<synlang::SynsetId>(i);
        const task::LabeledExample* host = nullptr;
        for (const auto& ex : pool.examples) {
            if (std::find(ex.synsets.begin(), ex.synsets.end(), sid) != ex.synsets.end()) {
                host = &ex;
                break;
            }
        }
        if (host == nullptr) {
            continue;
        }
        std::vector<std::size_t> where;
        for (std::size_t p = 0; p < host->synsets.size(); ++p) {
            if (host->synsets[p] == sid) {
                where.push_back(p);
            }
        }
        Rng rng(derive_seed(seed, i));
        const std::size_t pos = where[rng.below(where.size())];
        const auto spans = feature_spans(*host, lang);
        const auto side = task::side_of(host->domain);
        const auto flip = synlang::other(side);
        auto render = [&](std::size_t s, synlang::Side sd) {
            const auto f = lang.inventory.synset(static_cast<synlang::SynsetId>(s)).feature(sd);
            const auto t = lang.codec.render(f);
            return std::vector<TokenId>(t.begin(), t.end());
        };
        std::size_t j = rng.below(n - 1);
        j += j >= i ? 1 : 0;
        FeaturePair base;
        base.x = host->tokens;
        base.span = spans[pos];
        base.a = render(i, side);
        FeaturePair t = base;
        t.id = i;
        t.kind = PairKind::TrueSynonym;
        t.b = render(i, flip);
        FeaturePair c = base;
        c.id = n + i;
        c.kind = PairKind::Cross;
        c.b = render(j, flip);
        pairs.push_back(std::move(t));
        pairs.push_back(std::move(c));
    }
    std::sort(pairs.begin(), pairs.end(), [](const auto& p, const auto& q) { return p.id < q.id; });
    return pairs;
}

namespace {

template <class T>
std::vector<double> class_distribution(ModelBundle<T>& m, std::span<const TokenId> x) {
    const std::vector<std::vector<TokenId>> rows{std::vector<TokenId>(x.begin(), x.end())};
    const auto probs = models::forward_cls(m, models::make_batch(rows));
    return {static_cast<double>(probs[0]), static_cast<double>(probs[1])};
}

// Renormalised in double so float rounding does not trip the sum check.
std::vector<double> normalized(std::vector<double> p) {
    const double s = std::accumulate(p.begin(), p.end(), 0.0);
    for (auto& v : p) {
        v /= s;
    }
    return p;
}

int argmax2(const std::vector<double>& p) { return p[1] > p[0] ? 1 : 0; }

}  // namespace

template <class T>
SaliencyResult saliency(ModelBundle<T>& ft, std::span<const TokenId> x, std::span<const Span> candidates) {
    require(!candidates.empty(), ErrorKind::InvalidArgument, "saliency needs candidate spans");
    const auto base = normalized(class_distribution(ft, x));
    SaliencyResult r;
    for (const auto& s : candidates) {
        const std::vector<TokenId> masks(s.end - s.begin, special::kMask);
        const auto masked = replace_span(x, s, masks);
        r.scores.push_back(tv_distance(base, normalized(class_distribution(ft, std::span<const TokenId>(masked)))));
    }
    r.argmax = static_cast<std::size_t>(std::max_element(r.scores.begin(), r.scores.end()) - r.scores.begin());
    return r;
}

Template parse_template(const std::string& text) {
    Template t;
    std::istringstream in(text);
    std::string item;
    std::size_t masks = 0;
    while (in >> item) {
        require(item == "<feature>" || item == "[MASK]", ErrorKind::InvalidArgument,
                "template item '" + item + "' is neither <feature> nor [MASK]");
        if (item == "[MASK]") {
            t.mask_item = t.items.size();
            ++masks;
        }
        t.items.push_back(item);
    }
    require(masks == 1, ErrorKind::InvalidArgument, "template needs exactly one [MASK]: '" + text + "'");
    return t;
}

template <class T>
std::vector<double> mask_distribution(ModelBundle<T>& pre, std::span<const TokenId> feature, const Template& tpl) {
    std::vector<TokenId> tokens;
    std::size_t mask_pos = 0;
    for (const auto& item : tpl.items) {
        if (item == "[MASK]") {
            mask_pos = tokens.size() + 1;  // +1 for CLS
            tokens.push_back(special::kMask);
        } else {
            tokens.insert(tokens.end(), feature.begin(), feature.end());
        }
    }
    const std::vector<std::vector<TokenId>> rows{tokens};
    const std::vector<std::size_t> pos{mask_pos};
    const auto probs = models::forward_mlm(pre, models::make_batch(rows), pos);
    return normalized(std::vector<double>(probs.values().begin(), probs.values().end()));
}

template <class T>
double d_f0(ModelBundle<T>& pre, std::span<const TokenId> a, std::span<const TokenId> b, const Template& tpl) {
    return tv_distance(mask_distribution(pre, a, tpl), mask_distribution(pre, b, tpl));
}

template <class T>
double d_f(ModelBundle<T>& ft, std::span<const TokenId> x, Span span, std::span<const TokenId> b) {
    const auto replaced = replace_span(x, span, b);
    return tv_distance(normalized(class_distribution(ft, x)),
                       normalized(class_distribution(ft, std::span<const TokenId>(replaced))));
}

namespace {

void finish_report(ProbeReport& rep) {
    std::sort(rep.records.begin(), rep.records.end(), [](const auto& a, const auto& b) { return a.pair_id < b.pair_id; });
    std::vector<std::pair<double, double>> uv;
    for (const auto& rec : rep.records) {
        uv.emplace_back(rec.d_f0, rec.d_f);
        if (rec.kind == PairKind::TrueSynonym) {
            ++rep.true_pairs;
            rep.true_pair_flips += rec.flipped ? 1 : 0;
        } else {
            ++rep.cross_pairs;
        }
    }
    try {
        rep.r = pearson(uv);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::UndefinedCorrelation && e.kind() != ErrorKind::InvalidArgument) {
            throw;
        }
        rep.r.reset();
    }
}

}  // namespace

template <class T>
std::vector<ProbeReport> run_probe(ModelBundle<T>& pre, std::span<const Checkpoint<T>> checkpoints,
                                   std::span<const FeaturePair> pairs, const Template& tpl) {
    require(!pairs.empty(), ErrorKind::Validation, "probe needs at least one feature pair");
    std::map<std::pair<std::vector<TokenId>, std::vector<TokenId>>, double> f0_cache;
    std::vector<double> f0(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        auto key = std::make_pair(pairs[i].a, pairs[i].b);
        auto it = f0_cache.find(key);
        if (it == f0_cache.end()) {
            it = f0_cache.emplace(key, d_f0(pre, std::span<const TokenId>(pairs[i].a),
                                            std::span<const TokenId>(pairs[i].b), tpl))
                     .first;
        }
        f0[i] = it->second;
    }
    std::vector<ProbeReport> reports;
    for (const auto& ck : checkpoints) {
        require(ck.model != nullptr, ErrorKind::InvalidArgument, "null checkpoint " + ck.id);
        require(ck.model->config().vocab_size == pre.config().vocab_size, ErrorKind::InvalidArgument,
                "checkpoint " + ck.id + " uses a different vocabulary");
        ProbeReport rep;
        rep.checkpoint = ck.id;
        rep.data_size = ck.data_size;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const auto& p = pairs[i];
            const auto replaced = replace_span(p.x, p.span, p.b);
            const auto before = normalized(class_distribution(*ck.model, std::span<const TokenId>(p.x)));
            const auto after = normalized(class_distribution(*ck.model, std::span<const TokenId>(replaced)));
            rep.records.push_back({p.id, p.kind, f0[i], tv_distance(before, after), argmax2(before) != argmax2(after)});
        }
        finish_report(rep);
        reports.push_back(std::move(rep));
    }
    return reports;
}

ProbeReport probe_from_distribution_file(const std::string& path, const std::string& checkpoint_id) {
    std::istringstream in(text::read_file(path));
    std::map<std::size_t, std::map<std::string, std::vector<double>>> slots;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.resize(hash);
        }
        std::istringstream ls(line);
        std::vector<std::string> f;
        std::string w;
        while (ls >> w) {
            f.push_back(w);
        }
        if (f.empty()) {
            continue;
        }
        const std::string where = path + ":" + std::to_string(lineno);
        require(f.size() >= 3, ErrorKind::Validation, "short distribution line at " + where);
        const auto id = static_cast<std::size_t>(text::parse_int(f[0]));
        const std::string& slot = f[1];
        require(slot == "f0_a" || slot == "f0_b" || slot == "f_x" || slot == "f_repl", ErrorKind::Validation,
                "unknown slot '" + slot + "' at " + where);
        const auto support = static_cast<std::size_t>(text::parse_int(f[2]));
        require(f.size() == 3 + support, ErrorKind::Validation, "support size does not match values at " + where);
        std::vector<double> p;
        for (std::size_t k = 0; k < support; ++k) {
            p.push_back(text::parse_double(f[3 + k]));
        }
        require(slots[id].emplace(slot, std::move(p)).second, ErrorKind::Validation,
                "duplicate slot " + slot + " for pair " + std::to_string(id));
    }
    require(!slots.empty(), ErrorKind::Validation, "no distributions in " + path);
    ProbeReport rep;
    rep.checkpoint = checkpoint_id;
    for (const auto& [id, s] : slots) {
        for (const char* need : {"f0_a", "f0_b", "f_x", "f_repl"}) {
            require(s.count(need) == 1, ErrorKind::Validation,
                    "pair " + std::to_string(id) + " lacks slot " + need + " in " + path);
        }
        ProbeRecord rec;
        rec.pair_id = id;
        rec.kind = PairKind::TrueSynonym;
        rec.d_f0 = tv_distance(s.at("f0_a"), s.at("f0_b"));
        rec.d_f = tv_distance(s.at("f_x"), s.at("f_repl"));
        const auto& fx = s.at("f_x");
        const auto& fr = s.at("f_repl");
        rec.flipped = std::max_element(fx.begin(), fx.end()) - fx.begin() !=
                      std::max_element(fr.begin(), fr.end()) - fr.begin();
        rep.records.push_back(rec);
    }
    finish_report(rep);
    return rep;
}

nlohmann::json to_json(const ProbeReport& r) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& rec : r.records) {
        records.push_back({{"pair_id", rec.pair_id},
                           {"kind", to_string(rec.kind)},
                           {"d_f0", rec.d_f0},
                           {"d_f", rec.d_f},
                           {"flipped", rec.flipped},
                           {"checkpoint", r.checkpoint},
                           {"data_size", r.data_size}});
    }
    return {{"checkpoint", r.checkpoint},
            {"data_size", r.data_size},
            {"r", r.r ? nlohmann::json(*r.r) : nlohmann::json(nullptr)},
            {"r_defined", r.r.has_value()},
            {"true_pairs", r.true_pairs},
            {"cross_pairs", r.cross_pairs},
            {"true_pair_flips", r.true_pair_flips},
            {"generalization_failure_rate", r.failure_rate()},
            {"records", records}};
}

nlohmann::json reports_to_json(const std::vector<ProbeReport>& reports, const std::string& template_text) {
    nlohmann::json out = {{"format", "dhmlm-probe"}, {"version", 1}, {"template", template_text}};
    out["reports"] = nlohmann::json::array();
    for (const auto& r : reports) {
        out["reports"].push_back(to_json(r));
    }
    return out;
}

#define DHMLM_INSTANTIATE_PROBE(T)                                                                            \
    template SaliencyResult saliency(ModelBundle<T>&, std::span<const TokenId>, std::span<const Span>);      \
    template std::vector<double> mask_distribution(ModelBundle<T>&, std::span<const TokenId>, const Template&); \
    template double d_f0(ModelBundle<T>&, std::span<const TokenId>, std::span<const TokenId>, const Template&); \
    template double d_f(ModelBundle<T>&, std::span<const TokenId>, Span, std::span<const TokenId>);          \
    template std::vector<ProbeReport> run_probe(ModelBundle<T>&, std::span<const Checkpoint<T>>,            \
                                                std::span<const FeaturePair>, const Template&);

DHMLM_INSTANTIATE_PROBE(float)
DHMLM_INSTANTIATE_PROBE(double)

}  // namespace dhmlm::probe
