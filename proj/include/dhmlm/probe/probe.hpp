#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dhmlm/models/transformer.hpp"
#include "dhmlm/synlang/corpus.hpp"
#include "dhmlm/task/dataset.hpp"

namespace dhmlm::probe {

using models::ModelBundle;
using synlang::TokenId;

/// Half the L1 distance. Both inputs must have the same length and sum to 1
/// within 1e-6.
double tv_distance(std::span<const double> p, std::span<const double> q);

/// Sample Pearson r. Throws undefined-correlation on zero variance.
double pearson(std::span<const std::pair<double, double>> pairs);

struct RankTest {
    double u = 0.0;        // Mann-Whitney U of the first sample
    double z = 0.0;
    double p_value = 1.0;  // one-sided: first sample stochastically smaller
};

/// One-sided Mann-Whitney U test with the normal approximation (tie-corrected).
RankTest mann_whitney_less(std::span<const double> x, std::span<const double> y);

double median(std::vector<double> v);

enum class PairKind { TrueSynonym, Cross };
std::string to_string(PairKind k);

struct Span {
    std::size_t begin = 0;
    std::size_t end = 0;  // exclusive, token offsets into the example (no CLS)
};

struct FeaturePair {
    std::size_t id = 0;
    PairKind kind = PairKind::TrueSynonym;
    std::vector<TokenId> x;
    Span span;
    std::vector<TokenId> a;  // tokens of the feature at span
    std::vector<TokenId> b;  // replacement tokens
};

/// n true pairs (a_i, b_i) and n cross pairs (a_i, b_j), j != i uniform. For
/// synset i the example is the first pool example containing it; the
/// occurrence is drawn from the seed. Synsets absent from the pool are skipped.
std::vector<FeaturePair> make_feature_pairs(const task::Dataset& pool, const synlang::Language& lang,
                                            std::uint64_t seed);

/// Token spans of every feature in an example.
std::vector<Span> feature_spans(const task::LabeledExample& ex, const synlang::Language& lang);

std::vector<TokenId> replace_span(std::span<const TokenId> x, Span span, std::span<const TokenId> b);

struct SaliencyResult {
    std::vector<double> scores;
    std::size_t argmax = 0;
};

/// Score of a span = TV between class distributions before and after its
/// tokens become MASK.
template <class T>
SaliencyResult saliency(ModelBundle<T>& ft, std::span<const TokenId> x, std::span<const Span> candidates);

/// Parsed "<feature> [MASK]"-style template: whitespace-separated items, each
/// "<feature>" or "[MASK]". Exactly one [MASK] is required.
struct Template {
    std::vector<std::string> items;
    std::size_t mask_item = 0;
};
Template parse_template(const std::string& text);

/// MASK-position distribution for the template filled with the feature tokens.
template <class T>
std::vector<double> mask_distribution(ModelBundle<T>& pre, std::span<const TokenId> feature, const Template& tpl);

template <class T>
double d_f0(ModelBundle<T>& pre, std::span<const TokenId> a, std::span<const TokenId> b, const Template& tpl);

template <class T>
double d_f(ModelBundle<T>& ft, std::span<const TokenId> x, Span span, std::span<const TokenId> b);

struct ProbeRecord {
    std::size_t pair_id = 0;
    PairKind kind = PairKind::TrueSynonym;
    double d_f0 = 0.0;
    double d_f = 0.0;
    bool flipped = false;  // argmax changed under the replacement
};

struct ProbeReport {
    std::string checkpoint;
    std::size_t data_size = 0;
    std::vector<ProbeRecord> records;  // sorted by pair id
    std::optional<double> r;           // empty when undefined
    std::size_t true_pairs = 0;
    std::size_t cross_pairs = 0;
    std::size_t true_pair_flips = 0;

    double failure_rate() const {
        return true_pairs == 0 ? 0.0 : static_cast<double>(true_pair_flips) / static_cast<double>(true_pairs);
    }
};

template <class T>
struct Checkpoint {
    std::string id;
    std::size_t data_size = 0;
    ModelBundle<T>* model = nullptr;
};

/// D_f0 is computed once per distinct (a, b); D_f per (pair, checkpoint).
template <class T>
std::vector<ProbeReport> run_probe(ModelBundle<T>& pre, std::span<const Checkpoint<T>> checkpoints,
                                   std::span<const FeaturePair> pairs, const Template& tpl);

/// Distribution file lines: "pair_id slot support p_1 ... p_support" with slot
/// one of f0_a, f0_b, f_x, f_repl; '#' starts a comment. Pairs need all four
/// slots and equal support within each TV comparison.
ProbeReport probe_from_distribution_file(const std::string& path, const std::string& checkpoint_id);

nlohmann::json to_json(const ProbeReport& r);
nlohmann::json reports_to_json(const std::vector<ProbeReport>& reports, const std::string& template_text);

}  // namespace dhmlm::probe
