#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "dhmlm/synlang/corpus.hpp"

namespace dhmlm::task {

using synlang::SynsetId;

/// Sigma* S1 Sigma* S2 Sigma* S3 Sigma*: a synset sequence matches when
/// members of S1, S2 and S3 occur in that order.
class Pattern {
public:
    Pattern(std::vector<SynsetId> s1, std::vector<SynsetId> s2, std::vector<SynsetId> s3, std::size_t num_synsets);

    const std::vector<SynsetId>& set(std::size_t i) const { return sets_.at(i); }
    bool contains(std::size_t set_index, SynsetId s) const {
        return member_[set_index][static_cast<std::size_t>(s)] != 0;
    }
    /// Single left-to-right greedy scan.
    bool matches(std::span<const SynsetId> synsets) const;

    friend bool operator==(const Pattern& x, const Pattern& y) { return x.sets_ == y.sets_; }

private:
    std::vector<std::vector<SynsetId>> sets_;
    std::vector<std::vector<char>> member_;
};

struct PatternSet {
    std::vector<Pattern> patterns;
    std::uint64_t seed = 0;

    std::size_t set_size() const { return patterns.empty() ? 0 : patterns.front().set(0).size(); }
    friend bool operator==(const PatternSet&, const PatternSet&) = default;
};

/// Each set is drawn uniformly without replacement from the n synsets.
PatternSet build_pattern_set(const synlang::SynsetInventory& inv, std::size_t num_patterns, std::size_t set_size,
                             std::uint64_t seed);

/// True iff some pattern matches. Empty sequences are rejected.
bool label(std::span<const SynsetId> synsets, const PatternSet& ps);

struct CalibrationOptions {
    std::size_t pilot_sequences = 2000;
    double min_rate = 0.1;
    double max_rate = 0.9;
};

struct CalibrationResult {
    PatternSet patterns;
    std::size_t set_size = 0;
    double positive_rate_d1 = 0.0;
    double positive_rate_d2 = 0.0;
};

/// Natural positive rate of sequences of the given length drawn from chain k.
double natural_positive_rate(const PatternSet& ps, const synlang::MarkovChain& chain, std::size_t length,
                             std::size_t samples, std::uint64_t seed);

/// Shrinks the set size from max_set_size until the natural positive rate on
/// both chains lies inside the option band. Throws generation-failure when no
/// size qualifies.
CalibrationResult calibrate_pattern_set(const synlang::Language& lang, std::size_t num_patterns,
                                        std::size_t max_set_size, std::size_t length, std::uint64_t seed,
                                        const CalibrationOptions& options = {});

nlohmann::json to_json(const PatternSet& ps);
PatternSet pattern_set_from_json(const nlohmann::json& j, std::size_t num_synsets);

}  // namespace dhmlm::task
