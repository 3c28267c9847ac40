#include "dhmlm/task/pattern.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "dhmlm/common/error.hpp"
#include "dhmlm/common/rng.hpp"

namespace dhmlm::task {

Pattern::Pattern(std::vector<SynsetId> s1, std::vector<SynsetId> s2, std::vector<SynsetId> s3,
                 std::size_t num_synsets)
    : sets_{std::move(s1), std::move(s2), std::move(s3)} {
    require(sets_[0].size() == sets_[1].size() && sets_[1].size() == sets_[2].size(), ErrorKind::InvalidArgument,
            "pattern sets must have equal sizes");
    member_.assign(3, std::vector<char>(num_synsets, 0));
    for (std::size_t i = 0; i < 3; ++i) {
        require(!sets_[i].empty(), ErrorKind::InvalidArgument, "pattern set is empty");
        for (SynsetId s : sets_[i]) {
            require(s >= 0 && static_cast<std::size_t>(s) < num_synsets, ErrorKind::InvalidArgument,
                    "pattern synset out of range");
            member_[i][static_cast<std::size_t>(s)] = 1;
        }
    }
}

bool Pattern::matches(std::span<const SynsetId> synsets) const {
    std::size_t stage = 0;
    for (SynsetId s : synsets) {
        if (member_[stage][static_cast<std::size_t>(s)] != 0 && ++stage == 3) {
            return true;
        }
    }
    return false;
}

PatternSet build_pattern_set(const synlang::SynsetInventory& inv, std::size_t num_patterns, std::size_t set_size,
                             std::uint64_t seed) {
    const std::size_t n = inv.size();
    require(num_patterns >= 1, ErrorKind::InvalidArgument, "need at least one pattern");
    require(set_size >= 1 && set_size <= n, ErrorKind::InvalidArgument,
            "pattern set size " + std::to_string(set_size) + " must be in [1, " + std::to_string(n) + "]");
    Rng rng(derive_seed(seed, "patterns"));
    std::vector<SynsetId> all(n);
    std::iota(all.begin(), all.end(), 0);
    PatternSet ps{{}, seed};
    for (std::size_t p = 0; p < num_patterns; ++p) {
        std::vector<std::vector<SynsetId>> sets;
        for (int i = 0; i < 3; ++i) {
            rng.shuffle(std::span<SynsetId>(all));
            std::vector<SynsetId> s(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(set_size));
            std::sort(s.begin(), s.end());
            sets.push_back(std::move(s));
        }
        ps.patterns.emplace_back(std::move(sets[0]), std::move(sets[1]), std::move(sets[2]), n);
    }
    return ps;
}

bool label(std::span<const SynsetId> synsets, const PatternSet& ps) {
    require(!synsets.empty(), ErrorKind::InvalidArgument, "cannot label an empty sequence");
    return std::any_of(ps.patterns.begin(), ps.patterns.end(), [&](const Pattern& p) { return p.matches(synsets); });
}

double natural_positive_rate(const PatternSet& ps, const synlang::MarkovChain& chain, std::size_t length,
                             std::size_t samples, std::uint64_t seed) {
    std::size_t positives = 0;
    for (std::size_t i = 0; i < samples; ++i) {
        Rng rng(derive_seed(seed, i));
        positives += label(chain.walk(length, rng), ps) ? 1 : 0;
    }
    return static_cast<double>(positives) / static_cast<double>(samples);
}

CalibrationResult calibrate_pattern_set(const synlang::Language& lang, std::size_t num_patterns,
                                        std::size_t max_set_size, std::size_t length, std::uint64_t seed,
                                        const CalibrationOptions& options) {
    require(max_set_size >= 1, ErrorKind::InvalidArgument, "max set size must be >= 1");
    std::string tried;
    for (std::size_t size = std::min(max_set_size, lang.inventory.size()); size >= 1; --size) {
        CalibrationResult r;
        r.set_size = size;
        r.patterns = build_pattern_set(lang.inventory, num_patterns, size, derive_seed(seed, size));
        const std::uint64_t pilot_seed = derive_seed(seed, "calibration-pilot");
        r.positive_rate_d1 =
            natural_positive_rate(r.patterns, lang.chains.chain1, length, options.pilot_sequences, pilot_seed);
        r.positive_rate_d2 = natural_positive_rate(r.patterns, lang.chains.chain2, length, options.pilot_sequences,
                                                   derive_seed(pilot_seed, 2));
        auto in_band = [&](double rate) { return rate >= options.min_rate && rate <= options.max_rate; };
        if (in_band(r.positive_rate_d1) && in_band(r.positive_rate_d2)) {
            return r;
        }
        tried += " size " + std::to_string(size) + ": (" + std::to_string(r.positive_rate_d1) + ", " +
                 std::to_string(r.positive_rate_d2) + ")";
    }
    fail(ErrorKind::GenerationFailure, "no pattern set size reaches the target positive rate;" + tried);
}

nlohmann::json to_json(const PatternSet& ps) {
    nlohmann::json patterns = nlohmann::json::array();
    for (const auto& p : ps.patterns) {
        patterns.push_back({p.set(0), p.set(1), p.set(2)});
    }
    return {{"seed", ps.seed}, {"patterns", patterns}};
}

PatternSet pattern_set_from_json(const nlohmann::json& j, std::size_t num_synsets) {
    PatternSet ps{{}, j.at("seed").get<std::uint64_t>()};
    for (const auto& p : j.at("patterns")) {
        ps.patterns.emplace_back(p.at(0).get<std::vector<SynsetId>>(), p.at(1).get<std::vector<SynsetId>>(),
                                 p.at(2).get<std::vector<SynsetId>>(), num_synsets);
    }
    require(!ps.patterns.empty(), ErrorKind::InvalidArgument, "pattern set is empty");
    return ps;
}

}  // namespace dhmlm::task
