#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

namespace dhmlm::synlang {

using SynsetId = std::int32_t;
using FeatureId = std::int32_t;
using TokenId = std::int32_t;

/// Which of the two isomorphic feature sets a feature belongs to.
enum class Side : std::uint8_t { A = 0, B = 1 };

constexpr Side other(Side s) noexcept { return s == Side::A ? Side::B : Side::A; }

struct Synset {
    FeatureId a = 0;
    FeatureId b = 0;

    FeatureId feature(Side side) const noexcept { return side == Side::A ? a : b; }
    friend bool operator==(const Synset&, const Synset&) = default;
};

/// The n synsets, each holding exactly two features. Feature ids are a
/// permutation of [0, 2n).
class SynsetInventory {
public:
    /// Validates the invariants; throws invalid-argument otherwise.
    explicit SynsetInventory(std::vector<Synset> synsets);

    std::size_t size() const noexcept { return synsets_.size(); }
    std::size_t num_features() const noexcept { return 2 * synsets_.size(); }

    const std::vector<Synset>& synsets() const noexcept { return synsets_; }
    const Synset& synset(SynsetId s) const { return synsets_.at(static_cast<std::size_t>(s)); }
    FeatureId feature(SynsetId s, Side side) const { return synset(s).feature(side); }

    const std::vector<FeatureId>& phi_a() const noexcept { return phi_a_; }
    const std::vector<FeatureId>& phi_b() const noexcept { return phi_b_; }

    /// Synset and side of a feature id.
    std::pair<SynsetId, Side> locate(FeatureId f) const;

    friend bool operator==(const SynsetInventory& x, const SynsetInventory& y) {
        return x.synsets_ == y.synsets_;
    }

private:
    std::vector<Synset> synsets_;
    std::vector<FeatureId> phi_a_;
    std::vector<FeatureId> phi_b_;
    std::vector<std::pair<SynsetId, Side>> owner_;
};

/// n >= 2. Deterministic in seed.
SynsetInventory build_inventory(std::size_t n, std::uint64_t seed);

}  // namespace dhmlm::synlang
