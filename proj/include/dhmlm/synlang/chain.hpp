#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "dhmlm/common/rng.hpp"
#include "dhmlm/synlang/inventory.hpp"

namespace dhmlm::synlang {

/// A Markov chain over synset states where every state has exactly two
/// distinct successors, each taken with probability 1/2. The start
/// distribution is uniform.
class MarkovChain {
public:
    static constexpr double kEdgeProbability = 0.5;

    explicit MarkovChain(std::vector<std::array<SynsetId, 2>> edges);

    std::size_t size() const noexcept { return edges_.size(); }
    const std::array<SynsetId, 2>& successors(SynsetId s) const { return edges_.at(static_cast<std::size_t>(s)); }
    const std::vector<std::array<SynsetId, 2>>& edges() const noexcept { return edges_; }

    double probability(SynsetId from, SynsetId to) const;
    double start_probability() const noexcept { return 1.0 / static_cast<double>(edges_.size()); }
    /// Dense transition row.
    std::vector<double> row(SynsetId from) const;

    SynsetId sample_start(Rng& rng) const { return static_cast<SynsetId>(rng.below(edges_.size())); }
    SynsetId step(SynsetId from, Rng& rng) const { return successors(from)[rng.coin() ? 1 : 0]; }

    /// Synset walk of the given length from a uniform start.
    std::vector<SynsetId> walk(std::size_t length, Rng& rng) const;

    bool strongly_connected() const;

    friend bool operator==(const MarkovChain&, const MarkovChain&) = default;

private:
    std::vector<std::array<SynsetId, 2>> edges_;
};

struct MarkovChainPair {
    MarkovChain chain1;
    MarkovChain chain2;

    /// k is 1 or 2.
    const MarkovChain& chain(int k) const;
    friend bool operator==(const MarkovChainPair&, const MarkovChainPair&) = default;
};

/// Both chains are resampled until strongly connected. n >= 2.
MarkovChainPair build_chain_pair(std::size_t n, std::uint64_t seed);

}  // namespace dhmlm::synlang
