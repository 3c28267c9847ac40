#include "dhmlm/synlang/chain.hpp"

#include <algorithm>
#include <string>

#include "dhmlm/common/error.hpp"

namespace dhmlm::synlang {

namespace {

std::vector<bool> reachable(const std::vector<std::vector<SynsetId>>& adj) {
    std::vector<bool> seen(adj.size(), false);
    std::vector<SynsetId> stack{0};
    seen[0] = true;
    while (!stack.empty()) {
        const SynsetId s = stack.back();
        stack.pop_back();
        for (SynsetId t : adj[static_cast<std::size_t>(s)]) {
            if (!seen[static_cast<std::size_t>(t)]) {
                seen[static_cast<std::size_t>(t)] = true;
                stack.push_back(t);
            }
        }
    }
    return seen;
}

void random_edges(std::vector<std::array<SynsetId, 2>>& edges, Rng& rng) {
    const std::size_t n = edges.size();
    for (auto& e : edges) {
        e[0] = static_cast<SynsetId>(rng.below(n));
        do {
            e[1] = static_cast<SynsetId>(rng.below(n));
        } while (e[1] == e[0]);
    }
}

bool every_state_has_predecessor(const std::vector<std::array<SynsetId, 2>>& edges, std::vector<char>& hit) {
    hit.assign(edges.size(), 0);
    for (const auto& e : edges) {
        hit[static_cast<std::size_t>(e[0])] = 1;
        hit[static_cast<std::size_t>(e[1])] = 1;
    }
    return std::find(hit.begin(), hit.end(), 0) == hit.end();
}

}  // namespace

MarkovChain::MarkovChain(std::vector<std::array<SynsetId, 2>> edges) : edges_(std::move(edges)) {
    const std::size_t n = edges_.size();
    require(n >= 2, ErrorKind::InvalidArgument, "chain needs at least 2 states");
    for (const auto& e : edges_) {
        for (SynsetId t : e) {
            require(t >= 0 && static_cast<std::size_t>(t) < n, ErrorKind::InvalidArgument,
                    "chain edge target out of range: " + std::to_string(t));
        }
        require(e[0] != e[1], ErrorKind::InvalidArgument, "chain edges must point to distinct states");
    }
}

double MarkovChain::probability(SynsetId from, SynsetId to) const {
    const auto& e = successors(from);
    return (e[0] == to || e[1] == to) ? kEdgeProbability : 0.0;
}

std::vector<double> MarkovChain::row(SynsetId from) const {
    std::vector<double> r(edges_.size(), 0.0);
    for (SynsetId t : successors(from)) {
        r[static_cast<std::size_t>(t)] += kEdgeProbability;
    }
    return r;
}

std::vector<SynsetId> MarkovChain::walk(std::size_t length, Rng& rng) const {
    std::vector<SynsetId> out;
    out.reserve(length);
    if (length == 0) {
        return out;
    }
    out.push_back(sample_start(rng));
    for (std::size_t i = 1; i < length; ++i) {
        out.push_back(step(out.back(), rng));
    }
    return out;
}

bool MarkovChain::strongly_connected() const {
    const std::size_t n = edges_.size();
    std::vector<std::vector<SynsetId>> fwd(n), rev(n);
    for (std::size_t s = 0; s < n; ++s) {
        for (SynsetId t : edges_[s]) {
            fwd[s].push_back(t);
            rev[static_cast<std::size_t>(t)].push_back(static_cast<SynsetId>(s));
        }
    }
    const auto a = reachable(fwd);
    const auto b = reachable(rev);
    for (std::size_t s = 0; s < n; ++s) {
        if (!a[s] || !b[s]) {
            return false;
        }
    }
    return true;
}

const MarkovChain& MarkovChainPair::chain(int k) const {
    require(k == 1 || k == 2, ErrorKind::InvalidArgument, "chain index must be 1 or 2");
    return k == 1 ? chain1 : chain2;
}

MarkovChainPair build_chain_pair(std::size_t n, std::uint64_t seed) {
    require(n >= 2, ErrorKind::InvalidArgument, "build_chain_pair: n must be >= 2, got " + std::to_string(n));
    // Random out-degree-2 graphs are rarely strongly connected once n grows
    // past a few hundred states; the attempt cap turns that into an error.
    constexpr std::size_t kMaxAttempts = 5'000'000;
    auto draw = [n](Rng& rng) {
        std::vector<std::array<SynsetId, 2>> edges(n);
        std::vector<char> hit;
        for (std::size_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
            random_edges(edges, rng);
            // Cheap necessary condition first; most rejections happen here.
            if (!every_state_has_predecessor(edges, hit)) {
                continue;
            }
            MarkovChain c(edges);
            if (c.strongly_connected()) {
                return c;
            }
        }
        fail(ErrorKind::GenerationFailure,
             "no strongly connected chain after " + std::to_string(kMaxAttempts) + " attempts (n=" +
                 std::to_string(n) + ")");
    };
    Rng rng1(derive_seed(seed, "chain1"));
    Rng rng2(derive_seed(seed, "chain2"));
    MarkovChain c1 = draw(rng1);
    MarkovChain c2 = draw(rng2);
    return MarkovChainPair{std::move(c1), std::move(c2)};
}

}  // namespace dhmlm::synlang
