#include "dhmlm/synlang/inventory.hpp"

#include <numeric>
#include <span>
#include <string>

#include "dhmlm/common/error.hpp"
#include "dhmlm/common/rng.hpp"

namespace dhmlm::synlang {

SynsetInventory::SynsetInventory(std::vector<Synset> synsets) : synsets_(std::move(synsets)) {
    const std::size_t n = synsets_.size();
    require(n >= 2, ErrorKind::InvalidArgument, "inventory needs at least 2 synsets");
    owner_.assign(2 * n, {-1, Side::A});
    phi_a_.reserve(n);
    phi_b_.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (Side side : {Side::A, Side::B}) {
            const FeatureId f = synsets_[i].feature(side);
            require(f >= 0 && static_cast<std::size_t>(f) < 2 * n, ErrorKind::InvalidArgument,
                    "feature id out of range: " + std::to_string(f));
            require(owner_[static_cast<std::size_t>(f)].first < 0, ErrorKind::InvalidArgument,
                    "feature id appears twice: " + std::to_string(f));
            owner_[static_cast<std::size_t>(f)] = {static_cast<SynsetId>(i), side};
        }
        phi_a_.push_back(synsets_[i].a);
        phi_b_.push_back(synsets_[i].b);
    }
}

std::pair<SynsetId, Side> SynsetInventory::locate(FeatureId f) const {
    require(f >= 0 && static_cast<std::size_t>(f) < owner_.size(), ErrorKind::InvalidArgument,
            "unknown feature id " + std::to_string(f));
    return owner_[static_cast<std::size_t>(f)];
}

SynsetInventory build_inventory(std::size_t n, std::uint64_t seed) {
    require(n >= 2, ErrorKind::InvalidArgument, "build_inventory: n must be >= 2, got " + std::to_string(n));
    std::vector<FeatureId> ids(2 * n);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(derive_seed(seed, "inventory"));
    rng.shuffle(std::span<FeatureId>(ids));
    std::vector<Synset> synsets(n);
    for (std::size_t i = 0; i < n; ++i) {
        synsets[i] = Synset{ids[i], ids[n + i]};
    }
    return SynsetInventory(std::move(synsets));
}

}  // namespace dhmlm::synlang
