#include "dhmlm/synlang/codec.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <string>

#include "dhmlm/common/error.hpp"
#include "dhmlm/common/rng.hpp"

namespace dhmlm::synlang {

FeatureCodec::FeatureCodec(CodecMode mode, VocabSharing sharing, TokenRange alpha, TokenRange beta,
                           std::vector<std::vector<TokenId>> token_map, const SynsetInventory& inv)
    : mode_(mode), sharing_(sharing), alpha_(alpha), beta_(beta), token_map_(std::move(token_map)) {
    require(alpha_.begin >= kFirstRegularToken && beta_.begin >= kFirstRegularToken, ErrorKind::InvalidArgument,
            "codec ranges overlap the special tokens");
    require(alpha_.size() > 0 && beta_.size() > 0, ErrorKind::InvalidArgument, "empty codec vocabulary");
    if (sharing_ == VocabSharing::Shared) {
        require(alpha_ == beta_, ErrorKind::InvalidArgument, "shared codec needs identical ranges");
        require(mode_ == CodecMode::MultiToken, ErrorKind::InvalidArgument,
                "single-token mode cannot share the vocabulary");
    } else {
        require(alpha_.end <= beta_.begin || beta_.end <= alpha_.begin, ErrorKind::InvalidArgument,
                "separate vocabularies overlap");
    }
    require(token_map_.size() == inv.num_features(), ErrorKind::InvalidArgument, "token map size mismatch");

    std::set<std::vector<TokenId>> seen;
    for (std::size_t f = 0; f < token_map_.size(); ++f) {
        const auto& toks = token_map_[f];
        const std::size_t max_len = mode_ == CodecMode::SingleToken ? 1 : 3;
        require(!toks.empty() && toks.size() <= max_len, ErrorKind::InvalidArgument,
                "bad rendering length for feature " + std::to_string(f));
        const TokenRange& range = inv.locate(static_cast<FeatureId>(f)).second == Side::A ? alpha_ : beta_;
        for (TokenId t : toks) {
            require(range.contains(t), ErrorKind::InvalidArgument,
                    "token " + std::to_string(t) + " outside its vocabulary range");
        }
        require(seen.insert(toks).second, ErrorKind::InvalidArgument,
                "token map is not injective at feature " + std::to_string(f));
        max_len_ = std::max(max_len_, toks.size());
    }
    vocab_size_ = static_cast<std::size_t>(std::max(alpha_.end, beta_.end));
}

std::span<const TokenId> FeatureCodec::render(FeatureId f) const {
    require(f >= 0 && static_cast<std::size_t>(f) < token_map_.size(), ErrorKind::InvalidArgument,
            "unknown feature id " + std::to_string(f));
    return token_map_[static_cast<std::size_t>(f)];
}

std::vector<TokenId> FeatureCodec::render_sequence(const SynsetInventory& inv, std::span<const SynsetId> synsets,
                                                   std::span<const Side> sides,
                                                   std::vector<std::size_t>* feature_offsets) const {
    require(synsets.size() == sides.size(), ErrorKind::InvalidArgument, "synset/side length mismatch");
    std::vector<TokenId> out;
    out.reserve(synsets.size() * max_len_);
    if (feature_offsets != nullptr) {
        feature_offsets->clear();
        feature_offsets->reserve(synsets.size() + 1);
    }
    for (std::size_t i = 0; i < synsets.size(); ++i) {
        if (feature_offsets != nullptr) {
            feature_offsets->push_back(out.size());
        }
        const auto toks = render(inv.feature(synsets[i], sides[i]));
        out.insert(out.end(), toks.begin(), toks.end());
    }
    if (feature_offsets != nullptr) {
        feature_offsets->push_back(out.size());
    }
    return out;
}

FeatureCodec build_codec(const SynsetInventory& inv, CodecMode mode, VocabSharing sharing, std::uint64_t seed,
                         std::size_t tokens_per_side) {
    require(!(mode == CodecMode::SingleToken && sharing == VocabSharing::Shared), ErrorKind::InvalidArgument,
            "single-token codec cannot share the vocabulary");
    const std::size_t n = inv.size();
    const std::size_t per_side = tokens_per_side == 0 ? n : tokens_per_side;
    require(mode == CodecMode::MultiToken || per_side == n, ErrorKind::InvalidArgument,
            "single-token codec needs exactly n tokens per side");

    const TokenRange alpha{kFirstRegularToken, static_cast<TokenId>(kFirstRegularToken + per_side)};
    const TokenRange beta = sharing == VocabSharing::Shared
                                ? alpha
                                : TokenRange{alpha.end, static_cast<TokenId>(alpha.end + per_side)};

    Rng rng(derive_seed(seed, "codec"));
    std::vector<std::vector<TokenId>> token_map(inv.num_features());

    if (mode == CodecMode::SingleToken) {
        for (Side side : {Side::A, Side::B}) {
            const TokenRange& range = side == Side::A ? alpha : beta;
            std::vector<TokenId> perm(n);
            std::iota(perm.begin(), perm.end(), range.begin);
            rng.shuffle(std::span<TokenId>(perm));
            for (std::size_t i = 0; i < n; ++i) {
                token_map[static_cast<std::size_t>(inv.feature(static_cast<SynsetId>(i), side))] = {perm[i]};
            }
        }
    } else {
        // The string space (per_side + per_side^2 + per_side^3) must exceed the
        // number of features drawing from it.
        const std::size_t strings = per_side + per_side * per_side + per_side * per_side * per_side;
        const std::size_t demand = sharing == VocabSharing::Shared ? 2 * n : n;
        require(strings >= 2 * demand, ErrorKind::InvalidArgument, "multi-token vocabulary too small");
        std::set<std::vector<TokenId>> used;
        for (std::size_t i = 0; i < n; ++i) {
            for (Side side : {Side::A, Side::B}) {
                const TokenRange& range = side == Side::A ? alpha : beta;
                std::vector<TokenId> toks;
                do {
                    const std::size_t len = 1 + rng.below(3);
                    toks.assign(len, 0);
                    for (auto& t : toks) {
                        t = static_cast<TokenId>(range.begin + static_cast<TokenId>(rng.below(range.size())));
                    }
                } while (used.contains(toks));
                used.insert(toks);
                token_map[static_cast<std::size_t>(inv.feature(static_cast<SynsetId>(i), side))] = std::move(toks);
            }
        }
    }
    return FeatureCodec(mode, sharing, alpha, beta, std::move(token_map), inv);
}

}  // namespace dhmlm::synlang
