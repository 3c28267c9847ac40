#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dhmlm/synlang/inventory.hpp"

namespace dhmlm::synlang {

enum class CodecMode { SingleToken, MultiToken };
enum class VocabSharing { Separate, Shared };

/// Special token ids. Regular tokens start at kFirstRegularToken.
namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kCls = 1;
inline constexpr TokenId kMask = 2;
}  // namespace special
inline constexpr TokenId kFirstRegularToken = 3;

struct TokenRange {
    TokenId begin = 0;
    TokenId end = 0;  // exclusive

    bool contains(TokenId t) const noexcept { return t >= begin && t < end; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(end - begin); }
    friend bool operator==(const TokenRange&, const TokenRange&) = default;
};

/// Maps every feature to a token string. Phi_a renders from vocab_alpha and
/// Phi_b from vocab_beta; in shared mode the two ranges coincide.
class FeatureCodec {
public:
    FeatureCodec(CodecMode mode, VocabSharing sharing, TokenRange alpha, TokenRange beta,
                 std::vector<std::vector<TokenId>> token_map, const SynsetInventory& inv);

    CodecMode mode() const noexcept { return mode_; }
    VocabSharing sharing() const noexcept { return sharing_; }
    const TokenRange& vocab_alpha() const noexcept { return alpha_; }
    const TokenRange& vocab_beta() const noexcept { return beta_; }
    /// Total vocabulary including the special tokens.
    std::size_t vocab_size() const noexcept { return vocab_size_; }
    std::size_t max_feature_length() const noexcept { return max_len_; }

    std::span<const TokenId> render(FeatureId f) const;
    const std::vector<std::vector<TokenId>>& token_map() const noexcept { return token_map_; }

    static bool is_special(TokenId t) noexcept { return t < kFirstRegularToken; }

    /// Renders a synset sequence with the given side choices. When
    /// feature_offsets is non-null it receives the token offset of each
    /// feature plus a trailing end offset.
    std::vector<TokenId> render_sequence(const SynsetInventory& inv, std::span<const SynsetId> synsets,
                                         std::span<const Side> sides,
                                         std::vector<std::size_t>* feature_offsets = nullptr) const;

    friend bool operator==(const FeatureCodec& x, const FeatureCodec& y) {
        return x.mode_ == y.mode_ && x.sharing_ == y.sharing_ && x.alpha_ == y.alpha_ && x.beta_ == y.beta_ &&
               x.token_map_ == y.token_map_;
    }

private:
    CodecMode mode_;
    VocabSharing sharing_;
    TokenRange alpha_;
    TokenRange beta_;
    std::vector<std::vector<TokenId>> token_map_;
    std::size_t vocab_size_ = 0;
    std::size_t max_len_ = 1;
};

/// tokens_per_side = 0 selects n tokens per vocabulary range. Single-token
/// mode is a bijection and requires separate vocabularies.
FeatureCodec build_codec(const SynsetInventory& inv, CodecMode mode, VocabSharing sharing, std::uint64_t seed,
                         std::size_t tokens_per_side = 0);

}  // namespace dhmlm::synlang
