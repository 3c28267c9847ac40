#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dhmlm/synlang/corpus.hpp"
#include "dhmlm/task/pattern.hpp"

namespace dhmlm::task {

using synlang::Side;
using synlang::TokenId;

/// Feature side (A/B) crossed with generating chain (D1/D2).
enum class Domain : std::uint8_t { A_D1 = 0, B_D1 = 1, A_D2 = 2, B_D2 = 3 };

inline constexpr Domain kAllDomains[] = {Domain::A_D1, Domain::B_D1, Domain::A_D2, Domain::B_D2};

std::string to_string(Domain d);
Domain parse_domain(const std::string& s);
constexpr Side side_of(Domain d) noexcept {
    return (d == Domain::A_D1 || d == Domain::A_D2) ? Side::A : Side::B;
}
constexpr int chain_of(Domain d) noexcept { return (d == Domain::A_D1 || d == Domain::B_D1) ? 1 : 2; }

enum class BalancePolicy { Balanced, Natural };

std::string to_string(BalancePolicy b);
BalancePolicy parse_balance(const std::string& s);

struct TaskDatasetSpec {
    Domain domain = Domain::A_D1;
    std::size_t size = 0;
    std::size_t length = 100;  // in synsets
    std::uint64_t seed = 0;
    BalancePolicy balance = BalancePolicy::Balanced;
    /// Natural positive rates outside [min_rate, max_rate] cannot be balanced.
    double min_rate = 0.01;
    double max_rate = 0.99;
};

struct LabeledExample {
    std::vector<TokenId> tokens;
    bool label = false;
    std::vector<synlang::SynsetId> synsets;
    Domain domain = Domain::A_D1;

    friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

struct Dataset {
    std::string name;
    std::vector<LabeledExample> examples;

    std::size_t size() const noexcept { return examples.size(); }
    std::size_t positives() const noexcept;
};

/// Candidate j is drawn from stream derive_seed(spec.seed, j). Under the
/// balanced policy candidates are kept while their class quota is open
/// (floor(size/2) positives, the rest negatives).
Dataset generate_task_dataset(const TaskDatasetSpec& spec, const PatternSet& ps, const synlang::Language& lang);

/// Re-renders an example with per-position side choices.
std::vector<TokenId> render_with_sides(const LabeledExample& ex, std::span<const Side> sides,
                                       const synlang::Language& lang);

struct MixturePart {
    const Dataset* dataset = nullptr;
    double proportion = 0.0;
};

/// Per-part counts by largest-remainder rounding of proportion * total.
std::vector<std::size_t> mixture_counts(const std::vector<MixturePart>& parts, std::size_t total);

/// Takes the first count_i examples of each part. With more than one part the
/// result is shuffled deterministically; a single part keeps its order.
Dataset make_mixture(const std::vector<MixturePart>& parts, std::size_t total, std::uint64_t seed);

void write_dataset(std::ostream& out, const Dataset& ds);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

}  // namespace dhmlm::task
