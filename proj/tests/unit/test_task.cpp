#include <algorithm>
#include <map>
#include <sstream>

#include "doctest.h"
#include "dhmlm/common/error.hpp"
#include "dhmlm/common/rng.hpp"
#include "dhmlm/task/dataset.hpp"
#include "dhmlm/task/pattern.hpp"

using namespace dhmlm;
using namespace dhmlm::synlang;
using namespace dhmlm::task;

namespace {

// O(l^3) reference: any index triple i < j < k hitting S1, S2, S3.
bool label_by_triples(const std::vector<SynsetId>& seq, const PatternSet& ps) {
    for (const auto& p : ps.patterns) {
        for (std::size_t i = 0; i < seq.size(); ++i) {
            for (std::size_t j = i + 1; j < seq.size(); ++j) {
                for (std::size_t k = j + 1; k < seq.size(); ++k) {
                    if (p.contains(0, seq[i]) && p.contains(1, seq[j]) && p.contains(2, seq[k])) {
                        return true;
                    }
                }
            }
        }
    }
    return false;
}

PatternSet single_pattern(std::vector<SynsetId> s1, std::vector<SynsetId> s2, std::vector<SynsetId> s3,
                          std::size_t n) {
    PatternSet ps;
    ps.patterns.emplace_back(std::move(s1), std::move(s2), std::move(s3), n);
    return ps;
}

struct Fixture {
    SynsetInventory inv = build_inventory(64, 4);
    FeatureCodec codec = build_codec(inv, CodecMode::SingleToken, VocabSharing::Separate, 4);
    MarkovChainPair chains = build_chain_pair(64, 4);
    Language lang() const { return Language{inv, codec, chains}; }

    std::vector<SynsetId> decode(const std::vector<TokenId>& tokens) const {
        std::map<TokenId, SynsetId> inverse;
        for (std::size_t f = 0; f < inv.num_features(); ++f) {
            inverse[codec.render(static_cast<FeatureId>(f))[0]] = inv.locate(static_cast<FeatureId>(f)).first;
        }
        std::vector<SynsetId> out;
        for (TokenId t : tokens) {
            out.push_back(inverse.at(t));
        }
        return out;
    }
};

}  // namespace

TEST_CASE("build_pattern_set: paper-sized sets") {
    const auto inv = build_inventory(64, 1);
    const auto ps = build_pattern_set(inv, 5, 12, 1);
    REQUIRE(ps.patterns.size() == 5);
    for (const auto& p : ps.patterns) {
        for (std::size_t i = 0; i < 3; ++i) {
            auto s = p.set(i);
            CHECK(s.size() == 12);
            std::sort(s.begin(), s.end());
            CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
        }
    }
    CHECK(build_pattern_set(inv, 5, 12, 1) == ps);
}

TEST_CASE("build_pattern_set: saturation and bounds") {
    const auto inv3 = build_inventory(3, 0);
    const auto ps = build_pattern_set(inv3, 1, 3, 0);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(ps.patterns[0].set(i) == std::vector<SynsetId>{0, 1, 2});
    }
    const auto inv4 = build_inventory(4, 0);
    try {
        build_pattern_set(inv4, 1, 5, 0);
        FAIL("expected invalid-argument");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InvalidArgument);
    }
}

TEST_CASE("label: ordered matching") {
    const auto ps = single_pattern({1}, {2}, {3}, 6);
    CHECK(label(std::vector<SynsetId>{1, 5, 2, 3}, ps));
    CHECK_FALSE(label(std::vector<SynsetId>{3, 2, 1}, ps));
    CHECK_FALSE(label(std::vector<SynsetId>{1, 2}, ps));
    try {
        label(std::vector<SynsetId>{}, ps);
        FAIL("expected invalid-argument");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InvalidArgument);
    }
}

TEST_CASE("label: scan equals triple enumeration on all short sequences over five synsets") {
    const auto inv = build_inventory(5, 0);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto ps = build_pattern_set(inv, 2, 2, seed);
        std::size_t mismatches = 0, positives = 0, total = 0;
        for (std::size_t len = 1; len <= 8; ++len) {
            std::vector<SynsetId> seq(len, 0);
            for (;;) {
                const bool fast = label(seq, ps);
                mismatches += fast != label_by_triples(seq, ps);
                positives += fast;
                ++total;
                std::size_t i = 0;
                while (i < len && ++seq[i] == 5) {
                    seq[i++] = 0;
                }
                if (i == len) {
                    break;
                }
            }
        }
        CHECK(mismatches == 0);
        CHECK(positives > 0);
        CHECK(positives < total);
    }
}

TEST_CASE("label: scan equals triple enumeration on random long sequences") {
    const auto inv = build_inventory(64, 0);
    const auto ps = build_pattern_set(inv, 5, 3, 9);
    Rng rng(5);
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 10'000; ++trial) {
        std::vector<SynsetId> seq(1 + rng.below(60));
        for (auto& s : seq) {
            s = static_cast<SynsetId>(rng.below(64));
        }
        mismatches += label(seq, ps) != label_by_triples(seq, ps);
    }
    CHECK(mismatches == 0);
}

TEST_CASE("generate_task_dataset: domain purity and chain provenance") {
    const Fixture fx;
    const auto ps = build_pattern_set(fx.inv, 5, 2, 3);
    for (Domain d : kAllDomains) {
        const auto ds = generate_task_dataset(TaskDatasetSpec{d, 200, 50, 11}, ps, fx.lang());
        REQUIRE(ds.size() == 200);
        const TokenRange& range = side_of(d) == Side::A ? fx.codec.vocab_alpha() : fx.codec.vocab_beta();
        const auto& chain = fx.chains.chain(chain_of(d));
        for (const auto& ex : ds.examples) {
            CHECK(ex.domain == d);
            for (TokenId t : ex.tokens) {
                CHECK(range.contains(t));
            }
            for (std::size_t i = 1; i < ex.synsets.size(); ++i) {
                CHECK(chain.probability(ex.synsets[i - 1], ex.synsets[i]) == 0.5);
            }
            CHECK(fx.decode(ex.tokens) == ex.synsets);
            CHECK(ex.label == label(ex.synsets, ps));
        }
    }
}

TEST_CASE("generate_task_dataset: synonym substitution never changes the label") {
    const Fixture fx;
    const auto ps = build_pattern_set(fx.inv, 5, 2, 3);
    const auto ds = generate_task_dataset(TaskDatasetSpec{Domain::A_D1, 300, 50, 2}, ps, fx.lang());
    Rng rng(77);
    for (const auto& ex : ds.examples) {
        // all flipped, and a random subset flipped
        std::vector<Side> all_b(ex.synsets.size(), Side::B);
        std::vector<Side> mixed(ex.synsets.size());
        for (auto& s : mixed) {
            s = rng.coin() ? Side::B : Side::A;
        }
        for (const auto& sides : {all_b, mixed}) {
            const auto tokens = render_with_sides(ex, sides, fx.lang());
            CHECK(label(fx.decode(tokens), ps) == ex.label);
        }
    }
}

TEST_CASE("generate_task_dataset: balanced and deterministic") {
    const Fixture fx;
    const auto ps = build_pattern_set(fx.inv, 5, 2, 3);
    const TaskDatasetSpec spec{Domain::B_D2, 1000, 50, 8};
    const auto ds = generate_task_dataset(spec, ps, fx.lang());
    const double frac = static_cast<double>(ds.positives()) / static_cast<double>(ds.size());
    CHECK(frac >= 0.45);
    CHECK(frac <= 0.55);
    CHECK(generate_task_dataset(spec, ps, fx.lang()).examples == ds.examples);

    std::ostringstream out;
    write_dataset(out, ds);
    std::istringstream in(out.str());
    const auto back = read_dataset(in);
    CHECK(back.examples == ds.examples);
    CHECK(back.name == ds.name);
}

TEST_CASE("generate_task_dataset: unreachable balance is a generation failure") {
    const Fixture fx;
    // Twelve-synset sets over 64 synsets match essentially every length-50 walk.
    const auto ps = build_pattern_set(fx.inv, 5, 12, 3);
    try {
        generate_task_dataset(TaskDatasetSpec{Domain::A_D1, 100, 50, 1}, ps, fx.lang());
        FAIL("expected generation-failure");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::GenerationFailure);
        CHECK(std::string(e.what()).find("rate") != std::string::npos);
    }
    // The natural policy still works and reports the lopsided rate.
    TaskDatasetSpec natural{Domain::A_D1, 100, 50, 1};
    natural.balance = BalancePolicy::Natural;
    CHECK(generate_task_dataset(natural, ps, fx.lang()).positives() >= 99);
}

TEST_CASE("calibrate_pattern_set: shrinks sets until both chains are in band") {
    const Fixture fx;
    const auto cal = calibrate_pattern_set(fx.lang(), 5, 12, 50, 21);
    CHECK(cal.set_size < 12);
    CHECK(cal.patterns.set_size() == cal.set_size);
    CHECK(cal.positive_rate_d1 >= 0.1);
    CHECK(cal.positive_rate_d1 <= 0.9);
    CHECK(cal.positive_rate_d2 >= 0.1);
    CHECK(cal.positive_rate_d2 <= 0.9);
    for (Domain d : kAllDomains) {
        const auto ds = generate_task_dataset(TaskDatasetSpec{d, 200, 50, 1}, cal.patterns, fx.lang());
        CHECK(ds.positives() == 100);
    }
}

TEST_CASE("make_mixture: exact counts") {
    const Fixture fx;
    const auto ps = build_pattern_set(fx.inv, 5, 2, 3);
    const auto a = generate_task_dataset(TaskDatasetSpec{Domain::A_D1, 1000, 20, 1}, ps, fx.lang());
    const auto b = generate_task_dataset(TaskDatasetSpec{Domain::B_D2, 1000, 20, 2}, ps, fx.lang());
    auto count = [](const Dataset& ds, Domain d) {
        return std::count_if(ds.examples.begin(), ds.examples.end(),
                             [d](const LabeledExample& e) { return e.domain == d; });
    };
    const auto half = make_mixture({{&a, 0.5}, {&b, 0.5}}, 1000, 3);
    CHECK(count(half, Domain::A_D1) == 500);
    CHECK(count(half, Domain::B_D2) == 500);
    const auto ninety = make_mixture({{&a, 0.9}, {&b, 0.1}}, 1000, 3);
    CHECK(count(ninety, Domain::A_D1) == 900);
    CHECK(count(ninety, Domain::B_D2) == 100);
    CHECK(make_mixture({{&a, 0.9}, {&b, 0.1}}, 1000, 3).examples == ninety.examples);

    const auto identity = make_mixture({{&a, 1.0}}, 1000, 3);
    CHECK(identity.examples == a.examples);

    CHECK(mixture_counts({{&a, 0.5}, {&b, 0.5}}, 7) == std::vector<std::size_t>{4, 3});
    CHECK(mixture_counts({{&a, 0.9}, {&b, 0.1}}, 256) == std::vector<std::size_t>{230, 26});
    try {
        make_mixture({{&a, 0.5}, {&b, 0.4}}, 100, 3);
        FAIL("expected invalid-argument");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InvalidArgument);
    }
}
