#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "dhmlm/probe/probe.hpp"
#include "dhmlm/synlang/chain.hpp"
#include "dhmlm/task/pattern.hpp"

using namespace dhmlm;
using namespace dhmlm::probe;
using namespace dhmlm::synlang;

namespace {

struct Fixture {
    SynsetInventory inv = build_inventory(12, 5);
    FeatureCodec codec = build_codec(inv, CodecMode::SingleToken, VocabSharing::Separate, 5);
    MarkovChainPair chains = build_chain_pair(12, 5);
    Language lang() const { return {inv, codec, chains}; }

    models::TransformerConfig config() const {
        models::TransformerConfig c;
        c.num_layers = 1;
        c.num_heads = 2;
        c.model_dim = 16;
        c.ff_dim = 32;
        c.max_positions = 41;
        c.vocab_size = codec.vocab_size();
        return c;
    }

    FeatureId decode(const std::vector<TokenId>& tokens) const {
        const auto& map = codec.token_map();
        return static_cast<FeatureId>(std::find(map.begin(), map.end(), tokens) - map.begin());
    }

    task::Dataset pool(std::size_t n) const {
        const auto ps = task::build_pattern_set(inv, 2, 2, 1);
        task::TaskDatasetSpec spec{task::Domain::A_D1, n, 30, 3};
        spec.balance = task::BalancePolicy::Natural;
        return task::generate_task_dataset(spec, ps, lang());
    }
};

// Brute-force U statistic and the matching tie-corrected normal approximation.
RankTest mw_oracle(const std::vector<double>& x, const std::vector<double>& y) {
    double u = 0.0;
    for (double a : x) {
        for (double b : y) {
            u += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
        }
    }
    std::vector<double> all(x);
    all.insert(all.end(), y.begin(), y.end());
    std::sort(all.begin(), all.end());
    double ties = 0.0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        while (j < all.size() && all[j] == all[i]) {
            ++j;
        }
        const double t = static_cast<double>(j - i);
        ties += t * t * t - t;
        i = j;
    }
    const double n1 = static_cast<double>(x.size()), n2 = static_cast<double>(y.size()), n = n1 + n2;
    const double sd = std::sqrt(n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0))));
    RankTest r;
    r.u = u;
    r.z = (u - n1 * n2 / 2.0) / sd;
    r.p_value = 0.5 * std::erfc(-r.z / std::sqrt(2.0));
    return r;
}

}  // namespace

TEST_CASE("tv_distance and pearson worked examples") {
    const std::vector<double> p{0.5, 0.5, 0.0}, q{0.0, 0.5, 0.5};
    CHECK(tv_distance(p, q) == doctest::Approx(0.5));
    CHECK(tv_distance(p, p) == 0.0);
    const std::vector<double> r{1.0, 0.0, 0.0};
    CHECK(tv_distance(r, q) == doctest::Approx(1.0));
    CHECK_THROWS_AS(tv_distance(p, std::vector<double>{0.5, 0.5}), Error);
    CHECK_THROWS_AS(tv_distance(p, std::vector<double>{0.5, 0.4, 0.0}), Error);

    const std::vector<std::pair<double, double>> line{{0, 1}, {1, 3}, {2, 5}};
    CHECK(pearson(line) == doctest::Approx(1.0));
    const std::vector<std::pair<double, double>> anti{{0, 1}, {1, 0}, {2, -1}};
    CHECK(pearson(anti) == doctest::Approx(-1.0));
    try {
        pearson(std::vector<std::pair<double, double>>{{1, 0}, {1, 2}, {1, 3}});
        FAIL("expected undefined-correlation");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::UndefinedCorrelation);
    }

    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::pair<double, double>> v(3 + rng.below(40)), w;
        for (auto& [a, b] : v) {
            a = rng.uniform();
            b = a * 0.3 + rng.uniform();
        }
        const double sa = 0.1 + 5.0 * rng.uniform(), sb = 0.1 + 5.0 * rng.uniform();
        const double oa = rng.uniform() * 10.0 - 5.0, ob = rng.uniform() * 10.0 - 5.0;
        for (auto [a, b] : v) {
            w.emplace_back(sa * a + oa, sb * b + ob);
        }
        CHECK(std::abs(pearson(v) - pearson(w)) < 1e-9);
    }
}

TEST_CASE("Mann-Whitney against a brute-force oracle") {
    Rng rng(9);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<double> x(2 + rng.below(30)), y(2 + rng.below(30));
        for (auto& v : x) {
            v = static_cast<double>(rng.below(8));
        }
        for (auto& v : y) {
            v = static_cast<double>(rng.below(8)) + (trial % 2 == 0 ? 1.0 : 0.0);
        }
        if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; }) &&
            std::all_of(y.begin(), y.end(), [&](double v) { return v == x[0]; })) {
            continue;
        }
        const auto got = mann_whitney_less(x, y);
        const auto want = mw_oracle(x, y);
        CHECK(got.u == doctest::Approx(want.u));
        CHECK(got.p_value == doctest::Approx(want.p_value).epsilon(1e-9));
    }
    const std::vector<double> lo{0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08};
    const std::vector<double> hi{0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.97, 0.99};
    CHECK(mann_whitney_less(lo, hi).p_value < 0.001);
    CHECK(mann_whitney_less(hi, lo).p_value > 0.999);
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}

TEST_CASE("templates") {
    const auto t = parse_template("<feature> [MASK]");
    CHECK(t.items.size() == 2);
    CHECK(t.mask_item == 1);
    for (const char* bad : {"<feature>", "[MASK] <feature> [MASK]", "<feature> [MASK] oops", ""}) {
        try {
            parse_template(bad);
            FAIL("expected invalid-argument");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::InvalidArgument);
        }
    }
}

TEST_CASE("feature pairs, spans and replacement") {
    const Fixture fx;
    const auto pool = fx.pool(50);
    const auto pairs = make_feature_pairs(pool, fx.lang(), 4);
    const std::size_t n = pairs.size() / 2;
    CHECK(n == fx.inv.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        CHECK(p.id == i);
        CHECK(p.kind == (i < n ? PairKind::TrueSynonym : PairKind::Cross));
        const std::vector<TokenId> at(p.x.begin() + static_cast<std::ptrdiff_t>(p.span.begin),
                                      p.x.begin() + static_cast<std::ptrdiff_t>(p.span.end));
        CHECK(at == p.a);
        const auto [s, side] = fx.inv.locate(fx.decode(p.a));
        const auto [sb, side_b] = fx.inv.locate(fx.decode(p.b));
        CHECK(side == Side::A);
        CHECK(side_b == Side::B);
        if (p.kind == PairKind::TrueSynonym) {
            CHECK(sb == s);
        } else {
            CHECK(sb != s);
        }
    }
    CHECK(make_feature_pairs(pool, fx.lang(), 4).size() == pairs.size());

    const auto spans = feature_spans(pool.examples[0], fx.lang());
    CHECK(spans.size() == pool.examples[0].synsets.size());
    const std::vector<TokenId> x{5, 6, 7, 8};
    CHECK(replace_span(x, {1, 3}, std::vector<TokenId>{9}) == std::vector<TokenId>{5, 9, 8});
    CHECK_THROWS_AS(replace_span(x, {3, 5}, std::vector<TokenId>{9}), Error);
    CHECK_THROWS_AS(replace_span(x, {2, 1}, std::vector<TokenId>{9}), Error);
}

TEST_CASE("probe quantities on a small model") {
    const Fixture fx;
    models::ModelBundle<double> pre(fx.config(), 1), ft(fx.config(), 2);
    Rng rng(3);
    for (auto* name : {"cls.w", "cls.b"}) {
        for (auto& v : ft.params().get(name).value.values()) {
            v = rng.normal();
        }
    }
    const auto tpl = parse_template("<feature> [MASK]");
    const auto pool = fx.pool(50);
    const auto pairs = make_feature_pairs(pool, fx.lang(), 4);

    const auto& p0 = pairs[0];
    CHECK(d_f0(pre, p0.a, p0.a, tpl) == 0.0);
    CHECK(d_f(ft, p0.x, p0.span, p0.a) == 0.0);
    const auto dist = mask_distribution(pre, p0.a, tpl);
    CHECK(dist.size() == fx.codec.vocab_size());
    double total = 0.0;
    for (double v : dist) {
        total += v;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(d_f0(pre, p0.a, p0.b, tpl) == doctest::Approx(d_f0(pre, p0.b, p0.a, tpl)).epsilon(1e-12));

    SUBCASE("saliency") {
        const auto spans = feature_spans(pool.examples[0], fx.lang());
        const auto sal = saliency(ft, pool.examples[0].tokens, spans);
        REQUIRE(sal.scores.size() == spans.size());
        CHECK(sal.argmax < spans.size());
        CHECK(sal.scores[sal.argmax] == *std::max_element(sal.scores.begin(), sal.scores.end()));
        // Reversing the candidates reverses the scores.
        std::vector<Span> rev(spans.rbegin(), spans.rend());
        const auto sal_r = saliency(ft, pool.examples[0].tokens, rev);
        for (std::size_t i = 0; i < spans.size(); ++i) {
            CHECK(sal_r.scores[spans.size() - 1 - i] == sal.scores[i]);
        }
        // A classifier that ignores its input gives zero everywhere.
        models::ModelBundle<double> flat(fx.config(), 2);
        const auto z = saliency(flat, pool.examples[0].tokens, spans);
        for (double s : z.scores) {
            CHECK(s == 0.0);
        }
    }
    SUBCASE("run_probe") {
        std::vector<Checkpoint<double>> cks{{"ft", 64, &ft}};
        const auto reps = run_probe<double>(pre, cks, pairs, tpl);
        REQUIRE(reps.size() == 1);
        const auto& r = reps[0];
        CHECK(r.records.size() == pairs.size());
        CHECK(r.true_pairs == pairs.size() / 2);
        CHECK(r.cross_pairs == pairs.size() / 2);
        for (std::size_t i = 0; i < r.records.size(); ++i) {
            CHECK(r.records[i].pair_id == i);
            CHECK(r.records[i].d_f0 == doctest::Approx(d_f0(pre, pairs[i].a, pairs[i].b, tpl)));
            CHECK(r.records[i].d_f == doctest::Approx(d_f(ft, pairs[i].x, pairs[i].span, pairs[i].b)));
        }
        CHECK(r.failure_rate() >= 0.0);
        CHECK(r.failure_rate() <= 1.0);
        const auto j = reports_to_json(reps, "<feature> [MASK]");
        CHECK(j.at("format") == "dhmlm-probe");

        auto same = pairs;
        for (auto& p : same) {
            p.b = p.a;
        }
        const auto deg = run_probe<double>(pre, cks, same, tpl);
        CHECK_FALSE(deg[0].r.has_value());
        CHECK(deg[0].true_pair_flips == 0);
        CHECK_THROWS_AS(run_probe<double>(pre, cks, std::vector<FeaturePair>{}, tpl), Error);
    }
}

TEST_CASE("distribution file ingestion") {
    const auto path = (std::filesystem::temp_directory_path() / "dhmlm_test_dists.txt").string();
    {
        std::ofstream out(path);
        out << "# external model\n";
        out << "0 f0_a 2 0.5 0.5\n0 f0_b 2 1.0 0.0\n0 f_x 2 0.9 0.1\n0 f_repl 2 0.2 0.8\n";
        out << "1 f0_a 3 0.2 0.3 0.5\n1 f0_b 3 0.2 0.3 0.5\n1 f_x 2 0.6 0.4\n1 f_repl 2 0.6 0.4\n";
        out << "2 f0_a 2 0.0 1.0\n2 f0_b 2 0.5 0.5\n2 f_x 2 0.3 0.7\n2 f_repl 2 0.4 0.6\n";
    }
    const auto r = probe_from_distribution_file(path, "ext");
    REQUIRE(r.records.size() == 3);
    CHECK(r.records[0].d_f0 == doctest::Approx(0.5));
    CHECK(r.records[0].d_f == doctest::Approx(0.7));
    CHECK(r.records[0].flipped);
    CHECK(r.records[1].d_f0 == 0.0);
    CHECK(r.records[1].d_f == 0.0);
    CHECK(r.records[2].d_f == doctest::Approx(0.1));
    REQUIRE(r.r.has_value());
    const std::vector<std::pair<double, double>> xy{{0.5, 0.7}, {0.0, 0.0}, {0.5, 0.1}};
    CHECK(*r.r == doctest::Approx(pearson(xy)));

    {
        std::ofstream out(path);
        out << "0 f0_a 2 0.5 0.5\n0 f0_b 3 0.2 0.3 0.5\n0 f_x 2 0.9 0.1\n0 f_repl 2 0.2 0.8\n";
    }
    CHECK_THROWS_AS(probe_from_distribution_file(path, "ext"), Error);
    {
        std::ofstream out(path);
        out << "0 f0_a 2 0.5 0.5\n0 f_x 2 0.9 0.1\n0 f_repl 2 0.2 0.8\n";
    }
    CHECK_THROWS_AS(probe_from_distribution_file(path, "ext"), Error);
}
