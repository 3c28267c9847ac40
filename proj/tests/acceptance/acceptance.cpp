// Desk-scale acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.
//
// usage: acceptance [--root DIR] [--manifest FILE] [--quick]
//   --root      artifact directory for the two pipeline runs (default: env
//               DHMLM_ACCEPTANCE_ROOT, else the build-tree default)
//   --manifest  run another manifest instead of the desk one (smoke runs)
//   --quick     only the criteria that need no pipeline run (8, 9 gradients)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "dhmlm/common/runtime.hpp"
#include "dhmlm/common/text_io.hpp"
#include "dhmlm/expcli/pipeline.hpp"
#include "dhmlm/models/cbow.hpp"
#include "dhmlm/ndgrad/ops.hpp"
#include "dhmlm/probe/probe.hpp"
#include "dhmlm/synlang/corpus.hpp"
#include "dhmlm/task/pattern.hpp"

using namespace dhmlm;
using namespace dhmlm::expcli;
using task::Domain;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Line {
    int id = 0;
    bool pass = false;
    std::string detail;
};

std::vector<Line> g_lines;

void log_stderr(const std::string& msg) {
    const auto t = std::time(nullptr);
    char buf[16];
    std::strftime(buf, sizeof buf, "%H:%M:%S", std::localtime(&t));
    std::cerr << "[" << buf << "] " << msg << std::endl;
}

void report(int id, bool pass, const std::string& detail) {
    g_lines.push_back({id, pass, detail});
    log_stderr("criterion " + std::to_string(id) + (pass ? " passed" : " failed"));
}

void note(const std::string& what, const std::string& detail) {
    std::cout << "  info " << what << ": " << detail << std::endl;
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(prec) << v;
    return o.str();
}

std::string sci(double v) {
    std::ostringstream o;
    o << std::scientific << std::setprecision(2) << v;
    return o.str();
}


// ---------------------------------------------------------------- criterion 8

void check_metrics() {
    std::mt19937_64 gen(8);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double tv_err = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + gen() % 40;
        std::vector<double> p(n), q(n);
        double sp = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            // occasional exact zeros exercise disjoint supports
            p[i] = gen() % 5 == 0 ? 0.0 : unif(gen);
            q[i] = gen() % 5 == 0 ? 0.0 : unif(gen);
            sp += p[i];
            sq += q[i];
        }
        p[0] += sp == 0.0 ? 1.0 : 0.0;
        q[n - 1] += sq == 0.0 ? 1.0 : 0.0;
        double zp = 0.0, zq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            zp += p[i];
            zq += q[i];
        }
        for (std::size_t i = 0; i < n; ++i) {
            p[i] /= zp;
            q[i] /= zq;
        }
        tv_err = std::max(tv_err, std::fabs(probe::tv_distance(p, q) - oracle::half_l1(p, q)));
    }

    double r_err = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 3 + gen() % 200;
        const double slope = unif(gen) * 4.0 - 2.0, noise = unif(gen) * 3.0, offset = unif(gen) * 1e3;
        std::normal_distribution<double> nd(0.0, 1.0);
        std::vector<std::pair<double, double>> xy(n);
        for (auto& [x, y] : xy) {
            x = offset + nd(gen);
            y = slope * x + noise * nd(gen);
        }
        r_err = std::max(r_err, std::fabs(probe::pearson(xy) - oracle::pearson_two_pass(xy)));
    }

    // label(): every sequence of length <= 8 over 5 synsets, several pattern sets
    auto membership = [](const task::PatternSet& ps, std::size_t n) {
        oracle::PatternMembership m;
        for (const auto& p : ps.patterns) {
            std::array<std::vector<bool>, 3> slot;
            for (std::size_t i = 0; i < 3; ++i) {
                slot[i].assign(n, false);
                for (auto s : p.set(i)) {
                    slot[i][static_cast<std::size_t>(s)] = true;
                }
            }
            m.push_back(slot);
        }
        return m;
    };
    std::size_t exhaustive = 0, exhaustive_bad = 0, positives = 0;
    const auto inv5 = synlang::build_inventory(5, 0);
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const auto ps = task::build_pattern_set(inv5, 1 + seed % 3, 1 + seed % 2, seed);
        const auto mem = membership(ps, 5);
        for (std::size_t len = 1; len <= 8; ++len) {
            std::vector<int> seq(len, 0);
            std::vector<synlang::SynsetId> ids(len, 0);
            for (;;) {
                for (std::size_t i = 0; i < len; ++i) {
                    ids[i] = static_cast<synlang::SynsetId>(seq[i]);
                }
                const bool fast = task::label(ids, ps);
                exhaustive_bad += fast != oracle::label_triples(seq, mem);
                positives += fast;
                ++exhaustive;
                std::size_t i = 0;
                while (i < len && ++seq[i] == 5) {
                    seq[i++] = 0;
                }
                if (i == len) {
                    break;
                }
            }
        }
    }
    std::size_t random_bad = 0;
    const auto inv64 = synlang::build_inventory(64, 0);
    std::vector<task::PatternSet> sets;
    for (std::size_t k : {1, 2, 3, 5}) {
        sets.push_back(task::build_pattern_set(inv64, 5, k, 40 + k));
    }
    std::vector<oracle::PatternMembership> mems;
    for (const auto& ps : sets) {
        mems.push_back(membership(ps, 64));
    }
    std::size_t random_pos = 0;
    for (int trial = 0; trial < 10'000; ++trial) {
        const std::size_t which = static_cast<std::size_t>(trial) % sets.size();
        const std::size_t len = 20 + gen() % 61;
        std::vector<int> seq(len);
        std::vector<synlang::SynsetId> ids(len);
        for (std::size_t i = 0; i < len; ++i) {
            seq[i] = static_cast<int>(gen() % 64);
            ids[i] = static_cast<synlang::SynsetId>(seq[i]);
        }
        const bool fast = task::label(ids, sets[which]);
        random_bad += fast != oracle::label_triples(seq, mems[which]);
        random_pos += fast;
    }

    const bool pass = tv_err <= 1e-9 && r_err <= 1e-9 && exhaustive_bad == 0 && random_bad == 0;
    report(8, pass,
           "tv max |diff| " + sci(tv_err) + " (1000 pairs); pearson max |diff| " + sci(r_err) +
               " (1000 samples); label mismatches " + std::to_string(exhaustive_bad) + "/" +
               std::to_string(exhaustive) + " exhaustive (" + std::to_string(positives) + " positive), " +
               std::to_string(random_bad) + "/10000 random (" + std::to_string(random_pos) + " positive)");
}

// ------------------------------------------------------- criterion 9, part 1

using ndgrad::Tape;
using ndgrad::Tensor;
using ndgrad::Var;

Tensor<double> random_tensor(ndgrad::Shape shape, std::mt19937_64& gen) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Tensor<double> t(std::move(shape));
    for (auto& v : t.values()) {
        v = nd(gen);
    }
    return t;
}

// |a - n| / max(|a|, |n|); components where both are below 1e-7 use the
// absolute difference instead.
double rel_error(double a, double n) {
    const double scale = std::max(std::fabs(a), std::fabs(n));
    return scale < 1e-7 ? std::fabs(a - n) : std::fabs(a - n) / scale;
}

using OpFn = std::function<Var<double>(std::vector<Var<double>>&)>;

// Fourth-order central difference (-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h.
template <class F>
double central_difference(F&& f_at, double h) {
    return (-f_at(2 * h) + 8 * f_at(h) - 8 * f_at(-h) + f_at(-2 * h)) / (12 * h);
}

constexpr double kStep = 1e-4;

double op_grad_error(const OpFn& f, std::vector<Tensor<double>> inputs) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) {
        vars.push_back(tape.variable(t));
    }
    tape.backward(f(vars));
    auto eval = [&](const std::vector<Tensor<double>>& in) {
        Tape<double> t2(false);
        std::vector<Var<double>> v2;
        for (const auto& t : in) {
            v2.push_back(t2.variable(t));
        }
        return f(v2).value()[0];
    };
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const bool has = tape.has_grad(vars[k]) && !tape.grad(vars[k]).empty();
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double num = central_difference(
                [&](double d) {
                    auto moved = inputs;
                    moved[k][i] += d;
                    return eval(moved);
                },
                kStep);
            worst = std::max(worst, rel_error(has ? tape.grad(vars[k])[i] : 0.0, num));
        }
    }
    return worst;
}

Var<double> weighted_sum(Var<double> y) {
    std::mt19937_64 gen(99);
    return ndgrad::sum(ndgrad::mul(y, y.tape->constant(random_tensor(y.value().shape(), gen))));
}

// Full two-layer encoder with both heads; every parameter element is perturbed.
double model_grad_error() {
    models::TransformerConfig cfg;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.model_dim = 8;
    cfg.ff_dim = 12;
    cfg.max_positions = 7;
    cfg.vocab_size = 11;
    cfg.dropout = 0.0;
    models::ModelBundle<double> model(cfg, 5);
    std::mt19937_64 gen(6);
    std::normal_distribution<double> nd(0.0, 0.5);
    // nonzero classifier and biases so every path carries gradient
    for (auto& p : model.params()) {
        for (auto& v : p.value.values()) {
            v += nd(gen) * 0.2;
        }
    }
    const std::vector<std::vector<synlang::TokenId>> rows{{3, 2, 7, 9, 4}, {10, 5, 2}};
    const auto batch = models::make_batch(rows);
    const std::vector<std::size_t> positions{2, 4, 8};
    const std::vector<std::int32_t> mlm_targets{8, 4, 6};
    const std::vector<std::int32_t> labels{1, 0};
    auto loss = [&](Tape<double>& tape) {
        auto h = model.encode(tape, batch, nullptr);
        auto a = ndgrad::cross_entropy(model.mlm_logits(tape, h, positions), mlm_targets);
        auto b = ndgrad::cross_entropy(model.cls_logits(tape, h, batch), labels);
        return ndgrad::add(a, b);
    };
    model.params().zero_grad();
    {
        Tape<double> tape;
        tape.backward(loss(tape));
    }
    double worst = 0.0;
    for (auto& p : model.params()) {
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double orig = p.value[i];
            const double num = central_difference(
                [&](double d) {
                    p.value[i] = orig + d;
                    Tape<double> t(false);
                    return loss(t).value()[0];
                },
                kStep);
            p.value[i] = orig;
            worst = std::max(worst, rel_error(p.grad[i], num));
        }
    }
    return worst;
}

std::pair<bool, std::string> check_gradients() {
    std::mt19937_64 gen(9);
    std::vector<std::pair<std::string, double>> errs;
    using V = std::vector<Var<double>>;
    const std::vector<std::int32_t> ids{0, 2, 2, 1};
    const std::vector<std::size_t> take{3, 0};
    const std::vector<std::int32_t> tgt{1, 0, 4};
    const std::vector<std::uint8_t> valid{1, 1, 1, 0, 1, 0, 1, 1};
    errs.emplace_back("matmul", op_grad_error([](V& v) { return weighted_sum(ndgrad::matmul(v[0], v[1])); },
                                              {random_tensor({3, 4}, gen), random_tensor({4, 2}, gen)}));
    errs.emplace_back("linear",
                      op_grad_error([](V& v) { return weighted_sum(ndgrad::linear(v[0], v[1], v[2])); },
                                    {random_tensor({3, 4}, gen), random_tensor({4, 5}, gen), random_tensor({5}, gen)}));
    errs.emplace_back("add", op_grad_error([](V& v) { return weighted_sum(ndgrad::add(v[0], v[1])); },
                                           {random_tensor({2, 3}, gen), random_tensor({2, 3}, gen)}));
    errs.emplace_back("mul", op_grad_error([](V& v) { return weighted_sum(ndgrad::mul(v[0], v[1])); },
                                           {random_tensor({2, 3}, gen), random_tensor({2, 3}, gen)}));
    errs.emplace_back("scale", op_grad_error([](V& v) { return weighted_sum(ndgrad::scale(v[0], -1.3)); },
                                             {random_tensor({2, 3}, gen)}));
    errs.emplace_back("sum", op_grad_error([](V& v) { return ndgrad::sum(ndgrad::mul(v[0], v[0])); },
                                           {random_tensor({2, 3}, gen)}));
    errs.emplace_back("mean", op_grad_error([](V& v) { return ndgrad::mean(ndgrad::mul(v[0], v[0])); },
                                            {random_tensor({2, 3}, gen)}));
    errs.emplace_back("embedding",
                      op_grad_error([&](V& v) { return weighted_sum(ndgrad::embedding(v[0], ids)); },
                                    {random_tensor({3, 4}, gen)}));
    errs.emplace_back("take_rows", op_grad_error([&](V& v) { return weighted_sum(ndgrad::take_rows(v[0], take)); },
                                                 {random_tensor({4, 3}, gen)}));
    errs.emplace_back("softmax", op_grad_error([](V& v) { return weighted_sum(ndgrad::softmax(v[0])); },
                                               {random_tensor({3, 5}, gen)}));
    errs.emplace_back("layer_norm",
                      op_grad_error([](V& v) { return weighted_sum(ndgrad::layer_norm(v[0], v[1], v[2])); },
                                    {random_tensor({3, 6}, gen), random_tensor({6}, gen), random_tensor({6}, gen)}));
    errs.emplace_back("gelu", op_grad_error([](V& v) { return weighted_sum(ndgrad::gelu(v[0])); },
                                            {random_tensor({4, 4}, gen)}));
    errs.emplace_back("relu", op_grad_error([](V& v) { return weighted_sum(ndgrad::relu(v[0])); },
                                            {random_tensor({4, 4}, gen)}));
    errs.emplace_back("dropout", op_grad_error(
                                     [](V& v) {
                                         Rng r(17);
                                         return weighted_sum(ndgrad::dropout(v[0], 0.3, r));
                                     },
                                     {random_tensor({4, 5}, gen)}));
    errs.emplace_back("cross_entropy", op_grad_error([&](V& v) { return ndgrad::cross_entropy(v[0], tgt); },
                                                     {random_tensor({3, 5}, gen)}));
    errs.emplace_back("nll_from_probs",
                      op_grad_error([&](V& v) { return ndgrad::nll_from_probs(ndgrad::softmax(v[0]), tgt); },
                                    {random_tensor({3, 5}, gen)}));
    errs.emplace_back("attention",
                      op_grad_error([&](V& v) {
                          return weighted_sum(ndgrad::attention(v[0], v[1], v[2], 2, 4, 2, valid));
                      },
                                    {random_tensor({8, 6}, gen), random_tensor({8, 6}, gen), random_tensor({8, 6}, gen)}));
    errs.emplace_back("2-layer model", model_grad_error());

    double worst = 0.0;
    std::string where;
    std::string all;
    for (const auto& [name, e] : errs) {
        if (e >= worst) {
            worst = e;
            where = name;
        }
        all += (all.empty() ? "" : ", ") + name + " " + sci(e);
    }
    note("gradient check", all);
    return {worst < 1e-4, "autodiff vs finite differences max rel err " + sci(worst) + " (" + where + ", " +
                              std::to_string(errs.size()) + " checks)"};
}

// ------------------------------------------------------- criterion 9, part 2

struct MlmCheck {
    double frac_within = 0.0;
    double mean_tv = 0.0;
    std::size_t contexts = 0;
    double ppl_ratio = 0.0;
};

MlmCheck check_mlm(const Workspace& ws, PretrainVariant pv, synlang::DhMode dh) {
    const auto lang = ws.load_language();
    const auto& inv = lang.inventory;
    const auto& codec = lang.codec;
    const std::size_t n = inv.size();
    std::array<std::vector<std::vector<double>>, 2> trans;
    for (int k = 0; k < 2; ++k) {
        trans[k].assign(n, std::vector<double>(n, 0.0));
        const auto& chain = lang.chains.chain(k + 1);
        for (std::size_t s = 0; s < n; ++s) {
            for (auto t : chain.successors(static_cast<synlang::SynsetId>(s))) {
                trans[k][s][static_cast<std::size_t>(t)] += 0.5;
            }
        }
    }
    auto model = models::load_model<float>(ws.pretrain_path(pv));
    const auto val = synlang::load_corpus(ws.corpus_path(dh, "val"));
    MlmCheck out;
    double model_nll = 0.0, oracle_nll = 0.0;
    for (const auto& rec : val.records) {
        require(rec.tokens.size() == rec.synsets.size(), ErrorKind::InvalidArgument, "single-token codec expected");
        const std::size_t T = rec.synsets.size();
        std::vector<int> seq(rec.synsets.begin(), rec.synsets.end());

        // next synset: the last position is masked, everything before it is context
        {
            auto tokens = rec.tokens;
            tokens[T - 1] = synlang::special::kMask;
            const std::vector<std::vector<synlang::TokenId>> rows{tokens};
            const std::vector<std::size_t> pos{T};  // +1 for CLS
            const auto probs = models::forward_mlm(model, models::make_batch(rows), pos);
            std::vector<double> q(n, 0.0);
            double z = 0.0;
            for (std::size_t s = 0; s < n; ++s) {
                for (auto side : {synlang::Side::A, synlang::Side::B}) {
                    q[s] += probs[static_cast<std::size_t>(
                        codec.render(inv.feature(static_cast<synlang::SynsetId>(s), side))[0])];
                }
                z += q[s];
            }
            for (double& v : q) {
                v /= z;
            }
            const std::vector<int> prefix(seq.begin(), seq.end() - 1);
            auto p = oracle::next_synset(prefix, trans);
            if (dh == synlang::DhMode::Without) {
                // the side of every token names the chain
                std::fill(p.begin(), p.end(), 0.0);
                for (std::size_t s = 0; s < n; ++s) {
                    p[s] = trans[rec.chain - 1][prefix.back()][s];
                }
            }
            const double tv = oracle::half_l1(p, q);
            out.mean_tv += tv;
            out.frac_within += tv <= 0.1;
            ++out.contexts;
        }
        // interior position perplexity against the exact conditional
        {
            const std::size_t t = T / 2;
            auto tokens = rec.tokens;
            tokens[t] = synlang::special::kMask;
            const std::vector<std::vector<synlang::TokenId>> rows{tokens};
            const std::vector<std::size_t> pos{t + 1};
            const auto probs = models::forward_mlm(model, models::make_batch(rows), pos);
            model_nll -= std::log(std::max(static_cast<double>(probs[static_cast<std::size_t>(rec.tokens[t])]), 1e-30));
            double p_syn;
            if (dh == synlang::DhMode::With) {
                p_syn = oracle::interior_synset(seq, t, trans)[static_cast<std::size_t>(seq[t])] * 0.5;
            } else {
                const auto& tr = trans[rec.chain - 1];
                double z = 0.0;
                for (std::size_t s = 0; s < n; ++s) {
                    z += tr[seq[t - 1]][s] * tr[s][seq[t + 1]];
                }
                p_syn = tr[seq[t - 1]][seq[t]] * tr[seq[t]][seq[t + 1]] / z;
            }
            oracle_nll -= std::log(p_syn);
        }
    }
    const double c = static_cast<double>(out.contexts);
    out.frac_within /= c;
    out.mean_tv /= c;
    out.ppl_ratio = std::exp((model_nll - oracle_nll) / c);
    return out;
}

// ------------------------------------------------------------ table criteria

class Table {
public:
    explicit Table(const std::vector<ResultRow>& rows) {
        for (const auto& r : rows) {
            acc_[{r.preset, r.variant, r.size, r.domain}].push_back(r.accuracy);
        }
    }
    bool has(Preset p, Variant v, std::size_t size, Domain d) const { return acc_.count({p, v, size, d}) > 0; }
    const std::vector<double>& values(Preset p, Variant v, std::size_t size, Domain d) const {
        const auto it = acc_.find({p, v, size, d});
        require(it != acc_.end(), ErrorKind::NotFound,
                "result table lacks " + to_string(p) + "/" + to_string(v) + "/" + std::to_string(size) + "/" +
                    task::to_string(d));
        return it->second;
    }
    double mean(Preset p, Variant v, std::size_t size, Domain d) const {
        const auto& xs = values(p, v, size, d);
        double s = 0.0;
        for (double x : xs) {
            s += x;
        }
        return s / static_cast<double>(xs.size());
    }

private:
    std::map<std::tuple<Preset, Variant, std::size_t, Domain>, std::vector<double>> acc_;
};

constexpr Domain kDomains[] = {Domain::A_D1, Domain::A_D2, Domain::B_D1, Domain::B_D2};

void run_table_criteria(const Workspace& ws, const Table& t) {
    const auto pct = [](double x) { return fmt(100.0 * x, 1); };
    // 1
    try {
        int all_better = 0, big = 0;
        std::string d;
        for (Domain dom : kDomains) {
            const double w = t.mean(Preset::Mix50, Variant::WithDh, 1024, dom);
            const double wo = t.mean(Preset::Mix50, Variant::WithoutDh, 1024, dom);
            all_better += w > wo;
            big += w - wo >= 0.05;
            d += task::to_string(dom) + " " + pct(w) + " vs " + pct(wo) + "; ";
        }
        report(1, all_better == 4 && big >= 2,
               "50-50 @1024 w-dh vs wo-dh: " + d + "better on " + std::to_string(all_better) + "/4, >=5 pts on " +
                   std::to_string(big));
    } catch (const Error& e) {
        report(1, false, e.what());
    }
    // 2
    try {
        bool band = true;
        std::string d;
        for (std::size_t size : {256, 1024, 4096}) {
            for (Domain dom : {Domain::B_D1, Domain::B_D2}) {
                const double a = t.mean(Preset::FullAD1, Variant::WithoutDh, size, dom);
                band = band && a >= 0.45 && a <= 0.55;
                d += std::to_string(size) + "/" + task::to_string(dom) + " " + pct(a) + " ";
            }
        }
        const double w = t.mean(Preset::FullAD1, Variant::WithDh, 256, Domain::B_D1);
        std::string trend;
        for (std::size_t size : {256, 1024, 4096}) {
            trend += " " + pct(t.mean(Preset::FullAD1, Variant::WithDh, size, Domain::B_D1));
        }
        report(2, band && w > 0.55,
               "100-A-D1 wo-dh on B: " + d + (band ? "(in band)" : "(outside band)") + "; w-dh B-D1 @256 " + pct(w) +
                   " (w-dh B-D1 by size:" + trend + ")");
    } catch (const Error& e) {
        report(2, false, e.what());
    }
    // 3
    try {
        const double w = t.mean(Preset::Mix90, Variant::WithDh, 4096, Domain::B_D2);
        const double wo = t.mean(Preset::Mix90, Variant::WithoutDh, 4096, Domain::B_D2);
        report(3, w - wo >= 0.10, "90-10 @4096 B-D2: w-dh " + pct(w) + " vs wo-dh " + pct(wo));
    } catch (const Error& e) {
        report(3, false, e.what());
    }
    // 4
    try {
        const double w = t.mean(Preset::FullAD1, Variant::WithDh, 4096, Domain::A_D2);
        const double wo = t.mean(Preset::FullAD1, Variant::WithoutDh, 4096, Domain::A_D2);
        const double sc = t.mean(Preset::FullAD1, Variant::Scratch, 4096, Domain::A_D2);
        report(4, w - sc >= 0.05 && wo - sc >= 0.05,
               "100-A-D1 @4096 A-D2: w-dh " + pct(w) + ", wo-dh " + pct(wo) + ", scratch " + pct(sc) +
                   "; |w-dh - wo-dh| = " + pct(std::fabs(w - wo)) + " pts");
    } catch (const Error& e) {
        report(4, false, e.what());
    }
    // 5
    try {
        double worst = 0.0;
        std::string d;
        for (Domain dom : kDomains) {
            const double sh = t.mean(Preset::Mix50, Variant::Shuffle, 4096, dom);
            const double sc = t.mean(Preset::Mix50, Variant::Scratch, 4096, dom);
            worst = std::max(worst, std::fabs(sh - sc));
            d += task::to_string(dom) + " " + pct(sh) + " vs " + pct(sc) + "; ";
        }
        report(5, worst <= 0.03, "50-50 @4096 shuffle vs scratch: " + d + "max gap " + pct(worst) + " pts");
    } catch (const Error& e) {
        report(5, false, e.what());
    }
    // 6
    try {
        const double cb = 0.5 * (t.mean(Preset::Mix50, Variant::Cbow, 1024, Domain::A_D1) +
                                 t.mean(Preset::Mix50, Variant::Cbow, 1024, Domain::B_D2));
        const double sc = 0.5 * (t.mean(Preset::Mix50, Variant::Scratch, 1024, Domain::A_D1) +
                                 t.mean(Preset::Mix50, Variant::Scratch, 1024, Domain::B_D2));
        // nearest neighbours recomputed from the stored table
        const auto lang = ws.load_language();
        const auto cbow = models::load_cbow_table(ws.pretrain_path(PretrainVariant::Cbow));
        const std::size_t V = cbow.vocab_size(), dim = cbow.dim();
        auto cosine = [&](std::size_t a, std::size_t b) {
            double ab = 0.0, aa = 0.0, bb = 0.0;
            for (std::size_t c = 0; c < dim; ++c) {
                const double x = cbow.input.at(a, c), y = cbow.input.at(b, c);
                ab += x * y;
                aa += x * x;
                bb += y * y;
            }
            return ab / std::sqrt(aa * bb);
        };
        std::size_t hits = 0;
        const std::size_t n = lang.inventory.size();
        for (std::size_t s = 0; s < n; ++s) {
            const auto id = static_cast<synlang::SynsetId>(s);
            const auto ta = static_cast<std::size_t>(lang.codec.render(lang.inventory.feature(id, synlang::Side::A))[0]);
            const auto tb = static_cast<std::size_t>(lang.codec.render(lang.inventory.feature(id, synlang::Side::B))[0]);
            std::size_t best = 0;
            double best_cos = -2.0;
            for (std::size_t tok = synlang::kFirstRegularToken; tok < V; ++tok) {
                if (tok != ta && cosine(ta, tok) > best_cos) {
                    best_cos = cosine(ta, tok);
                    best = tok;
                }
            }
            hits += best == tb;
        }
        const double nn = static_cast<double>(hits) / static_cast<double>(n);
        report(6, cb > sc && nn >= 0.8,
               "50-50 @1024 in-domain (A-D1, B-D2 mean): cbow " + pct(cb) + " vs scratch " + pct(sc) +
                   "; CBOW synonym NN accuracy " + pct(nn) + "%");
    } catch (const Error& e) {
        report(6, false, e.what());
    }
}

void run_probe_criterion(const Workspace& ws) {
    try {
        for (Variant v : {Variant::WithDh, Variant::WithoutDh}) {
            const auto j = json::parse(text::read_file(ws.probe_path(v)));
            std::vector<double> tr, cr;
            for (const auto& p : j.at("pairs")) {
                (p.at("kind").get<std::string>() == "true" ? tr : cr).push_back(p.at("d_f0").get<double>());
            }
            const auto rt = oracle::mann_whitney_smaller(tr, cr);
            const double mt = oracle::median(tr), mc = oracle::median(cr);
            const std::string d = "median D_f0 true " + fmt(mt) + " vs cross " + fmt(mc) + ", U " + fmt(rt.u, 1) +
                                  ", p " + sci(rt.p_value) + " (" + std::to_string(tr.size()) + "+" +
                                  std::to_string(cr.size()) + " pairs; stored p " +
                                  sci(j.at("d_f0_separation").at("p_value").get<double>()) + ")";
            if (v == Variant::WithDh) {
                report(7, mt < mc && rt.p_value < 0.01, "w-dh: " + d);
            } else {
                note("probe wo-dh (not required)", d);
            }
        }
    } catch (const std::exception& e) {
        report(7, false, e.what());
    }
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    std::string root, manifest_path;
    bool quick = false;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--root" && i + 1 < argc) {
            root = argv[++i];
        } else if (a == "--manifest" && i + 1 < argc) {
            manifest_path = argv[++i];
        } else if (a == "--quick") {
            quick = true;
        } else {
            std::cerr << "usage: acceptance [--root DIR] [--manifest FILE] [--quick]\n";
            return 2;
        }
    }
    if (root.empty()) {
        const char* env = std::getenv("DHMLM_ACCEPTANCE_ROOT");
        root = env != nullptr && *env != '\0' ? env : DHMLM_ACCEPTANCE_DEFAULT_ROOT;
    }

    check_metrics();
    const auto [grad_ok, grad_detail] = check_gradients();

    if (quick) {
        report(9, grad_ok, grad_detail + "; MLM check skipped (--quick)");
    } else {
        std::string c10;
        bool c10_ok = false;
        try {
            const Manifest m = manifest_path.empty() ? desk_manifest() : load_manifest(manifest_path);
            const auto t0 = std::chrono::steady_clock::now();
            Workspace a(root + "/run_a", m, [](const std::string& s) { log_stderr("[a] " + s); });
            run_all(a);
            const auto t1 = std::chrono::steady_clock::now();
            Workspace b(root + "/run_b", m, [](const std::string& s) { log_stderr("[b] " + s); });
            run_all(b);
            const auto t2 = std::chrono::steady_clock::now();
            note("pipeline wall time", "run a " + fmt(std::chrono::duration<double>(t1 - t0).count() / 60.0, 1) +
                                           " min, run b " +
                                           fmt(std::chrono::duration<double>(t2 - t1).count() / 60.0, 1) +
                                           " min (reused artifacts count as zero)");

            const Table table(load_results_csv(a.path("report/results.csv")));
            run_table_criteria(a, table);
            run_probe_criterion(a);

            const auto wdh = check_mlm(a, PretrainVariant::WithDh, synlang::DhMode::With);
            const auto wodh = check_mlm(a, PretrainVariant::WithoutDh, synlang::DhMode::Without);
            report(9, grad_ok && wdh.frac_within >= 0.9,
                   grad_detail + "; w-dh MLM next-synset TV <= 0.1 on " + fmt(100.0 * wdh.frac_within, 1) + "% of " +
                       std::to_string(wdh.contexts) + " held-out contexts (mean TV " + fmt(wdh.mean_tv) + ")");
            note("MLM wo-dh next-synset", "TV <= 0.1 on " + fmt(100.0 * wodh.frac_within, 1) + "% (mean TV " +
                                              fmt(wodh.mean_tv) + ")");
            note("MLM interior perplexity vs exact conditional",
                 "w-dh ratio " + fmt(wdh.ppl_ratio) + ", wo-dh ratio " + fmt(wodh.ppl_ratio) + " (within 15%: " +
                     (wdh.ppl_ratio <= 1.15 && wodh.ppl_ratio <= 1.15 ? "yes" : "no") + ")");
            {
                std::string d;
                for (Domain dom : {Domain::A_D1, Domain::B_D2}) {
                    for (Variant v : {Variant::WithDh, Variant::WithoutDh, Variant::Scratch, Variant::Shuffle}) {
                        if (table.has(Preset::Mix50, v, 4096, dom)) {
                            d += to_string(v) + "/" + task::to_string(dom) + " " +
                                 fmt(100.0 * table.mean(Preset::Mix50, v, 4096, dom), 1) + " ";
                        }
                    }
                }
                note("50-50 @4096 in-domain test accuracy", d);
            }

            const std::string ta = text::read_file(a.path("report/results.csv"));
            const std::string tb = text::read_file(b.path("report/results.csv"));
            c10_ok = !ta.empty() && ta == tb;
            c10 = "report/results.csv of two independent runs: " + std::to_string(ta.size()) + " vs " +
                  std::to_string(tb.size()) + " bytes, " + (c10_ok ? "identical" : "different");
        } catch (const std::exception& e) {
            c10 = e.what();
            for (int id = 1; id <= 9; ++id) {
                bool seen = false;
                for (const auto& l : g_lines) {
                    seen = seen || l.id == id;
                }
                if (!seen) {
                    report(id, false, std::string("pipeline failed: ") + e.what());
                }
            }
        }
        report(10, c10_ok, c10);
    }

    std::sort(g_lines.begin(), g_lines.end(), [](const Line& x, const Line& y) { return x.id < y.id; });
    std::size_t passed = 0;
    for (const auto& l : g_lines) {
        std::cout << "criterion " << l.id << ": " << (l.pass ? "PASS" : "FAIL") << " | " << l.detail << "\n";
        passed += l.pass;
    }
    std::cout << "acceptance: " << passed << "/" << g_lines.size() << " criteria passed" << std::endl;
    return passed == g_lines.size() ? 0 : 1;
}
