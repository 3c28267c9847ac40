#include "dhmlm/task/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "dhmlm/common/error.hpp"
#include "dhmlm/common/rng.hpp"
#include "dhmlm/common/text_io.hpp"

namespace dhmlm::task {

namespace {
constexpr int kDatasetVersion = 1;
constexpr std::size_t kPilotCandidates = 1000;
}  // namespace

std::string to_string(Domain d) {
    switch (d) {
        case Domain::A_D1: return "A-D1";
        case Domain::B_D1: return "B-D1";
        case Domain::A_D2: return "A-D2";
        case Domain::B_D2: return "B-D2";
    }
    return "?";
}

Domain parse_domain(const std::string& s) {
    for (Domain d : kAllDomains) {
        if (to_string(d) == s) {
            return d;
        }
    }
    fail(ErrorKind::InvalidArgument, "unknown domain '" + s + "'");
}

std::string to_string(BalancePolicy b) { return b == BalancePolicy::Balanced ? "balanced" : "natural"; }

BalancePolicy parse_balance(const std::string& s) {
    if (s == "balanced") {
        return BalancePolicy::Balanced;
    }
    if (s == "natural") {
        return BalancePolicy::Natural;
    }
    fail(ErrorKind::InvalidArgument, "unknown balance policy '" + s + "'");
}

std::size_t Dataset::positives() const noexcept {
    return static_cast<std::size_t>(
        std::count_if(examples.begin(), examples.end(), [](const LabeledExample& e) { return e.label; }));
}

Dataset generate_task_dataset(const TaskDatasetSpec& spec, const PatternSet& ps, const synlang::Language& lang) {
    require(spec.length >= 1, ErrorKind::InvalidArgument, "task sequence length must be >= 1");
    const Side side = side_of(spec.domain);
    const auto& chain = lang.chains.chain(chain_of(spec.domain));

    Dataset ds;
    ds.name = to_string(spec.domain);
    ds.examples.reserve(spec.size);
    const std::vector<Side> sides(spec.length, side);

    std::size_t want_pos = spec.size / 2;
    std::size_t want_neg = spec.size - want_pos;
    std::size_t candidates = 0;
    std::size_t natural_pos = 0;
    const std::size_t max_candidates = std::max<std::size_t>(100'000, 200 * spec.size);
    auto rate = [&] { return static_cast<double>(natural_pos) / static_cast<double>(candidates); };
    auto check_rate = [&] {
        if (spec.balance == BalancePolicy::Balanced && (rate() < spec.min_rate || rate() > spec.max_rate)) {
            fail(ErrorKind::GenerationFailure, "natural positive rate " + std::to_string(rate()) + " for " +
                                                   to_string(spec.domain) + " cannot be balanced");
        }
    };

    while (ds.examples.size() < spec.size) {
        if (candidates == max_candidates) {
            check_rate();
            fail(ErrorKind::GenerationFailure, "candidate budget exhausted at positive rate " + std::to_string(rate()));
        }
        Rng rng(derive_seed(spec.seed, candidates));
        ++candidates;
        auto synsets = chain.walk(spec.length, rng);
        const bool y = label(synsets, ps);
        natural_pos += y ? 1 : 0;
        if (candidates == kPilotCandidates) {
            check_rate();
        }
        if (spec.balance == BalancePolicy::Balanced) {
            std::size_t& quota = y ? want_pos : want_neg;
            if (quota == 0) {
                continue;
            }
            --quota;
        }
        LabeledExample ex;
        ex.tokens = lang.codec.render_sequence(lang.inventory, synsets, sides);
        ex.label = y;
        ex.synsets = std::move(synsets);
        ex.domain = spec.domain;
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

std::vector<TokenId> render_with_sides(const LabeledExample& ex, std::span<const Side> sides,
                                       const synlang::Language& lang) {
    return lang.codec.render_sequence(lang.inventory, ex.synsets, sides);
}

std::vector<std::size_t> mixture_counts(const std::vector<MixturePart>& parts, std::size_t total) {
    require(!parts.empty(), ErrorKind::InvalidArgument, "mixture needs at least one part");
    double sum = 0.0;
    for (const auto& p : parts) {
        require(p.dataset != nullptr, ErrorKind::InvalidArgument, "mixture part without dataset");
        require(p.proportion >= 0.0, ErrorKind::InvalidArgument, "negative mixture proportion");
        sum += p.proportion;
    }
    require(std::abs(sum - 1.0) <= 1e-9, ErrorKind::InvalidArgument,
            "mixture proportions sum to " + std::to_string(sum) + ", not 1");
    std::vector<std::size_t> counts(parts.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const double exact = parts[i].proportion * static_cast<double>(total);
        // Snap values within rounding noise of an integer before flooring.
        const double snapped = std::abs(exact - std::round(exact)) < 1e-6 ? std::round(exact) : exact;
        counts[i] = static_cast<std::size_t>(std::floor(snapped));
        assigned += counts[i];
        remainders.emplace_back(snapped - std::floor(snapped), i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& x, const auto& y) { return x.first > y.first; });
    for (std::size_t r = 0; assigned < total; ++r, ++assigned) {
        ++counts[remainders[r % remainders.size()].second];
    }
    return counts;
}

Dataset make_mixture(const std::vector<MixturePart>& parts, std::size_t total, std::uint64_t seed) {
    const auto counts = mixture_counts(parts, total);
    Dataset out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto& src = parts[i].dataset->examples;
        require(counts[i] <= src.size(), ErrorKind::InvalidArgument,
                "mixture part " + parts[i].dataset->name + " has " + std::to_string(src.size()) +
                    " examples, needs " + std::to_string(counts[i]));
        if (counts[i] == 0) {
            continue;
        }
        out.name += (out.name.empty() ? "" : "+") + parts[i].dataset->name;
        out.examples.insert(out.examples.end(), src.begin(), src.begin() + static_cast<std::ptrdiff_t>(counts[i]));
    }
    const auto nonempty = std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; });
    if (nonempty > 1) {
        Rng rng(derive_seed(seed, "mixture"));
        rng.shuffle(std::span<LabeledExample>(out.examples));
    }
    return out;
}

void write_dataset(std::ostream& out, const Dataset& ds) {
    const nlohmann::json header = {
        {"format", "dhmlm-dataset"}, {"version", kDatasetVersion}, {"name", ds.name}, {"size", ds.size()}};
    out << header.dump() << '\n';
    std::string line;
    for (const auto& ex : ds.examples) {
        line.clear();
        line += ex.label ? '1' : '0';
        line += '\t';
        line += to_string(ex.domain);
        line += '\t';
        text::append_ints(line, ex.synsets);
        line += '\t';
        text::append_ints(line, ex.tokens);
        line += '\n';
        out << line;
    }
}

Dataset read_dataset(std::istream& in) {
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::Io, "dataset file is empty");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Io, std::string("bad dataset header: ") + e.what());
    }
    require(header.value("format", "") == "dhmlm-dataset" && header.value("version", 0) == kDatasetVersion,
            ErrorKind::Io, "not a supported dataset file");
    Dataset ds;
    ds.name = header.at("name").get<std::string>();
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto f = text::split(line, '\t');
        require(f.size() == 4 && (f[0] == "0" || f[0] == "1"), ErrorKind::Io, "bad dataset record");
        LabeledExample ex;
        ex.label = f[0] == "1";
        ex.domain = parse_domain(std::string(f[1]));
        ex.synsets = text::parse_ints<synlang::SynsetId>(f[2]);
        ex.tokens = text::parse_ints<TokenId>(f[3]);
        ds.examples.push_back(std::move(ex));
    }
    require(ds.examples.size() == header.at("size").get<std::size_t>(), ErrorKind::Io, "dataset size mismatch");
    return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) {
    text::write_file_atomic(path, [&](std::ostream& out) { write_dataset(out, ds); });
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::NotFound, "cannot open dataset " + path);
    return read_dataset(in);
}

}  // namespace dhmlm::task
