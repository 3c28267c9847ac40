#include "dhmlm/synlang/corpus.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dhmlm/common/error.hpp"
#include "dhmlm/common/rng.hpp"
#include "dhmlm/common/text_io.hpp"

namespace dhmlm::synlang {

namespace {

constexpr int kCorpusVersion = 1;
constexpr std::uint64_t kSideStream = 0x51de;

}  // namespace

std::string to_string(DhMode dh) { return dh == DhMode::With ? "with" : "without"; }

DhMode parse_dh_mode(const std::string& s) {
    if (s == "with") {
        return DhMode::With;
    }
    if (s == "without") {
        return DhMode::Without;
    }
    fail(ErrorKind::InvalidArgument, "unknown dh mode '" + s + "'");
}

void CorpusSpec::validate() const {
    require(length >= 1, ErrorKind::InvalidArgument, "corpus sequence length must be >= 1");
}

SequenceRecord sample_sequence(const CorpusSpec& spec, const Language& lang, std::uint64_t stream_seed) {
    Rng walk_rng(stream_seed);
    Rng side_rng(derive_seed(stream_seed, kSideStream));
    SequenceRecord rec;
    rec.chain = walk_rng.coin() ? 2 : 1;
    rec.synsets = lang.chains.chain(rec.chain).walk(spec.length, walk_rng);
    rec.sides.resize(spec.length);
    const Side forced = rec.chain == 1 ? Side::A : Side::B;
    for (auto& side : rec.sides) {
        side = spec.dh == DhMode::With ? (side_rng.coin() ? Side::B : Side::A) : forced;
    }
    rec.tokens = lang.codec.render_sequence(lang.inventory, rec.synsets, rec.sides);
    return rec;
}

Corpus generate_corpus(const CorpusSpec& spec, const Language& lang) {
    spec.validate();
    Corpus corpus{spec, {}};
    corpus.records.reserve(spec.num_sequences);
    for (std::size_t i = 0; i < spec.num_sequences; ++i) {
        corpus.records.push_back(sample_sequence(spec, lang, derive_seed(spec.seed, i)));
    }
    return corpus;
}

bool provenance_consistent(const SequenceRecord& rec, const Language& lang) {
    if (rec.synsets.size() != rec.sides.size()) {
        return false;
    }
    return lang.codec.render_sequence(lang.inventory, rec.synsets, rec.sides) == rec.tokens;
}

namespace {

using NgramCounts = std::map<std::vector<TokenId>, std::size_t>;

template <class Visit>
void for_each_context(const Corpus& corpus, const Language& lang, std::size_t window, Visit&& visit) {
    std::vector<std::size_t> offsets;
    for (const auto& rec : corpus.records) {
        lang.codec.render_sequence(lang.inventory, rec.synsets, rec.sides, &offsets);
        for (std::size_t i = 0; i < rec.synsets.size(); ++i) {
            const std::size_t start = offsets[i + 1];
            if (start + window > rec.tokens.size()) {
                continue;
            }
            const FeatureId f = lang.inventory.feature(rec.synsets[i], rec.sides[i]);
            visit(f, std::span<const TokenId>(rec.tokens).subspan(start, window));
        }
    }
}

ContextDistribution normalize(const NgramCounts& counts) {
    ContextDistribution d;
    for (const auto& [_, c] : counts) {
        d.occurrences += c;
    }
    for (const auto& [gram, c] : counts) {
        d.probabilities.emplace(gram, static_cast<double>(c) / static_cast<double>(d.occurrences));
    }
    return d;
}

}  // namespace

ContextDistribution empirical_context_distribution(const Corpus& corpus, const Language& lang, FeatureId feature,
                                                   std::size_t window) {
    require(window >= 1, ErrorKind::InvalidArgument, "context window must be >= 1");
    lang.inventory.locate(feature);
    NgramCounts counts;
    for_each_context(corpus, lang, window, [&](FeatureId f, std::span<const TokenId> gram) {
        if (f == feature) {
            ++counts[std::vector<TokenId>(gram.begin(), gram.end())];
        }
    });
    require(!counts.empty(), ErrorKind::NotFound, "feature " + std::to_string(feature) + " does not occur in corpus");
    return normalize(counts);
}

double total_variation(const ContextDistribution& p, const ContextDistribution& q) {
    double l1 = 0.0;
    auto ip = p.probabilities.begin();
    auto iq = q.probabilities.begin();
    while (ip != p.probabilities.end() || iq != q.probabilities.end()) {
        if (iq == q.probabilities.end() || (ip != p.probabilities.end() && ip->first < iq->first)) {
            l1 += ip->second;
            ++ip;
        } else if (ip == p.probabilities.end() || iq->first < ip->first) {
            l1 += iq->second;
            ++iq;
        } else {
            l1 += std::abs(ip->second - iq->second);
            ++ip;
            ++iq;
        }
    }
    return 0.5 * l1;
}

SynonymContextReport synonym_context_tv(const Corpus& corpus, const Language& lang, std::size_t window) {
    require(window >= 1, ErrorKind::InvalidArgument, "context window must be >= 1");
    std::vector<NgramCounts> counts(lang.inventory.num_features());
    for_each_context(corpus, lang, window, [&](FeatureId f, std::span<const TokenId> gram) {
        ++counts[static_cast<std::size_t>(f)][std::vector<TokenId>(gram.begin(), gram.end())];
    });
    SynonymContextReport report;
    for (const auto& syn : lang.inventory.synsets()) {
        const auto& ca = counts[static_cast<std::size_t>(syn.a)];
        const auto& cb = counts[static_cast<std::size_t>(syn.b)];
        if (ca.empty() || cb.empty()) {
            report.tv_per_synset.push_back(std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        const double tv = total_variation(normalize(ca), normalize(cb));
        report.tv_per_synset.push_back(tv);
        report.max_tv = std::max(report.max_tv, tv);
    }
    return report;
}

void write_corpus(std::ostream& out, const Corpus& corpus) {
    nlohmann::json header = {
        {"format", "dhmlm-corpus"},
        {"version", kCorpusVersion},
        {"spec",
         {{"num_sequences", corpus.spec.num_sequences},
          {"length", corpus.spec.length},
          {"dh", to_string(corpus.spec.dh)},
          {"seed", corpus.spec.seed}}},
    };
    out << header.dump() << '\n';
    std::string line;
    for (const auto& rec : corpus.records) {
        line.clear();
        line += std::to_string(rec.chain);
        line += '\t';
        text::append_ints(line, rec.synsets);
        line += '\t';
        for (Side s : rec.sides) {
            line += s == Side::A ? 'a' : 'b';
        }
        line += '\t';
        text::append_ints(line, rec.tokens);
        line += '\n';
        out << line;
    }
}

Corpus read_corpus(std::istream& in) {
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::Io, "corpus file is empty");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Io, std::string("bad corpus header: ") + e.what());
    }
    require(header.value("format", "") == "dhmlm-corpus", ErrorKind::Io, "not a corpus file");
    require(header.value("version", 0) == kCorpusVersion, ErrorKind::Io, "unsupported corpus version");
    Corpus corpus;
    const auto& spec = header.at("spec");
    corpus.spec.num_sequences = spec.at("num_sequences").get<std::size_t>();
    corpus.spec.length = spec.at("length").get<std::size_t>();
    corpus.spec.dh = parse_dh_mode(spec.at("dh").get<std::string>());
    corpus.spec.seed = spec.at("seed").get<std::uint64_t>();
    corpus.records.reserve(corpus.spec.num_sequences);
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto fields = text::split(line, '\t');
        require(fields.size() == 4, ErrorKind::Io, "corpus record needs 4 fields");
        SequenceRecord rec;
        rec.chain = static_cast<int>(text::parse_int(fields[0]));
        rec.synsets = text::parse_ints<SynsetId>(fields[1]);
        for (char c : fields[2]) {
            require(c == 'a' || c == 'b', ErrorKind::Io, "bad side flag");
            rec.sides.push_back(c == 'a' ? Side::A : Side::B);
        }
        rec.tokens = text::parse_ints<TokenId>(fields[3]);
        corpus.records.push_back(std::move(rec));
    }
    require(corpus.records.size() == corpus.spec.num_sequences, ErrorKind::Io, "corpus record count mismatch");
    return corpus;
}

void save_corpus(const std::string& path, const Corpus& corpus) {
    text::write_file_atomic(path, [&](std::ostream& out) { write_corpus(out, corpus); });
}

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::NotFound, "cannot open corpus " + path);
    return read_corpus(in);
}

}  // namespace dhmlm::synlang
