#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dhmlm/synlang/chain.hpp"
#include "dhmlm/synlang/codec.hpp"
#include "dhmlm/synlang/inventory.hpp"

namespace dhmlm::synlang {

enum class DhMode { With, Without };

std::string to_string(DhMode dh);
DhMode parse_dh_mode(const std::string& s);

/// Everything needed to render a sequence. Non-owning.
struct Language {
    const SynsetInventory& inventory;
    const FeatureCodec& codec;
    const MarkovChainPair& chains;
};

struct CorpusSpec {
    std::size_t num_sequences = 0;
    std::size_t length = 0;  // in synsets
    DhMode dh = DhMode::With;
    std::uint64_t seed = 0;

    void validate() const;
    friend bool operator==(const CorpusSpec&, const CorpusSpec&) = default;
};

struct SequenceRecord {
    std::vector<TokenId> tokens;
    int chain = 1;  // k in {1, 2}
    std::vector<SynsetId> synsets;
    std::vector<Side> sides;

    friend bool operator==(const SequenceRecord&, const SequenceRecord&) = default;
};

struct Corpus {
    CorpusSpec spec;
    std::vector<SequenceRecord> records;
};

/// Draws one sequence from the stream seed. The chain index and the synset
/// walk come from one sub-stream and the side choices from another, so the
/// with-DH and without-DH corpora built from the same seed share their synset
/// sequences.
SequenceRecord sample_sequence(const CorpusSpec& spec, const Language& lang, std::uint64_t stream_seed);

/// Record i uses stream derive_seed(spec.seed, i).
Corpus generate_corpus(const CorpusSpec& spec, const Language& lang);

/// Re-renders the provenance and checks it reproduces the tokens.
bool provenance_consistent(const SequenceRecord& rec, const Language& lang);

/// Empirical distribution of the `window` tokens that follow each occurrence
/// of a feature. Occurrences too close to the end of a sequence are skipped.
struct ContextDistribution {
    std::size_t occurrences = 0;
    std::map<std::vector<TokenId>, double> probabilities;
};

ContextDistribution empirical_context_distribution(const Corpus& corpus, const Language& lang, FeatureId feature,
                                                   std::size_t window);

/// Total variation between two sparse n-gram distributions.
double total_variation(const ContextDistribution& p, const ContextDistribution& q);

struct SynonymContextReport {
    std::vector<double> tv_per_synset;  // NaN when a feature never occurs
    double max_tv = 0.0;
};

/// TV between the context distributions of a_i and b_i for every synset,
/// computed in one pass over the corpus.
SynonymContextReport synonym_context_tv(const Corpus& corpus, const Language& lang, std::size_t window);

void write_corpus(std::ostream& out, const Corpus& corpus);
Corpus read_corpus(std::istream& in);
void save_corpus(const std::string& path, const Corpus& corpus);
Corpus load_corpus(const std::string& path);

}  // namespace dhmlm::synlang
