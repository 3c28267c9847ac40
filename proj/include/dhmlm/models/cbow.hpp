#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "dhmlm/models/transformer.hpp"
#include "dhmlm/synlang/corpus.hpp"

namespace dhmlm::models {

struct CbowConfig {
    std::size_t window = 2;  // radius
    std::size_t dim = 128;
    std::size_t epochs = 3;
    std::size_t batch_size = 256;
    double lr = 3e-3;
    std::uint64_t seed = 0;
};

/// Continuous bag of words: the mean of the context input embeddings predicts
/// the centre token through a full softmax over the output table.
struct CbowModel {
    std::size_t window = 0;
    Tensor<float> input;   // [vocab, dim]
    Tensor<float> output;  // [vocab, dim]
    std::vector<double> epoch_loss;

    std::size_t vocab_size() const { return input.rows(); }
    std::size_t dim() const { return input.cols(); }
};

CbowModel train_cbow(const synlang::Corpus& corpus, std::size_t vocab_size, const CbowConfig& cfg);

/// Fraction of synsets whose a-feature token has the b-feature token as cosine
/// nearest neighbour among all regular tokens (single-token codecs).
double synonym_nn_accuracy(const CbowModel& cbow, const synlang::SynsetInventory& inv,
                           const synlang::FeatureCodec& codec);

/// Fresh transformer whose regular-token embedding rows are copied from the
/// CBOW input table; special-token rows keep their random init.
template <class T>
ModelBundle<T> init_from_cbow(const TransformerConfig& cfg, const CbowModel& cbow, std::uint64_t seed);

/// Text table: one line per token, "token_id v1 v2 ...".
void save_cbow_table(const std::string& path, const CbowModel& cbow);
CbowModel load_cbow_table(const std::string& path);

}  // namespace dhmlm::models
