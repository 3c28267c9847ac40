#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dhmlm/models/transformer.hpp"
#include "dhmlm/synlang/corpus.hpp"
#include "dhmlm/task/dataset.hpp"

namespace dhmlm::train {

using models::ModelBundle;

struct MetricRecord {
    std::size_t step = 0;
    std::string split;
    std::string metric;
    double value = 0.0;
};

/// Line-delimited metrics: "step<TAB>split<TAB>metric<TAB>value".
class MetricsLog {
public:
    void add(std::size_t step, std::string split, std::string metric, double value);
    const std::vector<MetricRecord>& records() const noexcept { return records_; }
    void write(const std::string& path) const;
    static MetricsLog read(const std::string& path);

private:
    std::vector<MetricRecord> records_;
};

struct MaskPolicy {
    double rate = 0.15;
    double mask = 0.8;
    double random = 0.1;
    double keep = 0.1;
};

enum class LrSchedule { Constant, LinearDecay };  // LinearDecay: lr -> 0 at the last step

std::string to_string(LrSchedule s);
LrSchedule parse_lr_schedule(const std::string& s);

struct PretrainConfig {
    MaskPolicy masking;
    std::size_t batch_size = 32;
    double lr = 3e-4;
    LrSchedule schedule = LrSchedule::Constant;
    std::size_t epochs = 1;
    std::size_t max_steps = 0;  // 0 = no cap beyond epochs
    std::size_t log_every = 50;
    std::uint64_t seed = 0;

    void validate() const;
};

/// One masked batch: inputs with replacements applied, flat target positions
/// and the original tokens there.
struct MaskedBatch {
    models::TokenBatch batch;
    std::vector<std::size_t> positions;
    std::vector<std::int32_t> targets;
};

/// Masks non-special positions with probability policy.rate (at least one per
/// row) and applies the mask/random/keep split.
MaskedBatch mask_batch(const models::TokenBatch& batch, const MaskPolicy& policy, std::size_t vocab_size, Rng& rng);

struct PretrainResult {
    std::vector<double> step_loss;
    double initial_val_loss = 0.0;
    double final_val_loss = 0.0;
    std::size_t steps = 0;
};

/// Mean masked cross-entropy on a corpus under a fixed masking seed, eval mode.
template <class T>
double mlm_loss(ModelBundle<T>& model, const synlang::Corpus& corpus, const MaskPolicy& policy, std::uint64_t seed,
                std::size_t batch_size = 64);

template <class T>
PretrainResult pretrain_mlm(ModelBundle<T>& model, const synlang::Corpus& train, const synlang::Corpus& val,
                            const PretrainConfig& cfg, MetricsLog* log = nullptr);

struct FinetuneConfig {
    std::size_t batch_size = 32;
    double lr = 1e-4;
    std::size_t max_epochs = 20;
    std::size_t patience = 5;
    bool freeze_encoder = false;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Patience-based early stopping over a validation metric (higher is better);
/// ties keep the earliest epoch.
class EarlyStopper {
public:
    explicit EarlyStopper(std::size_t patience);
    /// Records the metric of a 1-based epoch; returns true if it is a new best.
    bool observe(std::size_t epoch, double metric);
    bool should_stop() const noexcept { return since_best_ >= patience_; }
    std::size_t best_epoch() const noexcept { return best_epoch_; }
    double best_metric() const noexcept { return best_; }

private:
    std::size_t patience_;
    std::size_t best_epoch_ = 0;
    double best_ = 0.0;
    std::size_t since_best_ = 0;
};

struct EpochOutcome {
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;
    double best_metric = 0.0;
};

/// Drives epoch(e) -> validation metric until max_epochs or patience runs out;
/// on_best(e) fires whenever epoch e becomes the best so far.
EpochOutcome run_with_early_stopping(std::size_t max_epochs, std::size_t patience,
                                     const std::function<double(std::size_t)>& epoch,
                                     const std::function<void(std::size_t)>& on_best);

struct FinetuneResult {
    std::vector<double> train_loss;
    std::vector<double> val_accuracy;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
};

/// Fine-tunes every parameter (or only the classifier when freeze_encoder) and
/// leaves the model at its best-validation epoch.
template <class T>
FinetuneResult fine_tune(ModelBundle<T>& model, const task::Dataset& train, const task::Dataset& val,
                         const FinetuneConfig& cfg, MetricsLog* log = nullptr);

struct EvalResult {
    double accuracy = 0.0;
    std::vector<int> predictions;
    std::vector<double> prob_positive;
};

template <class T>
EvalResult evaluate(ModelBundle<T>& model, const task::Dataset& test, std::size_t batch_size = 64);

}  // namespace dhmlm::train
