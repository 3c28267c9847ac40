#include "dhmlm/train/train.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dhmlm/common/text_io.hpp"
#include "dhmlm/ndgrad/adam.hpp"

namespace dhmlm::train {

using models::TokenBatch;
using ndgrad::Tape;
using ndgrad::Tensor;
using synlang::TokenId;

void MetricsLog::add(std::size_t step, std::string split, std::string metric, double value) {
    records_.push_back({step, std::move(split), std::move(metric), value});
}

void MetricsLog::write(const std::string& path) const {
    text::write_file_atomic(path, [&](std::ostream& os) {
        for (const auto& r : records_) {
            os << r.step << '\t' << r.split << '\t' << r.metric << '\t' << text::format_double(r.value) << '\n';
        }
    });
}

MetricsLog MetricsLog::read(const std::string& path) {
    MetricsLog log;
    std::istringstream in(text::read_file(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto parts = text::split(line, '\t');
        require(parts.size() == 4, ErrorKind::Validation, "malformed metrics line in " + path);
        log.add(static_cast<std::size_t>(text::parse_int(parts[0])), std::string(parts[1]), std::string(parts[2]),
                text::parse_double(parts[3]));
    }
    return log;
}

std::string to_string(LrSchedule s) { return s == LrSchedule::Constant ? "constant" : "linear-decay"; }

LrSchedule parse_lr_schedule(const std::string& s) {
    if (s == "constant") {
        return LrSchedule::Constant;
    }
    if (s == "linear-decay") {
        return LrSchedule::LinearDecay;
    }
    fail(ErrorKind::InvalidArgument, "unknown lr schedule '" + s + "' (expected constant or linear-decay)");
}

void PretrainConfig::validate() const {
    const auto& m = masking;
    require(m.rate > 0.0 && m.rate < 1.0, ErrorKind::InvalidArgument, "mask rate must be in (0, 1)");
    require(m.mask >= 0 && m.random >= 0 && m.keep >= 0 && std::abs(m.mask + m.random + m.keep - 1.0) < 1e-9,
            ErrorKind::InvalidArgument, "mask/random/keep ratios must be nonnegative and sum to 1");
    require(batch_size >= 1 && lr > 0.0 && (epochs >= 1 || max_steps >= 1), ErrorKind::InvalidArgument,
            "invalid pretraining schedule");
}

void FinetuneConfig::validate() const {
    require(patience >= 1, ErrorKind::InvalidArgument, "patience must be >= 1");
    require(batch_size >= 1 && lr > 0.0 && max_epochs >= 1, ErrorKind::InvalidArgument,
            "invalid fine-tuning schedule");
}

MaskedBatch mask_batch(const TokenBatch& batch, const MaskPolicy& policy, std::size_t vocab_size, Rng& rng) {
    MaskedBatch out{batch, {}, {}};
    const auto first = static_cast<std::uint64_t>(synlang::kFirstRegularToken);
    require(vocab_size > first, ErrorKind::InvalidArgument, "vocabulary has no regular tokens");
    for (std::size_t b = 0; b < batch.batch; ++b) {
        std::vector<std::size_t> eligible;
        for (std::size_t s = 0; s < batch.seq; ++s) {
            const std::size_t i = b * batch.seq + s;
            if (batch.valid[i] && !synlang::FeatureCodec::is_special(batch.ids[i])) {
                eligible.push_back(i);
            }
        }
        if (eligible.empty()) {
            continue;
        }
        std::vector<std::size_t> chosen;
        for (std::size_t i : eligible) {
            if (rng.bernoulli(policy.rate)) {
                chosen.push_back(i);
            }
        }
        if (chosen.empty()) {
            chosen.push_back(eligible[rng.below(eligible.size())]);
        }
        for (std::size_t i : chosen) {
            out.positions.push_back(i);
            out.targets.push_back(batch.ids[i]);
            const double u = rng.uniform();
            if (u < policy.mask) {
                out.batch.ids[i] = synlang::special::kMask;
            } else if (u < policy.mask + policy.random) {
                out.batch.ids[i] = static_cast<TokenId>(first + rng.below(vocab_size - first));
            }
        }
    }
    return out;
}

namespace {

std::vector<std::vector<TokenId>> corpus_rows(const synlang::Corpus& c, std::span<const std::size_t> idx) {
    std::vector<std::vector<TokenId>> rows;
    rows.reserve(idx.size());
    for (std::size_t i : idx) {
        rows.push_back(c.records[i].tokens);
    }
    return rows;
}

template <class T>
void restore(ndgrad::ParameterStore<T>& params, const std::vector<Tensor<T>>& snapshot) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i].value = snapshot[i];
    }
}

template <class T>
std::vector<Tensor<T>> snapshot(const ndgrad::ParameterStore<T>& params) {
    std::vector<Tensor<T>> out;
    for (const auto& p : params) {
        out.push_back(p.value);
    }
    return out;
}

}  // namespace

template <class T>
double mlm_loss(ModelBundle<T>& model, const synlang::Corpus& corpus, const MaskPolicy& policy, std::uint64_t seed,
                std::size_t batch_size) {
    require(!corpus.records.empty(), ErrorKind::InvalidArgument, "MLM loss of an empty corpus");
    Rng rng(seed);
    double total = 0.0;
    std::size_t count = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < corpus.records.size(); start += batch_size) {
        idx.resize(std::min(batch_size, corpus.records.size() - start));
        std::iota(idx.begin(), idx.end(), start);
        const auto rows = corpus_rows(corpus, idx);
        auto mb = mask_batch(models::make_batch(rows), policy, model.config().vocab_size, rng);
        Tape<T> tape(false);
        auto h = model.encode(tape, mb.batch, nullptr);
        auto loss = ndgrad::cross_entropy(model.mlm_logits(tape, h, mb.positions),
                                          std::span<const std::int32_t>(mb.targets));
        total += static_cast<double>(loss.value()[0]) * static_cast<double>(mb.targets.size());
        count += mb.targets.size();
    }
    return total / static_cast<double>(count);
}

template <class T>
PretrainResult pretrain_mlm(ModelBundle<T>& model, const synlang::Corpus& train, const synlang::Corpus& val,
                            const PretrainConfig& cfg, MetricsLog* log) {
    cfg.validate();
    require(!train.records.empty(), ErrorKind::InvalidArgument, "empty pretraining corpus");
    const std::uint64_t val_seed = derive_seed(cfg.seed, "pretrain.val_mask");
    PretrainResult result;
    if (!val.records.empty()) {
        result.initial_val_loss = mlm_loss(model, val, cfg.masking, val_seed);
        if (log != nullptr) {
            log->add(0, "val", "mlm_loss", result.initial_val_loss);
        }
    }
    ndgrad::Adam<T> opt(model.params(), {.lr = cfg.lr});
    Rng mask_rng(derive_seed(cfg.seed, "pretrain.mask"));
    Rng drop_rng(derive_seed(cfg.seed, "pretrain.dropout"));
    std::vector<std::size_t> order(train.records.size());
    std::size_t step = 0;
    const std::size_t vocab = model.config().vocab_size;
    const std::size_t per_epoch = (train.records.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = cfg.max_steps != 0 ? cfg.max_steps : per_epoch * cfg.epochs;
    for (std::size_t epoch = 0; cfg.max_steps == 0 ? epoch < cfg.epochs : step < cfg.max_steps; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng order_rng(derive_seed(derive_seed(cfg.seed, "pretrain.order"), epoch));
        order_rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            if (cfg.max_steps != 0 && step >= cfg.max_steps) {
                break;
            }
            const std::size_t nb = std::min(cfg.batch_size, order.size() - start);
            const auto rows = corpus_rows(train, std::span<const std::size_t>(order).subspan(start, nb));
            auto mb = mask_batch(models::make_batch(rows), cfg.masking, vocab, mask_rng);
            if (cfg.schedule == LrSchedule::LinearDecay) {
                opt.set_lr(cfg.lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps));
            }
            model.params().zero_grad();
            double loss_value = 0.0;
            try {
                Tape<T> tape;
                auto h = model.encode(tape, mb.batch, &drop_rng);
                auto loss = ndgrad::cross_entropy(model.mlm_logits(tape, h, mb.positions),
                                                  std::span<const std::int32_t>(mb.targets));
                loss_value = static_cast<double>(loss.value()[0]);
                tape.backward(loss);
                opt.step(model.params());
            } catch (const Error& e) {
                if (e.kind() == ErrorKind::NumericalError) {
                    fail(ErrorKind::NumericalError,
                         "pretraining diverged at step " + std::to_string(step) + ": " + e.what());
                }
                throw;
            }
            result.step_loss.push_back(loss_value);
            if (log != nullptr && (step % cfg.log_every == 0)) {
                log->add(step, "train", "mlm_loss", loss_value);
            }
            ++step;
        }
        if (cfg.max_steps == 0 && epoch + 1 >= cfg.epochs) {
            break;
        }
    }
    result.steps = step;
    if (!val.records.empty()) {
        result.final_val_loss = mlm_loss(model, val, cfg.masking, val_seed);
        if (log != nullptr) {
            log->add(step, "val", "mlm_loss", result.final_val_loss);
        }
    }
    return result;
}

EarlyStopper::EarlyStopper(std::size_t patience) : patience_(patience) {
    require(patience >= 1, ErrorKind::InvalidArgument, "patience must be >= 1");
}

bool EarlyStopper::observe(std::size_t epoch, double metric) {
    if (best_epoch_ == 0 || metric > best_) {
        best_ = metric;
        best_epoch_ = epoch;
        since_best_ = 0;
        return true;
    }
    ++since_best_;
    return false;
}

EpochOutcome run_with_early_stopping(std::size_t max_epochs, std::size_t patience,
                                     const std::function<double(std::size_t)>& epoch,
                                     const std::function<void(std::size_t)>& on_best) {
    EarlyStopper stopper(patience);
    EpochOutcome out;
    for (std::size_t e = 1; e <= max_epochs; ++e) {
        out.epochs_run = e;
        if (stopper.observe(e, epoch(e))) {
            on_best(e);
        }
        if (stopper.should_stop()) {
            break;
        }
    }
    out.best_epoch = stopper.best_epoch();
    out.best_metric = stopper.best_metric();
    return out;
}

template <class T>
FinetuneResult fine_tune(ModelBundle<T>& model, const task::Dataset& train, const task::Dataset& val,
                         const FinetuneConfig& cfg, MetricsLog* log) {
    cfg.validate();
    require(!train.examples.empty(), ErrorKind::InvalidArgument, "empty fine-tuning set");
    require(!val.examples.empty(), ErrorKind::InvalidArgument, "empty validation set");
    ndgrad::Adam<T> opt(model.params(), {.lr = cfg.lr});
    Rng drop_rng(derive_seed(cfg.seed, "finetune.dropout"));
    const auto cls_w = model.params().index_of("cls.w");
    const auto cls_b = model.params().index_of("cls.b");
    std::vector<std::size_t> order(train.examples.size());
    std::vector<Tensor<T>> best;
    FinetuneResult result;
    std::size_t step = 0;

    auto epoch = [&](std::size_t e) {
        std::iota(order.begin(), order.end(), 0);
        Rng order_rng(derive_seed(derive_seed(cfg.seed, "finetune.order"), e));
        order_rng.shuffle(std::span<std::size_t>(order));
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t nb = std::min(cfg.batch_size, order.size() - start);
            std::vector<std::vector<TokenId>> rows;
            std::vector<std::int32_t> labels;
            for (std::size_t i = start; i < start + nb; ++i) {
                const auto& ex = train.examples[order[i]];
                rows.push_back(ex.tokens);
                labels.push_back(ex.label ? 1 : 0);
            }
            const auto batch = models::make_batch(rows);
            model.params().zero_grad();
            Tape<T> tape;
            auto h = model.encode(tape, batch, &drop_rng);
            auto loss = ndgrad::cross_entropy(model.cls_logits(tape, h, batch), std::span<const std::int32_t>(labels));
            tape.backward(loss);
            if (cfg.freeze_encoder) {
                for (std::size_t i = 0; i < model.params().size(); ++i) {
                    if (i != cls_w && i != cls_b) {
                        model.params()[i].grad.fill(T(0));
                    }
                }
            }
            opt.step(model.params());
            loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(nb);
            ++step;
        }
        const double train_loss = loss_sum / static_cast<double>(order.size());
        const double acc = evaluate(model, val).accuracy;
        result.train_loss.push_back(train_loss);
        result.val_accuracy.push_back(acc);
        if (log != nullptr) {
            log->add(e, "train", "loss", train_loss);
            log->add(e, "val", "accuracy", acc);
        }
        return acc;
    };
    const auto outcome =
        run_with_early_stopping(cfg.max_epochs, cfg.patience, epoch, [&](std::size_t) { best = snapshot(model.params()); });
    restore(model.params(), best);
    result.best_epoch = outcome.best_epoch;
    result.epochs_run = outcome.epochs_run;
    if (log != nullptr) {
        log->add(outcome.best_epoch, "val", "best_epoch", static_cast<double>(outcome.best_epoch));
    }
    return result;
}

template <class T>
EvalResult evaluate(ModelBundle<T>& model, const task::Dataset& test, std::size_t batch_size) {
    require(!test.examples.empty(), ErrorKind::InvalidArgument, "empty evaluation set");
    EvalResult r;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < test.examples.size(); start += batch_size) {
        const std::size_t nb = std::min(batch_size, test.examples.size() - start);
        std::vector<std::vector<TokenId>> rows;
        for (std::size_t i = start; i < start + nb; ++i) {
            rows.push_back(test.examples[i].tokens);
        }
        const auto probs = models::forward_cls(model, models::make_batch(rows));
        for (std::size_t i = 0; i < nb; ++i) {
            const int pred = probs.at(i, 1) > probs.at(i, 0) ? 1 : 0;
            r.predictions.push_back(pred);
            r.prob_positive.push_back(static_cast<double>(probs.at(i, 1)));
            correct += (pred == 1) == test.examples[start + i].label ? 1 : 0;
        }
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(test.examples.size());
    return r;
}

#define DHMLM_INSTANTIATE_TRAIN(T)                                                                              \
    template double mlm_loss(ModelBundle<T>&, const synlang::Corpus&, const MaskPolicy&, std::uint64_t,        \
                             std::size_t);                                                                     \
    template PretrainResult pretrain_mlm(ModelBundle<T>&, const synlang::Corpus&, const synlang::Corpus&,      \
                                         const PretrainConfig&, MetricsLog*);                                  \
    template FinetuneResult fine_tune(ModelBundle<T>&, const task::Dataset&, const task::Dataset&,             \
                                      const FinetuneConfig&, MetricsLog*);                                     \
    template EvalResult evaluate(ModelBundle<T>&, const task::Dataset&, std::size_t);

DHMLM_INSTANTIATE_TRAIN(float)
DHMLM_INSTANTIATE_TRAIN(double)

}  // namespace dhmlm::train
