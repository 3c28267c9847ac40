#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dhmlm/models/cbow.hpp"
#include "dhmlm/models/transformer.hpp"
#include "dhmlm/synlang/codec.hpp"
#include "dhmlm/task/dataset.hpp"
#include "dhmlm/train/train.hpp"

namespace dhmlm::expcli {

/// Fine-tuning data designs.
enum class Preset { Mix50, FullAD1, Mix90 };
/// Starting points for fine-tuning.
enum class Variant { WithDh, WithoutDh, Scratch, Cbow, Shuffle };
/// Things that can be pretrained.
enum class PretrainVariant { WithDh, WithoutDh, Cbow };

std::string to_string(Preset p);
std::string to_string(Variant v);
std::string to_string(PretrainVariant v);
Preset parse_preset(const std::string& s);
Variant parse_variant(const std::string& s);
PretrainVariant parse_pretrain_variant(const std::string& s);

inline constexpr Preset kAllPresets[] = {Preset::Mix50, Preset::FullAD1, Preset::Mix90};
inline constexpr Variant kAllVariants[] = {Variant::WithDh, Variant::WithoutDh, Variant::Scratch, Variant::Cbow,
                                           Variant::Shuffle};

/// Training mixture of a preset as (domain, proportion) parts.
std::vector<std::pair<task::Domain, double>> preset_parts(Preset p);

struct LanguageSettings {
    std::size_t num_synsets = 64;
    synlang::CodecMode codec_mode = synlang::CodecMode::SingleToken;
    synlang::VocabSharing sharing = synlang::VocabSharing::Separate;
    std::size_t tokens_per_side = 0;
};

struct CorpusSettings {
    std::size_t num_sequences = 20000;
    std::size_t length = 64;
    std::size_t val_sequences = 500;
};

struct PatternSettings {
    std::size_t num_patterns = 5;
    std::size_t set_size = 12;
    bool calibrate = true;  // shrink the sets until positive rates are in [0.1, 0.9]
};

struct TaskSettings {
    std::size_t length = 50;
    std::size_t train_pool = 4096;  // per domain
    std::size_t val_size = 500;
    std::size_t test_size = 1000;
    task::BalancePolicy balance = task::BalancePolicy::Balanced;
};

struct ProbeSettings {
    std::string template_text = "<feature> [MASK]";
    Preset preset = Preset::FullAD1;
    std::size_t replicate = 1;
};

/// One block of the fine-tuning grid: every variant at every size, for each
/// seed replicate.
struct ExperimentBlock {
    Preset preset = Preset::Mix50;
    std::vector<Variant> variants;
    std::vector<std::size_t> sizes;
};

struct Cell {
    Preset preset = Preset::Mix50;
    Variant variant = Variant::WithDh;
    std::size_t size = 0;
    std::size_t replicate = 1;

    std::string key() const;
    friend bool operator==(const Cell&, const Cell&) = default;
};

struct Manifest {
    int format_version = 1;
    std::string scale = "desk";
    std::uint64_t seed = 1;
    LanguageSettings language;
    CorpusSettings corpus;
    PatternSettings patterns;
    TaskSettings task;
    models::TransformerConfig model;  // vocab_size is filled in from the codec
    train::PretrainConfig pretrain;
    train::FinetuneConfig finetune;
    models::CbowConfig cbow;
    ProbeSettings probe;
    std::size_t replicates = 3;
    std::vector<ExperimentBlock> experiments;

    /// Throws validation with every offending field listed.
    void validate() const;
    /// Every cell of the grid in a fixed order.
    std::vector<Cell> cells() const;
};

Manifest desk_manifest();
Manifest paper_manifest();
Manifest preset_manifest(const std::string& name);

/// Strict: unknown or missing fields are validation errors naming the field.
Manifest manifest_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Manifest& m);

Manifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const Manifest& m);

}  // namespace dhmlm::expcli
