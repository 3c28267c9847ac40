#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dhmlm/expcli/manifest.hpp"
#include "dhmlm/probe/probe.hpp"
#include "dhmlm/synlang/serialize.hpp"
#include "dhmlm/task/pattern.hpp"

namespace dhmlm::expcli {

struct ResultRow {
    Preset preset = Preset::Mix50;
    Variant variant = Variant::WithDh;
    std::size_t size = 0;
    std::size_t replicate = 1;
    task::Domain domain = task::Domain::A_D1;
    double accuracy = 0.0;

    Cell cell() const { return {preset, variant, size, replicate}; }
    friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

/// Canonical order: preset, variant, size, replicate, domain.
void sort_rows(std::vector<ResultRow>& rows);
void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows);
std::vector<ResultRow> read_results_csv(std::istream& in);
std::vector<ResultRow> load_results_csv(const std::string& path);

/// Mean and range over replicates of one (preset, variant, domain, size).
struct SummaryPoint {
    Preset preset = Preset::Mix50;
    Variant variant = Variant::WithDh;
    task::Domain domain = task::Domain::A_D1;
    std::size_t size = 0;
    std::size_t n = 0;
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
};

std::vector<SummaryPoint> summarize(const std::vector<ResultRow>& rows);

/// Minimal line chart: x = log2(size), one curve per (variant, domain) with
/// min/max whiskers.
std::string render_svg(Preset preset, const std::vector<SummaryPoint>& points);

/// Writes results.csv (canonical order), summary.csv and one SVG per preset.
/// Throws validation on an empty table.
void write_report(const std::vector<ResultRow>& rows, const std::string& out_dir);

using Logger = std::function<void(const std::string&)>;

/// Artifact directory bound to one manifest. Opening a directory that holds a
/// different manifest is a validation error.
class Workspace {
public:
    Workspace(std::string root, Manifest manifest, Logger log = {});

    /// DHMLM_ARTIFACT_ROOT, or "artifacts" when unset.
    static std::string default_root();

    const std::string& root() const noexcept { return root_; }
    const Manifest& manifest() const noexcept { return manifest_; }
    std::string path(const std::string& rel) const;
    void log(const std::string& msg) const;

    std::string language_path() const { return path("gen/language.json"); }
    std::string patterns_path() const { return path("gen/patterns.json"); }
    std::string corpus_path(synlang::DhMode dh, const std::string& split) const;
    std::string dataset_path(task::Domain d, const std::string& split) const;
    std::string checksums_path() const { return path("gen/checksums.json"); }
    std::string pretrain_path(PretrainVariant v) const;
    std::string cell_dir(const Cell& c) const;
    std::string results_path() const { return path("results.csv"); }
    std::string probe_path(Variant v) const;

    /// Loads the generated language and pattern set; not-found names the path.
    synlang::LanguageBundle load_language() const;
    task::PatternSet load_patterns() const;
    task::Dataset load_dataset(task::Domain d, const std::string& split) const;

private:
    std::string root_;
    Manifest manifest_;
    Logger log_;
};

/// Writes language, pattern set, corpora and task datasets plus checksums.
/// Returns relative path -> checksum. A complete previous run is reused.
std::map<std::string, std::string> cmd_gen(const Workspace& ws);

void cmd_pretrain(const Workspace& ws, PretrainVariant v);

/// Training and validation mixtures of a cell. Each replicate draws from its
/// own permutation of the per-domain pools; sizes within a replicate nest.
std::pair<task::Dataset, task::Dataset> cell_data(const Workspace& ws, const Cell& cell);

/// Fine-tunes one cell and evaluates on all four domains. Rows are appended to
/// the result table under a file lock; a cell already present is a no-op that
/// returns the stored rows.
std::vector<ResultRow> cmd_finetune(const Workspace& ws, const Cell& cell);

/// One probe report file per pretrained variant (w-dh, wo-dh) covering the
/// fine-tuned checkpoints of the probe preset.
void cmd_probe(const Workspace& ws);

/// External distributions -> report JSON at out_path.
probe::ProbeReport cmd_probe_file(const std::string& distributions, const std::string& out_path);

void cmd_report(const Workspace& ws, const std::string& out_dir);

/// gen, every pretraining variant the grid needs, every cell, probe, report.
void run_all(const Workspace& ws);

/// Rows from the workspace result table (empty when absent).
std::vector<ResultRow> load_results(const Workspace& ws);

}  // namespace dhmlm::expcli
