#include "dhmlm/expcli/pipeline.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "dhmlm/common/error.hpp"
#include "dhmlm/common/rng.hpp"
#include "dhmlm/common/text_io.hpp"
#include "dhmlm/models/cbow.hpp"
#include "dhmlm/synlang/chain.hpp"
#include "dhmlm/synlang/corpus.hpp"
#include "dhmlm/train/train.hpp"

namespace dhmlm::expcli {

namespace fs = std::filesystem;
using nlohmann::json;
using synlang::DhMode;
using task::Domain;

namespace {

std::size_t rank(Preset p) { return static_cast<std::size_t>(p); }
std::size_t rank(Variant v) { return static_cast<std::size_t>(v); }
std::size_t rank(Domain d) { return static_cast<std::size_t>(d); }

std::uint64_t seed_for(const Manifest& m, const std::string& tag) { return derive_seed(m.seed, tag); }

DhMode dh_of(PretrainVariant v) { return v == PretrainVariant::WithoutDh ? DhMode::Without : DhMode::With; }

void require_file(const std::string& path, const std::string& hint) {
    require(fs::exists(path), ErrorKind::NotFound, "missing artifact " + path + " (" + hint + ")");
}

double seconds_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

// Exclusive advisory lock held for the lifetime of the object.
class FileLock {
public:
    explicit FileLock(const std::string& path) {
        fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
        require(fd_ >= 0, ErrorKind::Io, "cannot open lock file " + path);
        if (::flock(fd_, LOCK_EX) != 0) {
            ::close(fd_);
            fail(ErrorKind::Io, "cannot lock " + path);
        }
    }
    ~FileLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;

private:
    int fd_ = -1;
};

constexpr const char* kCsvHeader = "preset,variant,size,replicate,domain,accuracy";

}  // namespace

void sort_rows(std::vector<ResultRow>& rows) {
    std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
        return std::make_tuple(rank(a.preset), rank(a.variant), a.size, a.replicate, rank(a.domain)) <
               std::make_tuple(rank(b.preset), rank(b.variant), b.size, b.replicate, rank(b.domain));
    });
}

void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
    out << kCsvHeader << "\n";
    for (const auto& r : rows) {
        out << to_string(r.preset) << "," << to_string(r.variant) << "," << r.size << "," << r.replicate << ","
            << task::to_string(r.domain) << "," << text::format_double(r.accuracy) << "\n";
    }
}

std::vector<ResultRow> read_results_csv(std::istream& in) {
    std::vector<ResultRow> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        if (lineno == 1) {
            require(line == kCsvHeader, ErrorKind::Validation, "result table has an unexpected header: " + line);
            continue;
        }
        const auto f = text::split(line, ',');
        require(f.size() == 6, ErrorKind::Validation, "result table line " + std::to_string(lineno) + " is malformed");
        ResultRow r;
        r.preset = parse_preset(std::string(f[0]));
        r.variant = parse_variant(std::string(f[1]));
        r.size = static_cast<std::size_t>(text::parse_int(f[2]));
        r.replicate = static_cast<std::size_t>(text::parse_int(f[3]));
        r.domain = task::parse_domain(std::string(f[4]));
        r.accuracy = text::parse_double(f[5]);
        require(r.accuracy >= 0.0 && r.accuracy <= 1.0, ErrorKind::Validation,
                "accuracy outside [0, 1] on result line " + std::to_string(lineno));
        rows.push_back(r);
    }
    return rows;
}

std::vector<ResultRow> load_results_csv(const std::string& path) {
    std::istringstream in(text::read_file(path));
    return read_results_csv(in);
}

std::vector<SummaryPoint> summarize(const std::vector<ResultRow>& rows) {
    std::map<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>, SummaryPoint> acc;
    for (const auto& r : rows) {
        auto& p = acc[{rank(r.preset), rank(r.variant), rank(r.domain), r.size}];
        if (p.n == 0) {
            p = {r.preset, r.variant, r.domain, r.size, 0, 0.0, r.accuracy, r.accuracy};
        }
        ++p.n;
        p.mean += r.accuracy;
        p.min = std::min(p.min, r.accuracy);
        p.max = std::max(p.max, r.accuracy);
    }
    std::vector<SummaryPoint> out;
    for (auto& [k, p] : acc) {
        p.mean /= static_cast<double>(p.n);
        out.push_back(p);
    }
    return out;
}

std::string render_svg(Preset preset, const std::vector<SummaryPoint>& points) {
    static const char* kColors[] = {"#1f4e9c", "#c0392b", "#16a085", "#8e44ad"};
    static const char* kDashes[] = {"", "6,3", "2,3", "8,3,2,3", "1,5"};
    const double W = 760, H = 420, L = 60, R = 200, T = 40, B = 50;
    std::vector<const SummaryPoint*> pts;
    double xmin = 1e300, xmax = -1e300;
    for (const auto& p : points) {
        if (p.preset == preset) {
            pts.push_back(&p);
            const double x = std::log2(static_cast<double>(p.size));
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
        }
    }
    if (xmax - xmin < 1e-9) {
        xmin -= 1.0;
        xmax += 1.0;
    }
    auto px = [&](std::size_t size) {
        return L + (std::log2(static_cast<double>(size)) - xmin) / (xmax - xmin) * (W - L - R);
    };
    auto py = [&](double acc) { return T + (1.0 - acc) * (H - T - B); };
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(2);
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << L << "\" y=\"24\" font-size=\"14\">preset " << to_string(preset)
      << ": test accuracy (mean, min-max over seeds)</text>\n";
    for (int i = 0; i <= 10; i += 2) {
        const double a = i / 10.0;
        s << "<line x1=\"" << L << "\" x2=\"" << W - R << "\" y1=\"" << py(a) << "\" y2=\"" << py(a)
          << "\" stroke=\"#ddd\"/>\n";
        s << "<text x=\"" << L - 8 << "\" y=\"" << py(a) + 4 << "\" text-anchor=\"end\">" << a << "</text>\n";
    }
    std::set<std::size_t> sizes;
    for (const auto* p : pts) {
        sizes.insert(p->size);
    }
    for (std::size_t z : sizes) {
        s << "<text x=\"" << px(z) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << z << "</text>\n";
    }
    s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">fine-tune size</text>\n";
    std::map<std::pair<std::size_t, std::size_t>, std::vector<const SummaryPoint*>> curves;
    for (const auto* p : pts) {
        curves[{rank(p->variant), rank(p->domain)}].push_back(p);
    }
    double ly = T;
    for (const auto& [key, c] : curves) {
        const char* color = kColors[key.second % 4];
        const char* dash = kDashes[key.first % 5];
        s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\"";
        if (*dash != '\0') {
            s << " stroke-dasharray=\"" << dash << "\"";
        }
        s << " points=\"";
        for (const auto* p : c) {
            s << px(p->size) << "," << py(p->mean) << " ";
        }
        s << "\"/>\n";
        for (const auto* p : c) {
            s << "<line x1=\"" << px(p->size) << "\" x2=\"" << px(p->size) << "\" y1=\"" << py(p->min) << "\" y2=\""
              << py(p->max) << "\" stroke=\"" << color << "\"/>\n";
            s << "<circle cx=\"" << px(p->size) << "\" cy=\"" << py(p->mean) << "\" r=\"2.5\" fill=\"" << color
              << "\"/>\n";
        }
        s << "<line x1=\"" << W - R + 12 << "\" x2=\"" << W - R + 42 << "\" y1=\"" << ly << "\" y2=\"" << ly
          << "\" stroke=\"" << color << "\" stroke-width=\"1.8\"";
        if (*dash != '\0') {
            s << " stroke-dasharray=\"" << dash << "\"";
        }
        s << "/>\n<text x=\"" << W - R + 48 << "\" y=\"" << ly + 4 << "\">" << to_string(c.front()->variant) << " "
          << task::to_string(c.front()->domain) << "</text>\n";
        ly += 16;
    }
    s << "</svg>\n";
    return s.str();
}

void write_report(const std::vector<ResultRow>& input, const std::string& out_dir) {
    require(!input.empty(), ErrorKind::Validation, "cannot report an empty result table");
    auto rows = input;
    sort_rows(rows);
    fs::create_directories(out_dir);
    text::write_file_atomic(out_dir + "/results.csv", [&](std::ostream& out) { write_results_csv(out, rows); });
    const auto points = summarize(rows);
    text::write_file_atomic(out_dir + "/summary.csv", [&](std::ostream& out) {
        out << "preset,variant,domain,size,n,mean,min,max\n";
        for (const auto& p : points) {
            out << to_string(p.preset) << "," << to_string(p.variant) << "," << task::to_string(p.domain) << ","
                << p.size << "," << p.n << "," << text::format_double(p.mean) << "," << text::format_double(p.min)
                << "," << text::format_double(p.max) << "\n";
        }
    });
    std::set<std::size_t> presets;
    for (const auto& p : points) {
        presets.insert(rank(p.preset));
    }
    for (std::size_t pr : presets) {
        const auto preset = static_cast<Preset>(pr);
        const auto svg = render_svg(preset, points);
        text::write_file_atomic(out_dir + "/" + to_string(preset) + ".svg", [&](std::ostream& out) { out << svg; });
    }
}

Workspace::Workspace(std::string root, Manifest manifest, Logger log)
    : root_(std::move(root)), manifest_(std::move(manifest)), log_(std::move(log)) {
    manifest_.validate();
    fs::create_directories(root_);
    const std::string mpath = path("manifest.json");
    if (fs::exists(mpath)) {
        const auto stored = json::parse(text::read_file(mpath));
        require(stored == to_json(manifest_), ErrorKind::Validation,
                "artifact root " + root_ + " was produced by a different manifest");
    } else {
        save_manifest(mpath, manifest_);
    }
}

std::string Workspace::default_root() {
    const char* env = std::getenv("DHMLM_ARTIFACT_ROOT");
    return env != nullptr && *env != '\0' ? std::string(env) : std::string("artifacts");
}

std::string Workspace::path(const std::string& rel) const { return (fs::path(root_) / rel).string(); }

void Workspace::log(const std::string& msg) const {
    if (log_) {
        log_(msg);
    }
}

std::string Workspace::corpus_path(DhMode dh, const std::string& split) const {
    return path("gen/corpus/" + synlang::to_string(dh) + "." + split + ".txt");
}

std::string Workspace::dataset_path(Domain d, const std::string& split) const {
    return path("gen/task/" + task::to_string(d) + "." + split + ".txt");
}

std::string Workspace::pretrain_path(PretrainVariant v) const {
    return path("pretrain/" + to_string(v) + (v == PretrainVariant::Cbow ? ".table" : ".ckpt"));
}

std::string Workspace::cell_dir(const Cell& c) const { return path("finetune/" + c.key()); }

std::string Workspace::probe_path(Variant v) const { return path("probe/" + to_string(v) + ".json"); }

synlang::LanguageBundle Workspace::load_language() const {
    require_file(language_path(), "run gen first");
    return synlang::load_language(language_path());
}

task::PatternSet Workspace::load_patterns() const {
    require_file(patterns_path(), "run gen first");
    const auto j = json::parse(text::read_file(patterns_path()));
    return task::pattern_set_from_json(j.at("patterns"), manifest_.language.num_synsets);
}

task::Dataset Workspace::load_dataset(Domain d, const std::string& split) const {
    const auto p = dataset_path(d, split);
    require_file(p, "run gen first");
    return task::load_dataset(p);
}

std::map<std::string, std::string> cmd_gen(const Workspace& ws) {
    const Manifest& m = ws.manifest();
    if (fs::exists(ws.checksums_path())) {
        const auto stored = json::parse(text::read_file(ws.checksums_path())).get<std::map<std::string, std::string>>();
        bool intact = !stored.empty();
        for (const auto& [rel, sum] : stored) {
            intact = intact && fs::exists(ws.path(rel)) && text::file_checksum(ws.path(rel)) == sum;
        }
        if (intact) {
            ws.log("gen: artifacts present, checksums verified");
            return stored;
        }
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto inv = synlang::build_inventory(m.language.num_synsets, seed_for(m, "inventory"));
    const auto codec = synlang::build_codec(inv, m.language.codec_mode, m.language.sharing, seed_for(m, "codec"),
                                            m.language.tokens_per_side);
    const auto chains = synlang::build_chain_pair(m.language.num_synsets, seed_for(m, "chains"));
    const synlang::Language lang{inv, codec, chains};
    const std::size_t longest = std::max(m.corpus.length, m.task.length) * codec.max_feature_length();
    require(m.model.max_positions >= longest + 1, ErrorKind::Validation,
            "manifest field model.max_positions must be at least " + std::to_string(longest + 1) +
                " for this codec");

    std::vector<std::string> written;
    synlang::save_language(ws.language_path(), {inv, codec, chains});
    written.push_back("gen/language.json");

    json pj;
    if (m.patterns.calibrate) {
        const auto cal = task::calibrate_pattern_set(lang, m.patterns.num_patterns, m.patterns.set_size, m.task.length,
                                                     seed_for(m, "patterns"));
        pj = {{"patterns", task::to_json(cal.patterns)},
              {"calibrated_set_size", cal.set_size},
              {"positive_rate_d1", cal.positive_rate_d1},
              {"positive_rate_d2", cal.positive_rate_d2}};
    } else {
        pj = {{"patterns", task::to_json(task::build_pattern_set(inv, m.patterns.num_patterns, m.patterns.set_size,
                                                                 seed_for(m, "patterns")))}};
    }
    text::write_file_atomic(ws.patterns_path(), [&](std::ostream& out) { out << pj.dump(2) << "\n"; });
    written.push_back("gen/patterns.json");
    const auto ps = task::pattern_set_from_json(pj.at("patterns"), m.language.num_synsets);

    for (DhMode dh : {DhMode::With, DhMode::Without}) {
        for (const auto& [split, n] : {std::pair<std::string, std::size_t>{"train", m.corpus.num_sequences},
                                       {"val", m.corpus.val_sequences}}) {
            const auto corpus = synlang::generate_corpus({n, m.corpus.length, dh, seed_for(m, "corpus." + split)}, lang);
            synlang::save_corpus(ws.corpus_path(dh, split), corpus);
            written.push_back(fs::relative(ws.corpus_path(dh, split), ws.root()).string());
        }
    }
    for (Domain d : task::kAllDomains) {
        for (const auto& [split, n] :
             {std::pair<std::string, std::size_t>{"train", m.task.train_pool}, {"val", m.task.val_size},
              {"test", m.task.test_size}}) {
            task::TaskDatasetSpec spec{d, n, m.task.length, seed_for(m, "task/" + task::to_string(d) + "/" + split)};
            spec.balance = m.task.balance;
            auto ds = task::generate_task_dataset(spec, ps, lang);
            task::save_dataset(ws.dataset_path(d, split), ds);
            written.push_back(fs::relative(ws.dataset_path(d, split), ws.root()).string());
        }
    }
    std::map<std::string, std::string> sums;
    for (const auto& rel : written) {
        sums[rel] = text::file_checksum(ws.path(rel));
    }
    text::write_file_atomic(ws.checksums_path(), [&](std::ostream& out) { out << json(sums).dump(2) << "\n"; });
    ws.log("gen: wrote " + std::to_string(written.size()) + " artifacts in " +
           text::format_double(std::round(seconds_since(t0))) + " s");
    return sums;
}

void cmd_pretrain(const Workspace& ws, PretrainVariant v) {
    const Manifest& m = ws.manifest();
    const std::string out = ws.pretrain_path(v);
    const std::string summary_path = out + ".json";
    if (fs::exists(out) && fs::exists(summary_path)) {
        ws.log("pretrain " + to_string(v) + ": present");
        return;
    }
    const auto lang = ws.load_language();
    const auto train_path = ws.corpus_path(dh_of(v), "train");
    const auto val_path = ws.corpus_path(dh_of(v), "val");
    require_file(train_path, "run gen first");
    require_file(val_path, "run gen first");
    const auto corpus = synlang::load_corpus(train_path);
    const auto t0 = std::chrono::steady_clock::now();
    json summary = {{"variant", to_string(v)}};
    if (v == PretrainVariant::Cbow) {
        auto cfg = m.cbow;
        cfg.seed = seed_for(m, "cbow");
        const auto cbow = models::train_cbow(corpus, lang.codec.vocab_size(), cfg);
        models::save_cbow_table(out, cbow);
        summary["epoch_loss"] = cbow.epoch_loss;
        if (lang.codec.mode() == synlang::CodecMode::SingleToken) {
            summary["synonym_nn_accuracy"] = models::synonym_nn_accuracy(cbow, lang.inventory, lang.codec);
        }
    } else {
        const auto val = synlang::load_corpus(val_path);
        auto cfg = m.model;
        cfg.vocab_size = lang.codec.vocab_size();
        models::ModelBundle<float> model(cfg, seed_for(m, "pretrain.init"));
        auto pc = m.pretrain;
        pc.seed = seed_for(m, "pretrain");
        train::MetricsLog log;
        const auto r = train::pretrain_mlm(model, corpus, val, pc, &log);
        log.write(out + ".metrics.tsv");
        models::save_model(out, model, {{"variant", to_string(v)}});
        summary["initial_val_loss"] = r.initial_val_loss;
        summary["final_val_loss"] = r.final_val_loss;
        summary["steps"] = r.steps;
    }
    summary["seconds"] = seconds_since(t0);
    text::write_file_atomic(summary_path, [&](std::ostream& o) { o << summary.dump(2) << "\n"; });
    ws.log("pretrain " + to_string(v) + ": done in " + text::format_double(std::round(seconds_since(t0))) + " s");
}

std::vector<ResultRow> load_results(const Workspace& ws) {
    if (!fs::exists(ws.results_path())) {
        return {};
    }
    return load_results_csv(ws.results_path());
}

namespace {

std::vector<ResultRow> rows_of(const std::vector<ResultRow>& all, const Cell& c) {
    std::vector<ResultRow> out;
    for (const auto& r : all) {
        if (r.cell() == c) {
            out.push_back(r);
        }
    }
    return out;
}

task::Dataset permuted(task::Dataset ds, std::uint64_t seed) {
    Rng rng(seed);
    rng.shuffle(std::span<task::LabeledExample>(ds.examples));
    return ds;
}

models::ModelBundle<float> starting_model(const Workspace& ws, const Cell& c, std::size_t vocab) {
    const Manifest& m = ws.manifest();
    const std::string rep = std::to_string(c.replicate);
    auto cfg = m.model;
    cfg.vocab_size = vocab;
    switch (c.variant) {
        case Variant::WithDh:
        case Variant::WithoutDh:
        case Variant::Shuffle: {
            const auto pv = c.variant == Variant::WithoutDh ? PretrainVariant::WithoutDh : PretrainVariant::WithDh;
            const auto p = ws.pretrain_path(pv);
            require_file(p, "run pretrain --variant " + to_string(pv) + " first");
            auto model = models::load_model<float>(p);
            if (c.variant == Variant::Shuffle) {
                models::shuffle_weights(model, seed_for(m, "shuffle/" + rep), models::ShuffleGranularity::Tensor);
            }
            model.reset_classifier();
            return model;
        }
        case Variant::Scratch:
            return models::ModelBundle<float>(cfg, seed_for(m, "scratch/" + rep));
        case Variant::Cbow: {
            const auto p = ws.pretrain_path(PretrainVariant::Cbow);
            require_file(p, "run pretrain --variant cbow first");
            return models::init_from_cbow<float>(cfg, models::load_cbow_table(p), seed_for(m, "cbow-init/" + rep));
        }
    }
    fail(ErrorKind::InvalidArgument, "unknown variant");
}

}  // namespace

std::pair<task::Dataset, task::Dataset> cell_data(const Workspace& ws, const Cell& cell) {
    const Manifest& m = ws.manifest();
    const std::string rep = std::to_string(cell.replicate);
    const std::string tag = to_string(cell.preset) + "/" + std::to_string(cell.size) + "/" + rep;
    std::vector<task::Dataset> train_pools, val_pools;
    const auto parts = preset_parts(cell.preset);
    for (const auto& [d, frac] : parts) {
        const std::string dn = task::to_string(d);
        train_pools.push_back(permuted(ws.load_dataset(d, "train"), seed_for(m, "pool/" + dn + "/train/" + rep)));
        val_pools.push_back(ws.load_dataset(d, "val"));
    }
    std::vector<task::MixturePart> tparts, vparts;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        tparts.push_back({&train_pools[i], parts[i].second});
        vparts.push_back({&val_pools[i], parts[i].second});
    }
    const auto counts = task::mixture_counts(tparts, cell.size);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        require(counts[i] <= train_pools[i].size(), ErrorKind::InvalidArgument,
                "fine-tune size " + std::to_string(cell.size) + " needs more than the task.train_pool examples");
    }
    return {task::make_mixture(tparts, cell.size, seed_for(m, "mixture/" + tag)),
            task::make_mixture(vparts, m.task.val_size, seed_for(m, "val-mixture/" + to_string(cell.preset)))};
}

std::vector<ResultRow> cmd_finetune(const Workspace& ws, const Cell& cell) {
    const Manifest& m = ws.manifest();
    require(cell.replicate >= 1, ErrorKind::InvalidArgument, "replicate seeds are numbered from 1");
    const std::string lock_path = ws.path("results.lock");
    {
        FileLock lock(lock_path);
        auto done = rows_of(load_results(ws), cell);
        if (!done.empty()) {
            ws.log("finetune " + cell.key() + ": present");
            return done;
        }
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto lang_bundle = ws.load_language();
    const auto [train_set, val_set] = cell_data(ws, cell);
    const std::string tag = to_string(cell.preset) + "/" + std::to_string(cell.size) + "/" + std::to_string(cell.replicate);

    auto model = starting_model(ws, cell, lang_bundle.codec.vocab_size());
    auto fc = m.finetune;
    fc.seed = seed_for(m, "finetune/" + tag);
    train::MetricsLog log;
    const auto fr = train::fine_tune(model, train_set, val_set, fc, &log);

    const std::string dir = ws.cell_dir(cell);
    fs::create_directories(dir);
    log.write(dir + "/metrics.tsv");
    models::save_model(dir + "/model.ckpt", model, {{"cell", cell.key()}});

    std::vector<ResultRow> rows;
    for (Domain d : task::kAllDomains) {
        const auto test = ws.load_dataset(d, "test");
        rows.push_back({cell.preset, cell.variant, cell.size, cell.replicate, d, train::evaluate(model, test).accuracy});
    }
    json summary = {{"cell", cell.key()},
                    {"best_epoch", fr.best_epoch},
                    {"epochs_run", fr.epochs_run},
                    {"val_accuracy", fr.val_accuracy},
                    {"train_loss", fr.train_loss},
                    {"seconds", seconds_since(t0)}};
    text::write_file_atomic(dir + "/summary.json", [&](std::ostream& o) { o << summary.dump(2) << "\n"; });

    FileLock lock(lock_path);
    auto existing = rows_of(load_results(ws), cell);
    if (!existing.empty()) {
        return existing;
    }
    const bool fresh = !fs::exists(ws.results_path());
    {
        std::ofstream out(ws.results_path(), std::ios::app | std::ios::binary);
        require(static_cast<bool>(out), ErrorKind::Io, "cannot append to " + ws.results_path());
        std::ostringstream block;
        write_results_csv(block, rows);
        std::string text = block.str();
        if (!fresh) {
            text = text.substr(text.find('\n') + 1);
        }
        out << text;
        out.flush();
        require(static_cast<bool>(out), ErrorKind::Io, "write failed on " + ws.results_path());
    }
    std::string accs;
    for (const auto& r : rows) {
        accs += " " + task::to_string(r.domain) + "=" + text::format_double(r.accuracy);
    }
    ws.log("finetune " + cell.key() + ": best epoch " + std::to_string(fr.best_epoch) + "/" +
           std::to_string(fr.epochs_run) + accs + " (" + text::format_double(std::round(seconds_since(t0))) + " s)");
    return rows;
}

void cmd_probe(const Workspace& ws) {
    const Manifest& m = ws.manifest();
    const auto lang_bundle = ws.load_language();
    const synlang::Language lang{lang_bundle.inventory, lang_bundle.codec, lang_bundle.chains};
    const auto pool = ws.load_dataset(Domain::A_D1, "test");
    const auto pairs = probe::make_feature_pairs(pool, lang, seed_for(m, "probe.pairs"));
    const auto tpl = probe::parse_template(m.probe.template_text);
    std::set<std::size_t> sizes;
    for (const auto& b : m.experiments) {
        if (b.preset == m.probe.preset) {
            sizes.insert(b.sizes.begin(), b.sizes.end());
        }
    }
    for (Variant v : {Variant::WithDh, Variant::WithoutDh}) {
        const auto pv = v == Variant::WithDh ? PretrainVariant::WithDh : PretrainVariant::WithoutDh;
        const auto ppath = ws.pretrain_path(pv);
        require_file(ppath, "run pretrain --variant " + to_string(pv) + " first");
        auto pre = models::load_model<float>(ppath);

        std::vector<models::ModelBundle<float>> fts;
        std::vector<std::pair<std::string, std::size_t>> ids;
        for (std::size_t s : sizes) {
            const Cell c{m.probe.preset, v, s, m.probe.replicate};
            const auto p = ws.cell_dir(c) + "/model.ckpt";
            if (fs::exists(p)) {
                fts.push_back(models::load_model<float>(p));
                ids.emplace_back(c.key(), s);
            }
        }
        std::vector<probe::Checkpoint<float>> cks;
        for (std::size_t i = 0; i < fts.size(); ++i) {
            cks.push_back({ids[i].first, ids[i].second, &fts[i]});
        }
        const auto reports = probe::run_probe<float>(pre, cks, pairs, tpl);
        auto j = probe::reports_to_json(reports, m.probe.template_text);
        j["pretrained"] = to_string(v);
        std::vector<double> f0_true, f0_cross;
        json pj = json::array();
        for (const auto& p : pairs) {
            const double f0 = probe::d_f0(pre, std::span<const synlang::TokenId>(p.a),
                                          std::span<const synlang::TokenId>(p.b), tpl);
            (p.kind == probe::PairKind::TrueSynonym ? f0_true : f0_cross).push_back(f0);
            pj.push_back({{"pair_id", p.id}, {"kind", probe::to_string(p.kind)}, {"d_f0", f0}});
        }
        j["pairs"] = pj;
        const auto rt = probe::mann_whitney_less(f0_true, f0_cross);
        j["d_f0_separation"] = {{"median_true", probe::median(f0_true)},
                                {"median_cross", probe::median(f0_cross)},
                                {"u", rt.u},
                                {"z", rt.z},
                                {"p_value", rt.p_value}};
        text::write_file_atomic(ws.probe_path(v), [&](std::ostream& o) { o << j.dump(2) << "\n"; });
        ws.log("probe " + to_string(v) + ": " + std::to_string(reports.size()) + " checkpoint(s), D_f0 medians " +
               text::format_double(probe::median(f0_true)) + " vs " + text::format_double(probe::median(f0_cross)) +
               ", p = " + text::format_double(rt.p_value));
    }
}

probe::ProbeReport cmd_probe_file(const std::string& distributions, const std::string& out_path) {
    auto rep = probe::probe_from_distribution_file(distributions, fs::path(distributions).filename().string());
    require(!rep.records.empty(), ErrorKind::Validation, "distribution file has no pairs: " + distributions);
    const auto j = probe::reports_to_json({rep}, "external");
    text::write_file_atomic(out_path, [&](std::ostream& o) { o << j.dump(2) << "\n"; });
    return rep;
}

void cmd_report(const Workspace& ws, const std::string& out_dir) {
    require_file(ws.results_path(), "run finetune first");
    write_report(load_results(ws), out_dir);
    ws.log("report: written to " + out_dir);
}

void run_all(const Workspace& ws) {
    const Manifest& m = ws.manifest();
    cmd_gen(ws);
    cmd_pretrain(ws, PretrainVariant::WithDh);
    cmd_pretrain(ws, PretrainVariant::WithoutDh);
    const auto cells = m.cells();
    if (std::any_of(cells.begin(), cells.end(), [](const Cell& c) { return c.variant == Variant::Cbow; })) {
        cmd_pretrain(ws, PretrainVariant::Cbow);
    }
    for (const auto& c : cells) {
        cmd_finetune(ws, c);
    }
    cmd_probe(ws);
    cmd_report(ws, ws.path("report"));
}

}  // namespace dhmlm::expcli
