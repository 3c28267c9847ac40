#include "dhmlm/expcli/manifest.hpp"

#include <set>

#include "dhmlm/common/error.hpp"
#include "dhmlm/common/text_io.hpp"
#include "dhmlm/probe/probe.hpp"
#include "dhmlm/synlang/serialize.hpp"

namespace dhmlm::expcli {

using nlohmann::json;

std::string to_string(Preset p) {
    switch (p) {
        case Preset::Mix50: return "50-50";
        case Preset::FullAD1: return "100-A-D1";
        case Preset::Mix90: return "90-10";
    }
    return "?";
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::WithDh: return "w-dh";
        case Variant::WithoutDh: return "wo-dh";
        case Variant::Scratch: return "scratch";
        case Variant::Cbow: return "cbow";
        case Variant::Shuffle: return "shuffle";
    }
    return "?";
}

std::string to_string(PretrainVariant v) {
    switch (v) {
        case PretrainVariant::WithDh: return "w-dh";
        case PretrainVariant::WithoutDh: return "wo-dh";
        case PretrainVariant::Cbow: return "cbow";
    }
    return "?";
}

Preset parse_preset(const std::string& s) {
    for (Preset p : kAllPresets) {
        if (to_string(p) == s) {
            return p;
        }
    }
    fail(ErrorKind::InvalidArgument, "unknown preset '" + s + "' (expected 50-50, 100-A-D1 or 90-10)");
}

Variant parse_variant(const std::string& s) {
    for (Variant v : kAllVariants) {
        if (to_string(v) == s) {
            return v;
        }
    }
    fail(ErrorKind::InvalidArgument, "unknown variant '" + s + "' (expected w-dh, wo-dh, scratch, cbow or shuffle)");
}

PretrainVariant parse_pretrain_variant(const std::string& s) {
    for (PretrainVariant v : {PretrainVariant::WithDh, PretrainVariant::WithoutDh, PretrainVariant::Cbow}) {
        if (to_string(v) == s) {
            return v;
        }
    }
    fail(ErrorKind::InvalidArgument, "unknown pretraining variant '" + s + "' (expected w-dh, wo-dh or cbow)");
}

std::vector<std::pair<task::Domain, double>> preset_parts(Preset p) {
    using task::Domain;
    switch (p) {
        case Preset::Mix50: return {{Domain::A_D1, 0.5}, {Domain::B_D2, 0.5}};
        case Preset::FullAD1: return {{Domain::A_D1, 1.0}};
        case Preset::Mix90: return {{Domain::A_D1, 0.9}, {Domain::B_D2, 0.1}};
    }
    return {};
}

std::string Cell::key() const {
    return to_string(preset) + "/" + to_string(variant) + "/" + std::to_string(size) + "/" + std::to_string(replicate);
}

void Manifest::validate() const {
    std::vector<std::string> bad;
    auto check = [&](bool ok, const std::string& field) {
        if (!ok) {
            bad.push_back(field);
        }
    };
    auto wrap = [&](const std::string& field, auto&& fn) {
        try {
            fn();
        } catch (const Error& e) {
            bad.push_back(field + " (" + e.what() + ")");
        }
    };
    check(format_version == 1, "format_version");
    check(scale == "desk" || scale == "paper" || scale == "custom", "scale");
    check(language.num_synsets >= 2, "language.num_synsets");
    check(corpus.num_sequences >= 1, "corpus.num_sequences");
    check(corpus.length >= 2, "corpus.length");
    check(corpus.val_sequences >= 1, "corpus.val_sequences");
    check(patterns.num_patterns >= 1, "patterns.num_patterns");
    check(patterns.set_size >= 1 && patterns.set_size <= language.num_synsets, "patterns.set_size");
    check(task.length >= 3, "task.length");
    check(task.train_pool >= 1, "task.train_pool");
    check(task.val_size >= 1, "task.val_size");
    check(task.test_size >= 1, "task.test_size");
    wrap("model", [&] {
        auto m = model;
        m.vocab_size = 3 + 2 * language.num_synsets;
        m.validate();
    });
    check(model.max_positions >= 1 + std::max(corpus.length, task.length), "model.max_positions");
    wrap("pretrain", [&] { pretrain.validate(); });
    wrap("finetune", [&] { finetune.validate(); });
    check(cbow.window >= 1, "cbow.window");
    check(cbow.dim == model.model_dim, "cbow.dim");
    check(cbow.epochs >= 1 && cbow.batch_size >= 1 && cbow.lr > 0.0, "cbow");
    wrap("probe.template", [&] { probe::parse_template(probe.template_text); });
    check(probe.replicate >= 1 && probe.replicate <= replicates, "probe.replicate");
    check(replicates >= 1, "replicates");
    check(!experiments.empty(), "experiments");
    for (std::size_t i = 0; i < experiments.size(); ++i) {
        const auto& e = experiments[i];
        const std::string f = "experiments[" + std::to_string(i) + "]";
        check(!e.variants.empty(), f + ".variants");
        check(!e.sizes.empty(), f + ".sizes");
        for (std::size_t s : e.sizes) {
            bool fits = s >= 2;
            for (const auto& [d, frac] : preset_parts(e.preset)) {
                fits = fits && frac * static_cast<double>(s) <= static_cast<double>(task.train_pool) + 1.0;
            }
            check(fits, f + ".sizes (" + std::to_string(s) + " exceeds task.train_pool)");
        }
    }
    if (!bad.empty()) {
        std::string msg = "invalid manifest fields:";
        for (const auto& b : bad) {
            msg += " " + b + ";";
        }
        fail(ErrorKind::Validation, msg);
    }
}

std::vector<Cell> Manifest::cells() const {
    std::vector<Cell> out;
    std::set<std::string> seen;
    for (std::size_t r = 1; r <= replicates; ++r) {
        for (const auto& e : experiments) {
            for (std::size_t s : e.sizes) {
                for (Variant v : e.variants) {
                    Cell c{e.preset, v, s, r};
                    if (seen.insert(c.key()).second) {
                        out.push_back(c);
                    }
                }
            }
        }
    }
    return out;
}

Manifest desk_manifest() {
    Manifest m;
    m.scale = "desk";
    m.seed = 20230711;
    m.model.num_layers = 2;
    m.model.num_heads = 4;
    m.model.model_dim = 128;
    m.model.ff_dim = 512;
    m.model.max_positions = 65;
    m.model.dropout = 0.1;
    m.pretrain.epochs = 6;
    m.pretrain.schedule = train::LrSchedule::LinearDecay;
    m.cbow.dim = 128;
    using V = Variant;
    m.experiments = {
        {Preset::Mix50, {V::WithDh, V::WithoutDh, V::Cbow, V::Scratch}, {1024}},
        {Preset::Mix50, {V::Shuffle, V::Scratch}, {4096}},
        {Preset::FullAD1, {V::WithDh, V::WithoutDh}, {256, 1024, 4096}},
        {Preset::FullAD1, {V::Scratch}, {4096}},
        {Preset::Mix90, {V::WithDh, V::WithoutDh}, {4096}},
    };
    return m;
}

Manifest paper_manifest() {
    Manifest m;
    m.scale = "paper";
    m.seed = 20230711;
    m.corpus = {100000, 256, 2000};
    m.task.length = 100;
    m.task.train_pool = 16384;
    m.task.val_size = 2000;
    m.task.test_size = 2000;
    m.patterns.calibrate = false;
    m.model.num_layers = 6;
    m.model.num_heads = 12;
    m.model.model_dim = 384;
    m.model.ff_dim = 1536;
    m.model.max_positions = 257;
    m.pretrain.epochs = 5;
    m.pretrain.schedule = train::LrSchedule::LinearDecay;
    m.cbow.dim = 384;
    std::vector<Variant> all(std::begin(kAllVariants), std::end(kAllVariants));
    for (Preset p : kAllPresets) {
        m.experiments.push_back({p, all, {256, 1024, 4096, 16384}});
    }
    return m;
}

Manifest preset_manifest(const std::string& name) {
    if (name == "desk") {
        return desk_manifest();
    }
    if (name == "paper") {
        return paper_manifest();
    }
    fail(ErrorKind::InvalidArgument, "unknown manifest preset '" + name + "' (expected desk or paper)");
}

namespace {

// Reads an object field by field and rejects whatever was not consumed.
class Fields {
public:
    Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        require(j_.is_object(), ErrorKind::Validation, "manifest field " + name("") + " must be an object");
    }

    const json& raw(const std::string& key) {
        used_.insert(key);
        require(j_.contains(key), ErrorKind::Validation, "manifest is missing field " + name(key));
        return j_.at(key);
    }

    template <class T>
    T get(const std::string& key) {
        const json& v = raw(key);
        try {
            return v.get<T>();
        } catch (const json::exception&) {
            fail(ErrorKind::Validation, "manifest field " + name(key) + " has the wrong type");
        }
    }

    Fields sub(const std::string& key) { return Fields(raw(key), name(key)); }

    std::string name(const std::string& key) const {
        if (path_.empty()) {
            return key;
        }
        return key.empty() ? path_ : path_ + "." + key;
    }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            require(used_.count(k) != 0, ErrorKind::Validation, "manifest has unknown field " + name(k));
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

template <class Fn>
auto parsed(const std::string& field, Fn&& fn) {
    try {
        return fn();
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::Validation) {
            throw;
        }
        fail(ErrorKind::Validation, "manifest field " + field + ": " + e.what());
    }
}

}  // namespace

Manifest manifest_from_json(const json& j) {
    Manifest m;
    Fields top(j, "");
    m.format_version = top.get<int>("format_version");
    m.scale = top.get<std::string>("scale");
    m.seed = top.get<std::uint64_t>("seed");
    {
        auto f = top.sub("language");
        m.language.num_synsets = f.get<std::size_t>("num_synsets");
        m.language.codec_mode =
            parsed("language.codec_mode", [&] { return synlang::parse_codec_mode(f.get<std::string>("codec_mode")); });
        m.language.sharing = parsed("language.vocab_sharing",
                                    [&] { return synlang::parse_vocab_sharing(f.get<std::string>("vocab_sharing")); });
        m.language.tokens_per_side = f.get<std::size_t>("tokens_per_side");
        f.finish();
    }
    {
        auto f = top.sub("corpus");
        m.corpus.num_sequences = f.get<std::size_t>("num_sequences");
        m.corpus.length = f.get<std::size_t>("length");
        m.corpus.val_sequences = f.get<std::size_t>("val_sequences");
        f.finish();
    }
    {
        auto f = top.sub("patterns");
        m.patterns.num_patterns = f.get<std::size_t>("num_patterns");
        m.patterns.set_size = f.get<std::size_t>("set_size");
        m.patterns.calibrate = f.get<bool>("calibrate");
        f.finish();
    }
    {
        auto f = top.sub("task");
        m.task.length = f.get<std::size_t>("length");
        m.task.train_pool = f.get<std::size_t>("train_pool");
        m.task.val_size = f.get<std::size_t>("val_size");
        m.task.test_size = f.get<std::size_t>("test_size");
        m.task.balance = parsed("task.balance", [&] { return task::parse_balance(f.get<std::string>("balance")); });
        f.finish();
    }
    {
        auto f = top.sub("model");
        m.model.num_layers = f.get<std::size_t>("num_layers");
        m.model.num_heads = f.get<std::size_t>("num_heads");
        m.model.model_dim = f.get<std::size_t>("model_dim");
        m.model.ff_dim = f.get<std::size_t>("ff_dim");
        m.model.max_positions = f.get<std::size_t>("max_positions");
        m.model.dropout = f.get<double>("dropout");
        f.finish();
    }
    {
        auto f = top.sub("pretrain");
        auto& p = m.pretrain;
        p.masking.rate = f.get<double>("mask_rate");
        p.masking.mask = f.get<double>("mask_ratio");
        p.masking.random = f.get<double>("random_ratio");
        p.masking.keep = f.get<double>("keep_ratio");
        p.batch_size = f.get<std::size_t>("batch_size");
        p.lr = f.get<double>("lr");
        p.schedule = parsed("pretrain.lr_schedule",
                            [&] { return train::parse_lr_schedule(f.get<std::string>("lr_schedule")); });
        p.epochs = f.get<std::size_t>("epochs");
        p.max_steps = f.get<std::size_t>("max_steps");
        p.log_every = f.get<std::size_t>("log_every");
        f.finish();
    }
    {
        auto f = top.sub("finetune");
        auto& p = m.finetune;
        p.batch_size = f.get<std::size_t>("batch_size");
        p.lr = f.get<double>("lr");
        p.max_epochs = f.get<std::size_t>("max_epochs");
        p.patience = f.get<std::size_t>("patience");
        f.finish();
    }
    {
        auto f = top.sub("cbow");
        auto& c = m.cbow;
        c.window = f.get<std::size_t>("window");
        c.dim = f.get<std::size_t>("dim");
        c.epochs = f.get<std::size_t>("epochs");
        c.batch_size = f.get<std::size_t>("batch_size");
        c.lr = f.get<double>("lr");
        f.finish();
    }
    {
        auto f = top.sub("probe");
        m.probe.template_text = f.get<std::string>("template");
        m.probe.preset = parsed("probe.preset", [&] { return parse_preset(f.get<std::string>("preset")); });
        m.probe.replicate = f.get<std::size_t>("replicate");
        f.finish();
    }
    m.replicates = top.get<std::size_t>("replicates");
    const json& ex = top.raw("experiments");
    require(ex.is_array(), ErrorKind::Validation, "manifest field experiments must be an array");
    for (std::size_t i = 0; i < ex.size(); ++i) {
        const std::string path = "experiments[" + std::to_string(i) + "]";
        Fields f(ex[i], path);
        ExperimentBlock b;
        b.preset = parsed(path + ".preset", [&] { return parse_preset(f.get<std::string>("preset")); });
        for (const auto& v : f.get<std::vector<std::string>>("variants")) {
            b.variants.push_back(parsed(path + ".variants", [&] { return parse_variant(v); }));
        }
        b.sizes = f.get<std::vector<std::size_t>>("sizes");
        f.finish();
        m.experiments.push_back(std::move(b));
    }
    top.finish();
    m.validate();
    return m;
}

json to_json(const Manifest& m) {
    json ex = json::array();
    for (const auto& b : m.experiments) {
        json vs = json::array();
        for (Variant v : b.variants) {
            vs.push_back(to_string(v));
        }
        ex.push_back({{"preset", to_string(b.preset)}, {"variants", vs}, {"sizes", b.sizes}});
    }
    const auto& p = m.pretrain;
    const auto& f = m.finetune;
    const auto& c = m.cbow;
    return {
        {"format_version", m.format_version},
        {"scale", m.scale},
        {"seed", m.seed},
        {"language",
         {{"num_synsets", m.language.num_synsets},
          {"codec_mode", synlang::to_string(m.language.codec_mode)},
          {"vocab_sharing", synlang::to_string(m.language.sharing)},
          {"tokens_per_side", m.language.tokens_per_side}}},
        {"corpus",
         {{"num_sequences", m.corpus.num_sequences},
          {"length", m.corpus.length},
          {"val_sequences", m.corpus.val_sequences}}},
        {"patterns",
         {{"num_patterns", m.patterns.num_patterns},
          {"set_size", m.patterns.set_size},
          {"calibrate", m.patterns.calibrate}}},
        {"task",
         {{"length", m.task.length},
          {"train_pool", m.task.train_pool},
          {"val_size", m.task.val_size},
          {"test_size", m.task.test_size},
          {"balance", task::to_string(m.task.balance)}}},
        {"model",
         {{"num_layers", m.model.num_layers},
          {"num_heads", m.model.num_heads},
          {"model_dim", m.model.model_dim},
          {"ff_dim", m.model.ff_dim},
          {"max_positions", m.model.max_positions},
          {"dropout", m.model.dropout}}},
        {"pretrain",
         {{"mask_rate", p.masking.rate},
          {"mask_ratio", p.masking.mask},
          {"random_ratio", p.masking.random},
          {"keep_ratio", p.masking.keep},
          {"batch_size", p.batch_size},
          {"lr", p.lr},
          {"lr_schedule", train::to_string(p.schedule)},
          {"epochs", p.epochs},
          {"max_steps", p.max_steps},
          {"log_every", p.log_every}}},
        {"finetune",
         {{"batch_size", f.batch_size}, {"lr", f.lr}, {"max_epochs", f.max_epochs}, {"patience", f.patience}}},
        {"cbow",
         {{"window", c.window}, {"dim", c.dim}, {"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr}}},
        {"probe",
         {{"template", m.probe.template_text},
          {"preset", to_string(m.probe.preset)},
          {"replicate", m.probe.replicate}}},
        {"replicates", m.replicates},
        {"experiments", ex},
    };
}

Manifest load_manifest(const std::string& path) {
    json j;
    try {
        j = json::parse(text::read_file(path));
    } catch (const json::exception& e) {
        fail(ErrorKind::Validation, "manifest " + path + " is not valid JSON: " + e.what());
    }
    return manifest_from_json(j);
}

void save_manifest(const std::string& path, const Manifest& m) {
    text::write_file_atomic(path, [&](std::ostream& out) { out << to_json(m).dump(2) << "\n"; });
}

}  // namespace dhmlm::expcli
