#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dhmlm/common/error.hpp"
#include "dhmlm/common/runtime.hpp"
#include "dhmlm/expcli/pipeline.hpp"

namespace {

using namespace dhmlm;
using namespace dhmlm::expcli;

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::Validation:
        case ErrorKind::InvalidArgument: return 2;
        case ErrorKind::NotFound: return 3;
        case ErrorKind::NumericalError: return 4;
        default: return 1;
    }
}

Manifest resolve_manifest(const std::string& spec) {
    if (std::filesystem::exists(spec)) {
        return load_manifest(spec);
    }
    if (spec == "desk" || spec == "paper") {
        return preset_manifest(spec);
    }
    fail(ErrorKind::NotFound, "manifest " + spec + " does not exist (built-in names: desk, paper)");
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Synthetic distributional-hypothesis MLM experiments"};
    app.require_subcommand(1);
    std::string manifest_spec = "desk";
    std::string out_dir;
    app.add_option("--manifest", manifest_spec, "manifest JSON file, or a built-in name (desk, paper)");
    app.add_option("--out-dir", out_dir, "artifact root (default: $DHMLM_ARTIFACT_ROOT or ./artifacts)");

    auto* manifest_cmd = app.add_subcommand("manifest", "print the resolved manifest");
    auto* gen = app.add_subcommand("gen", "generate the language, corpora, pattern set and task datasets");
    auto* pre = app.add_subcommand("pretrain", "pretrain one variant");
    std::string pre_variant;
    pre->add_option("--variant", pre_variant, "w-dh, wo-dh or cbow")->required();

    auto* ft = app.add_subcommand("finetune", "fine-tune and evaluate cells; omitted flags select every grid value");
    std::optional<std::string> preset, variant;
    std::optional<std::size_t> size, seed;
    ft->add_option("--preset", preset, "50-50, 100-A-D1 or 90-10");
    ft->add_option("--variant", variant, "w-dh, wo-dh, scratch, cbow or shuffle");
    ft->add_option("--size", size, "fine-tuning set size");
    ft->add_option("--seed", seed, "seed replicate, 1-based");

    auto* pr = app.add_subcommand("probe", "D_f0 / D_f probe reports");
    std::string distributions, probe_out;
    pr->add_option("--distributions", distributions, "external distribution file (no local models needed)");
    pr->add_option("--out", probe_out, "report path for --distributions");

    auto* rep = app.add_subcommand("report", "CSV tables and SVG learning curves");
    auto* all = app.add_subcommand("all", "gen, pretrain, every grid cell, probe and report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (pr->parsed() && !distributions.empty()) {
            const std::string out = probe_out.empty() ? distributions + ".report.json" : probe_out;
            const auto r = cmd_probe_file(distributions, out);
            std::cout << "pairs " << r.records.size() << ", r = ";
            if (r.r) {
                std::cout << *r.r;
            } else {
                std::cout << "undefined";
            }
            std::cout << ", report " << out << "\n";
            return 0;
        }
        const Manifest m = resolve_manifest(manifest_spec);
        if (manifest_cmd->parsed()) {
            std::cout << to_json(m).dump(2) << "\n";
            return 0;
        }
        const std::string root = out_dir.empty() ? Workspace::default_root() : out_dir;
        Workspace ws(root, m, [](const std::string& s) { std::cerr << s << std::endl; });
        if (gen->parsed()) {
            for (const auto& [rel, sum] : cmd_gen(ws)) {
                std::cout << sum << "  " << rel << "\n";
            }
        } else if (pre->parsed()) {
            cmd_pretrain(ws, parse_pretrain_variant(pre_variant));
        } else if (ft->parsed()) {
            const std::optional<Preset> p = preset ? std::optional(parse_preset(*preset)) : std::nullopt;
            const std::optional<Variant> v = variant ? std::optional(parse_variant(*variant)) : std::nullopt;
            std::vector<Cell> cells;
            if (p && v && size && seed) {
                cells.push_back({*p, *v, *size, *seed});
            } else {
                for (const auto& c : m.cells()) {
                    if ((!p || c.preset == *p) && (!v || c.variant == *v) && (!size || c.size == *size) &&
                        (!seed || c.replicate == *seed)) {
                        cells.push_back(c);
                    }
                }
                require(!cells.empty(), ErrorKind::InvalidArgument, "no grid cell matches the given flags");
            }
            for (const auto& c : cells) {
                for (const auto& r : cmd_finetune(ws, c)) {
                    std::cout << c.key() << " " << task::to_string(r.domain) << " " << r.accuracy << "\n";
                }
            }
        } else if (pr->parsed()) {
            cmd_probe(ws);
        } else if (rep->parsed()) {
            cmd_report(ws, ws.path("report"));
        } else if (all->parsed()) {
            run_all(ws);
        }
    } catch (const Error& e) {
        std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
