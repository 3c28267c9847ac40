#include "dhmlm/synlang/serialize.hpp"

#include <ostream>

#include "dhmlm/common/error.hpp"
#include "dhmlm/common/text_io.hpp"

namespace dhmlm::synlang {

namespace {
constexpr int kLanguageVersion = 1;
}

std::string to_string(CodecMode mode) { return mode == CodecMode::SingleToken ? "single-token" : "multi-token"; }
std::string to_string(VocabSharing sharing) { return sharing == VocabSharing::Shared ? "shared" : "separate"; }

CodecMode parse_codec_mode(const std::string& s) {
    if (s == "single-token") {
        return CodecMode::SingleToken;
    }
    if (s == "multi-token") {
        return CodecMode::MultiToken;
    }
    fail(ErrorKind::InvalidArgument, "unknown codec mode '" + s + "'");
}

VocabSharing parse_vocab_sharing(const std::string& s) {
    if (s == "shared") {
        return VocabSharing::Shared;
    }
    if (s == "separate") {
        return VocabSharing::Separate;
    }
    fail(ErrorKind::InvalidArgument, "unknown vocabulary sharing '" + s + "'");
}

nlohmann::json to_json(const SynsetInventory& inv) {
    nlohmann::json synsets = nlohmann::json::array();
    for (const auto& s : inv.synsets()) {
        synsets.push_back({s.a, s.b});
    }
    return {{"n", inv.size()}, {"synsets", synsets}};
}

nlohmann::json to_json(const FeatureCodec& codec) {
    return {
        {"mode", to_string(codec.mode())},
        {"vocab_sharing", to_string(codec.sharing())},
        {"vocab_alpha", {codec.vocab_alpha().begin, codec.vocab_alpha().end}},
        {"vocab_beta", {codec.vocab_beta().begin, codec.vocab_beta().end}},
        {"token_map", codec.token_map()},
    };
}

nlohmann::json to_json(const MarkovChainPair& chains) {
    auto edges = [](const MarkovChain& c) {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& e : c.edges()) {
            out.push_back({e[0], e[1]});
        }
        return out;
    };
    return {{"edge_probability", MarkovChain::kEdgeProbability},
            {"chain1", edges(chains.chain1)},
            {"chain2", edges(chains.chain2)}};
}

SynsetInventory inventory_from_json(const nlohmann::json& j) {
    std::vector<Synset> synsets;
    for (const auto& s : j.at("synsets")) {
        synsets.push_back(Synset{s.at(0).get<FeatureId>(), s.at(1).get<FeatureId>()});
    }
    require(synsets.size() == j.at("n").get<std::size_t>(), ErrorKind::Io, "inventory size mismatch");
    return SynsetInventory(std::move(synsets));
}

FeatureCodec codec_from_json(const nlohmann::json& j, const SynsetInventory& inv) {
    auto range = [](const nlohmann::json& r) { return TokenRange{r.at(0).get<TokenId>(), r.at(1).get<TokenId>()}; };
    return FeatureCodec(parse_codec_mode(j.at("mode").get<std::string>()),
                        parse_vocab_sharing(j.at("vocab_sharing").get<std::string>()), range(j.at("vocab_alpha")),
                        range(j.at("vocab_beta")), j.at("token_map").get<std::vector<std::vector<TokenId>>>(), inv);
}

MarkovChainPair chains_from_json(const nlohmann::json& j) {
    auto chain = [](const nlohmann::json& edges) {
        std::vector<std::array<SynsetId, 2>> out;
        for (const auto& e : edges) {
            out.push_back({e.at(0).get<SynsetId>(), e.at(1).get<SynsetId>()});
        }
        return MarkovChain(std::move(out));
    };
    return MarkovChainPair{chain(j.at("chain1")), chain(j.at("chain2"))};
}

void save_language(const std::string& path, const LanguageBundle& lang) {
    const nlohmann::json j = {
        {"format", "dhmlm-language"},
        {"version", kLanguageVersion},
        {"inventory", to_json(lang.inventory)},
        {"codec", to_json(lang.codec)},
        {"chains", to_json(lang.chains)},
    };
    text::write_file_atomic(path, [&](std::ostream& out) { out << j.dump(1) << '\n'; });
}

LanguageBundle load_language(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Io, "bad language manifest " + path + ": " + e.what());
    }
    require(j.value("format", "") == "dhmlm-language" && j.value("version", 0) == kLanguageVersion, ErrorKind::Io,
            "unsupported language manifest " + path);
    SynsetInventory inv = inventory_from_json(j.at("inventory"));
    FeatureCodec codec = codec_from_json(j.at("codec"), inv);
    return LanguageBundle{std::move(inv), std::move(codec), chains_from_json(j.at("chains"))};
}

}  // namespace dhmlm::synlang
