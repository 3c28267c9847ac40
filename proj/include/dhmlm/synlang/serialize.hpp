#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "dhmlm/synlang/chain.hpp"
#include "dhmlm/synlang/codec.hpp"
#include "dhmlm/synlang/inventory.hpp"

namespace dhmlm::synlang {

nlohmann::json to_json(const SynsetInventory& inv);
nlohmann::json to_json(const FeatureCodec& codec);
nlohmann::json to_json(const MarkovChainPair& chains);

SynsetInventory inventory_from_json(const nlohmann::json& j);
FeatureCodec codec_from_json(const nlohmann::json& j, const SynsetInventory& inv);
MarkovChainPair chains_from_json(const nlohmann::json& j);

std::string to_string(CodecMode mode);
std::string to_string(VocabSharing sharing);
CodecMode parse_codec_mode(const std::string& s);
VocabSharing parse_vocab_sharing(const std::string& s);

/// A self-contained language definition: inventory, codec and chains.
struct LanguageBundle {
    SynsetInventory inventory;
    FeatureCodec codec;
    MarkovChainPair chains;
};

void save_language(const std::string& path, const LanguageBundle& lang);
LanguageBundle load_language(const std::string& path);

}  // namespace dhmlm::synlang
