#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "dhmlm/ndgrad/adam.hpp"
#include "dhmlm/ndgrad/parameter.hpp"

namespace dhmlm::ndgrad {

/// Binary checkpoint: magic "DHMLMCK1", u32 version, u64 header length, a JSON
/// header (metadata, scalar width, parameter names and shapes), then each
/// tensor's elements little-endian in header order. Optimizer moments follow
/// the parameters when present.
template <class T>
void save_checkpoint(const std::string& path, const ParameterStore<T>& params, const nlohmann::json& meta,
                     const Adam<T>* optimizer = nullptr);

/// Reads the header only.
nlohmann::json read_checkpoint_meta(const std::string& path);

/// Loads values into an existing store whose names and shapes must match.
/// Returns the metadata object.
template <class T>
nlohmann::json load_checkpoint(const std::string& path, ParameterStore<T>& params, Adam<T>* optimizer = nullptr);

}  // namespace dhmlm::ndgrad
