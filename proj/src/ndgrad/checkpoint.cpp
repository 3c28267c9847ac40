#include "dhmlm/ndgrad/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "dhmlm/common/text_io.hpp"

namespace dhmlm::ndgrad {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'H', 'M', 'L', 'M', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

template <class V>
void write_pod(std::ostream& os, V v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V read_pod(std::istream& is, const std::string& path) {
    V v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(V));
    require(is.good(), ErrorKind::Validation, "truncated checkpoint " + path);
    return v;
}

template <class T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
}

template <class T>
void read_tensor(std::istream& is, Tensor<T>& t, const std::string& path) {
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
    require(is.good(), ErrorKind::Validation, "truncated checkpoint " + path);
}

nlohmann::json read_header(std::istream& is, const std::string& path) {
    char magic[8];
    is.read(magic, 8);
    require(is.good() && std::memcmp(magic, kMagic, 8) == 0, ErrorKind::Validation, "not a checkpoint: " + path);
    const auto version = read_pod<std::uint32_t>(is, path);
    require(version == kVersion, ErrorKind::Validation,
            "unsupported checkpoint version " + std::to_string(version) + " in " + path);
    const auto len = read_pod<std::uint64_t>(is, path);
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    require(is.good(), ErrorKind::Validation, "truncated checkpoint header " + path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Validation, "malformed checkpoint header in " + path + ": " + e.what());
    }
}

std::ifstream open_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.is_open(), ErrorKind::NotFound, "checkpoint not found: " + path);
    return is;
}

}  // namespace

template <class T>
void save_checkpoint(const std::string& path, const ParameterStore<T>& params, const nlohmann::json& meta,
                     const Adam<T>* optimizer) {
    nlohmann::json header;
    header["meta"] = meta;
    header["scalar_bytes"] = sizeof(T);
    header["optimizer"] = optimizer != nullptr;
    if (optimizer != nullptr) {
        header["optimizer_steps"] = optimizer->steps();
    }
    auto& list = header["params"] = nlohmann::json::array();
    for (const auto& p : params) {
        require(p.value.all_finite(), ErrorKind::NumericalError, "refusing to save non-finite parameter " + p.name);
        list.push_back({{"name", p.name}, {"shape", p.value.shape()}});
    }
    const std::string text = header.dump();
    text::write_file_atomic(path, [&](std::ostream& os) {
        os.write(kMagic, 8);
        write_pod(os, kVersion);
        write_pod(os, static_cast<std::uint64_t>(text.size()));
        os.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& p : params) {
            write_tensor(os, p.value);
        }
        if (optimizer != nullptr) {
            for (const auto& m : optimizer->first_moments()) {
                write_tensor(os, m);
            }
            for (const auto& v : optimizer->second_moments()) {
                write_tensor(os, v);
            }
        }
    });
}

nlohmann::json read_checkpoint_meta(const std::string& path) {
    auto is = open_checkpoint(path);
    return read_header(is, path).at("meta");
}

template <class T>
nlohmann::json load_checkpoint(const std::string& path, ParameterStore<T>& params, Adam<T>* optimizer) {
    auto is = open_checkpoint(path);
    const auto header = read_header(is, path);
    require(header.at("scalar_bytes").get<std::size_t>() == sizeof(T), ErrorKind::Validation,
            "checkpoint scalar width differs from the requested precision: " + path);
    const auto& list = header.at("params");
    require(list.size() == params.size(), ErrorKind::Validation,
            "checkpoint has " + std::to_string(list.size()) + " tensors, model expects " +
                std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto name = list[i].at("name").get<std::string>();
        const auto shape = list[i].at("shape").get<Shape>();
        require(name == params[i].name && shape == params[i].value.shape(), ErrorKind::Validation,
                "checkpoint tensor " + name + shape_string(shape) + " does not match " + params[i].name +
                    shape_string(params[i].value.shape()));
    }
    for (auto& p : params) {
        read_tensor(is, p.value, path);
    }
    if (optimizer != nullptr) {
        require(header.at("optimizer").get<bool>(), ErrorKind::Validation, "checkpoint has no optimizer state");
        for (auto& m : optimizer->first_moments()) {
            read_tensor(is, m, path);
        }
        for (auto& v : optimizer->second_moments()) {
            read_tensor(is, v, path);
        }
        optimizer->set_steps(header.at("optimizer_steps").get<std::uint64_t>());
    }
    return header.at("meta");
}

template void save_checkpoint(const std::string&, const ParameterStore<float>&, const nlohmann::json&,
                              const Adam<float>*);
template void save_checkpoint(const std::string&, const ParameterStore<double>&, const nlohmann::json&,
                              const Adam<double>*);
template nlohmann::json load_checkpoint(const std::string&, ParameterStore<float>&, Adam<float>*);
template nlohmann::json load_checkpoint(const std::string&, ParameterStore<double>&, Adam<double>*);

}  // namespace dhmlm::ndgrad
