#pragma once

#include <json.hpp>

#include <cstring>
#include <map>

#include "xmag/nn/module.hpp"

// Weight-file format: 8-byte magic, little-endian u64 header length, a JSON
// text header {format_version, config, tensors:[{name, shape, dtype, offset,
// bytes}]}, then the raw tensor payload. load(save(w)) is bit-identical: the
// payload is the tensors' memory verbatim.

namespace xmag::nn {

inline constexpr char kWeightMagic[8] = {'X', 'M', 'A', 'G', 'W', 'T', '0', '1'};

template <typename T>
const char* dtype_name() {
    if constexpr (std::is_same_v<T, float>) return "f32";
    else if constexpr (std::is_same_v<T, double>) return "f64";
    else static_assert(sizeof(T) == 0, "unsupported weight dtype");
}

template <typename T>
void save_weights(const std::filesystem::path& path, const std::vector<TensorRef<T>>& refs,
                  const nlohmann::json& config) {
    nlohmann::json tensors = nlohmann::json::array();
    size_t offset = 0;
    for (const auto& r : refs) {
        const size_t bytes = r.value->numel() * sizeof(T);
        tensors.push_back({{"name", r.name},
                           {"shape", r.value->shape},
                           {"dtype", dtype_name<T>()},
                           {"offset", offset},
                           {"bytes", bytes}});
        offset += bytes;
    }
    const nlohmann::json header = {{"format_version", 1}, {"config", config}, {"tensors", tensors}};
    const std::string htext = header.dump();

    std::string out;
    out.reserve(8 + 8 + htext.size() + offset);
    out.append(kWeightMagic, 8);
    uint64_t hlen = htext.size();
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((hlen >> (8 * i)) & 0xff));
    out += htext;
    for (const auto& r : refs)
        out.append(reinterpret_cast<const char*>(r.value->data()), r.value->numel() * sizeof(T));
    write_file(path, out);
}

inline nlohmann::json read_weight_header(const std::string& bytes, size_t& payload_start) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kWeightMagic, 8) != 0)
        throw IoError("not a weight file (bad magic)");
    uint64_t hlen = 0;
    for (int i = 0; i < 8; ++i) hlen |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    if (16 + hlen > bytes.size()) throw IoError("weight file truncated in header");
    payload_start = 16 + hlen;
    try {
        return nlohmann::json::parse(bytes.substr(16, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("weight header parse error: ") + e.what());
    }
}

// Config stored at save time (architecture echo for loaders).
inline nlohmann::json peek_weight_config(const std::filesystem::path& path) {
    size_t payload_start = 0;
    const nlohmann::json h = read_weight_header(read_file(path), payload_start);
    return h.at("config");
}

// Strict load into an existing model: every ref must be present in the file
// with matching shape and dtype (matched by name, order-independent).
template <typename T>
nlohmann::json load_weights(const std::filesystem::path& path, const std::vector<TensorRef<T>>& refs) {
    const std::string bytes = read_file(path);
    size_t payload_start = 0;
    const nlohmann::json header = read_weight_header(bytes, payload_start);
    std::map<std::string, const nlohmann::json*> index;
    for (const auto& t : header.at("tensors")) index[t.at("name").get<std::string>()] = &t;
    for (const auto& r : refs) {
        auto it = index.find(r.name);
        if (it == index.end()) throw IoError("weight file missing tensor " + r.name + " (" + path.string() + ")");
        const nlohmann::json& t = *it->second;
        if (t.at("dtype").get<std::string>() != dtype_name<T>())
            throw IoError("tensor " + r.name + " dtype mismatch: file has " + t.at("dtype").get<std::string>());
        const auto shape = t.at("shape").get<std::vector<size_t>>();
        if (shape != r.value->shape) throw IoError("tensor " + r.name + " shape mismatch");
        const size_t off = t.at("offset").get<size_t>(), nbytes = t.at("bytes").get<size_t>();
        if (nbytes != r.value->numel() * sizeof(T) || payload_start + off + nbytes > bytes.size())
            throw IoError("tensor " + r.name + " payload out of bounds");
        std::memcpy(r.value->data(), bytes.data() + payload_start + off, nbytes);
    }
    return header.at("config");
}

}  // namespace xmag::nn
