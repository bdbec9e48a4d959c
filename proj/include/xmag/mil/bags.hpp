#pragma once

#include <json.hpp>

#include <map>

#include "xmag/manifest.hpp"
#include "xmag/nn/vit.hpp"

// Bag construction: one class-token embedding per 5x patch per slide, in
// manifest tile order. Also the on-disk embedding store: a raw row-major
// 32-bit-float matrix next to a JSON sidecar.

namespace xmag::mil {

struct Bag {
    std::string slide_id;
    Tensor<float> embeddings;  // [M, d_S]
    int label = 0;

    size_t m() const { return embeddings.shape.empty() ? 0 : embeddings.shape[0]; }
};

struct SlideGroup {
    std::string slide_id;
    int label = 0;
    std::vector<ManifestRecord> records;  // manifest order
};

// Group manifest records by slide, preserving first-appearance slide order
// and within-slide manifest order.
inline std::vector<SlideGroup> group_by_slide(const Manifest& m) {
    std::vector<SlideGroup> out;
    std::map<std::string, size_t> index;
    for (const ManifestRecord& r : m.records) {
        auto it = index.find(r.slide_id);
        if (it == index.end()) {
            index[r.slide_id] = out.size();
            out.push_back({r.slide_id, r.slide_label, {r}});
        } else {
            out[it->second].records.push_back(r);
        }
    }
    return out;
}

// Encode every 5x patch of one slide with the (frozen) student encoder.
template <typename T>
Bag build_bag(const SlideGroup& slide, const nn::ViT<T>& encoder, const std::filesystem::path& root) {
    if (slide.records.empty()) throw InvariantError("build_bag: slide has no tiles");
    const size_t d = static_cast<size_t>(encoder.cfg.embed_dim);
    Bag bag;
    bag.slide_id = slide.slide_id;
    bag.label = slide.label;
    bag.embeddings = Tensor<float>({slide.records.size(), d});
    for (size_t i = 0; i < slide.records.size(); ++i) {
        const ManifestRecord& r = slide.records[i];
        if (!std::filesystem::exists(root / r.lowmag_path))
            throw MissingPrerequisiteError("missing patch file for slide " + r.slide_id + " tile (" +
                                           std::to_string(r.grid_row) + ", " + std::to_string(r.grid_col) +
                                           "): " + r.lowmag_path);
        const Image patch = png::read(root / r.lowmag_path);
        const nn::StudentOutput<T> so = nn::encode_student(encoder, patch);
        for (size_t j = 0; j < d; ++j) bag.embeddings.data()[i * d + j] = static_cast<float>(so.class_token.v[j]);
    }
    return bag;
}

// ---- Embedding store ----------------------------------------------------
// <stem>.emb : raw little-endian float32, row-major [n, d]
// <stem>.json: {"slide_id", "M", "d_S", "encoder_checkpoint_hash"}

inline void save_embedding_matrix(const std::filesystem::path& stem, const Tensor<float>& mat,
                                  const std::string& slide_id, const std::string& encoder_checkpoint_hash) {
    if (mat.numel() == 0 || mat.shape.size() != 2) throw InvariantError("embedding export: empty or non-2D matrix");
    std::string bytes(reinterpret_cast<const char*>(mat.data()), mat.numel() * sizeof(float));
    write_file(std::filesystem::path(stem.string() + ".emb"), bytes);
    nlohmann::json side = {{"slide_id", slide_id},
                           {"M", mat.shape[0]},
                           {"d_S", mat.shape[1]},
                           {"encoder_checkpoint_hash", encoder_checkpoint_hash}};
    write_file(std::filesystem::path(stem.string() + ".json"), side.dump(2) + "\n");
}

struct LoadedEmbeddings {
    Tensor<float> matrix;
    std::string slide_id;
    std::string encoder_checkpoint_hash;
};

inline LoadedEmbeddings load_embedding_matrix(const std::filesystem::path& stem) {
    const std::string side_text = read_file(std::filesystem::path(stem.string() + ".json"));
    nlohmann::json side;
    try {
        side = nlohmann::json::parse(side_text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("embedding sidecar parse error: " + std::string(e.what()));
    }
    LoadedEmbeddings out;
    out.slide_id = side.at("slide_id").get<std::string>();
    out.encoder_checkpoint_hash = side.at("encoder_checkpoint_hash").get<std::string>();
    const size_t m = side.at("M").get<size_t>(), d = side.at("d_S").get<size_t>();
    const std::string bytes = read_file(std::filesystem::path(stem.string() + ".emb"));
    if (bytes.size() != m * d * sizeof(float))
        throw IoError("embedding matrix size mismatch for " + stem.string() + ": sidecar says " + std::to_string(m) +
                      "x" + std::to_string(d));
    out.matrix = Tensor<float>({m, d});
    std::memcpy(out.matrix.data(), bytes.data(), bytes.size());
    return out;
}

inline void save_bag(const std::filesystem::path& dir, const Bag& bag, const std::string& encoder_hash) {
    ensure_dir(dir);
    save_embedding_matrix(dir / bag.slide_id, bag.embeddings, bag.slide_id, encoder_hash);
}

}  // namespace xmag::mil
