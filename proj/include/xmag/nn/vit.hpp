#pragma once

#include <json.hpp>

#include "xmag/image.hpp"
#include "xmag/nn/block.hpp"

// Toy-scale vision transformer implementing the teacher/student encoder
// contracts: patch embedding, class token, learned positional embedding,
// pre-norm blocks, final layer norm. Freezing is block-granular; gradient
// checkpointing retains only block inputs and recomputes block internals
// during the backward sweep.

namespace xmag::nn {

struct EncoderConfig {
    int input_side = 224;
    int patch_size = 28;
    int embed_dim = 16;
    int depth = 4;
    int n_heads = 4;
    std::string role = "student";  // "teacher" | "student"

    int token_grid() const { return input_side / patch_size; }
    int n_tokens() const { return token_grid() * token_grid(); }
    int patch_dim() const { return patch_size * patch_size * 3; }

    void validate() const {
        if (input_side <= 0 || patch_size <= 0 || input_side % patch_size != 0)
            throw ConfigError("input_side must be a positive multiple of patch_size");
        if (token_grid() % 4 != 0) throw ConfigError("token grid side must be divisible by 4, got " +
                                                     std::to_string(token_grid()));
        if (embed_dim <= 0 || depth <= 0 || n_heads <= 0) throw ConfigError("embed_dim/depth/n_heads must be positive");
        if (embed_dim % n_heads != 0) throw ConfigError("embed_dim must be divisible by n_heads");
        if (role != "teacher" && role != "student") throw ConfigError("role must be teacher or student");
    }

    nlohmann::json to_json() const {
        return {{"input_side", input_side}, {"patch_size", patch_size}, {"embed_dim", embed_dim},
                {"depth", depth},           {"n_heads", n_heads},       {"role", role}};
    }
    static EncoderConfig from_json(const nlohmann::json& j) {
        EncoderConfig c;
        c.input_side = j.at("input_side").get<int>();
        c.patch_size = j.at("patch_size").get<int>();
        c.embed_dim = j.at("embed_dim").get<int>();
        c.depth = j.at("depth").get<int>();
        c.n_heads = j.at("n_heads").get<int>();
        c.role = j.at("role").get<std::string>();
        c.validate();
        return c;
    }

    bool operator==(const EncoderConfig&) const = default;
};

// Toy presets: every test runs these on a single CPU core in minutes.
inline EncoderConfig toy_teacher_config() { return {224, 28, 32, 4, 4, "teacher"}; }
inline EncoderConfig toy_student_config() { return {224, 28, 16, 4, 4, "student"}; }
// Paper-scale reference preset (config fixture only; never instantiated in tests).
inline EncoderConfig paper_student_config() { return {224, 14, 768, 12, 12, "student"}; }
inline EncoderConfig paper_teacher_config() { return {224, 14, 1536, 24, 24, "teacher"}; }

template <typename T>
struct StudentOutput {
    Tensor<T> class_token;  // [d_S]
    Tensor<T> tokens;       // [G², d_S] row-major spatial order
};

template <typename T>
struct ViT {
    EncoderConfig cfg;
    Linear<T> embed;     // [patch_dim, d]
    Tensor<T> cls, pos;  // [1, d], [N+1, d]
    Tensor<T> gcls, gpos;
    std::vector<TransformerBlock<T>> blocks;
    LayerNorm<T> final_ln;
    int n_trainable_blocks = 0;  // freeze plan k; default all trainable

    ViT() = default;
    ViT(const EncoderConfig& c, uint64_t seed) : cfg(c) {
        cfg.validate();
        Rng rng(hash_mix(seed, 0x766974ULL));
        embed = Linear<T>(static_cast<size_t>(cfg.patch_dim()), static_cast<size_t>(cfg.embed_dim), rng);
        cls = Tensor<T>::randn({1, static_cast<size_t>(cfg.embed_dim)}, rng, 0.02);
        pos = Tensor<T>::randn({static_cast<size_t>(cfg.n_tokens() + 1), static_cast<size_t>(cfg.embed_dim)}, rng,
                               0.02);
        gcls = Tensor<T>::zeros(cls.shape);
        gpos = Tensor<T>::zeros(pos.shape);
        blocks.reserve(cfg.depth);
        for (int i = 0; i < cfg.depth; ++i)
            blocks.emplace_back(static_cast<size_t>(cfg.embed_dim), static_cast<size_t>(cfg.n_heads), rng);
        final_ln = LayerNorm<T>(static_cast<size_t>(cfg.embed_dim));
        n_trainable_blocks = cfg.depth;
    }

    // Freeze plan: exactly the last k blocks are trainable. The stem (patch
    // embedding, class token, positional embedding) and the final layer norm
    // are trainable only when the whole backbone is (k == depth).
    void set_freeze_plan(int k) {
        if (k < 0 || k > cfg.depth)
            throw ConfigError("freeze plan k must lie in [0, depth], got " + std::to_string(k));
        n_trainable_blocks = k;
    }

    std::vector<TensorRef<T>> refs() {
        std::vector<TensorRef<T>> r;
        embed.refs("embed", r);
        r.push_back({"cls", &cls, &gcls, true});
        r.push_back({"pos", &pos, &gpos, true});
        const size_t stem_end = r.size();
        std::vector<size_t> block_start(blocks.size() + 1);
        for (size_t i = 0; i < blocks.size(); ++i) {
            block_start[i] = r.size();
            blocks[i].refs("block" + std::to_string(i), r);
        }
        block_start[blocks.size()] = r.size();
        final_ln.refs("final_ln", r);
        // Apply freeze plan.
        const bool stem_trainable = n_trainable_blocks == cfg.depth;
        for (size_t i = 0; i < stem_end; ++i) r[i].trainable = stem_trainable;
        for (size_t b = 0; b < blocks.size(); ++b) {
            const bool t = static_cast<int>(b) >= cfg.depth - n_trainable_blocks;
            for (size_t i = block_start[b]; i < block_start[b + 1]; ++i) r[i].trainable = t;
        }
        for (size_t i = block_start[blocks.size()]; i < r.size(); ++i) r[i].trainable = stem_trainable;
        return r;
    }

    // image -> [G², patch_dim] with pixels mapped to [−1, 1].
    Tensor<T> patchify(const Image& img) const {
        if (img.h != cfg.input_side || img.w != cfg.input_side)
            throw InvariantError("encoder expects " + std::to_string(cfg.input_side) + "x" +
                                 std::to_string(cfg.input_side) + " input, got " + std::to_string(img.h) + "x" +
                                 std::to_string(img.w));
        const int g = cfg.token_grid(), ps = cfg.patch_size;
        Tensor<T> out({static_cast<size_t>(g * g), static_cast<size_t>(cfg.patch_dim())});
        for (int ty = 0; ty < g; ++ty)
            for (int tx = 0; tx < g; ++tx) {
                T* dst = out.data() + static_cast<size_t>(ty * g + tx) * cfg.patch_dim();
                for (int y = 0; y < ps; ++y)
                    for (int x = 0; x < ps; ++x)
                        for (int c = 0; c < 3; ++c)
                            *dst++ = (static_cast<T>(img.at(ty * ps + y, tx * ps + x, c)) / T(255) - T(0.5)) / T(0.5);
            }
        return out;
    }

    // Sequence assembly: [cls; embed(patches)] + pos -> [N+1, d].
    Tensor<T> assemble(const Tensor<T>& patches) const {
        const size_t n = static_cast<size_t>(cfg.n_tokens()), d = static_cast<size_t>(cfg.embed_dim);
        Tensor<T> emb = embed.forward(patches);  // [n, d]
        Tensor<T> x({n + 1, d});
        std::copy(cls.v.begin(), cls.v.end(), x.data());
        std::copy(emb.v.begin(), emb.v.end(), x.data() + d);
        for (size_t i = 0; i < x.numel(); ++i) x.v[i] += pos.v[i];
        return x;
    }

    // Inference: final token matrix [N+1, d] (row 0 = class token).
    Tensor<T> forward_infer(const Tensor<T>& patches) const {
        Tensor<T> x = assemble(patches);
        for (const auto& b : blocks) x = b.forward(x, nullptr);
        return final_ln.forward(x, nullptr);
    }

    struct ForwardState {
        Tensor<T> patches;                                   // [n, patch_dim]
        std::vector<Tensor<T>> block_inputs;                 // depth+1 entries; last = final LN input
        std::vector<typename TransformerBlock<T>::Cache> caches;  // empty when checkpointed
        typename LayerNorm<T>::Cache ln_cache;
        Tensor<T> out;                                       // [N+1, d]
        bool checkpointed = false;

        // Retained activation floats, excluding input patches and output.
        size_t retained_floats() const {
            size_t s = 0;
            for (const auto& t : block_inputs) s += t.numel();
            for (const auto& c : caches) s += c.floats();
            s += ln_cache.xhat.numel() + ln_cache.inv_std.size();
            return s;
        }
    };

    // Training-mode forward. With checkpoint=true only block inputs are
    // retained; block caches are rebuilt one at a time during backward().
    ForwardState forward_train(Tensor<T> patches, bool checkpoint) {
        ForwardState st;
        st.checkpointed = checkpoint;
        st.patches = std::move(patches);
        Tensor<T> x = assemble(st.patches);
        for (auto& b : blocks) {
            st.block_inputs.push_back(x);
            if (checkpoint) {
                x = b.forward(x, nullptr);
            } else {
                st.caches.emplace_back();
                x = b.forward(x, &st.caches.back());
            }
        }
        st.block_inputs.push_back(x);  // final LN input
        st.out = final_ln.forward(x, &st.ln_cache);
        return st;
    }

    // dout: [N+1, d] gradient w.r.t. forward_train output. Accumulates all
    // parameter gradients (the optimizer enforces the freeze plan).
    void backward(const ForwardState& st, const Tensor<T>& dout) {
        Tensor<T> dx = final_ln.backward(dout, st.ln_cache);
        for (int i = cfg.depth - 1; i >= 0; --i) {
            if (st.checkpointed) {
                typename TransformerBlock<T>::Cache cache;
                blocks[i].forward(st.block_inputs[i], &cache);
                dx = blocks[i].backward(dx, cache);
            } else {
                dx = blocks[i].backward(dx, st.caches[i]);
            }
        }
        // Stem backward: dx is [N+1, d]; row 0 feeds cls, rows 1.. feed embed.
        const size_t d = static_cast<size_t>(cfg.embed_dim), n = static_cast<size_t>(cfg.n_tokens());
        for (size_t i = 0; i < dx.numel(); ++i) gpos.v[i] += dx.v[i];
        for (size_t j = 0; j < d; ++j) gcls.v[j] += dx.v[j];
        Tensor<T> demb({n, d});
        std::copy(dx.v.begin() + d, dx.v.end(), demb.v.begin());
        embed.backward(st.patches, demb);
    }

    size_t n_params() {
        auto r = refs();
        return count_scalars(r, false);
    }
};

// Teacher contract: 16 children -> [16, d_T] of class tokens, child order
// preserved. The teacher is always used in inference mode.
template <typename T>
Tensor<T> encode_teacher(const ViT<T>& teacher, const std::array<Image, 16>& children) {
    const size_t d = static_cast<size_t>(teacher.cfg.embed_dim);
    Tensor<T> out({16, d});
    for (size_t i = 0; i < 16; ++i) {
        Tensor<T> toks = teacher.forward_infer(teacher.patchify(children[i]));
        std::copy(toks.data(), toks.data() + d, out.data() + i * d);
    }
    return out;
}

// Student contract: one 5x patch -> class token + G² spatial tokens.
template <typename T>
StudentOutput<T> encode_student(const ViT<T>& student, const Image& patch) {
    const size_t d = static_cast<size_t>(student.cfg.embed_dim);
    const size_t n = static_cast<size_t>(student.cfg.n_tokens());
    Tensor<T> toks = student.forward_infer(student.patchify(patch));
    StudentOutput<T> out;
    out.class_token = Tensor<T>({d});
    std::copy(toks.data(), toks.data() + d, out.class_token.data());
    out.tokens = Tensor<T>({n, d});
    std::copy(toks.data() + d, toks.data() + (n + 1) * d, out.tokens.data());
    return out;
}

}  // namespace xmag::nn
