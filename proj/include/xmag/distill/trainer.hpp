#pragma once

#include <deque>
#include <numeric>
#include <fstream>

#include "xmag/augment.hpp"
#include "xmag/manifest.hpp"
#include "xmag/distill/heads.hpp"
#include "xmag/distill/losses.hpp"
#include "xmag/nn/optimizer.hpp"
#include "xmag/nn/vit.hpp"

// Distillation trainer: AdamW with cosine-annealed learning rate on
// L = λ_global·L_global + λ_local·L_local, paired augmentation per batch,
// and an EMA shadow of student + heads updated every step.

namespace xmag::distill {

struct DistillConfig {
    double lambda_global = 1.0;
    double lambda_local = 0.5;
    double peak_lr = 5e-4;
    int total_steps = 2000;
    double ema_decay = 0.999;
    int batch_size = 32;
    double weight_decay = 0.04;
    int warmup_steps = 0;  // linear ramp to peak_lr before the cosine phase
    bool augment = true;   // paired augmentation per batch

    void validate() const {
        if (lambda_global < 0.0 || lambda_local < 0.0) throw ConfigError("loss weights must be nonnegative");
        if (ema_decay < 0.0 || ema_decay > 1.0) throw ConfigError("ema_decay must lie in [0, 1]");
        if (total_steps <= 0) throw ConfigError("total_steps must be positive");
        if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (batch norm needs batch statistics)");
        if (peak_lr < 0.0) throw ConfigError("peak_lr must be nonnegative");
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
        if (warmup_steps < 0 || warmup_steps >= total_steps) throw ConfigError("warmup_steps must lie in [0, total_steps)");
    }
};

// Cosine annealing from peak_lr to 0 over total_steps; t beyond the schedule
// clamps to the floor. With warmup_steps > 0 the first steps ramp linearly.
inline double lr_at(int t, const DistillConfig& cfg) {
    if (t < 0) throw ConfigError("lr_at: negative step");
    if (t >= cfg.total_steps) return 0.0;
    if (t < cfg.warmup_steps) return cfg.peak_lr * static_cast<double>(t + 1) / cfg.warmup_steps;
    const double progress =
        static_cast<double>(t - cfg.warmup_steps) / static_cast<double>(cfg.total_steps - cfg.warmup_steps);
    return 0.5 * cfg.peak_lr * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// Student backbone plus both projection heads: the trainable half of the
// distillation setup (the teacher is permanently frozen).
template <typename T>
struct DistillModel {
    nn::ViT<T> student;
    ProjectionHead<T> g_global, g_local;

    DistillModel() = default;
    DistillModel(const nn::EncoderConfig& student_cfg, size_t d_t, uint64_t seed)
        : student(student_cfg, hash_mix(seed, 0x73747564ULL)) {
        Rng rng(hash_mix(seed, 0x68656164ULL));
        g_global = ProjectionHead<T>(static_cast<size_t>(student_cfg.embed_dim), d_t, rng);
        g_local = ProjectionHead<T>(static_cast<size_t>(student_cfg.embed_dim), d_t, rng);
    }

    std::vector<nn::TensorRef<T>> refs() {
        std::vector<nn::TensorRef<T>> r = student.refs();
        g_global.refs("g_global", r);
        g_local.refs("g_local", r);
        return r;
    }
};

// One training sample, teacher side precomputed.
template <typename T>
struct DistillSample {
    Tensor<T> teacher_feats;  // [16, d_T]
    Tensor<T> teacher_gmean;  // [d_T]
    Tensor<T> patches;        // [G², patch_dim] patchified student input
    std::string slide_id;
    int grid_row = 0, grid_col = 0;
};

template <typename T>
DistillSample<T> make_distill_sample(const nn::ViT<T>& teacher, const nn::ViT<T>& student,
                                     const PyramidPatchPair& pair) {
    DistillSample<T> s;
    s.teacher_feats = nn::encode_teacher(teacher, pair.children_20x);
    s.teacher_gmean = teacher_global(s.teacher_feats);
    s.patches = student.patchify(pair.patch_5x);
    s.slide_id = pair.slide_id;
    s.grid_row = pair.grid_row;
    s.grid_col = pair.grid_col;
    return s;
}

// Forward (and optionally backward) of the full distillation loss over one
// batch. Gradients are accumulated into the model's grad tensors; callers
// zero them beforehand.
template <typename T>
DistillLossBreakdown distill_forward_backward(DistillModel<T>& m, const std::vector<DistillSample<T>>& batch,
                                              const DistillConfig& cfg, bool do_backward) {
    const size_t b = batch.size();
    if (b < 2) throw InvariantError("distillation batch must have >= 2 samples");
    const size_t d_s = static_cast<size_t>(m.student.cfg.embed_dim);
    const int g = m.student.cfg.token_grid();
    const size_t n_tok = static_cast<size_t>(m.student.cfg.n_tokens());

    // Student forwards.
    std::vector<typename nn::ViT<T>::ForwardState> states(b);
    Tensor<T> cls_batch({b, d_s});
    Tensor<T> pooled_batch({b * 16, d_s});
    for (size_t i = 0; i < b; ++i) {
        states[i] = m.student.forward_train(batch[i].patches, /*checkpoint=*/false);
        std::copy(states[i].out.data(), states[i].out.data() + d_s, cls_batch.data() + i * d_s);
        Tensor<T> tokens({n_tok, d_s});
        std::copy(states[i].out.data() + d_s, states[i].out.data() + (n_tok + 1) * d_s, tokens.data());
        Tensor<T> pooled = spatial_pool(tokens, g);
        std::copy(pooled.data(), pooled.data() + 16 * d_s, pooled_batch.data() + i * 16 * d_s);
    }

    // Heads (training mode: batch statistics).
    typename ProjectionHead<T>::Cache cg, cl;
    Tensor<T> zg = m.g_global.forward(cls_batch, true, &cg);    // [b, d_T]
    Tensor<T> zl = m.g_local.forward(pooled_batch, true, &cl);  // [b*16, d_T]
    const size_t d_t = m.g_global.d_out;

    // Losses.
    double l_global = 0.0, l_local = 0.0;
    for (size_t i = 0; i < b; ++i) {
        l_global += static_cast<double>(cosine_loss(zg.data() + i * d_t, batch[i].teacher_gmean.data(), d_t));
        double ll = 0.0;
        for (size_t r = 0; r < 16; ++r)
            ll += static_cast<double>(cosine_loss(zl.data() + (i * 16 + r) * d_t,
                                                  batch[i].teacher_feats.data() + r * d_t, d_t));
        l_local += ll / 16.0;
    }
    l_global /= static_cast<double>(b);
    l_local /= static_cast<double>(b);
    const DistillLossBreakdown out = total_loss(l_global, l_local, cfg.lambda_global, cfg.lambda_local);

    if (do_backward) {
        Tensor<T> dzg(zg.shape), dzl(zl.shape);
        const T up_g = static_cast<T>(cfg.lambda_global / static_cast<double>(b));
        const T up_l = static_cast<T>(cfg.lambda_local / (16.0 * static_cast<double>(b)));
        for (size_t i = 0; i < b; ++i) {
            cosine_loss_backward(zg.data() + i * d_t, batch[i].teacher_gmean.data(), d_t, up_g,
                                 dzg.data() + i * d_t);
            for (size_t r = 0; r < 16; ++r)
                cosine_loss_backward(zl.data() + (i * 16 + r) * d_t, batch[i].teacher_feats.data() + r * d_t, d_t,
                                     up_l, dzl.data() + (i * 16 + r) * d_t);
        }
        Tensor<T> d_cls = m.g_global.backward(dzg, cg);      // [b, d_S]
        Tensor<T> d_pooled = m.g_local.backward(dzl, cl);    // [b*16, d_S]
        for (size_t i = 0; i < b; ++i) {
            Tensor<T> dp({16, d_s});
            std::copy(d_pooled.data() + i * 16 * d_s, d_pooled.data() + (i + 1) * 16 * d_s, dp.data());
            Tensor<T> d_tokens = spatial_pool_backward(dp, g);  // [G², d_S]
            Tensor<T> dout({n_tok + 1, d_s});
            std::copy(d_cls.data() + i * d_s, d_cls.data() + (i + 1) * d_s, dout.data());
            std::copy(d_tokens.data(), d_tokens.data() + n_tok * d_s, dout.data() + d_s);
            m.student.backward(states[i], dout);
        }
    }
    return out;
}

struct DistillRunResult {
    DistillLossBreakdown final_loss;
    double smoothed_final_loss = 0.0;  // mean L over the last 100 steps
    int steps = 0;
};

// Runs cfg.total_steps of AdamW on the distillation loss. `ema` (if non-null)
// is initialized to a copy of `model` and blended each step with cfg.ema_decay.
// The optional CSV log receives one row per step.
template <typename T>
DistillRunResult train_distill(const std::vector<PyramidPatchPair>& pairs, const nn::ViT<T>& teacher,
                               DistillModel<T>& model, const DistillConfig& cfg, uint64_t seed,
                               DistillModel<T>* ema = nullptr, const std::filesystem::path* log_csv = nullptr,
                               std::vector<DistillLossBreakdown>* history = nullptr) {
    cfg.validate();
    if (pairs.empty()) throw MissingPrerequisiteError("train_distill: no patch pairs provided");
    if (pairs.size() < static_cast<size_t>(cfg.batch_size))
        throw ConfigError("batch_size (" + std::to_string(cfg.batch_size) + ") exceeds the corpus (" +
                          std::to_string(pairs.size()) + " pairs); batches are drawn without replacement");
    if (static_cast<size_t>(teacher.cfg.embed_dim) != model.g_global.d_out)
        throw ConfigError("teacher embed_dim must equal projection head output dimension");

    // Teacher features are a pure function of the (frozen) teacher and the
    // pair; without augmentation the whole sample set is precomputable.
    std::vector<DistillSample<T>> cache;
    if (!cfg.augment) {
        cache.reserve(pairs.size());
        for (const auto& p : pairs) cache.push_back(make_distill_sample(teacher, model.student, p));
    }

    if (ema) *ema = model;

    auto refs = model.refs();
    nn::AdamW<T> opt(refs, cfg.weight_decay);

    std::ofstream log;
    if (log_csv) {
        const bool fresh = !std::filesystem::exists(*log_csv) || std::filesystem::file_size(*log_csv) == 0;
        ensure_dir(log_csv->parent_path());
        log.open(*log_csv, std::ios::app);
        if (!log) throw IoError("cannot open loss log " + log_csv->string());
        if (fresh) log << "step,lr,L,L_global,L_local,wall_ms\n";
    }

    Rng batch_rng(hash_mix(seed, 0x626174ULL));
    std::deque<double> window;
    DistillRunResult res;
    const int64_t t_start = now_ms();
    std::vector<size_t> pool(pairs.size());
    std::iota(pool.begin(), pool.end(), size_t(0));

    for (int t = 0; t < cfg.total_steps; ++t) {
        std::vector<DistillSample<T>> batch;
        std::vector<std::string> batch_ids;
        batch.reserve(cfg.batch_size);
        // Partial Fisher-Yates: a without-replacement sample of batch_size
        // indices, so no step ever sees duplicate pairs.
        for (int s = 0; s < cfg.batch_size; ++s) {
            const size_t swap_at = static_cast<size_t>(s) + static_cast<size_t>(batch_rng.below(pool.size() - s));
            std::swap(pool[static_cast<size_t>(s)], pool[swap_at]);
            const size_t idx = pool[static_cast<size_t>(s)];
            if (cfg.augment) {
                const AugmentationSpec spec = sample_augmentation(hash_mix(seed, 0x617567ULL, t, s));
                batch.push_back(make_distill_sample(teacher, model.student, paired_augment(pairs[idx], spec)));
            } else {
                batch.push_back(cache[idx]);
            }
            batch_ids.push_back(pair_stub(pairs[idx]));
        }

        nn::zero_grads(refs);
        const DistillLossBreakdown bd = distill_forward_backward(model, batch, cfg, /*do_backward=*/true);
        if (!std::isfinite(bd.l) || !std::isfinite(bd.l_global) || !std::isfinite(bd.l_local)) {
            std::string ids;
            for (const auto& id : batch_ids) ids += (ids.empty() ? "" : ", ") + id;
            throw InvariantError("non-finite distillation loss at step " + std::to_string(t) + "; batch: " + ids);
        }

        const double lr = lr_at(t, cfg);
        opt.step(refs, lr);
        if (ema) {
            auto eref = ema->refs();
            nn::ema_update(eref, refs, cfg.ema_decay);
        }

        window.push_back(bd.l);
        if (window.size() > 100) window.pop_front();
        if (history) history->push_back(bd);
        if (log)
            log << t << ',' << fmt_g17(lr) << ',' << fmt_g17(bd.l) << ',' << fmt_g17(bd.l_global) << ','
                << fmt_g17(bd.l_local) << ',' << (now_ms() - t_start) << '\n';
        res.final_loss = bd;
    }
    res.steps = cfg.total_steps;
    double acc = 0.0;
    for (double v : window) acc += v;
    res.smoothed_final_loss = window.empty() ? 0.0 : acc / static_cast<double>(window.size());
    return res;
}

}  // namespace xmag::distill
