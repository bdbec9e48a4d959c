#pragma once

#include <algorithm>
#include <numeric>

#include "xmag/eval/metrics.hpp"
#include "xmag/mil/abmil.hpp"
#include "xmag/mil/bags.hpp"
#include "xmag/nn/optimizer.hpp"

// MIL training: frozen mode optimizes only the ABMIL head on precomputed
// bags; e2e mode jointly optimizes the last-k student blocks (gradient
// checkpointing engaged) and the head. Folds are stratified by slide label
// with a fixed seed. Both modes share seeds and loop structure, so e2e with
// k = 0 reproduces frozen-mode results exactly.

namespace xmag::mil {

struct MilRunConfig {
    std::string mode = "frozen";  // "frozen" | "e2e"
    int n_trainable_blocks = 2;   // k; ignored in frozen mode
    int epochs = 20;
    double lr = 1e-3;
    int folds = 5;
    uint64_t seed = 0;
    int d_attn = 64;
    bool gated = false;
    double weight_decay = 0.0;
    bool class_weighting = false;
    int bag_cap = 0;                   // e2e: patches per bag per step (0 = off)
    size_t max_activation_floats = 0;  // e2e: retained-activation cap (0 = off)

    void validate() const {
        if (mode != "frozen" && mode != "e2e") throw ConfigError("mil mode must be frozen or e2e");
        if (epochs < 0) throw ConfigError("epochs must be nonnegative");
        if (lr < 0.0) throw ConfigError("lr must be nonnegative");
        if (folds < 2) throw ConfigError("folds must be >= 2");
        if (d_attn <= 0) throw ConfigError("d_attn must be positive");
        if (bag_cap < 0) throw ConfigError("bag_cap must be nonnegative");
    }
};

// Stratified fold assignment: per-class shuffle, then round-robin.
inline std::vector<std::vector<size_t>> stratified_folds(const std::vector<int>& labels, int folds, uint64_t seed) {
    if (static_cast<size_t>(folds) > labels.size())
        throw ConfigError("fewer slides (" + std::to_string(labels.size()) + ") than folds (" +
                          std::to_string(folds) + ")");
    int n_classes = 0;
    for (int y : labels) n_classes = std::max(n_classes, y + 1);
    std::vector<std::vector<size_t>> by_class(static_cast<size_t>(n_classes));
    for (size_t i = 0; i < labels.size(); ++i) by_class[static_cast<size_t>(labels[i])].push_back(i);
    for (int c = 0; c < n_classes; ++c)
        if (!by_class[static_cast<size_t>(c)].empty() && by_class[static_cast<size_t>(c)].size() < static_cast<size_t>(folds))
            throw ConfigError("class " + std::to_string(c) + " has only " +
                              std::to_string(by_class[static_cast<size_t>(c)].size()) + " slides; stratified " +
                              std::to_string(folds) + "-fold cross-validation needs at least " +
                              std::to_string(folds) + " per class");
    std::vector<std::vector<size_t>> fold_idx(static_cast<size_t>(folds));
    size_t slot = 0;
    for (auto& grp : by_class) {
        Rng rng(hash_mix(seed, 0x666f6c64ULL, slot));
        rng.shuffle(grp);
        for (size_t i = 0; i < grp.size(); ++i) fold_idx[(slot + i) % static_cast<size_t>(folds)].push_back(grp[i]);
        slot += grp.size();
    }
    return fold_idx;
}

struct FoldRow {
    int fold = 0;
    std::string mode;
    int k = 0;
    double auc = 0.0, acc = 0.0, f1 = 0.0;
};

inline void write_fold_csv(const std::filesystem::path& path, const std::vector<FoldRow>& rows) {
    std::string out = "fold,mode,k,auc,acc,f1\n";
    for (const auto& r : rows)
        out += std::to_string(r.fold) + ',' + r.mode + ',' + std::to_string(r.k) + ',' + fmt_g17(r.auc) + ',' +
               fmt_g17(r.acc) + ',' + fmt_g17(r.f1) + '\n';
    write_file(path, out);
}

struct MilFoldOutcome {
    FoldRow row;
    std::vector<std::vector<double>> probs;  // held-out per-slide class probabilities
    std::vector<int> preds, labels;
    std::vector<std::string> slide_ids;
};

// One slide with pre-patchified 5x patches (e2e input form).
struct SlideData {
    std::string slide_id;
    int label = 0;
    std::vector<Tensor<float>> patches;  // per tile: [G², patch_dim]
};

template <typename T>
std::vector<SlideData> slide_data_from_manifest(const Manifest& m, const std::filesystem::path& root,
                                                const nn::ViT<T>& student) {
    std::vector<SlideData> out;
    for (const SlideGroup& g : group_by_slide(m)) {
        SlideData s;
        s.slide_id = g.slide_id;
        s.label = g.label;
        for (const ManifestRecord& r : g.records) {
            if (!std::filesystem::exists(root / r.lowmag_path))
                throw MissingPrerequisiteError("missing patch file for slide " + r.slide_id + " tile (" +
                                               std::to_string(r.grid_row) + ", " + std::to_string(r.grid_col) +
                                               "): " + r.lowmag_path);
            Tensor<T> p = student.patchify(png::read(root / r.lowmag_path));
            Tensor<float> pf({p.shape[0], p.shape[1]});
            for (size_t i = 0; i < p.numel(); ++i) pf.v[i] = static_cast<float>(p.v[i]);
            s.patches.push_back(std::move(pf));
        }
        out.push_back(std::move(s));
    }
    return out;
}

namespace detail {

inline std::vector<double> class_weights(const std::vector<int>& labels, const std::vector<size_t>& train_idx,
                                         int n_classes, bool enabled) {
    std::vector<double> w(static_cast<size_t>(n_classes), 1.0);
    if (!enabled) return w;
    std::vector<size_t> counts(static_cast<size_t>(n_classes), 0);
    for (size_t i : train_idx) ++counts[static_cast<size_t>(labels[i])];
    for (int c = 0; c < n_classes; ++c)
        if (counts[static_cast<size_t>(c)] > 0)
            w[static_cast<size_t>(c)] = static_cast<double>(train_idx.size()) /
                                        (static_cast<double>(n_classes) * static_cast<double>(counts[c]));
    return w;
}

}  // namespace detail

// Frozen mode: cross-entropy training of the ABMIL head only, on precomputed
// bags. The encoder is never invoked.
inline MilFoldOutcome train_fold_frozen(const std::vector<Bag>& bags, const std::vector<size_t>& test_idx,
                                        const MilRunConfig& cfg, int n_classes, int fold_id,
                                        AbmilHead<float>* trained_head = nullptr) {
    const size_t d_s = bags.empty() ? 0 : bags[0].embeddings.shape[1];
    std::vector<char> is_test(bags.size(), 0);
    for (size_t i : test_idx) is_test[i] = 1;
    std::vector<size_t> train_idx;
    for (size_t i = 0; i < bags.size(); ++i)
        if (!is_test[i]) train_idx.push_back(i);
    if (train_idx.empty() || test_idx.empty()) throw InvariantError("mil fold has empty train or test set");

    Rng init_rng(hash_mix(cfg.seed, 0x68656164ULL, static_cast<uint64_t>(fold_id)));
    AbmilHead<float> head(d_s, static_cast<size_t>(n_classes), init_rng, static_cast<size_t>(cfg.d_attn), cfg.gated);
    auto head_refs = head.refs("abmil");
    nn::AdamW<float> opt(head_refs, cfg.weight_decay);

    std::vector<int> all_labels(bags.size());
    for (size_t i = 0; i < bags.size(); ++i) all_labels[i] = bags[i].label;
    const std::vector<double> cw = detail::class_weights(all_labels, train_idx, n_classes, cfg.class_weighting);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order = train_idx;
        Rng order_rng(hash_mix(cfg.seed, 0x6f726472ULL, static_cast<uint64_t>(fold_id), static_cast<uint64_t>(epoch)));
        order_rng.shuffle(order);
        for (size_t i : order) {
            typename AbmilHead<float>::Cache cache;
            const AbmilOutput<float> out = head.forward(bags[i].embeddings, &cache);
            Tensor<float> dlogits;
            cross_entropy_with_logits(out.scores, bags[i].label, &dlogits, cw[static_cast<size_t>(bags[i].label)]);
            nn::zero_grads(head_refs);
            head.backward(dlogits, cache);
            opt.step(head_refs, cfg.lr);
        }
    }

    MilFoldOutcome o;
    o.row.fold = fold_id;
    o.row.mode = "frozen";
    o.row.k = 0;
    for (size_t i : test_idx) {
        const AbmilOutput<float> out = head.forward(bags[i].embeddings, nullptr);
        o.probs.push_back(softmax_probs(out.scores));
        o.preds.push_back(static_cast<int>(std::max_element(o.probs.back().begin(), o.probs.back().end()) -
                                           o.probs.back().begin()));
        o.labels.push_back(bags[i].label);
        o.slide_ids.push_back(bags[i].slide_id);
    }
    o.row.auc = eval::auc(o.probs, o.labels, n_classes);
    const eval::ClassificationMetrics cm = eval::classification_metrics(o.preds, o.labels, n_classes);
    o.row.acc = cm.accuracy;
    o.row.f1 = cm.macro_f1;
    if (trained_head) *trained_head = head;
    return o;
}

// e2e mode: the bag's patches are pushed through the partially-frozen student
// with gradient checkpointing; the classification loss backpropagates into
// the last-k blocks and the head.
inline MilFoldOutcome train_fold_e2e(const std::vector<SlideData>& slides, const std::vector<size_t>& test_idx,
                                     const nn::ViT<float>& base_student, const MilRunConfig& cfg, int n_classes,
                                     int fold_id, nn::ViT<float>* trained_student = nullptr,
                                     AbmilHead<float>* trained_head = nullptr) {
    nn::ViT<float> student = base_student;
    student.set_freeze_plan(cfg.n_trainable_blocks);
    const size_t d_s = static_cast<size_t>(student.cfg.embed_dim);

    std::vector<char> is_test(slides.size(), 0);
    for (size_t i : test_idx) is_test[i] = 1;
    std::vector<size_t> train_idx;
    for (size_t i = 0; i < slides.size(); ++i)
        if (!is_test[i]) train_idx.push_back(i);
    if (train_idx.empty() || test_idx.empty()) throw InvariantError("mil fold has empty train or test set");

    Rng init_rng(hash_mix(cfg.seed, 0x68656164ULL, static_cast<uint64_t>(fold_id)));
    AbmilHead<float> head(d_s, static_cast<size_t>(n_classes), init_rng, static_cast<size_t>(cfg.d_attn), cfg.gated);

    // One ref list drives the optimizer: backbone (freeze plan applied) + head.
    auto refs = student.refs();
    head.refs("abmil", refs);
    nn::AdamW<float> opt(refs, cfg.weight_decay);

    std::vector<int> all_labels(slides.size());
    for (size_t i = 0; i < slides.size(); ++i) all_labels[i] = slides[i].label;
    const std::vector<double> cw = detail::class_weights(all_labels, train_idx, n_classes, cfg.class_weighting);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order = train_idx;
        Rng order_rng(hash_mix(cfg.seed, 0x6f726472ULL, static_cast<uint64_t>(fold_id), static_cast<uint64_t>(epoch)));
        order_rng.shuffle(order);
        for (size_t i : order) {
            const SlideData& s = slides[i];
            // Optional per-step bag subsampling (without replacement).
            std::vector<size_t> patch_idx(s.patches.size());
            std::iota(patch_idx.begin(), patch_idx.end(), size_t(0));
            if (cfg.bag_cap > 0 && patch_idx.size() > static_cast<size_t>(cfg.bag_cap)) {
                Rng sub_rng(hash_mix(cfg.seed, 0x73756273ULL, static_cast<uint64_t>(fold_id),
                                     static_cast<uint64_t>(epoch) << 32 | i));
                sub_rng.shuffle(patch_idx);
                patch_idx.resize(static_cast<size_t>(cfg.bag_cap));
                std::sort(patch_idx.begin(), patch_idx.end());
            }
            const size_t m = patch_idx.size();

            std::vector<typename nn::ViT<float>::ForwardState> states(m);
            Tensor<float> h({m, d_s});
            size_t retained = 0;
            for (size_t p = 0; p < m; ++p) {
                states[p] = student.forward_train(s.patches[patch_idx[p]], /*checkpoint=*/true);
                retained += states[p].retained_floats();
                if (cfg.max_activation_floats > 0 && retained > cfg.max_activation_floats)
                    throw InvariantError("e2e bag for slide " + s.slide_id + " exceeds the activation budget: " +
                                         std::to_string(retained) + " floats retained after " + std::to_string(p + 1) +
                                         " of " + std::to_string(m) + " patches (cap " +
                                         std::to_string(cfg.max_activation_floats) + ")");
                std::copy(states[p].out.data(), states[p].out.data() + d_s, h.data() + p * d_s);
            }

            typename AbmilHead<float>::Cache cache;
            const AbmilOutput<float> out = head.forward(h, &cache);
            Tensor<float> dlogits;
            cross_entropy_with_logits(out.scores, s.label, &dlogits, cw[static_cast<size_t>(s.label)]);
            nn::zero_grads(refs);
            Tensor<float> dh = head.backward(dlogits, cache);
            const size_t n_rows = static_cast<size_t>(student.cfg.n_tokens()) + 1;
            for (size_t p = 0; p < m; ++p) {
                Tensor<float> dout({n_rows, d_s});
                std::copy(dh.data() + p * d_s, dh.data() + (p + 1) * d_s, dout.data());
                student.backward(states[p], dout);
            }
            opt.step(refs, cfg.lr);
        }
    }

    MilFoldOutcome o;
    o.row.fold = fold_id;
    o.row.mode = "e2e";
    o.row.k = cfg.n_trainable_blocks;
    for (size_t i : test_idx) {
        const SlideData& s = slides[i];
        Tensor<float> h({s.patches.size(), d_s});
        for (size_t p = 0; p < s.patches.size(); ++p) {
            Tensor<float> toks = student.forward_infer(s.patches[p]);
            std::copy(toks.data(), toks.data() + d_s, h.data() + p * d_s);
        }
        const AbmilOutput<float> out = head.forward(h, nullptr);
        o.probs.push_back(softmax_probs(out.scores));
        o.preds.push_back(static_cast<int>(std::max_element(o.probs.back().begin(), o.probs.back().end()) -
                                           o.probs.back().begin()));
        o.labels.push_back(s.label);
        o.slide_ids.push_back(s.slide_id);
    }
    o.row.auc = eval::auc(o.probs, o.labels, n_classes);
    const eval::ClassificationMetrics cm = eval::classification_metrics(o.preds, o.labels, n_classes);
    o.row.acc = cm.accuracy;
    o.row.f1 = cm.macro_f1;
    if (trained_student) *trained_student = std::move(student);
    if (trained_head) *trained_head = head;
    return o;
}

// Full k-fold frozen run.
inline std::vector<MilFoldOutcome> train_mil_frozen(const std::vector<Bag>& bags, const MilRunConfig& cfg,
                                                    int n_classes) {
    cfg.validate();
    std::vector<int> labels(bags.size());
    for (size_t i = 0; i < bags.size(); ++i) labels[i] = bags[i].label;
    const auto folds = stratified_folds(labels, cfg.folds, cfg.seed);
    std::vector<MilFoldOutcome> out;
    for (int f = 0; f < cfg.folds; ++f)
        out.push_back(train_fold_frozen(bags, folds[static_cast<size_t>(f)], cfg, n_classes, f));
    return out;
}

// Full k-fold e2e run.
inline std::vector<MilFoldOutcome> train_mil_e2e(const std::vector<SlideData>& slides,
                                                 const nn::ViT<float>& base_student, const MilRunConfig& cfg,
                                                 int n_classes) {
    cfg.validate();
    std::vector<int> labels(slides.size());
    for (size_t i = 0; i < slides.size(); ++i) labels[i] = slides[i].label;
    const auto folds = stratified_folds(labels, cfg.folds, cfg.seed);
    std::vector<MilFoldOutcome> out;
    for (int f = 0; f < cfg.folds; ++f)
        out.push_back(train_fold_e2e(slides, folds[static_cast<size_t>(f)], base_student, cfg, n_classes, f));
    return out;
}

// Ablation over the trainable-block grid: one fold-0 row per k.
inline std::vector<FoldRow> run_ablation(const std::vector<SlideData>& slides, const nn::ViT<float>& base_student,
                                         const MilRunConfig& cfg, const std::vector<int>& grid, int n_classes) {
    cfg.validate();
    for (int k : grid)
        if (k < 0 || k > base_student.cfg.depth)
            throw ConfigError("ablation k = " + std::to_string(k) + " outside [0, depth=" +
                              std::to_string(base_student.cfg.depth) + "]");
    std::vector<int> labels(slides.size());
    for (size_t i = 0; i < slides.size(); ++i) labels[i] = slides[i].label;
    const auto folds = stratified_folds(labels, cfg.folds, cfg.seed);
    std::vector<FoldRow> rows;
    for (int k : grid) {
        MilRunConfig kcfg = cfg;
        kcfg.mode = "e2e";
        kcfg.n_trainable_blocks = k;
        rows.push_back(train_fold_e2e(slides, folds[0], base_student, kcfg, n_classes, 0).row);
    }
    return rows;
}

}  // namespace xmag::mil
