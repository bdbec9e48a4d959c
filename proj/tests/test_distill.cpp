#include <catch2/catch_amalgamated.hpp>

#include "xmag/distill/trainer.hpp"
#include "xmag/synthetic.hpp"

using namespace xmag;
using namespace xmag::distill;
using Catch::Matchers::ContainsSubstring;

namespace {

template <typename F>
double fd(double& x, F&& loss, double h = 1e-5) {
    const double x0 = x;
    x = x0 + h;
    const double lp = loss();
    x = x0 - h;
    const double lm = loss();
    x = x0;
    return (lp - lm) / (2.0 * h);
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1e-3, std::abs(a) + std::abs(b)); }

constexpr double kFdTol = 5e-6;

// 224-input toy encoders small enough for per-test training loops.
nn::EncoderConfig tiny224(int d, const std::string& role) { return {224, 56, d, 1, 2, role}; }

std::vector<PyramidPatchPair> corpus_pairs(int width, uint64_t seed) {
    GeneratorConfig gc;
    gc.width = width;
    gc.height = 896;
    return tessellate(generate_synthetic_wsi(gc, seed));
}

}  // namespace

TEST_CASE("spatial_pool averages each 4x4 region block") {
    Rng rng(40);
    const int g = 8;
    const size_t d = 3;
    Tensor<double> tokens = Tensor<double>::randn({static_cast<size_t>(g) * g, d}, rng);
    const Tensor<double> pooled = spatial_pool(tokens, g);
    REQUIRE(pooled.shape == std::vector<size_t>{16, d});
    const int r = g / 4;
    for (int ir = 0; ir < 4; ++ir)
        for (int ic = 0; ic < 4; ++ic)
            for (size_t j = 0; j < d; ++j) {
                double sum = 0;
                for (int ty = ir * r; ty < (ir + 1) * r; ++ty)
                    for (int tx = ic * r; tx < (ic + 1) * r; ++tx)
                        sum += tokens.v[(static_cast<size_t>(ty) * g + tx) * d + j];
                REQUIRE(pooled.at2(static_cast<size_t>(ir * 4 + ic), j) ==
                        Catch::Approx(sum / (r * r)).epsilon(1e-12));
            }

    // G = 4 pools single tokens: identity up to layout.
    Tensor<double> t4 = Tensor<double>::randn({16, d}, rng);
    CHECK(spatial_pool(t4, 4).v == t4.v);

    CHECK_THROWS_AS(spatial_pool(tokens, 6), InvariantError);
    CHECK_THROWS_AS(spatial_pool(tokens, 0), InvariantError);
    CHECK_THROWS_AS(spatial_pool(Tensor<double>({63, d}), 8), InvariantError);
}

TEST_CASE("spatial_pool_backward is the exact adjoint") {
    Rng rng(41);
    const int g = 8;
    const size_t d = 5;
    Tensor<double> x = Tensor<double>::randn({static_cast<size_t>(g) * g, d}, rng);
    Tensor<double> c = Tensor<double>::randn({16, d}, rng);
    // <c, pool(x)> == <pool^T(c), x>
    const Tensor<double> px = spatial_pool(x, g);
    const Tensor<double> ptc = spatial_pool_backward(c, g);
    CHECK(dot(c.data(), px.data(), px.numel()) ==
          Catch::Approx(dot(ptc.data(), x.data(), x.numel())).epsilon(1e-12));
    // and matches finite differences of the pooled loss
    auto loss = [&] {
        const Tensor<double> p = spatial_pool(x, g);
        return dot(c.data(), p.data(), p.numel());
    };
    for (size_t j = 0; j < x.numel(); j += 7) REQUIRE(rel_err(ptc.v[j], fd(x.v[j], loss)) < kFdTol);
}

TEST_CASE("teacher_global is the mean of the 16 region features") {
    Tensor<double> h({16, 2});
    for (size_t i = 0; i < 16; ++i) {
        h.at2(i, 0) = static_cast<double>(i);
        h.at2(i, 1) = 1.0;
    }
    const Tensor<double> g = teacher_global(h);
    CHECK(g.v[0] == Catch::Approx(7.5).epsilon(1e-15));
    CHECK(g.v[1] == Catch::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS_AS(teacher_global(Tensor<double>({8, 2})), InvariantError);
}

TEST_CASE("cosine loss hits its fixed points and stays bounded") {
    const double a[3] = {1.0, 2.0, -1.0};
    double b[3] = {2.0, 4.0, -2.0};
    CHECK(cosine_loss(a, b, 3) == Catch::Approx(-1.0).epsilon(1e-12));
    for (int i = 0; i < 3; ++i) b[i] = -b[i];
    CHECK(cosine_loss(a, b, 3) == Catch::Approx(1.0).epsilon(1e-12));
    const double e1[2] = {1.0, 0.0}, e2[2] = {0.0, 5.0};
    CHECK(cosine_loss(e1, e2, 2) == Catch::Approx(0.0).margin(1e-15));

    Rng rng(42);
    std::vector<double> u(8), w(8);
    for (int trial = 0; trial < 10000; ++trial) {
        for (auto& x : u) x = rng.normal();
        for (auto& x : w) x = rng.normal();
        const double l = cosine_loss(u.data(), w.data(), 8);
        REQUIRE(l >= -1.0 - 1e-12);
        REQUIRE(l <= 1.0 + 1e-12);
    }

    const double z[3] = {0.0, 0.0, 0.0};
    CHECK_THROWS_MATCHES(cosine_loss(z, b, 3), InvariantError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("norm below")));
}

TEST_CASE("cosine_loss_backward matches finite differences") {
    Rng rng(43);
    std::vector<double> a(6), b(6), da(6, 0.0);
    for (auto& x : a) x = rng.normal();
    for (auto& x : b) x = rng.normal();
    const double up = 0.7;
    cosine_loss_backward(a.data(), b.data(), 6, up, da.data());
    auto loss = [&] { return up * cosine_loss(a.data(), b.data(), 6); };
    for (size_t j = 0; j < 6; ++j) REQUIRE(rel_err(da[j], fd(a[j], loss)) < kFdTol);
}

TEST_CASE("total_loss combines the branches with the configured weights") {
    const DistillLossBreakdown bd = total_loss(-0.8, -0.6, 1.0, 0.5);
    CHECK(bd.l == Catch::Approx(-0.8 - 0.3).epsilon(1e-15));
    CHECK(bd.l_global == -0.8);
    CHECK(bd.l_local == -0.6);
    CHECK_THROWS_AS(total_loss(0, 0, -0.1, 0.5), ConfigError);
}

TEST_CASE("cosine learning-rate schedule fixtures") {
    DistillConfig cfg;
    cfg.peak_lr = 5e-4;
    cfg.total_steps = 2000;
    cfg.warmup_steps = 0;
    CHECK(lr_at(0, cfg) == Catch::Approx(5e-4).epsilon(1e-12));
    CHECK(lr_at(1000, cfg) == Catch::Approx(2.5e-4).epsilon(1e-12));
    CHECK(lr_at(2000, cfg) == 0.0);
    CHECK(lr_at(99999, cfg) == 0.0);
    CHECK(lr_at(1999, cfg) > 0.0);
    // monotone decreasing without warmup
    for (int t = 1; t < 2000; t += 97) REQUIRE(lr_at(t, cfg) < lr_at(t - 1, cfg));
    CHECK_THROWS_AS(lr_at(-1, cfg), ConfigError);

    cfg.warmup_steps = 10;
    CHECK(lr_at(0, cfg) == Catch::Approx(5e-5).epsilon(1e-12));
    CHECK(lr_at(9, cfg) == Catch::Approx(5e-4).epsilon(1e-12));
    CHECK(lr_at(10, cfg) == Catch::Approx(5e-4).epsilon(1e-12));

    DistillConfig bad;
    bad.warmup_steps = bad.total_steps;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = {};
    bad.batch_size = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = {};
    bad.ema_decay = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = {};
    bad.lambda_local = -0.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("projection head backward matches finite differences") {
    Rng rng(44);
    ProjectionHead<double> head(4, 6, rng);
    Tensor<double> x = Tensor<double>::randn({5, 4}, rng);
    Tensor<double> c = Tensor<double>::randn({5, 6}, rng);
    auto loss = [&] {
        const Tensor<double> y = head.forward(x, true);
        return dot(c.data(), y.data(), y.numel());
    };
    auto refs = head.refs("head");
    nn::zero_grads(refs);
    typename ProjectionHead<double>::Cache cache;
    head.forward(x, true, &cache);
    Tensor<double> dx = head.backward(c, cache);
    for (auto& r : refs) {
        if (r.is_buffer()) continue;
        for (size_t j = 0; j < r.value->numel(); ++j) {
            INFO(r.name << "[" << j << "]");
            REQUIRE(rel_err(r.grad->v[j], fd(r.value->v[j], loss)) < kFdTol);
        }
    }
    for (size_t j = 0; j < x.numel(); ++j) REQUIRE(rel_err(dx.v[j], fd(x.v[j], loss)) < kFdTol);

    // Eval mode is deterministic given fixed running stats.
    const Tensor<double> e1 = head.forward(x, false);
    const Tensor<double> e2 = head.forward(x, false);
    CHECK(e1.v == e2.v);
}

TEST_CASE("distillation loss gradients match finite differences over every parameter") {
    const nn::EncoderConfig sc{8, 2, 8, 1, 2, "student"};
    DistillModel<double> model(sc, 6, 45);
    Rng rng(46);

    // Synthetic batch: teacher features random, student inputs random images.
    std::vector<DistillSample<double>> batch(2);
    for (auto& s : batch) {
        s.teacher_feats = Tensor<double>::randn({16, 6}, rng);
        s.teacher_gmean = teacher_global(s.teacher_feats);
        s.patches = model.student.patchify(random_image(8, 8, rng));
    }
    DistillConfig cfg;
    cfg.lambda_global = 1.0;
    cfg.lambda_local = 0.5;

    auto refs = model.refs();
    nn::zero_grads(refs);
    const DistillLossBreakdown bd = distill_forward_backward(model, batch, cfg, true);
    CHECK(bd.l_global >= -1.0);
    CHECK(bd.l_global <= 1.0);
    CHECK(bd.l_local >= -1.0);
    CHECK(bd.l_local <= 1.0);
    CHECK(bd.l == Catch::Approx(1.0 * bd.l_global + 0.5 * bd.l_local).epsilon(1e-12));

    auto loss = [&] { return distill_forward_backward(model, batch, cfg, false).l; };
    for (auto& r : refs) {
        if (r.is_buffer()) continue;
        for (size_t j = 0; j < r.value->numel(); ++j) {
            INFO(r.name << "[" << j << "]");
            REQUIRE(rel_err(r.grad->v[j], fd(r.value->v[j], loss)) < kFdTol);
        }
    }

    std::vector<DistillSample<double>> single(batch.begin(), batch.begin() + 1);
    CHECK_THROWS_AS(distill_forward_backward(model, single, cfg, false), InvariantError);
}

TEST_CASE("train_distill validates corpus and dimensions up front") {
    const auto pairs = corpus_pairs(896, 50);  // one pair
    nn::ViT<float> teacher(tiny224(8, "teacher"), 1);
    DistillModel<float> model(tiny224(8, "student"), 8, 2);
    DistillConfig cfg;
    cfg.total_steps = 1;
    cfg.batch_size = 2;
    cfg.augment = false;
    CHECK_THROWS_MATCHES(train_distill(pairs, teacher, model, cfg, 3), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("without replacement")));
    CHECK_THROWS_AS(train_distill(std::vector<PyramidPatchPair>{}, teacher, model, cfg, 3),
                    MissingPrerequisiteError);

    DistillModel<float> wrong(tiny224(8, "student"), 16, 2);  // d_T mismatch vs teacher
    const auto two = corpus_pairs(1792, 51);
    CHECK_THROWS_MATCHES(train_distill(two, teacher, wrong, cfg, 3), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("projection head")));
}

TEST_CASE("train_distill is deterministic per seed and writes the step log") {
    const auto pairs = corpus_pairs(3584, 52);  // four pairs
    nn::ViT<float> teacher(tiny224(8, "teacher"), 7);
    DistillConfig cfg;
    cfg.total_steps = 3;
    cfg.batch_size = 2;
    cfg.augment = false;
    cfg.peak_lr = 1e-3;

    const auto dir = std::filesystem::temp_directory_path() / "xmag_test_distill";
    std::filesystem::remove_all(dir);
    ensure_dir(dir);
    const auto log_path = dir / "log.csv";

    DistillModel<float> m1(tiny224(8, "student"), 8, 9);
    std::vector<DistillLossBreakdown> h1;
    const DistillRunResult r1 = train_distill(pairs, teacher, m1, cfg, 11, (DistillModel<float>*)nullptr,
                                              &log_path, &h1);
    CHECK(r1.steps == 3);
    REQUIRE(h1.size() == 3);
    CHECK(r1.final_loss.l == h1.back().l);
    CHECK(r1.smoothed_final_loss == Catch::Approx((h1[0].l + h1[1].l + h1[2].l) / 3.0).epsilon(1e-12));

    DistillModel<float> m2(tiny224(8, "student"), 8, 9);
    std::vector<DistillLossBreakdown> h2;
    train_distill(pairs, teacher, m2, cfg, 11, (DistillModel<float>*)nullptr, nullptr, &h2);
    auto refs1 = m1.refs(), refs2 = m2.refs();
    for (size_t i = 0; i < refs1.size(); ++i) REQUIRE(refs1[i].value->v == refs2[i].value->v);
    for (size_t i = 0; i < 3; ++i) REQUIRE(h1[i].l == h2[i].l);

    // A different batch seed visits different subsets.
    DistillModel<float> m3(tiny224(8, "student"), 8, 9);
    std::vector<DistillLossBreakdown> h3;
    train_distill(pairs, teacher, m3, cfg, 12, (DistillModel<float>*)nullptr, nullptr, &h3);
    bool any_diff = false;
    for (size_t i = 0; i < 3; ++i) any_diff = any_diff || h1[i].l != h3[i].l;
    CHECK(any_diff);

    // Log: header plus one row per step, fields in the pinned order.
    std::istringstream log(read_file(log_path));
    std::string line;
    REQUIRE(std::getline(log, line));
    CHECK(line == "step,lr,L,L_global,L_local,wall_ms");
    int rows = 0;
    while (std::getline(log, line)) {
        REQUIRE(line.substr(0, 2) == std::to_string(rows) + ",");
        REQUIRE(std::count(line.begin(), line.end(), ',') == 5);
        ++rows;
    }
    CHECK(rows == 3);
    std::filesystem::remove_all(dir);
}

TEST_CASE("zero learning rate leaves the student bit-identical") {
    const auto pairs = corpus_pairs(1792, 53);
    nn::ViT<float> teacher(tiny224(8, "teacher"), 7);
    DistillModel<float> model(tiny224(8, "student"), 8, 9);
    auto refs = model.refs();
    std::vector<std::vector<float>> before;
    for (auto& r : refs) before.push_back(r.value->v);

    DistillConfig cfg;
    cfg.total_steps = 3;
    cfg.batch_size = 2;
    cfg.augment = false;
    cfg.peak_lr = 0.0;
    train_distill(pairs, teacher, model, cfg, 13);
    for (size_t i = 0; i < refs.size(); ++i) {
        // Batch-norm running stats are buffers and do update in training mode.
        if (refs[i].name.find("running_") != std::string::npos) continue;
        INFO(refs[i].name);
        REQUIRE(refs[i].value->v == before[i]);
    }
}

TEST_CASE("EMA endpoint semantics inside the training loop") {
    const auto pairs = corpus_pairs(1792, 54);
    nn::ViT<float> teacher(tiny224(8, "teacher"), 7);
    DistillConfig cfg;
    cfg.total_steps = 2;
    cfg.batch_size = 2;
    cfg.augment = false;
    cfg.peak_lr = 1e-3;

    // decay 0: EMA tracks the student exactly.
    DistillModel<float> m(tiny224(8, "student"), 8, 9), ema;
    cfg.ema_decay = 0.0;
    train_distill(pairs, teacher, m, cfg, 14, &ema);
    auto rm = m.refs(), re = ema.refs();
    for (size_t i = 0; i < rm.size(); ++i) REQUIRE(rm[i].value->v == re[i].value->v);

    // decay 1: EMA stays at the pre-training snapshot.
    DistillModel<float> m2(tiny224(8, "student"), 8, 9), ema2;
    auto r2 = m2.refs();
    std::vector<std::vector<float>> init;
    for (auto& r : r2) init.push_back(r.value->v);
    cfg.ema_decay = 1.0;
    train_distill(pairs, teacher, m2, cfg, 14, &ema2);
    auto re2 = ema2.refs();
    for (size_t i = 0; i < re2.size(); ++i) REQUIRE(re2[i].value->v == init[i]);
    // while the student itself moved
    bool moved = false;
    for (size_t i = 0; i < r2.size(); ++i) moved = moved || r2[i].value->v != init[i];
    CHECK(moved);
}

TEST_CASE("non-finite loss aborts with the step and batch named") {
    const auto pairs = corpus_pairs(1792, 55);
    nn::ViT<float> teacher(tiny224(8, "teacher"), 7);
    DistillModel<float> model(tiny224(8, "student"), 8, 9);
    model.g_global.fc2.b.v[0] = std::numeric_limits<float>::infinity();
    DistillConfig cfg;
    cfg.total_steps = 1;
    cfg.batch_size = 2;
    cfg.augment = false;
    CHECK_THROWS_MATCHES(train_distill(pairs, teacher, model, cfg, 15), InvariantError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("at step 0") &&
                                                         ContainsSubstring("batch:")));
}

TEST_CASE("augmented batches reuse the paired augmentation machinery deterministically") {
    const auto pairs = corpus_pairs(1792, 56);
    nn::ViT<float> teacher(tiny224(8, "teacher"), 7);
    DistillConfig cfg;
    cfg.total_steps = 2;
    cfg.batch_size = 2;
    cfg.augment = true;
    cfg.peak_lr = 1e-3;
    DistillModel<float> a(tiny224(8, "student"), 8, 9), b(tiny224(8, "student"), 8, 9);
    std::vector<DistillLossBreakdown> ha, hb;
    train_distill(pairs, teacher, a, cfg, 16, (DistillModel<float>*)nullptr, nullptr, &ha);
    train_distill(pairs, teacher, b, cfg, 16, (DistillModel<float>*)nullptr, nullptr, &hb);
    REQUIRE(ha.size() == hb.size());
    for (size_t i = 0; i < ha.size(); ++i) REQUIRE(ha[i].l == hb[i].l);
}
