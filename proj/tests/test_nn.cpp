#include <catch2/catch_amalgamated.hpp>

#include "xmag/nn/optimizer.hpp"
#include "xmag/nn/serialize.hpp"
#include "xmag/nn/vit.hpp"

using namespace xmag;
using namespace xmag::nn;

namespace {

// Central finite difference of `loss` w.r.t. one scalar, restoring it after.
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

// Checks every parameter grad of `refs` (and optionally an input tensor)
// against finite differences of `loss`.
template <typename F>
void check_grads(std::vector<TensorRef<double>>& refs, F&& loss) {
    for (auto& r : refs) {
        if (r.is_buffer()) continue;
        for (size_t j = 0; j < r.value->numel(); ++j) {
            const double g_fd = fd(r.value->v[j], loss);
            const double g_an = r.grad->v[j];
            INFO(r.name << "[" << j << "] analytic=" << g_an << " fd=" << g_fd);
            REQUIRE(rel_err(g_an, g_fd) < kFdTol);
        }
    }
}

}  // namespace

TEST_CASE("matmul kernels agree with naive loops") {
    Rng rng(1);
    const size_t m = 5, k = 7, n = 4;
    Tensor<double> A = Tensor<double>::randn({m, k}, rng), B = Tensor<double>::randn({k, n}, rng);
    Tensor<double> C({m, n});
    matmul(A.data(), B.data(), C.data(), m, k, n);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) {
            double ref = 0;
            for (size_t p = 0; p < k; ++p) ref += A.at2(i, p) * B.v[p * n + j];
            REQUIRE(C.at2(i, j) == Catch::Approx(ref).epsilon(1e-12));
        }

    // A^T B rank-n update
    Tensor<double> X = Tensor<double>::randn({m, k}, rng), D = Tensor<double>::randn({m, n}, rng);
    Tensor<double> G({k, n});
    matmul_tn_acc(X.data(), D.data(), G.data(), m, k, n);
    for (size_t i = 0; i < k; ++i)
        for (size_t j = 0; j < n; ++j) {
            double ref = 0;
            for (size_t s = 0; s < m; ++s) ref += X.at2(s, i) * D.at2(s, j);
            REQUIRE(G.at2(i, j) == Catch::Approx(ref).epsilon(1e-12));
        }

    Tensor<double> At({k, m});
    transpose(A.data(), At.data(), m, k);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < k; ++j) REQUIRE(At.v[j * m + i] == A.at2(i, j));
}

TEST_CASE("gelu and softmax behave as pinned") {
    CHECK(gelu_scalar(0.0) == 0.0);
    CHECK(gelu_scalar(10.0) == Catch::Approx(10.0).margin(1e-9));
    CHECK(gelu_scalar(-10.0) == Catch::Approx(0.0).margin(1e-9));
    // grad against FD
    for (double x : {-2.0, -0.3, 0.0, 0.7, 3.1}) {
        double xv = x;
        const double g = fd(xv, [&] { return gelu_scalar(xv); });
        CHECK(rel_err(gelu_grad_scalar(x), g) < 1e-6);
    }

    double row[4] = {1.0, 2.0, 3.0, 4.0};
    softmax_rows(row, 1, 4);
    double sum = 0;
    for (double v : row) sum += v;
    CHECK(sum == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(row[3] > row[2]);
    // shift invariance
    double a[2] = {0.0, 1.0}, b[2] = {100.0, 101.0};
    softmax_rows(a, 1, 2);
    softmax_rows(b, 1, 2);
    CHECK(a[0] == Catch::Approx(b[0]).epsilon(1e-12));
}

TEST_CASE("Linear backward matches finite differences") {
    Rng rng(2);
    Linear<double> lin(6, 4, rng, 0.5);
    Tensor<double> x = Tensor<double>::randn({3, 6}, rng);
    Tensor<double> c = Tensor<double>::randn({3, 4}, rng);  // loss = sum(c .* y)
    auto loss = [&] {
        const Tensor<double> y = lin.forward(x);
        return dot(c.data(), y.data(), y.numel());
    };
    std::vector<TensorRef<double>> refs;
    lin.refs("lin", refs);
    zero_grads(refs);
    Tensor<double> dx = lin.backward(x, c);
    check_grads(refs, loss);
    for (size_t j = 0; j < x.numel(); ++j) REQUIRE(rel_err(dx.v[j], fd(x.v[j], loss)) < kFdTol);
}

TEST_CASE("LayerNorm backward matches finite differences") {
    Rng rng(3);
    LayerNorm<double> ln(5);
    for (auto& g : ln.gamma.v) g = 1.0 + 0.3 * rng.normal();
    for (auto& b : ln.beta.v) b = 0.2 * rng.normal();
    Tensor<double> x = Tensor<double>::randn({4, 5}, rng);
    Tensor<double> c = Tensor<double>::randn({4, 5}, rng);
    auto loss = [&] {
        const Tensor<double> y = ln.forward(x);
        return dot(c.data(), y.data(), y.numel());
    };
    std::vector<TensorRef<double>> refs;
    ln.refs("ln", refs);
    zero_grads(refs);
    LayerNorm<double>::Cache cache;
    ln.forward(x, &cache);
    Tensor<double> dx = ln.backward(c, cache);
    check_grads(refs, loss);
    for (size_t j = 0; j < x.numel(); ++j) REQUIRE(rel_err(dx.v[j], fd(x.v[j], loss)) < kFdTol);
}

TEST_CASE("BatchNorm1d trains on batch stats and tracks running moments") {
    Rng rng(4);
    BatchNorm1d<double> bn(3);
    Tensor<double> x = Tensor<double>::randn({5, 3}, rng);

    // Running stats after one training pass follow the pinned update rule.
    Tensor<double> y = bn.forward(x, true);
    for (size_t j = 0; j < 3; ++j) {
        double mu = 0;
        for (size_t i = 0; i < 5; ++i) mu += x.at2(i, j);
        mu /= 5;
        double var = 0;
        for (size_t i = 0; i < 5; ++i) var += (x.at2(i, j) - mu) * (x.at2(i, j) - mu);
        REQUIRE(bn.running_mean.v[j] == Catch::Approx(0.1 * mu).epsilon(1e-12));
        REQUIRE(bn.running_var.v[j] == Catch::Approx(0.9 * 1.0 + 0.1 * var / 4.0).epsilon(1e-12));
        // batch outputs use the biased variance
        const double inv = 1.0 / std::sqrt(var / 5.0 + 1e-5);
        REQUIRE(y.at2(0, j) == Catch::Approx((x.at2(0, j) - mu) * inv).epsilon(1e-9));
    }

    // Eval mode uses running statistics, so a second eval call is idempotent.
    const Tensor<double> e1 = bn.forward(x, false);
    const Tensor<double> e2 = bn.forward(x, false);
    CHECK(e1.v == e2.v);

    CHECK_THROWS_AS(bn.forward(Tensor<double>({1, 3}), true), InvariantError);
}

TEST_CASE("BatchNorm1d backward matches finite differences") {
    Rng rng(5);
    BatchNorm1d<double> bn(4);
    for (auto& g : bn.gamma.v) g = 1.0 + 0.2 * rng.normal();
    Tensor<double> x = Tensor<double>::randn({6, 4}, rng);
    Tensor<double> c = Tensor<double>::randn({6, 4}, rng);
    auto loss = [&] {
        const Tensor<double> y = bn.forward(x, true);
        return dot(c.data(), y.data(), y.numel());
    };
    std::vector<TensorRef<double>> refs;
    bn.refs("bn", refs);
    zero_grads(refs);
    BatchNorm1d<double>::Cache cache;
    bn.forward(x, true, &cache);
    Tensor<double> dx = bn.backward(c, cache);
    check_grads(refs, loss);
    for (size_t j = 0; j < x.numel(); ++j) REQUIRE(rel_err(dx.v[j], fd(x.v[j], loss)) < kFdTol);
}

TEST_CASE("TransformerBlock backward matches finite differences") {
    Rng rng(6);
    TransformerBlock<double> blk(8, 2, rng);
    Tensor<double> x = Tensor<double>::randn({5, 8}, rng);
    Tensor<double> c = Tensor<double>::randn({5, 8}, rng);
    auto loss = [&] {
        const Tensor<double> y = blk.forward(x, nullptr);
        return dot(c.data(), y.data(), y.numel());
    };
    std::vector<TensorRef<double>> refs;
    blk.refs("blk", refs);
    zero_grads(refs);
    TransformerBlock<double>::Cache cache;
    blk.forward(x, &cache);
    Tensor<double> dx = blk.backward(c, cache);
    check_grads(refs, loss);
    for (size_t j = 0; j < x.numel(); ++j) REQUIRE(rel_err(dx.v[j], fd(x.v[j], loss)) < kFdTol);
}

TEST_CASE("ViT end-to-end gradients match finite differences on a tiny config") {
    const EncoderConfig cfg{8, 2, 8, 1, 2, "student"};
    ViT<double> vit(cfg, 9);
    Rng rng(10);
    const Image img = random_image(8, 8, rng);
    const Tensor<double> patches = vit.patchify(img);
    Tensor<double> c = Tensor<double>::randn({static_cast<size_t>(cfg.n_tokens() + 1), 8}, rng);
    auto loss = [&] {
        auto st = vit.forward_train(patches, false);
        return dot(c.data(), st.out.data(), st.out.numel());
    };
    auto refs = vit.refs();
    zero_grads(refs);
    auto st = vit.forward_train(patches, false);
    vit.backward(st, c);
    check_grads(refs, loss);
}

TEST_CASE("patchify maps pixels to [-1, 1] in patch-major order") {
    const EncoderConfig cfg{8, 2, 8, 1, 2, "student"};
    const ViT<double> vit(cfg, 1);
    Image img(8, 8);
    img.at(0, 0, 0) = 255;
    img.at(0, 2, 1) = 255;  // first pixel of patch (0,1), channel 1
    const Tensor<double> p = vit.patchify(img);
    REQUIRE(p.shape == std::vector<size_t>{16, 12});
    CHECK(p.v[0] == 1.0);
    CHECK(p.v[1] == -1.0);
    CHECK(p.at2(1, 1) == 1.0);
    CHECK_THROWS_AS(vit.patchify(Image(4, 4)), InvariantError);
}

TEST_CASE("training forward equals inference forward") {
    const EncoderConfig cfg{8, 2, 8, 2, 2, "student"};
    ViT<float> vit(cfg, 11);
    Rng rng(12);
    const Image img = random_image(8, 8, rng);
    const Tensor<float> patches = vit.patchify(img);
    const Tensor<float> infer = vit.forward_infer(patches);
    const auto plain = vit.forward_train(patches, false);
    const auto ckpt = vit.forward_train(patches, true);
    CHECK(infer.v == plain.out.v);
    CHECK(infer.v == ckpt.out.v);
}

TEST_CASE("gradient checkpointing reproduces gradients bitwise with less memory") {
    const EncoderConfig cfg{8, 2, 8, 3, 2, "student"};
    ViT<float> vit(cfg, 13);
    Rng rng(14);
    const Image img = random_image(8, 8, rng);
    const Tensor<float> patches = vit.patchify(img);
    Tensor<float> dy({static_cast<size_t>(cfg.n_tokens() + 1), 8});
    for (auto& v : dy.v) v = static_cast<float>(rng.normal());

    auto refs = vit.refs();
    zero_grads(refs);
    auto full = vit.forward_train(patches, false);
    vit.backward(full, dy);
    std::vector<std::vector<float>> grads_full;
    for (auto& r : refs)
        if (r.grad) grads_full.push_back(r.grad->v);

    zero_grads(refs);
    auto ck = vit.forward_train(patches, true);
    vit.backward(ck, dy);
    size_t i = 0;
    for (auto& r : refs)
        if (r.grad) REQUIRE(r.grad->v == grads_full[i++]);

    CHECK(ck.caches.empty());
    CHECK(!full.caches.empty());
    CHECK(ck.retained_floats() < full.retained_floats());
    CHECK(ck.out.v == full.out.v);
}

TEST_CASE("freeze plan marks exactly the last k blocks trainable") {
    const EncoderConfig cfg{8, 2, 8, 4, 2, "student"};
    ViT<float> vit(cfg, 15);
    CHECK_THROWS_AS(vit.set_freeze_plan(-1), ConfigError);
    CHECK_THROWS_AS(vit.set_freeze_plan(5), ConfigError);

    auto trainable_of = [&](int k) {
        vit.set_freeze_plan(k);
        std::set<std::string> names;
        for (auto& r : vit.refs())
            if (r.trainable) names.insert(r.name);
        return names;
    };
    CHECK(trainable_of(0).empty());
    const auto k1 = trainable_of(1);
    CHECK(k1.count("block3.qkv.w") == 1);
    CHECK(k1.count("block2.qkv.w") == 0);
    CHECK(k1.count("embed.w") == 0);
    CHECK(k1.count("final_ln.gamma") == 0);
    const auto k4 = trainable_of(4);
    CHECK(k4.count("embed.w") == 1);
    CHECK(k4.count("cls") == 1);
    CHECK(k4.count("final_ln.gamma") == 1);
    CHECK(k4.count("block0.fc2.b") == 1);
}

TEST_CASE("frozen parameters are bit-identical after optimization steps") {
    const EncoderConfig cfg{8, 2, 8, 4, 2, "student"};
    for (int k : {0, 1, 2, 4}) {
        ViT<float> vit(cfg, 16);
        vit.set_freeze_plan(k);
        auto refs = vit.refs();
        std::vector<std::vector<float>> before;
        for (auto& r : refs) before.push_back(r.value->v);

        Rng rng(17);
        const Tensor<float> patches = vit.patchify(random_image(8, 8, rng));
        AdamW<float> opt(refs, 0.04);
        for (int step = 0; step < 10; ++step) {
            zero_grads(refs);
            auto st = vit.forward_train(patches, false);
            Tensor<float> dy(st.out.shape);
            dy.fill(1.0f);
            vit.backward(st, dy);
            opt.step(refs, 1e-2);
        }
        int changed = 0;
        for (size_t i = 0; i < refs.size(); ++i) {
            if (refs[i].trainable) {
                changed += refs[i].value->v != before[i];
            } else {
                INFO("k=" << k << " frozen tensor " << refs[i].name);
                REQUIRE(refs[i].value->v == before[i]);
            }
        }
        if (k > 0) CHECK(changed > 0);
    }
}

TEST_CASE("AdamW reproduces the hand-computed first step and decouples decay") {
    Tensor<double> w({2}), g({2});
    w.v = {1.0, 2.0};
    g.v = {0.5, -1.0};
    std::vector<TensorRef<double>> refs = {{"w", &w, &g, true}};
    AdamW<double> opt(refs, 0.04);
    opt.step(refs, 0.01);
    for (size_t j = 0; j < 2; ++j) {
        const double m = 0.1 * g.v[j], v = 0.001 * g.v[j] * g.v[j];
        const double mhat = m / 0.1, vhat = v / 0.001;
        const double w0 = j == 0 ? 1.0 : 2.0;
        const double expect = w0 - 0.01 * (mhat / (std::sqrt(vhat) + 1e-8) + 0.04 * w0);
        REQUIRE(w.v[j] == Catch::Approx(expect).epsilon(1e-15));
    }

    // lr = 0 leaves weights bit-identical even with nonzero grads and decay.
    Tensor<double> w2({2}), g2({2});
    w2.v = {3.0, -4.0};
    g2.v = {1.0, 1.0};
    std::vector<TensorRef<double>> refs2 = {{"w", &w2, &g2, true}};
    AdamW<double> opt2(refs2, 0.04);
    opt2.step(refs2, 0.0);
    CHECK(w2.v == std::vector<double>{3.0, -4.0});

    // zero gradient + decay still shrinks the weight (decoupled decay).
    Tensor<double> w3({1}), g3({1});
    w3.v = {2.0};
    g3.v = {0.0};
    std::vector<TensorRef<double>> refs3 = {{"w", &w3, &g3, true}};
    AdamW<double> opt3(refs3, 0.1);
    opt3.step(refs3, 0.5);
    CHECK(w3.v[0] == Catch::Approx(2.0 - 0.5 * 0.1 * 2.0).epsilon(1e-15));

    // untrainable refs are skipped wholesale
    Tensor<double> w4({1}), g4({1});
    w4.v = {7.0};
    g4.v = {100.0};
    std::vector<TensorRef<double>> refs4 = {{"w", &w4, &g4, false}};
    AdamW<double> opt4(refs4, 0.04);
    opt4.step(refs4, 0.5);
    CHECK(w4.v[0] == 7.0);
}

TEST_CASE("ema_update follows theta_ema = m*theta_ema + (1-m)*theta") {
    Tensor<double> e({2}), s({2});
    e.v = {1.0, 2.0};
    s.v = {3.0, 4.0};
    std::vector<TensorRef<double>> er = {{"t", &e, nullptr, false}};
    std::vector<TensorRef<double>> sr = {{"t", &s, nullptr, false}};
    ema_update(er, sr, 0.9);
    CHECK(e.v[0] == Catch::Approx(0.9 * 1.0 + 0.1 * 3.0).epsilon(1e-15));
    CHECK(e.v[1] == Catch::Approx(0.9 * 2.0 + 0.1 * 4.0).epsilon(1e-15));
    ema_update(er, sr, 1.0);  // m=1: untouched
    CHECK(e.v[0] == Catch::Approx(1.2).epsilon(1e-15));
    ema_update(er, sr, 0.0);  // m=0: copy
    CHECK(e.v == s.v);
    CHECK_THROWS_AS(ema_update(er, sr, 1.5), ConfigError);
    std::vector<TensorRef<double>> bad = {{"other", &s, nullptr, false}};
    CHECK_THROWS_AS(ema_update(er, bad, 0.5), InvariantError);
}

TEST_CASE("weight files round-trip bitwise and load by name") {
    const auto dir = std::filesystem::temp_directory_path() / "xmag_test_weights";
    ensure_dir(dir);
    const EncoderConfig cfg{8, 2, 8, 2, 2, "student"};
    ViT<float> a(cfg, 20);
    auto ra = a.refs();
    save_weights(dir / "w.bin", ra, cfg.to_json());

    ViT<float> b(cfg, 999);  // different init, same architecture
    auto rb = b.refs();
    const nlohmann::json echoed = load_weights(dir / "w.bin", rb);
    CHECK(EncoderConfig::from_json(echoed) == cfg);
    for (size_t i = 0; i < ra.size(); ++i) REQUIRE(ra[i].value->v == rb[i].value->v);
    CHECK(EncoderConfig::from_json(peek_weight_config(dir / "w.bin")) == cfg);

    // Loading is order-independent: a file saved with reversed ref order
    // still restores every tensor.
    auto reversed = ra;
    std::reverse(reversed.begin(), reversed.end());
    save_weights(dir / "rev.bin", reversed, cfg.to_json());
    ViT<float> c(cfg, 1000);
    auto rc = c.refs();
    load_weights(dir / "rev.bin", rc);
    for (size_t i = 0; i < ra.size(); ++i) REQUIRE(ra[i].value->v == rc[i].value->v);

    // Missing tensor, dtype mismatch, shape mismatch, bad magic.
    std::vector<TensorRef<float>> subset(ra.begin(), ra.begin() + 2);
    save_weights(dir / "subset.bin", subset, cfg.to_json());
    CHECK_THROWS_MATCHES(load_weights(dir / "subset.bin", rb), IoError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("missing tensor")));

    ViT<double> d64(cfg, 20);
    auto rd = d64.refs();
    save_weights(dir / "f64.bin", rd, cfg.to_json());
    CHECK_THROWS_MATCHES(load_weights(dir / "f64.bin", rb), IoError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("dtype mismatch")));

    const EncoderConfig other{8, 2, 16, 2, 2, "student"};
    ViT<float> e(other, 21);
    auto re = e.refs();
    CHECK_THROWS_MATCHES(load_weights(dir / "w.bin", re), IoError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("shape mismatch")));

    write_file(dir / "junk.bin", "not a weight file at all");
    CHECK_THROWS_MATCHES(load_weights(dir / "junk.bin", rb), IoError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("bad magic")));

    std::filesystem::remove_all(dir);
}

TEST_CASE("encoder contracts: teacher 16 class tokens, student cls + grid tokens") {
    const EncoderConfig tc{8, 2, 8, 1, 2, "teacher"};
    const EncoderConfig sc{8, 2, 4, 1, 2, "student"};
    ViT<float> teacher(tc, 30), student(sc, 31);
    Rng rng(32);
    std::array<Image, 16> children;
    for (auto& ch : children) ch = random_image(8, 8, rng);

    const Tensor<float> t = encode_teacher(teacher, children);
    REQUIRE(t.shape == std::vector<size_t>{16, 8});
    // Row i is the class token (row 0) of child i's token matrix.
    for (size_t i : {size_t{0}, size_t{7}, size_t{15}}) {
        const Tensor<float> toks = teacher.forward_infer(teacher.patchify(children[i]));
        for (size_t j = 0; j < 8; ++j) REQUIRE(t.at2(i, j) == toks.v[j]);
    }

    const Image patch = random_image(8, 8, rng);
    const StudentOutput<float> s = encode_student(student, patch);
    REQUIRE(s.class_token.shape == std::vector<size_t>{4});
    REQUIRE(s.tokens.shape == std::vector<size_t>{16, 4});
    const Tensor<float> toks = student.forward_infer(student.patchify(patch));
    for (size_t j = 0; j < 4; ++j) REQUIRE(s.class_token.v[j] == toks.v[j]);
    for (size_t j = 0; j < 16 * 4; ++j) REQUIRE(s.tokens.v[j] == toks.v[4 + j]);
}

TEST_CASE("encoder config validation rejects bad geometry") {
    EncoderConfig c{224, 28, 16, 4, 4, "student"};
    CHECK_NOTHROW(c.validate());
    c.patch_size = 30;
    CHECK_THROWS_AS(c.validate(), ConfigError);  // not a divisor
    c = {224, 56, 16, 4, 4, "student"};
    CHECK_NOTHROW(c.validate());  // grid of 4 is the minimum legal geometry
    c = {224, 112, 16, 4, 4, "student"};
    CHECK_THROWS_AS(c.validate(), ConfigError);  // grid 2, not divisible by 4
    c = {224, 28, 15, 4, 4, "student"};
    CHECK_THROWS_AS(c.validate(), ConfigError);  // embed % heads
    c = {224, 28, 16, 4, 4, "referee"};
    CHECK_THROWS_AS(c.validate(), ConfigError);
}
