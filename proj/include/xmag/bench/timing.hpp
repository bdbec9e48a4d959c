#pragma once

#include <atomic>
#include <chrono>
#include <thread>

#include "xmag/bench/speed.hpp"
#include "xmag/nn/vit.hpp"

// Encoder throughput harness. Measured numbers are reported, never asserted
// against external timings; only the derived arithmetic is checked elsewhere.
// Runs are exclusive in-process and single-stream.

namespace xmag::bench {

struct ThroughputReport {
    nn::EncoderConfig encoder;
    int batch_size = 0;
    int n_patches = 0;
    int warmup_batches = 0;
    double wall_seconds = 0.0;
    double patches_per_sec = 0.0;
    double simulated_wsis_per_min_5x = 0.0;   // at 554 patches per WSI
    double simulated_wsis_per_min_20x = 0.0;  // at 6260 patches per WSI
    std::string hardware;
};

inline constexpr int kPatchesPerWsi5x = 554;
inline constexpr int kPatchesPerWsi20x = 6260;

namespace detail {

inline std::atomic<bool>& bench_lock() {
    static std::atomic<bool> running{false};
    return running;
}

struct BenchGuard {
    BenchGuard() {
        bool expected = false;
        if (!bench_lock().compare_exchange_strong(expected, true))
            throw InvariantError("another benchmark is already running in-process");
    }
    ~BenchGuard() { bench_lock().store(false); }
    BenchGuard(const BenchGuard&) = delete;
    BenchGuard& operator=(const BenchGuard&) = delete;
};

inline std::string hardware_descriptor() {
    std::string model = "unknown cpu";
    std::error_code ec;
    if (std::filesystem::exists("/proc/cpuinfo", ec)) {
        const std::string info = read_file("/proc/cpuinfo");
        const size_t at = info.find("model name");
        if (at != std::string::npos) {
            const size_t colon = info.find(':', at);
            const size_t eol = info.find('\n', at);
            if (colon != std::string::npos && eol != std::string::npos && colon + 2 < eol)
                model = info.substr(colon + 2, eol - colon - 2);
        }
    }
    return model + ", " + std::to_string(std::thread::hardware_concurrency()) + " hw threads, single-stream";
}

}  // namespace detail

// Times n_patches forward passes (in groups of batch_size) after
// warmup_batches untimed groups. The encoder runs in inference mode.
template <typename T>
ThroughputReport time_encoder(const nn::ViT<T>& encoder, int n_patches, int batch_size, int warmup_batches = 1) {
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (n_patches < batch_size)
        throw ConfigError("n_patches (" + std::to_string(n_patches) + ") must be >= batch_size (" +
                          std::to_string(batch_size) + ")");
    if (warmup_batches < 0) throw ConfigError("warmup_batches must be nonnegative");
    detail::BenchGuard guard;

    Rng rng(hash_mix(0x62656e63ULL, static_cast<uint64_t>(n_patches), static_cast<uint64_t>(batch_size)));
    std::vector<Tensor<T>> batch(static_cast<size_t>(batch_size));
    const size_t g2 = static_cast<size_t>(encoder.cfg.n_tokens());
    const size_t pd = static_cast<size_t>(encoder.cfg.patch_dim());
    for (auto& t : batch) {
        t = Tensor<T>({g2, pd});
        for (auto& x : t.v) x = static_cast<T>(rng.uniform(-1.0, 1.0));
    }

    for (int w = 0; w < warmup_batches; ++w)
        for (const auto& t : batch) (void)encoder.forward_infer(t);

    const auto t0 = std::chrono::steady_clock::now();
    int done = 0;
    T sink = T(0);
    while (done < n_patches) {
        const int take = std::min(batch_size, n_patches - done);
        for (int i = 0; i < take; ++i) sink += encoder.forward_infer(batch[static_cast<size_t>(i)]).v[0];
        done += take;
    }
    const auto t1 = std::chrono::steady_clock::now();

    ThroughputReport r;
    r.encoder = encoder.cfg;
    r.batch_size = batch_size;
    r.n_patches = n_patches;
    r.warmup_batches = warmup_batches;
    r.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    if (r.wall_seconds <= 0.0) r.wall_seconds = 1e-9;  // sub-resolution run
    r.patches_per_sec = static_cast<double>(n_patches) / r.wall_seconds;
    r.simulated_wsis_per_min_5x = r.patches_per_sec / kPatchesPerWsi5x * 60.0;
    r.simulated_wsis_per_min_20x = r.patches_per_sec / kPatchesPerWsi20x * 60.0;
    r.hardware = detail::hardware_descriptor();
    (void)sink;
    return r;
}

inline void write_throughput_json(const std::filesystem::path& path, const ThroughputReport& r) {
    nlohmann::json j;
    j["encoder"] = r.encoder.to_json();
    j["batch_size"] = r.batch_size;
    j["n_patches"] = r.n_patches;
    j["warmup_batches"] = r.warmup_batches;
    j["wall_seconds"] = r.wall_seconds;
    j["patches_per_sec"] = r.patches_per_sec;
    j["simulated_wsis_per_min_at_554"] = r.simulated_wsis_per_min_5x;
    j["simulated_wsis_per_min_at_6260"] = r.simulated_wsis_per_min_20x;
    j["hardware"] = r.hardware;
    write_file(path, j.dump(2) + "\n");
}

}  // namespace xmag::bench
