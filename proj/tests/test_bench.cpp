#include <catch2/catch_amalgamated.hpp>

#include "xmag/bench/timing.hpp"

using namespace xmag;
using namespace xmag::bench;
using Catch::Matchers::ContainsSubstring;

TEST_CASE("patch counts tile the slide at each magnification") {
    // 20000x16000 at 20x: floor(20000/224) * floor(16000/224) = 89 * 71.
    CHECK(patch_count(20000, 16000, Mag::x20) == 89 * 71);
    // The 5x plane is quarter resolution: 5000x4000 -> 22 * 17 tiles.
    CHECK(patch_count(20000, 16000, Mag::x5) == 22 * 17);
    CHECK(patch_count(224, 224, Mag::x20) == 1);
    CHECK(patch_count(223, 224, Mag::x20) == 0);

    CHECK_THROWS_AS(patch_count(0, 100, Mag::x20), ConfigError);
    CHECK_THROWS_AS(patch_count(100, -1, Mag::x5), ConfigError);
    CHECK_THROWS_AS(patch_count(100, 100, Mag::x20, 0), ConfigError);

    // On 896-aligned slides the 20x/5x patch counts sit at exactly 16:1.
    Rng rng(90);
    for (int trial = 0; trial < 50; ++trial) {
        const int64_t w = 896 * static_cast<int64_t>(1 + rng.below(12));
        const int64_t h = 896 * static_cast<int64_t>(1 + rng.below(12));
        REQUIRE(patch_count(w, h, Mag::x20) == 16 * patch_count(w, h, Mag::x5));
    }
}

TEST_CASE("rate and speedup arithmetic matches the accounting fixtures") {
    CHECK(wsis_per_minute(6.82) == 8.80);
    CHECK(wsis_per_minute(54.21) == 1.11);
    CHECK(wsis_per_minute(201.25) == 0.30);
    CHECK_THROWS_AS(wsis_per_minute(0.0), ConfigError);
    CHECK_THROWS_AS(wsis_per_minute(-3.0), ConfigError);

    CHECK(speedup(54.21, 6.82) == 7.95);
    CHECK(speedup(201.25, 6.82) == 29.51);
    CHECK(speedup(6.82, 6.82) == 1.00);
    CHECK_THROWS_AS(speedup(0.0, 1.0), ConfigError);
    CHECK_THROWS_AS(speedup(1.0, 0.0), ConfigError);

    // Patch-load ratio between the magnification planes.
    CHECK(round2(6260.0 / 554.0) == 11.30);
}

TEST_CASE("fixture table carries the raw accounting rows") {
    const auto fx = paper_fixtures();
    REQUIRE(fx.size() == 3);
    CHECK(fx[0].model == "XMAG");
    CHECK(fx[0].patches_per_wsi == 554);
    CHECK(fx[0].seconds_per_wsi == 6.82);
    CHECK(fx[1].model == "Phikon");
    CHECK(fx[1].patches_per_wsi == 6260);
    CHECK(fx[1].seconds_per_wsi == 54.21);
    CHECK(fx[2].model == "UNI2");
    CHECK(fx[2].seconds_per_wsi == 201.25);
    for (const auto& f : fx) {
        CHECK(std::isnan(f.wsis_per_minute));
        CHECK(std::isnan(f.speedup_vs_reference));
    }
}

TEST_CASE("resolving the speed table derives rates against the fastest row") {
    const SpeedTable t = resolve_speed_table(paper_fixtures());
    REQUIRE(t.rows.size() == 3);
    CHECK(t.reference_row == 0);
    CHECK(t.rows[0].wsis_per_minute == 8.80);
    CHECK(t.rows[0].speedup_vs_reference == 1.00);
    CHECK(t.rows[1].wsis_per_minute == 1.11);
    CHECK(t.rows[1].speedup_vs_reference == 7.95);
    CHECK(t.rows[2].wsis_per_minute == 0.30);
    CHECK(t.rows[2].speedup_vs_reference == 29.51);

    // Stored derived values that agree exactly are accepted...
    auto ok = paper_fixtures();
    ok[0].wsis_per_minute = 8.80;
    ok[2].speedup_vs_reference = 29.51;
    CHECK_NOTHROW(resolve_speed_table(ok));

    // ...any disagreement aborts, naming the row.
    auto bad = paper_fixtures();
    bad[0].wsis_per_minute = 8.81;
    CHECK_THROWS_MATCHES(resolve_speed_table(bad), InvariantError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("speed table row XMAG") &&
                                                         ContainsSubstring("disagrees with recomputed")));
    auto bad2 = paper_fixtures();
    bad2[1].speedup_vs_reference = 7.96;
    CHECK_THROWS_MATCHES(resolve_speed_table(bad2), InvariantError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("Phikon")));

    // A lone fixture is its own reference.
    const SpeedTable solo = resolve_speed_table({{"only", 10, 2.0, std::nan(""), std::nan("")}});
    CHECK(solo.rows[0].speedup_vs_reference == 1.00);
    CHECK(solo.reference_row == 0);
    CHECK_THROWS_AS(resolve_speed_table({}), ConfigError);
}

TEST_CASE("emitted speed CSV and plot data round-trip exactly") {
    const auto dir = std::filesystem::temp_directory_path() / "xmag_test_bench";
    ensure_dir(dir);
    const auto csv_path = dir / "speed.csv";
    const auto plot_path = dir / "speed_plot.csv";
    const SpeedTable t = emit_speed_table(paper_fixtures(), csv_path, plot_path);

    const std::string csv = read_file(csv_path);
    std::istringstream in(csv);
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == "model,patches_per_wsi,seconds_per_wsi,wsis_per_minute,speedup_vs_reference");
    REQUIRE(std::getline(in, line));
    CHECK(line == "XMAG,554,6.82,8.80,1.00");
    REQUIRE(std::getline(in, line));
    CHECK(line == "Phikon,6260,54.21,1.11,7.95");
    REQUIRE(std::getline(in, line));
    CHECK(line == "UNI2,6260,201.25,0.30,29.51");

    const auto parsed = parse_speed_csv(csv);
    REQUIRE(parsed.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(parsed[i].model == t.rows[i].model);
        CHECK(parsed[i].patches_per_wsi == t.rows[i].patches_per_wsi);
        CHECK(parsed[i].seconds_per_wsi == t.rows[i].seconds_per_wsi);
        CHECK(parsed[i].wsis_per_minute == t.rows[i].wsis_per_minute);
        CHECK(parsed[i].speedup_vs_reference == t.rows[i].speedup_vs_reference);
    }

    std::istringstream pin(read_file(plot_path));
    std::vector<std::string> plot_lines;
    while (std::getline(pin, line)) plot_lines.push_back(line);
    REQUIRE(plot_lines.size() == 13);  // header + 4 series x 3 models
    CHECK(plot_lines[0] == "series,model,value");
    CHECK(plot_lines[1] == "patches,XMAG,554");
    CHECK(plot_lines[2] == "seconds,XMAG,6.82");
    CHECK(plot_lines[3] == "wsis_per_min,XMAG,8.80");
    CHECK(plot_lines[4] == "speedup,XMAG,1.00");
    CHECK(plot_lines[12] == "speedup,UNI2,29.51");

    CHECK_THROWS_MATCHES(parse_speed_csv("bogus,header\n"), IoError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("unexpected speed CSV header")));
    CHECK_THROWS_MATCHES(
        parse_speed_csv("model,patches_per_wsi,seconds_per_wsi,wsis_per_minute,speedup_vs_reference\na,1,2,3\n"),
        IoError, Catch::Matchers::MessageMatches(ContainsSubstring("4 cells")));
    std::filesystem::remove_all(dir);
}

TEST_CASE("fixture JSON parses strictly") {
    const std::string good = R"({"fixtures":[{"model":"m","patches_per_wsi":10,"seconds_per_wsi":2.5},
        {"model":"n","patches_per_wsi":20,"seconds_per_wsi":5.0,"wsis_per_minute":12.0}]})";
    const auto fx = parse_fixture_json(good, "mem");
    REQUIRE(fx.size() == 2);
    CHECK(fx[0].model == "m");
    CHECK(fx[0].seconds_per_wsi == 2.5);
    CHECK(std::isnan(fx[0].wsis_per_minute));
    CHECK(fx[1].wsis_per_minute == 12.0);

    CHECK_THROWS_MATCHES(parse_fixture_json("{nope", "mem"), IoError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("invalid fixture file mem")));
    CHECK_THROWS_MATCHES(parse_fixture_json(R"({"rows":[]})", "mem"), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("fixtures array")));
    CHECK_THROWS_MATCHES(parse_fixture_json(R"({"fixtures":[{"patches_per_wsi":1,"seconds_per_wsi":1.0}]})", "mem"),
                         ConfigError, Catch::Matchers::MessageMatches(ContainsSubstring("bad row")));
    CHECK_THROWS_MATCHES(
        parse_fixture_json(R"({"fixtures":[{"model":"z","patches_per_wsi":0,"seconds_per_wsi":1.0}]})", "mem"),
        ConfigError, Catch::Matchers::MessageMatches(ContainsSubstring("patches_per_wsi must be positive")));
    CHECK_THROWS_MATCHES(
        parse_fixture_json(R"({"fixtures":[{"model":"z","patches_per_wsi":5,"seconds_per_wsi":0.0}]})", "mem"),
        ConfigError, Catch::Matchers::MessageMatches(ContainsSubstring("seconds_per_wsi must be positive")));
}

TEST_CASE("encoder timing reports self-consistent fields") {
    const nn::EncoderConfig cfg{8, 2, 8, 1, 2, "student"};
    const nn::ViT<float> enc(cfg, 91);
    const ThroughputReport r = time_encoder(enc, 8, 4, 1);
    CHECK(r.n_patches == 8);
    CHECK(r.batch_size == 4);
    CHECK(r.warmup_batches == 1);
    CHECK(r.wall_seconds > 0.0);
    CHECK(r.patches_per_sec == 8.0 / r.wall_seconds);
    CHECK(r.simulated_wsis_per_min_5x == r.patches_per_sec / 554.0 * 60.0);
    CHECK(r.simulated_wsis_per_min_20x == r.patches_per_sec / 6260.0 * 60.0);
    CHECK(r.encoder.embed_dim == 8);
    CHECK(r.hardware.find("single-stream") != std::string::npos);

    CHECK_THROWS_MATCHES(time_encoder(enc, 2, 4), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("must be >= batch_size")));
    CHECK_THROWS_AS(time_encoder(enc, 8, 0), ConfigError);
    CHECK_THROWS_AS(time_encoder(enc, 8, 4, -1), ConfigError);

    const auto dir = std::filesystem::temp_directory_path() / "xmag_test_bench_json";
    ensure_dir(dir);
    write_throughput_json(dir / "throughput.json", r);
    const auto j = nlohmann::json::parse(read_file(dir / "throughput.json"));
    CHECK(j.at("n_patches").get<int>() == 8);
    CHECK(j.at("wall_seconds").get<double>() == r.wall_seconds);
    CHECK(j.at("simulated_wsis_per_min_at_554").get<double>() == r.simulated_wsis_per_min_5x);
    CHECK(j.at("encoder").at("embed_dim").get<int>() == 8);
    std::filesystem::remove_all(dir);
}

TEST_CASE("benchmarks are exclusive in-process") {
    {
        detail::BenchGuard first;
        CHECK_THROWS_MATCHES(detail::BenchGuard(), InvariantError,
                             Catch::Matchers::MessageMatches(
                                 ContainsSubstring("another benchmark is already running in-process")));
    }
    CHECK_NOTHROW(detail::BenchGuard());
}
