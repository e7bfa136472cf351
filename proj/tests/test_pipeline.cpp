#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "kvlock/pipeline.hpp"
#include "kvlock/rng.hpp"

using namespace kvlock;
namespace fs = std::filesystem;

namespace {

std::vector<char> file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// Small fast configuration: 5 frames of 16x16, 10 sampling steps.
RunConfig small_config(const fs::path& dir) {
    RunConfig cfg;
    cfg.video = dir / "scene.kvv";
    cfg.mask = dir / "scene.kvm";
    cfg.weights = dir / "model.kvw";
    cfg.bank = dir / "bank.kvb";
    cfg.out = dir / "out";
    cfg.t_train = 200;
    cfg.steps = 10;
    cfg.kappa = 4;
    cfg.window = 2;
    cfg.scene_frames = 5;
    cfg.scene_height = 16;
    cfg.scene_width = 16;
    cfg.seed = 77;
    return cfg;
}

struct EditFixture {
    DenoiserModel model;
    NoiseSchedule schedule;
    SyntheticScene scene;
    Latent z0;
    LatentMask lmask;
    TokenMask tmask;
    KvBank bank;
    CachingRecord record;
    std::vector<double> cond_src, cond_tgt, null_cond;
    uint64_t master = 501;

    EditFixture() {
        RunConfig cfg;
        cfg.t_train = 200;
        cfg.steps = 10;
        cfg.kappa = 4;
        cfg.window = 2;
        schedule = make_schedule(cfg.t_train, cfg.beta_min, cfg.beta_max, cfg.steps);
        model = DenoiserModel::seeded(cfg.dit_config(), master);
        scene = make_synthetic_video(master, 5, 16, 16);
        z0 = toy_encode(scene.video, kCompression);
        lmask = aggregate_temporal(scene.mask, kCompression);
        tmask = project_to_tokens(lmask, kPatchSize);
        cond_src = conditioning_vector(master, "cond.src", model.cfg.hidden());
        cond_tgt = conditioning_vector(master, "cond.tgt", model.cfg.hidden());
        null_cond.assign(model.cfg.hidden(), 0.0);

        auto rng = stream_rng(master, "noise.shared");
        Latent eps(z0.c, z0.t, z0.h, z0.w);
        std::normal_distribution<double> dist(0.0, 1.0);
        for (auto& v : eps.v) v = dist(rng);
        bank = build_bank(z0, schedule, model, cond_src, eps, &record);
    }

    EditOptions options() const {
        EditOptions opt;
        opt.guidance.kappa = 4;
        opt.detector.kappa = 4;
        opt.detector.window = 2;
        return opt;
    }
};

} // namespace

TEST_CASE("config files parse into RunConfig") {
    const fs::path dir = fs::temp_directory_path() / "kvlock_cfg";
    fs::create_directories(dir);
    const fs::path file = dir / "run.cfg";
    std::ofstream(file) << "# comment line\n"
                           "paths.video = a.kvv\n"
                           "schedule.steps = 25\n"
                           "guidance.omega0 = 3.5\n"
                           "detector.tau = 0.02\n"
                           "toggles.s_star = false\n"
                           "toggles.fixed_alpha = 0.25\n"
                           "seed = 99  # trailing comment\n";
    const RunConfig cfg = parse_config(file);
    CHECK(cfg.video == fs::path("a.kvv"));
    CHECK(cfg.steps == 25);
    CHECK(cfg.omega0 == doctest::Approx(3.5));
    CHECK(cfg.tau == doctest::Approx(0.02));
    CHECK_FALSE(cfg.s_star);
    REQUIRE(cfg.fixed_alpha.has_value());
    CHECK(*cfg.fixed_alpha == doctest::Approx(0.25));
    CHECK(cfg.seed == 99);

    SUBCASE("unknown keys and malformed values are config errors") {
        std::ofstream(file) << "nope.key = 1\n";
        CHECK_THROWS_AS(parse_config(file), ConfigError);
        std::ofstream(file) << "schedule.steps = many\n";
        CHECK_THROWS_AS(parse_config(file), ConfigError);
        std::ofstream(file) << "toggles.s_star = maybe\n";
        CHECK_THROWS_AS(parse_config(file), ConfigError);
        CHECK_THROWS_AS(parse_config(dir / "missing.cfg"), ConfigError);
    }
    SUBCASE("empty fixed_alpha clears the toggle") {
        RunConfig c;
        c.fixed_alpha = 0.5;
        apply_override(c, "toggles.fixed_alpha", "");
        CHECK_FALSE(c.fixed_alpha.has_value());
    }
    fs::remove_all(dir);
}

TEST_CASE("config validation catches inconsistent settings") {
    RunConfig cfg;
    cfg.kappa = cfg.steps + 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = RunConfig{};
    cfg.window = cfg.kappa + 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = RunConfig{};
    cfg.fixed_alpha = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "model.hidden", "33"), ConfigError);
    CHECK_NOTHROW(apply_override(cfg, "model.hidden", "32"));
}

TEST_CASE("gen/cache/edit command flow") {
    const fs::path dir = fs::temp_directory_path() / "kvlock_cmds";
    fs::remove_all(dir);
    fs::create_directories(dir);
    RunConfig cfg = small_config(dir);

    cmd_gen(cfg);
    CHECK(fs::exists(cfg.video));
    CHECK(fs::exists(cfg.mask));
    CHECK(fs::exists(cfg.weights));

    cmd_cache(cfg);
    CHECK(fs::exists(cfg.bank));
    CHECK(fs::exists(cfg.out / "bank_report.csv"));

    cmd_edit(cfg);
    CHECK(fs::exists(cfg.out / "edited.kvv"));
    CHECK(fs::exists(cfg.out / "guidance_trace.csv"));
    CHECK(fs::exists(cfg.out / "variance_trace.csv"));
    CHECK(fs::exists(cfg.out / "summary.csv"));

    SUBCASE("missing mask is a config error with exit code 2") {
        RunConfig broken = cfg;
        broken.mask = dir / "missing.kvm";
        try {
            cmd_cache(broken);
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(e.exit_code() == 2);
            CHECK(std::string(e.what()).find("not found") != std::string::npos);
        }
    }
    SUBCASE("cache rerun is byte-identical") {
        const auto first = file_bytes(cfg.bank);
        cmd_cache(cfg);
        CHECK(file_bytes(cfg.bank) == first);
    }
    SUBCASE("bank from another schedule is rejected") {
        RunConfig other = cfg;
        other.steps = 8;
        other.kappa = 4;
        CHECK_THROWS_AS(cmd_edit(other), IntegrityError);
    }
    fs::remove_all(dir);
}

TEST_CASE("full pipeline rerun is byte-identical") {
    const fs::path dir = fs::temp_directory_path() / "kvlock_repro";
    fs::remove_all(dir);
    fs::create_directories(dir);
    RunConfig cfg = small_config(dir);
    cmd_gen(cfg);

    RunConfig a = cfg, b = cfg;
    a.out = dir / "out_a";
    a.bank = dir / "bank_a.kvb";
    b.out = dir / "out_b";
    b.bank = dir / "bank_b.kvb";
    cmd_cache(a);
    cmd_edit(a);
    cmd_cache(b);
    cmd_edit(b);

    CHECK(file_bytes(a.bank) == file_bytes(b.bank));
    for (const char* name : {"edited.kvv", "guidance_trace.csv", "variance_trace.csv",
                             "summary.csv"}) {
        CHECK(file_bytes(a.out / name) == file_bytes(b.out / name));
    }
    fs::remove_all(dir);
}

TEST_CASE("replay lock audit reproduces the caching pass end to end") {
    EditFixture fx;
    EditOptions opt = fx.options();
    opt.guidance.omega0 = 1.0; // guidance deactivated
    opt.guidance.enable_s_star = false;
    opt.guidance.enable_dynamic_omega = false;
    opt.kv_schedule = false;
    opt.fixed_alpha = 1.0;
    opt.replay_source = true;

    TokenMask all_background;
    all_background.v.assign(fx.tmask.size(), 0);
    LatentMask no_foreground(fx.lmask.t, fx.lmask.h, fx.lmask.w, 0);

    const EditResult r = edit_core(fx.model, fx.schedule, fx.z0, no_foreground, all_background,
                                   &fx.bank, fx.cond_src, fx.null_cond, opt, fx.master);

    REQUIRE(r.x0_trace.size() == fx.record.x0_hat.size());
    for (std::size_t k = 0; k < r.x0_trace.size(); ++k) {
        for (std::size_t i = 0; i < r.x0_trace[k].v.size(); ++i) {
            CHECK(std::abs(r.x0_trace[k].v[i] - fx.record.x0_hat[k].v[i]) <= 1e-4);
        }
    }
    // Final latent is the last-step x0_hat under the zero-noise final update.
    for (std::size_t i = 0; i < r.final_latent.v.size(); ++i) {
        CHECK(std::abs(r.final_latent.v[i] - fx.record.x0_hat.back().v[i]) <= 1e-4);
    }
}

TEST_CASE("fixed alpha pins the in-window fusion rate") {
    EditFixture fx;
    EditOptions opt = fx.options();
    opt.kv_schedule = false;
    opt.fixed_alpha = 0.5;
    const EditResult r = edit_core(fx.model, fx.schedule, fx.z0, fx.lmask, fx.tmask, &fx.bank,
                                   fx.cond_tgt, fx.null_cond, opt, fx.master);
    for (const auto& row : r.trace) {
        if (row.step > 10 - 4) CHECK(row.alpha == 0.5);
        else CHECK(row.alpha == 0.0);
    }
}

TEST_CASE("dynamic fusion keeps alpha inside the unit interval and off outside the window") {
    EditFixture fx;
    EditOptions opt = fx.options();
    const EditResult r = edit_core(fx.model, fx.schedule, fx.z0, fx.lmask, fx.tmask, &fx.bank,
                                   fx.cond_tgt, fx.null_cond, opt, fx.master);
    for (const auto& row : r.trace) {
        CHECK(row.alpha >= 0.0);
        CHECK(row.alpha <= 1.0);
        if (row.step <= 10 - 4) CHECK(row.alpha == 0.0);
    }
}

TEST_CASE("global detection changes the variance signal") {
    EditFixture fx;
    EditOptions local = fx.options();
    EditOptions global = fx.options();
    global.global_detection = true;

    const EditResult rl = edit_core(fx.model, fx.schedule, fx.z0, fx.lmask, fx.tmask, &fx.bank,
                                    fx.cond_tgt, fx.null_cond, local, fx.master);
    const EditResult rg = edit_core(fx.model, fx.schedule, fx.z0, fx.lmask, fx.tmask, &fx.bank,
                                    fx.cond_tgt, fx.null_cond, global, fx.master);
    bool differs = false;
    for (std::size_t i = 0; i < rl.trace.size(); ++i) {
        const auto& a = rl.trace[i].sigma2;
        const auto& b = rg.trace[i].sigma2;
        if (a.has_value() != b.has_value()) differs = true;
        else if (a && b && *a != *b) differs = true;
    }
    CHECK(differs);
}

TEST_CASE("kv arms require a bank") {
    EditFixture fx;
    EditOptions opt = fx.options();
    CHECK_THROWS_AS(edit_core(fx.model, fx.schedule, fx.z0, fx.lmask, fx.tmask, nullptr,
                              fx.cond_tgt, fx.null_cond, opt, fx.master),
                    ConfigError);
}

TEST_CASE("ablation arm list matches the study matrix") {
    const auto arms = ablation_arms();
    REQUIRE(arms.size() == 9);
    CHECK(arms.back().name == "full_model");
    bool has_fixed = false, has_global = false;
    for (const auto& a : arms) {
        if (a.fixed_alpha.has_value()) {
            has_fixed = true;
            CHECK(*a.fixed_alpha == 0.5);
        }
        if (a.global_detection) has_global = true;
    }
    CHECK(has_fixed);
    CHECK(has_global);
}

TEST_CASE("toy experiment reruns identically at small scale") {
    RunConfig cfg;
    cfg.toy_train.steps = 150;
    cfg.toy_train.batch = 16;
    cfg.toy_samples = 40;
    cfg.toy_seeds = 1;
    cfg.seed = 9;

    const ToyExperimentReport a = run_toy_experiment(cfg);
    const ToyExperimentReport b = run_toy_experiment(cfg);
    REQUIRE(a.seeds.size() == 1);
    REQUIRE(a.seeds[0].plain.records.size() == 40);
    for (std::size_t i = 0; i < 40; ++i) {
        CHECK(a.seeds[0].plain.records[i].final_x == b.seeds[0].plain.records[i].final_x);
        CHECK(a.seeds[0].scheduled.records[i].hal == b.seeds[0].scheduled.records[i].hal);
    }
    CHECK(a.analytic_control.records.size() == 40);
}

TEST_CASE("format_double survives round trips") {
    for (double x : {0.0, 1.0, -2.5, 1e-8, 3.141592653589793, 1e300}) {
        CHECK(std::stod(format_double(x)) == x);
    }
    CHECK(format_double(std::numeric_limits<double>::infinity()) == "inf");
}
