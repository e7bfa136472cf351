#include "kvlock/pipeline.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "kvlock/parallel.hpp"
#include "kvlock/rng.hpp"

namespace kvlock {

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

NoiseSchedule RunConfig::make_noise_schedule() const {
    return make_schedule(t_train, beta_min, beta_max, steps);
}

DitConfig RunConfig::dit_config() const {
    DitConfig c;
    c.layers = layers;
    c.heads = heads;
    c.head_dim = head_dim;
    return c;
}

GuidanceConfig RunConfig::guidance_config() const {
    GuidanceConfig g;
    g.omega0 = omega0;
    g.b = clamp_b;
    g.tau = tau;
    g.kappa = kappa;
    g.eps_div = eps_div;
    g.enable_s_star = s_star;
    g.enable_dynamic_omega = omega_schedule;
    return g;
}

DetectorConfig RunConfig::detector_config() const {
    DetectorConfig d;
    d.tau = tau;
    d.kappa = kappa;
    d.window = window;
    return d;
}

void RunConfig::validate() const {
    if (t_train < 1) throw ConfigError("schedule.t_train must be >= 1");
    if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
        throw ConfigError("schedule betas must satisfy 0 < beta_min <= beta_max < 1");
    }
    if (steps < 1 || steps > t_train) throw ConfigError("schedule.steps must be in [1, t_train]");
    if (layers < 1 || heads < 1 || head_dim < 1) throw ConfigError("model dims must be >= 1");
    if (!(omega0 > 0.0)) throw ConfigError("guidance.omega0 must be > 0");
    if (clamp_b < 1.0) throw ConfigError("guidance.b must be >= 1");
    if (!(eps_div > 0.0)) throw ConfigError("guidance.eps_div must be > 0");
    if (!(tau > 0.0)) throw ConfigError("detector.tau must be > 0");
    if (window < 2) throw ConfigError("detector.window must be >= 2");
    if (kappa < window) throw ConfigError("detector.kappa must be >= detector.window");
    if (kappa > steps) throw ConfigError("detector.kappa must be <= schedule.steps");
    if (fixed_alpha && (*fixed_alpha < 0.0 || *fixed_alpha > 1.0)) {
        throw ConfigError("toggles.fixed_alpha must be in [0, 1]");
    }
    if (scenes < 1) throw ConfigError("ablate.scenes must be >= 1");
    if (toy_samples < 0 || toy_seeds < 1) throw ConfigError("toy sampling config invalid");
    if (toy_train.steps < 0 || toy_train.batch < 1 || toy_train.hidden1 < 1 ||
        toy_train.hidden2 < 1) {
        throw ConfigError("toy training config invalid");
    }
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_real(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("bad real for " + key + ": '" + value + "'");
    }
}

long long parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const long long x = std::stoll(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("bad integer for " + key + ": '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "on") return true;
    if (value == "false" || value == "0" || value == "off") return false;
    throw ConfigError("bad boolean for " + key + ": '" + value + "'");
}

} // namespace

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "paths.video") cfg.video = value;
    else if (key == "paths.mask") cfg.mask = value;
    else if (key == "paths.bank") cfg.bank = value;
    else if (key == "paths.weights") cfg.weights = value;
    else if (key == "paths.out") cfg.out = value;
    else if (key == "schedule.t_train") cfg.t_train = static_cast<int>(parse_int(key, value));
    else if (key == "schedule.beta_min") cfg.beta_min = parse_real(key, value);
    else if (key == "schedule.beta_max") cfg.beta_max = parse_real(key, value);
    else if (key == "schedule.steps") cfg.steps = static_cast<int>(parse_int(key, value));
    else if (key == "model.layers") cfg.layers = static_cast<int>(parse_int(key, value));
    else if (key == "model.heads") cfg.heads = static_cast<int>(parse_int(key, value));
    else if (key == "model.head_dim") cfg.head_dim = static_cast<int>(parse_int(key, value));
    else if (key == "model.hidden") {
        const int hidden = static_cast<int>(parse_int(key, value));
        if (hidden != cfg.heads * cfg.head_dim) {
            throw ConfigError("model.hidden must equal model.heads * model.head_dim");
        }
    } else if (key == "guidance.omega0") cfg.omega0 = parse_real(key, value);
    else if (key == "guidance.b") cfg.clamp_b = parse_real(key, value);
    else if (key == "guidance.eps_div") cfg.eps_div = parse_real(key, value);
    else if (key == "detector.tau") cfg.tau = parse_real(key, value);
    else if (key == "detector.window") cfg.window = static_cast<int>(parse_int(key, value));
    else if (key == "detector.kappa") cfg.kappa = static_cast<int>(parse_int(key, value));
    else if (key == "toggles.kv_schedule") cfg.kv_schedule = parse_bool(key, value);
    else if (key == "toggles.omega_schedule") cfg.omega_schedule = parse_bool(key, value);
    else if (key == "toggles.s_star") cfg.s_star = parse_bool(key, value);
    else if (key == "toggles.global_detection") cfg.global_detection = parse_bool(key, value);
    else if (key == "toggles.replay_source") cfg.replay_source = parse_bool(key, value);
    else if (key == "toggles.use_source_cond") cfg.use_source_cond = parse_bool(key, value);
    else if (key == "toggles.fixed_alpha") {
        if (value.empty() || value == "none") cfg.fixed_alpha.reset();
        else cfg.fixed_alpha = parse_real(key, value);
    } else if (key == "toy.train_steps") cfg.toy_train.steps = static_cast<int>(parse_int(key, value));
    else if (key == "toy.batch") cfg.toy_train.batch = static_cast<int>(parse_int(key, value));
    else if (key == "toy.lr") cfg.toy_train.lr = parse_real(key, value);
    else if (key == "toy.momentum") cfg.toy_train.momentum = parse_real(key, value);
    else if (key == "toy.hidden1") cfg.toy_train.hidden1 = static_cast<int>(parse_int(key, value));
    else if (key == "toy.hidden2") cfg.toy_train.hidden2 = static_cast<int>(parse_int(key, value));
    else if (key == "toy.samples") cfg.toy_samples = static_cast<int>(parse_int(key, value));
    else if (key == "toy.seeds") cfg.toy_seeds = static_cast<int>(parse_int(key, value));
    else if (key == "ablate.scenes") cfg.scenes = static_cast<int>(parse_int(key, value));
    else if (key == "scene.frames") cfg.scene_frames = static_cast<int>(parse_int(key, value));
    else if (key == "scene.height") cfg.scene_height = static_cast<int>(parse_int(key, value));
    else if (key == "scene.width") cfg.scene_width = static_cast<int>(parse_int(key, value));
    else if (key == "seed") cfg.seed = static_cast<uint64_t>(parse_int(key, value));
    else throw ConfigError("unknown config key: " + key);
}

RunConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config not found: " + path.string());
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                              ": expected key = value");
        }
        apply_override(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

std::string format_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

std::vector<double> conditioning_vector(uint64_t master_seed, const std::string& name, int dim) {
    auto rng = stream_rng(master_seed, name);
    return normal_vector(rng, static_cast<std::size_t>(dim));
}

// ---------------------------------------------------------------------------
// Edit loop
// ---------------------------------------------------------------------------

namespace {

// Denoised-estimate clamp for the sampler state update; the toy encoder keeps
// latents well inside this range.
constexpr double kX0Clip = 1.5;

Latent seeded_latent_noise(uint64_t master, const std::string& name, const Latent& like) {
    auto rng = stream_rng(master, name);
    Latent out(like.c, like.t, like.h, like.w);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& x : out.v) x = dist(rng);
    return out;
}

LatentMask ones_like(const LatentMask& m) {
    return LatentMask(m.t, m.h, m.w, 1);
}

} // namespace

EditResult edit_core(const DenoiserModel& model, const NoiseSchedule& schedule,
                     const Latent& z0_src, const LatentMask& lmask, const TokenMask& tmask,
                     const KvBank* bank, const std::vector<double>& cond,
                     const std::vector<double>& null_cond, const EditOptions& opt,
                     uint64_t master_seed) {
    const int k_steps = schedule.num_steps();
    const bool use_kv = opt.fixed_alpha.has_value() || opt.kv_schedule;
    if (use_kv) {
        if (!bank) throw ConfigError("edit: KV injection enabled but no bank supplied");
        ensure_compatible(*bank, model.weights_hash(), schedule.hash());
        if (bank->meta.tokens != tmask.size()) {
            throw IntegrityError("edit: bank token count " + std::to_string(bank->meta.tokens) +
                                 " != mask tokens " + std::to_string(tmask.size()));
        }
    }

    const Latent eps_shared = seeded_latent_noise(master_seed, "noise.shared", z0_src);
    auto ancestral = stream_rng(master_seed, "noise.ancestral");
    std::normal_distribution<double> normal(0.0, 1.0);

    const LatentMask det_mask = opt.global_detection ? ones_like(lmask) : lmask;
    TrajectoryWindow window(opt.detector.window, z0_src.size(),
                            mask_support(det_mask, z0_src.c));

    Latent x = schedule.forward_noise(z0_src, schedule.step_timestep(1), eps_shared);

    EditResult result;
    result.trace.reserve(k_steps);

    for (int k = 1; k <= k_steps; ++k) {
        const int t = schedule.step_timestep(k);
        const bool in_window = k > k_steps - opt.detector.kappa;
        const std::optional<double> sigma2 = window.variance(); // causal: pushes up to k-1

        InjectionPlan plan;
        plan.token_mask = tmask;
        plan.step_index = k;
        plan.active = in_window && use_kv;
        plan.alpha_k = 0.0;
        if (plan.active) {
            plan.alpha_k = opt.fixed_alpha ? *opt.fixed_alpha
                                           : fusion_rate(sigma2, opt.detector, in_window);
        }

        auto [eps_hat, gstate] =
            cfg_step(model, x, t, k, cond, null_cond, bank, plan, opt.guidance, sigma2);
        if (!all_finite(eps_hat)) {
            throw NumericError("NaN in guided noise at step " + std::to_string(k));
        }

        const Latent x0_hat = schedule.predict_x0(x, t, eps_hat);
        result.x0_trace.push_back(x0_hat);

        EditTraceRow row;
        row.step = k;
        row.sigma2 = sigma2;
        row.alpha = plan.alpha_k;
        row.flag = gstate.flag;
        row.s_star = gstate.s_star;
        row.omega = gstate.omega;
        result.trace.push_back(row);
        if (gstate.flag) ++result.flags_fired;

        const Latent batch[1] = {x0_hat};
        window.push(masked_reduce(batch, det_mask));

        if (opt.replay_source && k < k_steps) {
            // Lock audit: pin the state to the forward-noised source trajectory.
            for (std::size_t i = 0; i < x.v.size(); ++i) (void)normal(ancestral);
            x = schedule.forward_noise(z0_src, schedule.step_timestep(k + 1), eps_shared);
        } else {
            // Standard clipped-x0 ancestral update: keeps the chain on the
            // encoder's latent range instead of compounding 1/sqrt(alpha).
            const double ab = schedule.alpha_bar(t);
            const double sab = std::sqrt(ab);
            const double sb = std::sqrt(1.0 - ab);
            Latent eps_eff = eps_hat;
            for (std::size_t i = 0; i < x.v.size(); ++i) {
                const double x0c = std::clamp(x0_hat.v[i], -kX0Clip, kX0Clip);
                eps_eff.v[i] = (x.v[i] - sab * x0c) / sb;
            }
            Latent noise(x.c, x.t, x.h, x.w);
            if (k < k_steps) {
                for (auto& nv : noise.v) nv = normal(ancestral);
            }
            x = schedule.reverse_step(x, k, eps_eff, noise);
        }
    }

    result.final_latent = std::move(x);
    result.final_sigma2 = window.variance();
    return result;
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

std::vector<AblationArm> ablation_arms() {
    std::vector<AblationArm> arms;
    arms.push_back({"variance_kv_only", true, false, false, std::nullopt, false});
    arms.push_back({"cfg_omega_only", false, true, false, std::nullopt, false});
    arms.push_back({"cfg_s_star_only", false, false, true, std::nullopt, false});
    arms.push_back({"cfg_s_star_and_omega", false, true, true, std::nullopt, false});
    arms.push_back({"variance_kv_and_cfg_omega", true, true, false, std::nullopt, false});
    arms.push_back({"variance_kv_and_cfg_s_star", true, false, true, std::nullopt, false});
    arms.push_back({"fixed_fusion_alpha_0.5", false, true, true, 0.5, false});
    arms.push_back({"global_hallucination_detection", true, true, true, std::nullopt, true});
    arms.push_back({"full_model", true, true, true, std::nullopt, false});
    return arms;
}

AblationResult run_ablation(const RunConfig& cfg) {
    cfg.validate();
    const auto arms = ablation_arms();
    if (arms.empty()) throw ConfigError("ablation: empty arm matrix");

    AblationResult table;
    table.arms = arms;
    table.cells.assign(arms.size(), std::vector<AblationCell>(cfg.scenes));
    for (int s = 0; s < cfg.scenes; ++s) table.scene_names.push_back("scene" + std::to_string(s));

    const NoiseSchedule schedule = cfg.make_noise_schedule();
    const DenoiserModel model = DenoiserModel::seeded(cfg.dit_config(), cfg.seed);

    struct SceneData {
        SyntheticScene scene;
        Latent z0;
        LatentMask lmask;
        TokenMask tmask;
        KvBank bank;
        uint64_t master;
        std::vector<double> cond_tgt, null_cond;
    };
    std::vector<SceneData> scenes(static_cast<std::size_t>(cfg.scenes));

    parallel_for(scenes.size(), [&](std::size_t s) {
        SceneData& sd = scenes[s];
        sd.master = stream_seed(cfg.seed, "ablate.scene." + std::to_string(s));
        sd.scene = make_synthetic_video(sd.master, cfg.scene_frames, cfg.scene_height,
                                        cfg.scene_width);
        sd.z0 = toy_encode(sd.scene.video, kCompression);
        sd.lmask = aggregate_temporal(sd.scene.mask, kCompression);
        sd.tmask = project_to_tokens(sd.lmask, kPatchSize);
        const auto cond_src = conditioning_vector(sd.master, "cond.src", model.cfg.hidden());
        sd.cond_tgt = conditioning_vector(sd.master, "cond.tgt", model.cfg.hidden());
        sd.null_cond.assign(static_cast<std::size_t>(model.cfg.hidden()), 0.0);
        const Latent eps_shared = seeded_latent_noise(sd.master, "noise.shared", sd.z0);
        sd.bank = build_bank(sd.z0, schedule, model, cond_src, eps_shared);
    });

    std::vector<std::pair<std::size_t, std::size_t>> jobs;
    for (std::size_t a = 0; a < arms.size(); ++a) {
        for (std::size_t s = 0; s < scenes.size(); ++s) jobs.emplace_back(a, s);
    }

    parallel_for(jobs.size(), [&](std::size_t j) {
        const auto [a, s] = jobs[j];
        const AblationArm& arm = arms[a];
        const SceneData& sd = scenes[s];
        AblationCell& cell = table.cells[a][s];
        try {
            EditOptions opt;
            opt.guidance = cfg.guidance_config();
            opt.guidance.enable_s_star = arm.s_star;
            opt.guidance.enable_dynamic_omega = arm.omega_schedule;
            opt.detector = cfg.detector_config();
            opt.kv_schedule = arm.kv_schedule;
            opt.fixed_alpha = arm.fixed_alpha;
            opt.global_detection = arm.global_detection;

            const bool use_kv = arm.kv_schedule || arm.fixed_alpha.has_value();
            EditResult r = edit_core(model, schedule, sd.z0, sd.lmask, sd.tmask,
                                     use_kv ? &sd.bank : nullptr, sd.cond_tgt, sd.null_cond,
                                     opt, sd.master);
            const Video edited = toy_decode(r.final_latent, kCompression, sd.scene.video.f);
            cell.bg_ssim = background_ssim(sd.scene.video, edited, sd.scene.mask);
            cell.bg_psnr = background_psnr(sd.scene.video, edited, sd.scene.mask);
            cell.flags_fired = r.flags_fired;
        } catch (const Error& e) {
            cell.failed = true;
            cell.error = e.what();
        }
    });

    return table;
}

// ---------------------------------------------------------------------------
// Toy experiment
// ---------------------------------------------------------------------------

namespace {

ToyArmSummary summarize_arm(std::vector<ToySampleRecord> records, double tau) {
    ToyArmSummary s;
    s.records = std::move(records);
    std::size_t halluc = 0;
    for (const auto& r : s.records) {
        if (!r.in_support) ++halluc;
        if (r.flagged) {
            ++s.flagged;
            if (r.final_sigma2 > tau) ++s.flagged_still_above_tau;
        }
    }
    s.halluc_rate = s.records.empty() ? 0.0
                                      : static_cast<double>(halluc) /
                                            static_cast<double>(s.records.size());
    s.auc = hal_auc(s.records);
    return s;
}

} // namespace

ToyExperimentReport run_toy_experiment(const RunConfig& cfg) {
    cfg.validate();
    const NoiseSchedule schedule = cfg.make_noise_schedule();
    const MixtureSpec spec;

    ToySamplerConfig sampler;
    sampler.samples = cfg.toy_samples;
    sampler.detector = cfg.detector_config();
    sampler.guidance = GuidanceConfig{};
    sampler.guidance.omega0 = 1.0; // unconditional testbed baseline
    sampler.guidance.b = cfg.clamp_b;
    sampler.guidance.tau = cfg.tau;
    sampler.guidance.kappa = cfg.kappa;

    ToyExperimentReport report;
    report.seeds.resize(static_cast<std::size_t>(cfg.toy_seeds));

    parallel_for(report.seeds.size(), [&](std::size_t i) {
        ToySeedReport& sr = report.seeds[i];
        sr.seed = stream_seed(cfg.seed, "toy.seed." + std::to_string(i));
        const TinyMlp net = train_toy_denoiser(spec, schedule, cfg.toy_train, sr.seed);
        const EpsFn fn = [&net](double x, int t) { return net.eps(x, t); };

        ToySamplerConfig plain = sampler;
        plain.schedule_omega = false;
        plain.threads = 1; // seed-level parallelism already saturates
        sr.plain = summarize_arm(sample_and_classify(fn, schedule, spec, plain, sr.seed),
                                 cfg.tau);

        ToySamplerConfig scheduled = sampler;
        scheduled.schedule_omega = true;
        scheduled.threads = 1;
        sr.scheduled = summarize_arm(sample_and_classify(fn, schedule, spec, scheduled, sr.seed),
                                     cfg.tau);
    });

    const EpsFn analytic = [&spec, &schedule](double x, int t) {
        return analytic_eps(x, t, spec, schedule);
    };
    ToySamplerConfig control = sampler;
    control.schedule_omega = false;
    report.analytic_control = summarize_arm(
        sample_and_classify(analytic, schedule, spec, control,
                            stream_seed(cfg.seed, "toy.analytic")),
        cfg.tau);
    return report;
}

// ---------------------------------------------------------------------------
// CLI commands
// ---------------------------------------------------------------------------

namespace {

void require_path(const std::filesystem::path& p, const char* what) {
    if (p.empty()) throw ConfigError(std::string("missing required path: ") + what);
}

std::filesystem::path out_dir(const RunConfig& cfg) {
    const std::filesystem::path dir = cfg.out.empty() ? std::filesystem::path("out") : cfg.out;
    std::filesystem::create_directories(dir);
    return dir;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ConfigError("cannot write " + path.string());
    f << text;
    if (!f.good()) throw ConfigError("write failed: " + path.string());
}

std::string trace_csvs(const EditResult& r, std::string* variance_csv) {
    std::ostringstream g, v;
    g << "step,sigma2,flag,s_star,omega\n";
    v << "step,sigma2,alpha,flag\n";
    for (const auto& row : r.trace) {
        const std::string s2 = row.sigma2 ? format_double(*row.sigma2) : "nan";
        g << row.step << ',' << s2 << ',' << (row.flag ? 1 : 0) << ','
          << format_double(row.s_star) << ',' << format_double(row.omega) << '\n';
        v << row.step << ',' << s2 << ',' << format_double(row.alpha) << ','
          << (row.flag ? 1 : 0) << '\n';
    }
    *variance_csv = v.str();
    return g.str();
}

struct EditSetup {
    Video video;
    PixelMask mask;
    DenoiserModel model;
    NoiseSchedule schedule;
    Latent z0;
    LatentMask lmask;
    TokenMask tmask;
};

EditSetup load_edit_setup(const RunConfig& cfg) {
    require_path(cfg.video, "paths.video");
    require_path(cfg.mask, "paths.mask");
    require_path(cfg.weights, "paths.weights");
    EditSetup s;
    s.video = load_video(cfg.video);
    s.mask = load_mask(cfg.mask);
    if (s.mask.f != s.video.f || s.mask.h != s.video.h || s.mask.w != s.video.w) {
        throw ConfigError("mask dimensions do not match the video");
    }
    s.model = DenoiserModel::load(cfg.weights);
    if (s.model.cfg.layers != cfg.layers || s.model.cfg.heads != cfg.heads ||
        s.model.cfg.head_dim != cfg.head_dim) {
        throw ConfigError("weights file dims disagree with model.* config");
    }
    s.schedule = cfg.make_noise_schedule();
    s.z0 = toy_encode(s.video, kCompression);
    s.lmask = aggregate_temporal(s.mask, kCompression);
    s.tmask = project_to_tokens(s.lmask, kPatchSize);
    return s;
}

} // namespace

void cmd_gen(const RunConfig& cfg) {
    cfg.validate();
    require_path(cfg.video, "paths.video");
    require_path(cfg.mask, "paths.mask");
    require_path(cfg.weights, "paths.weights");
    const SyntheticScene scene =
        make_synthetic_video(cfg.seed, cfg.scene_frames, cfg.scene_height, cfg.scene_width);
    save_video(scene.video, cfg.video);
    save_mask(scene.mask, cfg.mask);
    DenoiserModel::seeded(cfg.dit_config(), cfg.seed).save(cfg.weights);
    std::cout << "wrote " << cfg.video.string() << ", " << cfg.mask.string() << ", "
              << cfg.weights.string() << "\n"
              << "scene: " << scene.target_desc << "\n";
}

void cmd_cache(const RunConfig& cfg) {
    cfg.validate();
    require_path(cfg.bank, "paths.bank");
    EditSetup s = load_edit_setup(cfg);

    const auto cond_src = conditioning_vector(cfg.seed, "cond.src", s.model.cfg.hidden());
    const Latent eps_shared = seeded_latent_noise(cfg.seed, "noise.shared", s.z0);
    const KvBank bank = build_bank(s.z0, s.schedule, s.model, cond_src, eps_shared);
    save_bank(bank, cfg.bank);

    std::ostringstream csv;
    csv << "step,bytes\n";
    uint64_t total = 0;
    for (const auto& [step, bytes] : bank_memory_report(bank)) {
        csv << step << ',' << bytes << '\n';
        total += bytes;
    }
    const auto dir = out_dir(cfg);
    write_text(dir / "bank_report.csv", csv.str());
    std::cout << csv.str() << "total," << total << "\n"
              << "bank: " << cfg.bank.string() << " (" << bank.entries.size() << " entries)\n";
}

void cmd_edit(const RunConfig& cfg) {
    cfg.validate();
    require_path(cfg.bank, "paths.bank");
    EditSetup s = load_edit_setup(cfg);
    const KvBank bank = load_bank(cfg.bank);

    EditOptions opt;
    opt.guidance = cfg.guidance_config();
    opt.detector = cfg.detector_config();
    opt.kv_schedule = cfg.kv_schedule;
    opt.fixed_alpha = cfg.fixed_alpha;
    opt.global_detection = cfg.global_detection;
    opt.replay_source = cfg.replay_source;

    const auto cond_name = cfg.use_source_cond ? "cond.src" : "cond.tgt";
    const auto cond = conditioning_vector(cfg.seed, cond_name, s.model.cfg.hidden());
    const std::vector<double> null_cond(static_cast<std::size_t>(s.model.cfg.hidden()), 0.0);

    EditResult r = edit_core(s.model, s.schedule, s.z0, s.lmask, s.tmask, &bank, cond,
                             null_cond, opt, cfg.seed);
    const Video edited = toy_decode(r.final_latent, kCompression, s.video.f);
    r.bg_ssim = background_ssim(s.video, edited, s.mask);
    r.bg_psnr = background_psnr(s.video, edited, s.mask);

    const auto dir = out_dir(cfg);
    save_video(edited, dir / "edited.kvv");
    std::string variance_csv;
    const std::string guidance_csv = trace_csvs(r, &variance_csv);
    write_text(dir / "guidance_trace.csv", guidance_csv);
    write_text(dir / "variance_trace.csv", variance_csv);

    std::ostringstream summary;
    summary << "key,value\n"
            << "bg_ssim," << format_double(r.bg_ssim) << '\n'
            << "bg_psnr," << format_double(r.bg_psnr) << '\n'
            << "flags_fired," << r.flags_fired << '\n'
            << "final_sigma2,"
            << (r.final_sigma2 ? format_double(*r.final_sigma2) : std::string("nan")) << '\n'
            << "steps," << s.schedule.num_steps() << '\n'
            << "seed," << cfg.seed << '\n';
    write_text(dir / "summary.csv", summary.str());
    std::cout << summary.str();
}

void cmd_toy(const RunConfig& cfg) {
    const ToyExperimentReport report = run_toy_experiment(cfg);
    const auto dir = out_dir(cfg);

    auto arm_csv = [](const ToyArmSummary& arm) {
        std::ostringstream f;
        f << "trajectory,final_x,hal,in_support,flagged,final_sigma2\n";
        for (std::size_t i = 0; i < arm.records.size(); ++i) {
            const auto& r = arm.records[i];
            f << i << ',' << format_double(r.final_x) << ',' << format_double(r.hal) << ','
              << (r.in_support ? 1 : 0) << ',' << (r.flagged ? 1 : 0) << ','
              << format_double(r.final_sigma2) << '\n';
        }
        return f.str();
    };

    std::ostringstream summary;
    summary << "arm,seed,auc,halluc_rate,flagged,flagged_still_above_tau,n\n";
    auto arm_row = [&](const std::string& name, uint64_t seed, const ToyArmSummary& a) {
        summary << name << ',' << seed << ','
                << (a.auc ? format_double(*a.auc) : std::string("insufficient_positives")) << ','
                << format_double(a.halluc_rate) << ',' << a.flagged << ','
                << a.flagged_still_above_tau << ',' << a.records.size() << '\n';
    };
    for (std::size_t i = 0; i < report.seeds.size(); ++i) {
        const auto& sr = report.seeds[i];
        write_text(dir / ("toy_trajectories_seed" + std::to_string(i) + "_plain.csv"),
                   arm_csv(sr.plain));
        write_text(dir / ("toy_trajectories_seed" + std::to_string(i) + "_scheduled.csv"),
                   arm_csv(sr.scheduled));
        arm_row("trained_plain", sr.seed, sr.plain);
        arm_row("trained_scheduled", sr.seed, sr.scheduled);
    }
    write_text(dir / "toy_trajectories_analytic.csv", arm_csv(report.analytic_control));
    arm_row("analytic_control", stream_seed(cfg.seed, "toy.analytic"), report.analytic_control);
    write_text(dir / "toy_summary.csv", summary.str());
    std::cout << summary.str();
}

void cmd_ablate(const RunConfig& cfg) {
    const AblationResult table = run_ablation(cfg);
    std::ostringstream csv;
    csv << "arm";
    for (const auto& name : table.scene_names) {
        csv << ',' << name << "_ssim," << name << "_psnr," << name << "_flags";
    }
    csv << ",mean_ssim,mean_psnr\n";
    for (std::size_t a = 0; a < table.arms.size(); ++a) {
        csv << table.arms[a].name;
        double ssim_sum = 0.0, psnr_sum = 0.0;
        int ok = 0;
        for (const auto& cell : table.cells[a]) {
            if (cell.failed) {
                csv << ",ERROR,ERROR,ERROR";
                continue;
            }
            csv << ',' << format_double(cell.bg_ssim) << ',' << format_double(cell.bg_psnr)
                << ',' << cell.flags_fired;
            ssim_sum += cell.bg_ssim;
            psnr_sum += cell.bg_psnr;
            ++ok;
        }
        if (ok > 0) {
            csv << ',' << format_double(ssim_sum / ok) << ',' << format_double(psnr_sum / ok)
                << '\n';
        } else {
            csv << ",ERROR,ERROR\n";
        }
    }
    const auto dir = out_dir(cfg);
    write_text(dir / "ablation.csv", csv.str());
    std::cout << csv.str();
}

void cmd_report(const RunConfig& cfg) {
    const std::filesystem::path dir = cfg.out.empty() ? std::filesystem::path("out") : cfg.out;
    if (!std::filesystem::is_directory(dir)) {
        throw ConfigError("report: output directory not found: " + dir.string());
    }
    bool found = false;
    for (const char* name : {"summary.csv", "bank_report.csv", "ablation.csv",
                             "toy_summary.csv"}) {
        const auto path = dir / name;
        if (!std::filesystem::exists(path)) continue;
        found = true;
        std::ifstream f(path);
        std::cout << "== " << name << "\n" << f.rdbuf() << "\n";
    }
    if (!found) throw ConfigError("report: no run artifacts in " + dir.string());
}

} // namespace kvlock
