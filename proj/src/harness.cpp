#include "octrack/harness.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <thread>

#include <json.hpp>

#include "octrack/phantom.hpp"
#include "octrack/registration.hpp"

namespace octrack {
namespace {

using nlohmann::json;

struct SortedLog {
    std::vector<double> t;
    std::vector<Vec3> gt;
    std::vector<Vec3> est;
};

SortedLog sorted(const TrackingLog& log) {
    std::vector<std::size_t> order(log.entries.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return log.entries[a].t_s < log.entries[b].t_s;
    });
    SortedLog s;
    s.t.reserve(order.size());
    for (std::size_t i : order) {
        const LogEntry& e = log.entries[i];
        s.t.push_back(e.t_s);
        s.gt.push_back(e.gt);
        s.est.push_back(e.est);
    }
    return s;
}

// Ground truth linearly interpolated at query time q; false if q lies outside
// the logged interval.
bool gt_at(const SortedLog& s, double q, Vec3& out) {
    if (s.t.empty() || q < s.t.front() || q > s.t.back()) return false;
    auto it = std::lower_bound(s.t.begin(), s.t.end(), q);
    std::size_t hi = static_cast<std::size_t>(it - s.t.begin());
    if (hi == 0) {
        out = s.gt.front();
        return true;
    }
    std::size_t lo = hi - 1;
    if (hi == s.t.size()) {
        out = s.gt.back();
        return true;
    }
    double dt = s.t[hi] - s.t[lo];
    double w = dt > 0.0 ? (q - s.t[lo]) / dt : 0.0;
    out = s.gt[lo] * (1.0 - w) + s.gt[hi] * w;
    return true;
}

double rmse_at_delay(const SortedLog& s, double delay_s) {
    double sumsq = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < s.t.size(); ++i) {
        Vec3 g;
        if (!gt_at(s, s.t[i] + delay_s, g)) continue;
        Vec3 e = s.est[i] - g;
        sumsq += e.x * e.x + e.y * e.y + e.z * e.z;
        ++n;
    }
    if (n == 0)
        throw InsufficientDataError("no overlapping samples at delay " +
                                    std::to_string(delay_s));
    return std::sqrt(sumsq / static_cast<double>(n));
}

std::string motion_name(MotionKind k) {
    switch (k) {
        case MotionKind::static_hold: return "static";
        case MotionKind::lateral_diagonal: return "lateral_diagonal";
        case MotionKind::axial: return "axial";
        case MotionKind::diagonal_3d: return "diagonal_3d";
        case MotionKind::axial_sine: return "axial_sine";
    }
    throw ParameterError("unknown motion kind");
}

MotionKind motion_from_name(const std::string& s) {
    if (s == "static") return MotionKind::static_hold;
    if (s == "lateral_diagonal") return MotionKind::lateral_diagonal;
    if (s == "axial") return MotionKind::axial;
    if (s == "diagonal_3d") return MotionKind::diagonal_3d;
    if (s == "axial_sine") return MotionKind::axial_sine;
    throw ParameterError("unknown motion kind: " + s);
}

json config_to_json(const ExperimentConfig& c) {
    json j;
    j["motion"] = motion_name(c.motion);
    j["velocities_mms"] = c.velocities_mms;
    j["sample"] = c.sample == SceneKind::plate ? "plate" : "tissue";
    j["repeats"] = c.repeats;
    j["duration_s"] = c.duration_s;
    j["span_mm"] = c.span_mm;
    j["log_rate_hz"] = c.log_rate_hz;
    j["seed"] = c.seed;
    j["time_compression"] = c.time_compression;
    j["with_latency_sweep"] = c.with_latency_sweep;
    j["sweep_range_s"] = c.sweep_range_s;
    j["sweep_step_s"] = c.sweep_step_s;
    j["dims"] = {c.dims.nx, c.dims.ny, c.dims.nz};
    j["pitch_mm"] = {c.pitch.dx, c.pitch.dy, c.pitch.dz};
    j["render_noise_sigma"] = c.render_noise_sigma;
    j["robot_noise_sigma"] = c.robot_noise_sigma;
    j["full_recon_path"] = c.full_recon_path;
    j["galvo"] = {{"step_mm", c.galvo.step_mm},
                  {"latency_s", c.galvo.latency_s},
                  {"max_range_mm", c.galvo.max_range_mm}};
    j["motor"] = {{"step_mm", c.motor.step_mm},
                  {"top_speed_mms", c.motor.top_speed_mms},
                  {"range_mm", c.motor.range_mm},
                  {"latency_s", c.motor.latency_s},
                  {"dir_change_delay_s", c.motor.dir_change_delay_s},
                  {"path_scale", c.motor.path_scale},
                  {"home_mm", c.motor.home_mm}};
    j["distortion"] = {{"enabled", c.distortion.enabled},
                       {"axial_curvature", c.distortion.axial_curvature},
                       {"lateral_coupling", c.distortion.lateral_coupling}};
    j["controller"] = {{"gain", c.controller.gain},
                       {"deadband_mm", c.controller.deadband_mm},
                       {"volume_rate_hz", c.controller.volume_rate_hz},
                       {"tracking_rate_hz", c.controller.tracking_rate_hz},
                       {"viz_rate_hz", c.controller.viz_rate_hz},
                       {"confidence_floor", c.controller.confidence_floor},
                       {"lost_after", c.controller.lost_after}};
    j["filter"] = {{"sigma", c.filter.sigma}, {"eps", c.filter.eps}};
    return j;
}

std::uint64_t run_seed(const ExperimentConfig& cfg, double velocity, int repeat) {
    std::uint64_t h = splitmix64(cfg.seed ^ std::bit_cast<std::uint64_t>(velocity));
    return splitmix64(h + static_cast<std::uint64_t>(repeat) + 1);
}

} // namespace

double compute_rmse(const TrackingLog& log, double delay_s) {
    return rmse_at_delay(sorted(log), delay_s);
}

double max_interpolated_error(const TrackingLog& log) {
    SortedLog s = sorted(log);
    double worst = 0.0;
    bool any = false;
    for (std::size_t i = 0; i < s.t.size(); ++i) {
        Vec3 g;
        if (!gt_at(s, s.t[i], g)) continue;
        worst = std::max(worst, (s.est[i] - g).norm());
        any = true;
    }
    if (!any) throw InsufficientDataError("empty tracking log");
    return worst;
}

bool run_failed(const TrackingLog& log) {
    if (log.lost_sample) return true;
    if (log.entries.empty()) return true;
    return max_interpolated_error(log) > kFailureThresholdMm;
}

LatencyCurve latency_sweep(const TrackingLog& log, double min_delay_s,
                           double max_delay_s, double step_s) {
    if (!(step_s > 0.0) || min_delay_s > 0.0 || max_delay_s < 0.0)
        throw ParameterError("latency sweep range must cover zero with step > 0");
    SortedLog s = sorted(log);
    LatencyCurve curve;
    int n = static_cast<int>(std::floor((max_delay_s - min_delay_s) / step_s + 0.5));
    curve.min_rmse_mm = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= n; ++i) {
        double d = min_delay_s + i * step_s;
        double r = rmse_at_delay(s, d);
        curve.delays_s.push_back(d);
        curve.rmse_mm.push_back(r);
        if (r < curve.min_rmse_mm) {
            curve.min_rmse_mm = r;
            curve.argmin_delay_s = d;
        }
    }
    return curve;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParameterError("cannot open config file: " + path.string());
    json j = json::parse(in);

    ExperimentConfig c;
    if (j.contains("motion")) c.motion = motion_from_name(j["motion"]);
    if (j.contains("velocities_mms"))
        c.velocities_mms = j["velocities_mms"].get<std::vector<double>>();
    if (j.contains("sample")) {
        std::string s = j["sample"];
        if (s == "plate") c.sample = SceneKind::plate;
        else if (s == "tissue") c.sample = SceneKind::tissue;
        else throw ParameterError("unknown sample kind: " + s);
    }
    c.repeats = j.value("repeats", c.repeats);
    c.duration_s = j.value("duration_s", c.duration_s);
    c.span_mm = j.value("span_mm", c.span_mm);
    c.log_rate_hz = j.value("log_rate_hz", c.log_rate_hz);
    c.seed = j.value("seed", c.seed);
    c.time_compression = j.value("time_compression", c.time_compression);
    c.with_latency_sweep = j.value("with_latency_sweep", c.with_latency_sweep);
    c.sweep_range_s = j.value("sweep_range_s", c.sweep_range_s);
    c.sweep_step_s = j.value("sweep_step_s", c.sweep_step_s);
    c.render_noise_sigma = j.value("render_noise_sigma", c.render_noise_sigma);
    c.robot_noise_sigma = j.value("robot_noise_sigma", c.robot_noise_sigma);
    c.full_recon_path = j.value("full_recon_path", c.full_recon_path);
    if (j.contains("dims")) {
        auto d = j["dims"].get<std::vector<int>>();
        if (d.size() != 3) throw ParameterError("dims must have 3 entries");
        c.dims = VolumeDims{d[0], d[1], d[2]};
    }
    if (j.contains("pitch_mm")) {
        auto p = j["pitch_mm"].get<std::vector<double>>();
        if (p.size() != 3) throw ParameterError("pitch_mm must have 3 entries");
        c.pitch = VoxelPitch{p[0], p[1], p[2]};
    }
    if (j.contains("galvo")) {
        const json& g = j["galvo"];
        c.galvo.step_mm = g.value("step_mm", c.galvo.step_mm);
        c.galvo.latency_s = g.value("latency_s", c.galvo.latency_s);
        c.galvo.max_range_mm = g.value("max_range_mm", c.galvo.max_range_mm);
    }
    if (j.contains("motor")) {
        const json& m = j["motor"];
        c.motor.step_mm = m.value("step_mm", c.motor.step_mm);
        c.motor.top_speed_mms = m.value("top_speed_mms", c.motor.top_speed_mms);
        c.motor.range_mm = m.value("range_mm", c.motor.range_mm);
        c.motor.latency_s = m.value("latency_s", c.motor.latency_s);
        c.motor.dir_change_delay_s =
            m.value("dir_change_delay_s", c.motor.dir_change_delay_s);
        c.motor.path_scale = m.value("path_scale", c.motor.path_scale);
        c.motor.home_mm = m.value("home_mm", c.motor.home_mm);
    }
    if (j.contains("distortion")) {
        const json& d = j["distortion"];
        c.distortion.enabled = d.value("enabled", c.distortion.enabled);
        c.distortion.axial_curvature =
            d.value("axial_curvature", c.distortion.axial_curvature);
        c.distortion.lateral_coupling =
            d.value("lateral_coupling", c.distortion.lateral_coupling);
    }
    if (j.contains("controller")) {
        const json& k = j["controller"];
        c.controller.gain = k.value("gain", c.controller.gain);
        c.controller.deadband_mm = k.value("deadband_mm", c.controller.deadband_mm);
        c.controller.volume_rate_hz =
            k.value("volume_rate_hz", c.controller.volume_rate_hz);
        c.controller.tracking_rate_hz =
            k.value("tracking_rate_hz", c.controller.tracking_rate_hz);
        c.controller.viz_rate_hz = k.value("viz_rate_hz", c.controller.viz_rate_hz);
        c.controller.confidence_floor =
            k.value("confidence_floor", c.controller.confidence_floor);
        c.controller.lost_after = k.value("lost_after", c.controller.lost_after);
    }
    if (j.contains("filter")) {
        const json& f = j["filter"];
        c.filter.sigma = f.value("sigma", c.filter.sigma);
        c.filter.eps = f.value("eps", c.filter.eps);
    }
    if (c.repeats < 1) throw ParameterError("repeats must be >= 1");
    if (!(c.duration_s > 0.0)) throw ParameterError("duration_s must be > 0");
    if (!(c.time_compression >= 1.0))
        throw ParameterError("time_compression must be >= 1");
    if (c.velocities_mms.empty())
        throw ParameterError("velocities_mms must be non-empty");
    c.controller.log_rate_hz = c.log_rate_hz;
    c.controller.validate();
    return c;
}

std::string ExperimentConfig::to_json() const { return config_to_json(*this).dump(2); }

SimWorld make_run_world(const ExperimentConfig& cfg, double velocity, int repeat) {
    std::uint64_t seed = run_seed(cfg, velocity, repeat);
    SimWorld w{.scene = make_scene(cfg.sample, seed, cfg.scene_params)};
    w.trajectory.kind = cfg.motion;
    w.trajectory.velocity = velocity;
    w.trajectory.span = cfg.span_mm;
    w.trajectory.duration = cfg.duration_s / cfg.time_compression;
    w.trajectory.noise_sigma = cfg.robot_noise_sigma;
    w.trajectory.noise_seed = splitmix64(seed + 1);
    w.galvo = cfg.galvo;
    w.motor = cfg.motor;
    w.distortion = cfg.distortion;
    w.dims = cfg.dims;
    w.pitch = cfg.pitch;
    w.filter = cfg.filter;
    w.render_noise_sigma = cfg.render_noise_sigma;
    w.render_seed = splitmix64(seed + 2);
    w.full_recon_path = cfg.full_recon_path;
    return w;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg,
                                const std::filesystem::path& outdir) {
    ControllerConfig ctrl = cfg.controller;
    ctrl.log_rate_hz = cfg.log_rate_hz;
    ctrl.validate();
    if (!outdir.empty()) std::filesystem::create_directories(outdir);

    ExperimentReport report;
    report.config = cfg;
    for (double v : cfg.velocities_mms) {
        VelocityAggregate agg;
        agg.velocity_mms = v;
        double sum = 0.0;
        int ok = 0;
        for (int r = 0; r < cfg.repeats; ++r) {
            SimWorld world = make_run_world(cfg, v, r);
            TrackingLog log = run_loop(world, ctrl, world.trajectory.duration);

            RunResult res;
            res.velocity_mms = v;
            res.repeat = r;
            res.lost_sample = log.lost_sample;
            try {
                res.rmse_mm = compute_rmse(log, 0.0);
                res.max_error_mm = max_interpolated_error(log);
                res.failed = log.lost_sample || res.max_error_mm > kFailureThresholdMm;
            } catch (const InsufficientDataError&) {
                res.rmse_mm = -1.0;
                res.max_error_mm = -1.0;
                res.failed = true;
            }
            if (cfg.with_latency_sweep && !res.failed)
                res.est_delay_s = latency_sweep(log, -cfg.sweep_range_s,
                                                cfg.sweep_range_s, cfg.sweep_step_s)
                                      .argmin_delay_s;
            if (!outdir.empty()) {
                char name[64];
                std::snprintf(name, sizeof(name), "run_v%g_r%d.csv", v, r);
                write_tracking_csv(outdir / name, log);
                res.csv_file = name;
            }
            if (!res.failed) {
                sum += res.rmse_mm;
                agg.max_rmse_mm = std::max(agg.max_rmse_mm, res.rmse_mm);
                ++ok;
            } else {
                ++agg.failures;
            }
            report.runs.push_back(std::move(res));
        }
        agg.mean_rmse_mm = ok > 0 ? sum / ok : -1.0;
        if (ok == 0) agg.max_rmse_mm = -1.0;
        report.per_velocity.push_back(agg);
    }
    return report;
}

std::string ExperimentReport::to_json() const {
    json j;
    j["config"] = config_to_json(config);
    json jr = json::array();
    for (const RunResult& r : runs) {
        json e;
        e["velocity_mms"] = r.velocity_mms;
        e["repeat"] = r.repeat;
        e["rmse_mm"] = r.rmse_mm;
        e["max_error_mm"] = r.max_error_mm;
        e["failed"] = r.failed;
        e["lost_sample"] = r.lost_sample;
        if (r.est_delay_s)
            e["est_delay_s"] = *r.est_delay_s;
        else
            e["est_delay_s"] = nullptr;
        e["csv_file"] = r.csv_file;
        jr.push_back(std::move(e));
    }
    j["runs"] = std::move(jr);
    json ja = json::array();
    for (const VelocityAggregate& a : per_velocity) {
        ja.push_back({{"velocity_mms", a.velocity_mms},
                      {"mean_rmse_mm", a.mean_rmse_mm},
                      {"max_rmse_mm", a.max_rmse_mm},
                      {"failures", a.failures}});
    }
    j["per_velocity"] = std::move(ja);
    return j.dump(2);
}

BenchmarkResult benchmark_throughput(const BenchmarkConfig& cfg) {
    if (cfg.workers < 1 || !(cfg.seconds > 0.0))
        throw ParameterError("benchmark needs workers >= 1 and seconds > 0");
    Scene scene = make_scene(SceneKind::plate, cfg.seed);
    VoxelPitch pitch{2.5 / cfg.dims.nx, 2.5 / cfg.dims.ny, 3.5 / cfg.dims.nz};
    FovPose fov{};
    Volume tmpl = render_volume(scene, Vec3{0, 0, 0}, fov, cfg.dims, pitch,
                                RenderNoise{0.05, cfg.seed, 0});
    Volume live = render_volume(scene, Vec3{0.3, -0.2, 0.1}, fov, cfg.dims, pitch,
                                RenderNoise{0.05, cfg.seed, 1});

    using clock = std::chrono::steady_clock;
    std::vector<std::vector<double>> durations(cfg.workers);
    std::vector<std::size_t> counts(cfg.workers, 0);
    std::vector<double> spans(cfg.workers, 0.0);
    auto worker = [&](int w) {
        PhaseCorrelator pc(cfg.dims);
        pc.set_template(tmpl);
        for (int i = 0; i < cfg.warmup; ++i) (void)pc.correlate(live);
        // measurement window excludes planning and warmup
        auto t0 = clock::now();
        auto deadline = t0 + std::chrono::duration<double>(cfg.seconds);
        while (clock::now() < deadline) {
            auto a = clock::now();
            MatchResult m = pc.correlate(live);
            auto b = clock::now();
            if (m.degenerate) throw ContractError("degenerate benchmark volume");
            durations[w].push_back(std::chrono::duration<double>(b - a).count());
            ++counts[w];
        }
        spans[w] = std::chrono::duration<double>(clock::now() - t0).count();
    };

    if (cfg.workers == 1) {
        worker(0);
    } else {
        std::vector<std::thread> threads;
        for (int w = 0; w < cfg.workers; ++w) threads.emplace_back(worker, w);
        for (auto& t : threads) t.join();
    }
    double wall = *std::max_element(spans.begin(), spans.end());

    BenchmarkResult res;
    res.target_vps = cfg.target_vps;
    std::vector<double> all;
    for (int w = 0; w < cfg.workers; ++w) {
        res.volumes += counts[w];
        all.insert(all.end(), durations[w].begin(), durations[w].end());
    }
    if (all.empty()) throw ContractError("benchmark produced no samples");
    res.mean_vps = static_cast<double>(res.volumes) / wall;
    // p5 of instantaneous rates = aggregate rate at the p95 per-volume duration
    std::sort(all.begin(), all.end());
    double p95 = all[std::min(all.size() - 1,
                              static_cast<std::size_t>(0.95 * all.size()))];
    res.p5_vps = cfg.workers / p95;

    if (cfg.include_recon) {
        SweepModel sweep = SweepModel::make_default(cfg.dims.nz, 3.5);
        ReconConfig rc;
        rc.nz = cfg.dims.nz;
        std::vector<RawAScan> raw(static_cast<std::size_t>(cfg.dims.nx) * cfg.dims.ny);
        std::mt19937_64 rng(cfg.seed);
        std::uniform_real_distribution<double> depth(0.5, 3.0);
        for (auto& a : raw)
            a = synthesize_fringes({{depth(rng), 1.0}}, sweep, 0.01, rng());
        auto t0 = clock::now();
        int reps = 0;
        while (std::chrono::duration<double>(clock::now() - t0).count() < 1.0) {
            (void)reconstruct_volume(raw, cfg.dims, pitch, sweep, rc, cfg.workers);
            ++reps;
        }
        double dt = std::chrono::duration<double>(clock::now() - t0).count();
        res.recon_vps = reps / dt;
    }
    return res;
}

std::string BenchmarkResult::to_json() const {
    json j;
    j["mean_vps"] = mean_vps;
    j["p5_vps"] = p5_vps;
    j["target_vps"] = target_vps;
    j["volumes"] = volumes;
    j["recon_vps"] = recon_vps;
    j["meets_target"] = mean_vps >= target_vps;
    return j.dump(2);
}

} // namespace octrack
