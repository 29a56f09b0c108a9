#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "octrack/calibration.hpp"
#include "octrack/control.hpp"
#include "octrack/harness.hpp"
#include "octrack/phantom.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace octrack;

namespace {

ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed) {
    ExperimentConfig cfg =
        path.empty() ? ExperimentConfig{} : ExperimentConfig::from_json_file(path);
    if (seed) cfg.seed = *seed;
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

int run_simulate(const std::string& config, std::optional<std::uint64_t> seed,
                 std::optional<double> velocity, const std::string& out_csv,
                 const std::string& scene_csv) {
    ExperimentConfig cfg = load_config(config, seed);
    double v = velocity.value_or(cfg.velocities_mms.front());
    SimWorld world = make_run_world(cfg, v, 0);
    if (!scene_csv.empty()) world.scene.export_midplane_csv(scene_csv);
    ControllerConfig ctrl = cfg.controller;
    ctrl.log_rate_hz = cfg.log_rate_hz;
    TrackingLog log = run_loop(world, ctrl, world.trajectory.duration);
    write_tracking_csv(out_csv, log);
    double rmse = compute_rmse(log, 0.0);
    std::printf("wrote %s: %zu entries, rmse %.4f mm, max %.4f mm%s\n",
                out_csv.c_str(), log.entries.size(), rmse,
                max_interpolated_error(log), log.lost_sample ? ", SAMPLE LOST" : "");
    return 0;
}

int run_experiment_cmd(const std::string& config, std::optional<std::uint64_t> seed,
                       const std::string& outdir, bool check) {
    ExperimentConfig cfg = load_config(config, seed);
    ExperimentReport report = run_experiment(cfg, outdir);
    std::string js = report.to_json();
    if (!outdir.empty()) write_text(fs::path(outdir) / "report.json", js);
    std::cout << js << "\n";
    if (check) {
        for (const RunResult& r : report.runs)
            if (r.failed) {
                std::fprintf(stderr, "check failed: run v=%g r=%d failed\n",
                             r.velocity_mms, r.repeat);
                return 1;
            }
    }
    return 0;
}

int run_calibrate(const std::string& config, std::optional<std::uint64_t> seed,
                  const std::string& model_json, const std::string& samples_csv,
                  bool check) {
    ExperimentConfig cfg = load_config(config, seed);
    cfg.motion = MotionKind::static_hold;
    SimWorld world = make_run_world(cfg, 0.0, 0);
    std::vector<CalibrationSample> samples =
        collect_grid(world, cfg.controller, GridSpec{});
    CalibrationModel model = fit_calibration(samples);
    Eigen::Matrix3d A;
    Eigen::Vector3d b;
    fit_affine(samples, A, b);
    double rmse = calibration_rmse(model, samples);
    double rmse_affine = affine_rmse(A, b, samples);
    if (!model_json.empty()) model.save_json(model_json);
    if (!samples_csv.empty()) write_samples_csv(samples_csv, samples);
    std::printf("samples %zu, affine rmse %.4f mm, affine+quadratic rmse %.4f mm\n",
                samples.size(), rmse_affine, rmse);
    if (check && !(rmse <= 0.15 && rmse_affine >= 2.0 * rmse)) {
        std::fprintf(stderr, "check failed: rmse=%.4f affine=%.4f\n", rmse, rmse_affine);
        return 1;
    }
    return 0;
}

int run_latency(const std::string& log_csv, double range_s, double step_s,
                const std::string& out_json) {
    TrackingLog log = read_tracking_csv(log_csv);
    LatencyCurve curve = latency_sweep(log, -range_s, range_s, step_s);
    json j;
    j["delays_s"] = curve.delays_s;
    j["rmse_mm"] = curve.rmse_mm;
    j["argmin_delay_s"] = curve.argmin_delay_s;
    j["min_rmse_mm"] = curve.min_rmse_mm;
    std::string js = j.dump(2);
    if (!out_json.empty()) write_text(out_json, js);
    std::cout << js << "\n";
    return 0;
}

int run_bench(double seconds, int workers, std::vector<int> dims, bool recon,
              std::uint64_t seed, bool check) {
    BenchmarkConfig cfg;
    cfg.seconds = seconds;
    cfg.workers = workers;
    cfg.include_recon = recon;
    cfg.seed = seed;
    if (dims.size() == 3) cfg.dims = VolumeDims{dims[0], dims[1], dims[2]};
    BenchmarkResult res = benchmark_throughput(cfg);
    std::cout << res.to_json() << "\n";
    std::printf("measured %.1f vol/s (p5 %.1f) vs target %.0f vol/s\n", res.mean_vps,
                res.p5_vps, res.target_vps);
    if (check && res.mean_vps < 100.0) {
        std::fprintf(stderr, "check failed: %.1f vol/s < 100\n", res.mean_vps);
        return 1;
    }
    return 0;
}

int run_describe() {
    ExperimentConfig cfg;
    std::cout << cfg.to_json() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"octrack: simulated OCT-based 3D motion tracking"};
    app.require_subcommand(1);

    std::string config, out_csv = "log.csv", scene_csv, outdir = "experiment_out";
    std::string model_json = "calibration.json", samples_csv, log_csv, out_json;
    std::optional<std::uint64_t> seed;
    std::optional<double> velocity;
    bool check = false, recon = false;
    double range_s = 0.05, step_s = 0.001, seconds = 5.0;
    int workers = 1;
    std::vector<int> dims;

    auto* sim = app.add_subcommand("simulate", "one closed-loop run -> CSV log");
    sim->add_option("--config", config, "experiment config JSON");
    sim->add_option("--seed", seed, "seed override");
    sim->add_option("--velocity", velocity, "peak speed, mm/s");
    sim->add_option("--out", out_csv, "output tracking CSV");
    sim->add_option("--scene-csv", scene_csv, "also export the scene mid-plane CSV");

    auto* exp = app.add_subcommand("experiment", "velocity sweep -> report JSON + CSVs");
    exp->add_option("--config", config, "experiment config JSON");
    exp->add_option("--seed", seed, "seed override");
    exp->add_option("--out", outdir, "output directory");
    exp->add_flag("--check", check, "nonzero exit if any run failed");

    auto* cal = app.add_subcommand("calibrate", "grid collection + model JSON");
    cal->add_option("--config", config, "experiment config JSON (device params)");
    cal->add_option("--seed", seed, "seed override");
    cal->add_option("--model", model_json, "output model JSON");
    cal->add_option("--samples-csv", samples_csv, "also export samples CSV");
    cal->add_flag("--check", check, "nonzero exit if rmse > 0.15 mm or < 2x affine");

    auto* lat = app.add_subcommand("latency", "RMSE-vs-delay sweep on a log CSV");
    lat->add_option("--log", log_csv, "tracking CSV")->required();
    lat->add_option("--range", range_s, "sweep half-range, s");
    lat->add_option("--step", step_s, "sweep step, s");
    lat->add_option("--out", out_json, "output curve JSON");

    auto* ben = app.add_subcommand("bench", "phase-correlation throughput");
    ben->add_option("--seconds", seconds, "measurement window");
    ben->add_option("--workers", workers, "parallel correlators");
    ben->add_option("--dims", dims, "volume dims nx ny nz")->expected(3);
    ben->add_flag("--recon", recon, "also benchmark reconstruction");
    ben->add_option("--seed", seed, "seed override");
    ben->add_flag("--check", check, "nonzero exit if below 100 vol/s");

    app.add_subcommand("describe-device", "print all device/config defaults");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return run_simulate(config, seed, velocity, out_csv, scene_csv);
        if (exp->parsed()) return run_experiment_cmd(config, seed, outdir, check);
        if (cal->parsed())
            return run_calibrate(config, seed, model_json, samples_csv, check);
        if (lat->parsed()) return run_latency(log_csv, range_s, step_s, out_json);
        if (ben->parsed())
            return run_bench(seconds, workers, dims, recon, seed.value_or(1), check);
        return run_describe();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
