#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "octrack/calibration.hpp"
#include "octrack/control.hpp"
#include "octrack/core.hpp"

namespace octrack {

class InsufficientDataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Interpolated tracking error threshold above which a run counts as failed.
inline constexpr double kFailureThresholdMm = 2.0;

/// RMSE of 3D tracking errors: the ground-truth series is linearly
/// interpolated at (tracker timestamp + delay); entries without ground-truth
/// overlap are dropped. Rows are sorted by timestamp first.
double compute_rmse(const TrackingLog& log, double delay_s);

/// Largest interpolated 3D error at delay 0 (the failure-rule statistic).
double max_interpolated_error(const TrackingLog& log);

/// A run fails when it lost the sample or any interpolated error exceeds 2 mm.
bool run_failed(const TrackingLog& log);

struct LatencyCurve {
    std::vector<double> delays_s;
    std::vector<double> rmse_mm;
    double argmin_delay_s = 0.0;
    double min_rmse_mm = 0.0;
};
/// RMSE as a function of assumed delay between the two position sources.
/// The range must cover delay 0.
LatencyCurve latency_sweep(const TrackingLog& log, double min_delay_s,
                           double max_delay_s, double step_s);

struct ExperimentConfig {
    MotionKind motion = MotionKind::diagonal_3d;
    std::vector<double> velocities_mms = {10.0, 25.0};
    SceneKind sample = SceneKind::plate;
    int repeats = 6;
    double duration_s = 60.0;
    double span_mm = 30.0;
    double log_rate_hz = 83.0;
    std::uint64_t seed = 1;
    double time_compression = 1.0;  // divides the simulated duration
    bool with_latency_sweep = false;
    double sweep_range_s = 0.05;
    double sweep_step_s = 0.001;

    // device parameters (spec defaults)
    GalvoParams galvo;
    MotorParams motor;
    DistortionModel distortion;
    ControllerConfig controller;
    FilterParams filter;
    SceneParams scene_params;
    VolumeDims dims;
    VoxelPitch pitch;
    double render_noise_sigma = 0.05;
    double robot_noise_sigma = 0.01;
    bool full_recon_path = false;

    static ExperimentConfig from_json_file(const std::filesystem::path& path);
    std::string to_json() const;
};

struct RunResult {
    double velocity_mms = 0.0;
    int repeat = 0;
    double rmse_mm = 0.0;
    double max_error_mm = 0.0;
    bool failed = false;
    bool lost_sample = false;
    std::optional<double> est_delay_s;
    std::string csv_file;
};

struct VelocityAggregate {
    double velocity_mms = 0.0;
    double mean_rmse_mm = 0.0;
    double max_rmse_mm = 0.0;
    int failures = 0;
};

struct ExperimentReport {
    ExperimentConfig config;
    std::vector<RunResult> runs;
    std::vector<VelocityAggregate> per_velocity;

    std::string to_json() const;  // deterministic given identical inputs
};

/// Builds the simulation world for one (velocity, repeat) run. Each repeat
/// uses a fresh scene seed and template region.
SimWorld make_run_world(const ExperimentConfig& cfg, double velocity, int repeat);

/// Velocity sweep with `repeats` fresh templates per velocity, per the
/// 60 s / 6 repeat evaluation protocol; writes one CSV per run into outdir
/// (if non-empty) plus the aggregate report.
ExperimentReport run_experiment(const ExperimentConfig& cfg,
                                const std::filesystem::path& outdir);

struct BenchmarkConfig {
    VolumeDims dims;
    double seconds = 5.0;
    int warmup = 20;
    int workers = 1;
    double target_vps = 831.0;
    bool include_recon = false;
    std::uint64_t seed = 1;
};

struct BenchmarkResult {
    double mean_vps = 0.0;
    double p5_vps = 0.0;  // 5th percentile of instantaneous per-volume rates
    double target_vps = 831.0;
    std::size_t volumes = 0;
    double recon_vps = 0.0;  // 0 unless include_recon
    std::string to_json() const;
};

/// Sustained phase-correlation throughput on volumes of the configured size.
BenchmarkResult benchmark_throughput(const BenchmarkConfig& cfg);

} // namespace octrack
