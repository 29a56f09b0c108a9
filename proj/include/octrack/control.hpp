#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "octrack/actuation.hpp"
#include "octrack/core.hpp"
#include "octrack/phantom.hpp"
#include "octrack/recon.hpp"
#include "octrack/registration.hpp"

namespace octrack {

struct ControllerConfig {
    double gain = 0.7;
    // negative = use the shared gain for that axis
    Vec3 per_axis_gain{-1.0, -1.0, -1.0};
    double deadband_mm = 0.075;  // minimum commanded motor travel
    int volume_rate_hz = 831;
    int tracking_rate_hz = 821;
    int viz_rate_hz = 10;
    double log_rate_hz = 83.0;
    double confidence_floor = 0.1;
    int lost_after = 10;  // consecutive low-confidence volumes

    double gain_x() const { return per_axis_gain.x >= 0.0 ? per_axis_gain.x : gain; }
    double gain_y() const { return per_axis_gain.y >= 0.0 ? per_axis_gain.y : gain; }
    double gain_z() const { return per_axis_gain.z >= 0.0 ? per_axis_gain.z : gain; }
    void validate() const;
};

struct Correction {
    std::int32_t galvo_dx_steps = 0;
    std::int32_t galvo_dy_steps = 0;
    std::int64_t motor_dsteps = 0;
};

/// Voxel shift -> actuator step deltas with proportional gain; the motor
/// command is zeroed when the commanded travel |gain * e_z| is below the
/// deadband.
Correction compute_correction(const VoxelShift& shift, const VoxelPitch& pitch,
                              const ControllerConfig& cfg, const GalvoParams& galvo,
                              const MotorParams& motor);

/// Everything a closed-loop run needs: the virtual sample, the device
/// parameters and the imaging path.
struct SimWorld {
    Scene scene;
    MotionTrajectory trajectory;
    GalvoParams galvo;
    MotorParams motor;
    DistortionModel distortion;
    VolumeDims dims;
    VoxelPitch pitch;
    FilterParams filter;
    double render_noise_sigma = 0.05;
    std::uint64_t render_seed = 0;
    // fast-path renders intensity volumes directly; the full path synthesizes
    // swept-source fringes per A-scan and reconstructs them (plate scenes)
    bool full_recon_path = false;
    SweepModel sweep = SweepModel::make_default();
    ReconConfig recon_cfg;
};

struct LogEntry {
    double t_s = 0.0;
    Vec3 gt;   // ground-truth sample position, world mm
    Vec3 est;  // tracker-estimated sample position, world mm
    double confidence = 0.0;
    std::int32_t galvo_x_steps = 0;
    std::int32_t galvo_y_steps = 0;
    std::int64_t motor_steps = 0;
};

struct TrackingLog {
    std::vector<LogEntry> entries;
    bool lost_sample = false;    // a render left the scene entirely
    bool low_confidence = false; // diagnostic lost flag from the controller
    std::int64_t motor_commands_issued = 0;
    std::int64_t tracking_updates = 0;
    std::int64_t viz_ticks = 0;
};

/// Per-tick tracker simulation shared by the tracking loop and the
/// calibration grid collection. Owns the actuator states and the
/// phase-correlation engine; the caller owns the clock.
class TrackerSim {
public:
    TrackerSim(const SimWorld& world, const ControllerConfig& cfg);

    /// Renders at the current FOV and freezes the result as the template.
    void capture_template(const Vec3& sample_pos, std::uint64_t tick);

    struct StepResult {
        Vec3 est;
        double confidence = 0.0;
        bool degenerate = false;
        Correction cmd;
    };
    /// Advances actuators to t, renders the live volume and, if track is
    /// set, registers it against the template and issues corrections.
    /// Throws OutOfSceneError if the FOV lost the sample entirely.
    StepResult step(double t, const Vec3& sample_pos, bool track, std::uint64_t tick);

    Vec3 fov_center() const;
    /// FOV center implied by commanded step counts (the software's open-loop
    /// view); position estimates are formed from this, not the physical pose.
    Vec3 assumed_center() const;
    std::int32_t galvo_x_steps() const { return gx_.position(); }
    std::int32_t galvo_y_steps() const { return gy_.position(); }
    std::int64_t motor_steps() const { return motor_.position(); }
    bool low_confidence() const { return consec_low_ >= cfg_.lost_after; }
    const ControllerConfig& config() const { return cfg_; }

private:
    Volume acquire(const Vec3& sample_pos, std::uint64_t tick) const;

    const SimWorld& world_;
    ControllerConfig cfg_;
    GalvoAxis gx_, gy_;
    Motor motor_;
    PhaseCorrelator correlator_;
    Vec3 est_offset_;  // template capture alignment, s0 - c0
    int consec_low_ = 0;
};

/// Runs the closed loop for `duration` simulated seconds at the configured
/// volume rate. Every tick renders a volume; viz ticks skip the tracking
/// update; entries are logged at log_rate_hz. Deterministic given seeds.
TrackingLog run_loop(const SimWorld& world, const ControllerConfig& cfg,
                     double duration_s);

/// TrackingLog CSV round trip (header row mandatory).
void write_tracking_csv(const std::filesystem::path& path, const TrackingLog& log);
TrackingLog read_tracking_csv(const std::filesystem::path& path);

} // namespace octrack
