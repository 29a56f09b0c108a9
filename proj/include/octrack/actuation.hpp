#pragma once

#include <cstdint>
#include <deque>

#include "octrack/core.hpp"

namespace octrack {

/// One lateral galvo axis. Modeled as pure command latency: a commanded
/// delta takes effect as a position jump after latency_s.
struct GalvoParams {
    double step_mm = 0.0025;    // lateral mm per step at nominal working distance
    double latency_s = 0.0012;  // command latency
    double max_range_mm = 25.4; // lens radius limit
};

class GalvoAxis {
public:
    explicit GalvoAxis(const GalvoParams& p = {}) : params_(p) {}

    void command(std::int32_t delta_steps, double now_s);
    void advance(double to_s);

    std::int32_t position() const { return position_; }
    double position_mm() const { return position_ * params_.step_mm; }
    /// Step count the control software believes it has reached: the executed
    /// position plus every in-flight delta. The device is open loop (no
    /// encoder readback), so pose estimates must be formed from this view.
    std::int32_t commanded() const {
        std::int32_t c = position_;
        for (const auto& [t, d] : pending_) c += d;
        return c;
    }
    double commanded_mm() const { return commanded() * params_.step_mm; }
    /// True while a command is still in flight (latency not elapsed).
    bool busy() const { return !pending_.empty(); }
    bool saturated() const { return saturated_; }
    const GalvoParams& params() const { return params_; }

private:
    GalvoParams params_;
    std::int32_t position_ = 0;
    bool saturated_ = false;
    std::deque<std::pair<double, std::int32_t>> pending_; // (apply time, delta)
};

/// Motorized reference arm. Commands mature after latency_s, then the motor
/// slews toward the target at top_speed_mms; a direction reversal inserts
/// dir_change_delay_s before motion resumes. Positions are integer steps.
struct MotorParams {
    double step_mm = 0.0125;
    double top_speed_mms = 190.0;
    double range_mm = 420.0;
    double latency_s = 0.003;
    double dir_change_delay_s = 0.005;
    double path_scale = 1.0;    // FOV axial mm per motor mm (1.0 or 0.5)
    double home_mm = 210.0;     // motor position mapped to FOV z = 0
};

class Motor {
public:
    explicit Motor(const MotorParams& p = {})
        : params_(p),
          position_(static_cast<std::int64_t>(p.home_mm / p.step_mm)),
          target_(position_) {}

    void command(std::int64_t delta_steps, double now_s);
    void advance(double to_s);

    std::int64_t position() const { return position_; }
    double position_mm() const { return position_ * params_.step_mm; }
    /// Axial FOV displacement from the home position, world mm.
    double fov_z_mm() const {
        return (position_mm() - params_.home_mm) * params_.path_scale;
    }
    /// Step count the control software believes it has commanded (target plus
    /// in-flight deltas); the stepper is open loop, so this is all it knows.
    std::int64_t commanded() const {
        std::int64_t c = target_;
        for (const auto& [t, d] : pending_) c += d;
        return c;
    }
    /// Axial FOV displacement the software assumes, from commanded steps.
    double commanded_fov_z_mm() const {
        return (commanded() * params_.step_mm - params_.home_mm) * params_.path_scale;
    }
    bool saturated() const { return saturated_; }
    bool moving() const { return position_ != target_; }
    /// True while a command is pending or the motor has not reached the target.
    bool busy() const { return !pending_.empty() || position_ != target_; }
    const MotorParams& params() const { return params_; }

private:
    void slew(double from_s, double to_s);

    MotorParams params_;
    std::int64_t position_ = 0;
    std::int64_t target_ = 0;
    bool saturated_ = false;
    int last_dir_ = 0;          // -1, 0, +1
    double resume_s_ = 0.0;     // motion blocked until then (reversal delay)
    double carry_steps_ = 0.0;  // fractional slew progress
    double clock_s_ = 0.0;
    std::deque<std::pair<double, std::int64_t>> pending_;
};

/// Slight spherical path of the galvo-steered FOV: a quadratic axial sag
/// plus small lateral cross-coupling terms. Vanishes at the axis.
struct DistortionModel {
    bool enabled = true;
    double axial_curvature = 1.0 / 400.0;  // mm axial per mm^2 lateral (~1 mm at 20 mm)
    double lateral_coupling = 2.5e-4;       // 1/mm, radial quadratic pull

    Vec3 offset(double lat_x_mm, double lat_y_mm) const;
};

/// FOV center in world mm for the given actuator states.
FovPose fov_pose(const GalvoAxis& gx, const GalvoAxis& gy, const Motor& motor,
                 const DistortionModel& distortion);

/// FOV center the control software assumes, from commanded step counts.
/// Differs from fov_pose while commands are in flight or the motor is still
/// slewing; the tracker has no readback, so its position estimates carry
/// this open-loop discrepancy (largest for the stepper reference arm).
FovPose assumed_fov_pose(const GalvoAxis& gx, const GalvoAxis& gy, const Motor& motor,
                         const DistortionModel& distortion);

} // namespace octrack
