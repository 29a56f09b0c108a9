#include "octrack/actuation.hpp"

#include <algorithm>
#include <cmath>

namespace octrack {

namespace {

// Clamp a step position to +-range and report whether clamping occurred.
template <typename T>
T clamp_steps(T pos, double lo_mm, double hi_mm, double step_mm, bool& saturated) {
    const T lo = static_cast<T>(std::ceil(lo_mm / step_mm));
    const T hi = static_cast<T>(std::floor(hi_mm / step_mm));
    if (pos < lo) {
        saturated = true;
        return lo;
    }
    if (pos > hi) {
        saturated = true;
        return hi;
    }
    return pos;
}

} // namespace

void GalvoAxis::command(std::int32_t delta_steps, double now_s) {
    if (delta_steps != 0) pending_.emplace_back(now_s + params_.latency_s, delta_steps);
}

void GalvoAxis::advance(double to_s) {
    while (!pending_.empty() && pending_.front().first <= to_s) {
        position_ += pending_.front().second;
        pending_.pop_front();
        bool sat = false;
        position_ = clamp_steps(position_, -params_.max_range_mm,
                                params_.max_range_mm, params_.step_mm, sat);
        saturated_ = sat;
    }
}

void Motor::command(std::int64_t delta_steps, double now_s) {
    if (delta_steps != 0) pending_.emplace_back(now_s + params_.latency_s, delta_steps);
}

void Motor::slew(double from_s, double to_s) {
    if (to_s <= from_s || position_ == target_) return;
    double start = std::max(from_s, resume_s_);
    if (start >= to_s) return;

    const int dir = target_ > position_ ? 1 : -1;
    if (last_dir_ != 0 && dir != last_dir_) {
        // direction reversal: motion pauses for the direction-change delay
        resume_s_ = start + params_.dir_change_delay_s;
        carry_steps_ = 0.0;
        last_dir_ = dir;
        start = resume_s_;
        if (start >= to_s) return;
    }
    last_dir_ = dir;

    const double steps_per_s = params_.top_speed_mms / params_.step_mm;
    carry_steps_ += (to_s - start) * steps_per_s;
    const std::int64_t avail = static_cast<std::int64_t>(carry_steps_);
    const std::int64_t need = std::llabs(target_ - position_);
    const std::int64_t move = std::min<std::int64_t>(avail, need);
    position_ += dir * move;
    carry_steps_ = position_ == target_ ? 0.0 : carry_steps_ - move;
}

void Motor::advance(double to_s) {
    double now = clock_s_;
    while (!pending_.empty() && pending_.front().first <= to_s) {
        const auto [apply_s, delta] = pending_.front();
        pending_.pop_front();
        slew(now, apply_s);
        now = apply_s;
        target_ += delta;
        bool sat = false;
        target_ = clamp_steps(target_, 0.0, params_.range_mm, params_.step_mm, sat);
        saturated_ = sat;
    }
    slew(now, to_s);
    clock_s_ = to_s;
}

Vec3 DistortionModel::offset(double lat_x_mm, double lat_y_mm) const {
    if (!enabled) return {};
    const double r2 = lat_x_mm * lat_x_mm + lat_y_mm * lat_y_mm;
    // spherical sag pulls the FOV axially, and slightly inward laterally
    return {-lateral_coupling * lat_x_mm * lat_x_mm,
            -lateral_coupling * lat_y_mm * lat_y_mm,
            -axial_curvature * r2};
}

FovPose fov_pose(const GalvoAxis& gx, const GalvoAxis& gy, const Motor& motor,
                 const DistortionModel& distortion) {
    const double lx = gx.position_mm();
    const double ly = gy.position_mm();
    const Vec3 d = distortion.offset(lx, ly);
    return {{lx + d.x, ly + d.y, motor.fov_z_mm() + d.z}};
}

FovPose assumed_fov_pose(const GalvoAxis& gx, const GalvoAxis& gy, const Motor& motor,
                         const DistortionModel& distortion) {
    const double lx = gx.commanded_mm();
    const double ly = gy.commanded_mm();
    const Vec3 d = distortion.offset(lx, ly);
    return {{lx + d.x, ly + d.y, motor.commanded_fov_z_mm() + d.z}};
}

} // namespace octrack
