#include "octrack/control.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace octrack {

void ControllerConfig::validate() const {
    if (gain <= 0.0 || gain > 1.0)
        throw ParameterError("ControllerConfig: gain outside (0, 1]");
    if (deadband_mm < 0.0) throw ParameterError("ControllerConfig: negative deadband");
    if (volume_rate_hz < 1 || tracking_rate_hz < 0 || viz_rate_hz < 0)
        throw ParameterError("ControllerConfig: invalid rates");
    if (tracking_rate_hz + viz_rate_hz != volume_rate_hz)
        throw ParameterError("ControllerConfig: tracking + viz rates must sum to volume rate");
    if (log_rate_hz <= 0.0 || log_rate_hz > volume_rate_hz)
        throw ParameterError("ControllerConfig: log rate outside (0, volume rate]");
}

Correction compute_correction(const VoxelShift& shift, const VoxelPitch& pitch,
                              const ControllerConfig& cfg, const GalvoParams& galvo,
                              const MotorParams& motor) {
    const MetricDisplacement e = voxel_to_metric(shift, pitch);
    Correction c;
    c.galvo_dx_steps = static_cast<std::int32_t>(std::lround(cfg.gain_x() * e.x / galvo.step_mm));
    c.galvo_dy_steps = static_cast<std::int32_t>(std::lround(cfg.gain_y() * e.y / galvo.step_mm));
    const double dz_fov = cfg.gain_z() * e.z;
    if (std::fabs(dz_fov) >= cfg.deadband_mm)
        c.motor_dsteps = std::llround(dz_fov / (motor.step_mm * motor.path_scale));
    return c;
}

TrackerSim::TrackerSim(const SimWorld& world, const ControllerConfig& cfg)
    : world_(world),
      cfg_(cfg),
      gx_(world.galvo),
      gy_(world.galvo),
      motor_(world.motor),
      correlator_(world.dims, world.filter) {
    cfg_.validate();
    if (!world.dims.valid() || !world.pitch.valid())
        throw ContractError("TrackerSim: invalid dims/pitch");
}

Vec3 TrackerSim::fov_center() const {
    return fov_pose(gx_, gy_, motor_, world_.distortion).center;
}

Vec3 TrackerSim::assumed_center() const {
    return assumed_fov_pose(gx_, gy_, motor_, world_.distortion).center;
}

Volume TrackerSim::acquire(const Vec3& sample_pos, std::uint64_t tick) const {
    const FovPose fov{fov_center()};
    if (!world_.full_recon_path) {
        return render_volume(world_.scene, sample_pos, fov, world_.dims, world_.pitch,
                             {world_.render_noise_sigma, world_.render_seed, tick});
    }

    // Full-fidelity path: one surface reflector per A-scan, swept-source
    // fringe synthesis, then the reconstruction pipeline. Plate scenes only;
    // a volumetric speckle field has no compact reflector description.
    if (world_.scene.kind() != SceneKind::plate)
        throw ParameterError("full recon path requires a plate scene");
    const auto& dims = world_.dims;
    const auto& pitch = world_.pitch;
    const Vec3 c = fov.center - sample_pos;
    const double hz = dims.nz * pitch.dz / 2.0;
    std::vector<RawAScan> raw(static_cast<std::size_t>(dims.nx) * dims.ny);
    bool any_content = false;
    for (int j = 0; j < dims.ny; ++j) {
        const double qy = c.y + (j - dims.ny / 2) * pitch.dy;
        for (int i = 0; i < dims.nx; ++i) {
            const double qx = c.x + (i - dims.nx / 2) * pitch.dx;
            std::vector<Reflector> refl;
            if (world_.scene.lateral_in_bounds(qx, qy)) {
                const double depth = world_.scene.height_at(qx, qy) - c.z + hz;
                if (depth >= 0.0 && depth < world_.sweep.max_depth()) {
                    refl.push_back({depth, world_.scene.surface_amplitude_at(qx, qy)});
                    any_content = true;
                }
            }
            const std::uint64_t stream =
                world_.render_seed * 0x9e3779b97f4a7c15ULL + tick * 1031ULL +
                static_cast<std::uint64_t>(j) * dims.nx + i;
            raw[static_cast<std::size_t>(j) * dims.nx + i] = synthesize_fringes(
                refl, world_.sweep, world_.render_noise_sigma, stream);
        }
    }
    if (!any_content)
        throw OutOfSceneError("full recon path: FOV does not intersect the scene");
    ReconConfig rc = world_.recon_cfg;
    rc.nz = dims.nz;
    return reconstruct_volume(raw, dims, pitch, world_.sweep, rc);
}

void TrackerSim::capture_template(const Vec3& sample_pos, std::uint64_t tick) {
    const Vec3 c0 = assumed_center();
    est_offset_ = sample_pos - c0;
    correlator_.set_template(acquire(sample_pos, tick));
}

TrackerSim::StepResult TrackerSim::step(double t, const Vec3& sample_pos, bool track,
                                        std::uint64_t tick) {
    gx_.advance(t);
    gy_.advance(t);
    motor_.advance(t);

    const Volume live = acquire(sample_pos, tick);
    StepResult r;
    if (!track) {
        r.est = assumed_center() + est_offset_;
        return r;
    }

    const MatchResult m = correlator_.correlate(live);
    const MetricDisplacement u = voxel_to_metric(m.shift, world_.pitch);
    // The devices are open loop: the software has no encoder readback, so the
    // estimate is formed from the commanded (assumed) pose. While commands are
    // in flight or the motor is slewing this differs from the physical pose,
    // which is what makes the stepper's delay visible in the tracking log.
    r.est = assumed_center() + Vec3{u.x, u.y, u.z} + est_offset_;
    r.confidence = m.confidence;
    r.degenerate = m.degenerate;

    if (m.degenerate || m.confidence < cfg_.confidence_floor)
        ++consec_low_;
    else
        consec_low_ = 0;

    r.cmd = compute_correction(m.shift, world_.pitch, cfg_, world_.galvo, world_.motor);
    // never re-correct an error an in-flight command is already addressing:
    // with actuator latency above the tick period the same error would be
    // commanded several times over, destabilizing the loop
    if (gx_.busy()) r.cmd.galvo_dx_steps = 0;
    if (gy_.busy()) r.cmd.galvo_dy_steps = 0;
    if (motor_.busy()) r.cmd.motor_dsteps = 0;
    gx_.command(r.cmd.galvo_dx_steps, t);
    gy_.command(r.cmd.galvo_dy_steps, t);
    motor_.command(r.cmd.motor_dsteps, t);
    return r;
}

TrackingLog run_loop(const SimWorld& world, const ControllerConfig& cfg,
                     double duration_s) {
    if (duration_s <= 0.0) throw ContractError("run_loop: duration must be > 0");
    cfg.validate();

    TrackerSim sim(world, cfg);

    const int rate = cfg.volume_rate_hz;
    const double dt = 1.0 / rate;
    const std::int64_t ticks = std::llround(duration_s * rate);

    // Per-second tick schedules: viz ticks and log ticks, both evenly spaced.
    std::vector<char> is_viz(rate, 0), is_log(rate, 0);
    for (int j = 0; j < cfg.viz_rate_hz; ++j)
        is_viz[static_cast<std::int64_t>(j) * rate / cfg.viz_rate_hz] = 1;
    const int logs_per_s = static_cast<int>(std::lround(cfg.log_rate_hz));
    for (int j = 0; j < logs_per_s; ++j)
        is_log[static_cast<std::int64_t>(j) * rate / logs_per_s] = 1;

    TrackingLog log;
    log.entries.reserve(static_cast<std::size_t>(duration_s * logs_per_s) + 1);

    sim.capture_template(sample_position(world.trajectory, 0.0), 0);

    Vec3 last_est = sim.fov_center();
    double last_conf = 1.0;
    for (std::int64_t i = 0; i < ticks; ++i) {
        const double t = i * dt;
        const Vec3 gt = sample_position(world.trajectory, t);
        const int phase = static_cast<int>(i % rate);
        const bool track = !is_viz[phase];
        TrackerSim::StepResult r;
        try {
            r = sim.step(t, gt, track, static_cast<std::uint64_t>(i));
        } catch (const OutOfSceneError&) {
            log.lost_sample = true;
            break;
        }
        if (track) {
            ++log.tracking_updates;
            last_est = r.est;
            last_conf = r.confidence;
            if (r.cmd.motor_dsteps != 0) ++log.motor_commands_issued;
        } else {
            ++log.viz_ticks;
        }
        if (is_log[phase])
            log.entries.push_back({t, gt, last_est, last_conf, sim.galvo_x_steps(),
                                   sim.galvo_y_steps(), sim.motor_steps()});
    }
    log.low_confidence = sim.low_confidence();
    return log;
}

void write_tracking_csv(const std::filesystem::path& path, const TrackingLog& log) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_tracking_csv: cannot open " + path.string());
    f << "t_s,gt_x_mm,gt_y_mm,gt_z_mm,est_x_mm,est_y_mm,est_z_mm,confidence,"
         "galvo_x_steps,galvo_y_steps,motor_steps\n";
    char buf[512];
    for (const auto& e : log.entries) {
        // %.17g keeps doubles exact across the round trip
        std::snprintf(buf, sizeof(buf),
                      "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d,%lld\n", e.t_s,
                      e.gt.x, e.gt.y, e.gt.z, e.est.x, e.est.y, e.est.z, e.confidence,
                      e.galvo_x_steps, e.galvo_y_steps,
                      static_cast<long long>(e.motor_steps));
        f << buf;
    }
    if (!f) throw std::runtime_error("write_tracking_csv: write failed");
}

TrackingLog read_tracking_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_tracking_csv: cannot open " + path.string());
    std::string line;
    if (!std::getline(f, line) || line.rfind("t_s,", 0) != 0)
        throw std::runtime_error("read_tracking_csv: missing header row");
    TrackingLog log;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        LogEntry e;
        long long motor = 0;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%d,%d,%lld",
                        &e.t_s, &e.gt.x, &e.gt.y, &e.gt.z, &e.est.x, &e.est.y,
                        &e.est.z, &e.confidence, &e.galvo_x_steps, &e.galvo_y_steps,
                        &motor) != 11)
            throw std::runtime_error("read_tracking_csv: malformed row");
        e.motor_steps = motor;
        log.entries.push_back(e);
    }
    return log;
}

} // namespace octrack
