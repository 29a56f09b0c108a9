#include "octrack/calibration.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

namespace octrack {

namespace {

Eigen::Matrix<double, 10, 1> quad_basis(const Eigen::Vector3d& y) {
    Eigen::Matrix<double, 10, 1> phi;
    phi << 1.0, y.x(), y.y(), y.z(), y.x() * y.x(), y.y() * y.y(), y.z() * y.z(),
        y.x() * y.y(), y.x() * y.z(), y.y() * y.z();
    return phi;
}

std::vector<Vec3> serpentine_grid(int n, double extent) {
    const double half = extent / 2.0;
    const double spacing = extent / (n - 1);
    std::vector<Vec3> pts;
    pts.reserve(static_cast<std::size_t>(n) * n * n);
    for (int iz = 0; iz < n; ++iz) {
        const int zi = iz;
        for (int iy = 0; iy < n; ++iy) {
            const int yi = iz % 2 == 0 ? iy : n - 1 - iy;
            for (int ix = 0; ix < n; ++ix) {
                const int xi = (iy + iz) % 2 == 0 ? ix : n - 1 - ix;
                pts.push_back({-half + xi * spacing, -half + yi * spacing,
                               -half + zi * spacing});
            }
        }
    }
    return pts;
}

} // namespace

std::vector<CalibrationSample> collect_grid(const SimWorld& world,
                                            const ControllerConfig& cfg,
                                            const GridSpec& grid) {
    if (grid.points_per_axis < 2 || grid.extent_mm <= 0.0)
        throw ParameterError("collect_grid: invalid grid spec");
    if (grid.samples_per_point < 1 || grid.sample_spacing_s <= 0.0 ||
        grid.robot_speed_mms <= 0.0 || grid.loop_rate_hz < 1)
        throw ParameterError("collect_grid: invalid schedule");

    ControllerConfig loop_cfg = cfg;
    loop_cfg.volume_rate_hz = grid.loop_rate_hz;
    loop_cfg.viz_rate_hz = grid.loop_viz_hz;
    loop_cfg.tracking_rate_hz = grid.loop_rate_hz - grid.loop_viz_hz;
    loop_cfg.log_rate_hz = std::min(loop_cfg.log_rate_hz,
                                    static_cast<double>(grid.loop_rate_hz));
    loop_cfg.validate();

    // Robot schedule: piecewise-linear travel between serpentine grid points
    // with a dwell at each; sample timestamps fall inside the dwells.
    const auto pts = serpentine_grid(grid.points_per_axis, grid.extent_mm);
    const double dwell = grid.settle_s + grid.samples_per_point * grid.sample_spacing_s;

    struct Leg {
        double t0, t1;  // travel interval
        Vec3 from, to;
    };
    std::vector<Leg> legs;
    std::vector<double> sample_times;
    Vec3 pos{0.0, 0.0, 0.0};
    double t = 0.0;
    for (const auto& p : pts) {
        const double dist = (p - pos).norm();
        const double travel = dist / grid.robot_speed_mms;
        legs.push_back({t, t + travel, pos, p});
        t += travel;
        for (int m = 0; m < grid.samples_per_point; ++m)
            sample_times.push_back(t + grid.settle_s + m * grid.sample_spacing_s);
        t += dwell;
        pos = p;
    }
    const double total = t;

    auto robot_at = [&](double tt) -> Vec3 {
        // legs are time-ordered; binary search the containing interval
        auto it = std::upper_bound(legs.begin(), legs.end(), tt,
                                   [](double v, const Leg& l) { return v < l.t0; });
        const Leg& l = it == legs.begin() ? legs.front() : *(it - 1);
        if (tt >= l.t1) return l.to;
        const double f = l.t1 > l.t0 ? (tt - l.t0) / (l.t1 - l.t0) : 1.0;
        return l.from + (l.to - l.from) * f;
    };

    TrackerSim sim(world, loop_cfg);
    const double sigma = world.trajectory.noise_sigma;
    const std::uint64_t nseed = world.trajectory.noise_seed;
    auto noisy_robot = [&](double tt, std::uint64_t tick) {
        Vec3 p = robot_at(tt);
        if (sigma > 0.0) {
            p.x += sigma * hashed_normal(splitmix64(nseed ^ tick) + 11);
            p.y += sigma * hashed_normal(splitmix64(nseed ^ tick) + 12);
            p.z += sigma * hashed_normal(splitmix64(nseed ^ tick) + 13);
        }
        return p;
    };

    sim.capture_template(noisy_robot(0.0, 0), 0);

    std::vector<CalibrationSample> samples;
    samples.reserve(sample_times.size());
    std::size_t next_sample = 0;
    const double dt = 1.0 / grid.loop_rate_hz;
    const std::int64_t ticks = static_cast<std::int64_t>(std::ceil(total / dt)) + 1;
    for (std::int64_t i = 0; i < ticks && next_sample < sample_times.size(); ++i) {
        const double tt = i * dt;
        const Vec3 gt = noisy_robot(tt, static_cast<std::uint64_t>(i));
        try {
            sim.step(tt, gt, true, static_cast<std::uint64_t>(i));
        } catch (const OutOfSceneError&) {
            throw std::runtime_error("collect_grid: tracking lost at t=" +
                                     std::to_string(tt) + " s");
        }
        while (next_sample < sample_times.size() && tt >= sample_times[next_sample]) {
            samples.push_back({gt, static_cast<double>(sim.galvo_x_steps()),
                               static_cast<double>(sim.galvo_y_steps()),
                               static_cast<double>(sim.motor_steps()), tt});
            ++next_sample;
        }
    }
    if (next_sample != sample_times.size())
        throw std::runtime_error("collect_grid: schedule ended before all samples");
    return samples;
}

void fit_affine(const std::vector<CalibrationSample>& samples, Eigen::Matrix3d& A,
                Eigen::Vector3d& b) {
    if (samples.size() < 4)
        throw DegenerateGeometryError("fit_affine: need at least 4 samples");
    const auto n = static_cast<Eigen::Index>(samples.size());
    Eigen::MatrixXd X(n, 4);
    Eigen::MatrixXd R(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& s = samples[static_cast<std::size_t>(i)];
        X.row(i) << s.galvo_x_steps, s.galvo_y_steps, s.motor_steps, 1.0;
        R.row(i) << s.robot_mm.x, s.robot_mm.y, s.robot_mm.z;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    if (qr.rank() < 4)
        throw DegenerateGeometryError("fit_affine: coplanar or rank-deficient grid");
    const Eigen::MatrixXd B = qr.solve(R);  // 4x3
    A = B.topRows<3>().transpose();
    b = B.row(3).transpose();
}

std::array<Eigen::Matrix<double, 10, 1>, 3>
fit_quadratic(const std::vector<CalibrationSample>& samples, const Eigen::Matrix3d& A,
              const Eigen::Vector3d& b) {
    const auto n = static_cast<Eigen::Index>(samples.size());
    if (n < 10) throw DegenerateGeometryError("fit_quadratic: too few samples");
    Eigen::MatrixXd Phi(n, 10);
    Eigen::MatrixXd D(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& s = samples[static_cast<std::size_t>(i)];
        const Eigen::Vector3d x(s.galvo_x_steps, s.galvo_y_steps, s.motor_steps);
        const Eigen::Vector3d y = A * x + b;
        Phi.row(i) = quad_basis(y).transpose();
        D.row(i) = Eigen::Vector3d(s.robot_mm.x, s.robot_mm.y, s.robot_mm.z) - y;
    }

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Phi, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const double cond = sv(0) / std::max(sv(sv.size() - 1), 1e-300);

    std::array<Eigen::Matrix<double, 10, 1>, 3> coeffs;
    if (cond > 1e10) {
        // ridge-regularized normal equations for collinear grids
        const Eigen::MatrixXd G =
            Phi.transpose() * Phi + 1e-8 * Eigen::MatrixXd::Identity(10, 10);
        const Eigen::MatrixXd C = G.ldlt().solve(Phi.transpose() * D);
        for (int a = 0; a < 3; ++a) coeffs[static_cast<std::size_t>(a)] = C.col(a);
    } else {
        for (int a = 0; a < 3; ++a)
            coeffs[static_cast<std::size_t>(a)] = svd.solve(D.col(a));
    }
    return coeffs;
}

CalibrationModel fit_calibration(const std::vector<CalibrationSample>& samples) {
    CalibrationModel m;
    fit_affine(samples, m.affine, m.offset);
    m.quadratic = fit_quadratic(samples, m.affine, m.offset);
    m.fit_lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::max());
    m.fit_hi = Eigen::Vector3d::Constant(std::numeric_limits<double>::lowest());
    for (const auto& s : samples) {
        const Eigen::Vector3d y =
            m.affine * Eigen::Vector3d(s.galvo_x_steps, s.galvo_y_steps, s.motor_steps) +
            m.offset;
        m.fit_lo = m.fit_lo.cwiseMin(y);
        m.fit_hi = m.fit_hi.cwiseMax(y);
    }
    return m;
}

Vec3 apply_calibration(const CalibrationModel& model, double galvo_x_steps,
                       double galvo_y_steps, double motor_steps, bool* extrapolated) {
    const Eigen::Vector3d y =
        model.affine * Eigen::Vector3d(galvo_x_steps, galvo_y_steps, motor_steps) +
        model.offset;
    if (extrapolated)
        *extrapolated = (y.array() < model.fit_lo.array()).any() ||
                        (y.array() > model.fit_hi.array()).any();
    const auto phi = quad_basis(y);
    Eigen::Vector3d out = y;
    for (int a = 0; a < 3; ++a) out(a) += model.quadratic[static_cast<std::size_t>(a)].dot(phi);
    return {out.x(), out.y(), out.z()};
}

double calibration_rmse(const CalibrationModel& model,
                        const std::vector<CalibrationSample>& samples) {
    if (samples.empty()) throw ContractError("calibration_rmse: no samples");
    double acc = 0.0;
    for (const auto& s : samples) {
        const Vec3 p =
            apply_calibration(model, s.galvo_x_steps, s.galvo_y_steps, s.motor_steps);
        acc += (p - s.robot_mm).norm() * (p - s.robot_mm).norm();
    }
    return std::sqrt(acc / static_cast<double>(samples.size()));
}

double affine_rmse(const Eigen::Matrix3d& A, const Eigen::Vector3d& b,
                   const std::vector<CalibrationSample>& samples) {
    if (samples.empty()) throw ContractError("affine_rmse: no samples");
    double acc = 0.0;
    for (const auto& s : samples) {
        const Eigen::Vector3d y =
            A * Eigen::Vector3d(s.galvo_x_steps, s.galvo_y_steps, s.motor_steps) + b;
        const Vec3 d = Vec3{y.x(), y.y(), y.z()} - s.robot_mm;
        acc += d.norm() * d.norm();
    }
    return std::sqrt(acc / static_cast<double>(samples.size()));
}

void CalibrationModel::save_json(const std::filesystem::path& path) const {
    nlohmann::json j;
    j["format"] = "octrack-calibration";
    j["version"] = 1;
    j["coefficient_order"] = {"1", "x", "y", "z", "x^2", "y^2", "z^2", "xy", "xz", "yz"};
    j["note"] = "robot_mm = y + quadratic(y), y = affine * steps + offset; "
                "affine rows map (galvo_x, galvo_y, motor) steps to mm";
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) j["affine"][r][c] = affine(r, c);
    for (int r = 0; r < 3; ++r) j["offset"][r] = offset(r);
    for (int a = 0; a < 3; ++a)
        for (int k = 0; k < 10; ++k)
            j["quadratic"][a][k] = quadratic[static_cast<std::size_t>(a)](k);
    for (int r = 0; r < 3; ++r) {
        j["fit_lo"][r] = fit_lo(r);
        j["fit_hi"][r] = fit_hi(r);
    }
    std::ofstream f(path);
    if (!f) throw std::runtime_error("CalibrationModel::save_json: cannot open " + path.string());
    f << j.dump(2) << '\n';
}

CalibrationModel CalibrationModel::load_json(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("CalibrationModel::load_json: cannot open " + path.string());
    nlohmann::json j;
    f >> j;
    if (j.value("format", "") != "octrack-calibration" || j.value("version", 0) != 1)
        throw std::runtime_error("CalibrationModel::load_json: unsupported file");
    CalibrationModel m;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) m.affine(r, c) = j["affine"][r][c];
    for (int r = 0; r < 3; ++r) m.offset(r) = j["offset"][r];
    for (int a = 0; a < 3; ++a)
        for (int k = 0; k < 10; ++k)
            m.quadratic[static_cast<std::size_t>(a)](k) = j["quadratic"][a][k];
    for (int r = 0; r < 3; ++r) {
        m.fit_lo(r) = j["fit_lo"][r];
        m.fit_hi(r) = j["fit_hi"][r];
    }
    return m;
}

void write_samples_csv(const std::filesystem::path& path,
                       const std::vector<CalibrationSample>& samples) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_samples_csv: cannot open " + path.string());
    f << "t_s,robot_x_mm,robot_y_mm,robot_z_mm,galvo_x_steps,galvo_y_steps,motor_steps\n";
    for (const auto& s : samples)
        f << s.t_s << ',' << s.robot_mm.x << ',' << s.robot_mm.y << ',' << s.robot_mm.z
          << ',' << s.galvo_x_steps << ',' << s.galvo_y_steps << ',' << s.motor_steps
          << '\n';
}

} // namespace octrack
