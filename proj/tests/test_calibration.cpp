#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "octrack/calibration.hpp"

using namespace octrack;

namespace {

// synthetic samples: tracker coordinates on a grid, robot = f(tracker)
template <typename F>
std::vector<CalibrationSample> synth_grid(F&& robot_of_tracker, int n = 6,
                                          double lo = -200.0, double hi = 200.0) {
    std::vector<CalibrationSample> out;
    double step = (hi - lo) / (n - 1);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k) {
                CalibrationSample s;
                s.galvo_x_steps = lo + i * step;
                s.galvo_y_steps = lo + j * step;
                s.motor_steps = lo + k * step;
                s.robot_mm = robot_of_tracker(s.galvo_x_steps, s.galvo_y_steps,
                                              s.motor_steps);
                out.push_back(s);
            }
    return out;
}

} // namespace

TEST_CASE("affine fit recovers an exact affine map") {
    auto f = [](double x, double y, double z) {
        return Vec3{0.5 * x + 1.0, 0.5 * y + 2.0, 0.5 * z + 3.0};
    };
    auto samples = synth_grid(f);
    Eigen::Matrix3d A;
    Eigen::Vector3d b;
    fit_affine(samples, A, b);
    CHECK(A(0, 0) == doctest::Approx(0.5));
    CHECK(A(1, 1) == doctest::Approx(0.5));
    CHECK(A(0, 1) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(b(0) == doctest::Approx(1.0));
    CHECK(b(2) == doctest::Approx(3.0));
    CHECK(affine_rmse(A, b, samples) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("degenerate geometry is rejected") {
    // all samples on a plane (no z spread)
    auto f = [](double x, double y, double) { return Vec3{x, y, 0.0}; };
    auto samples = synth_grid(f);
    for (auto& s : samples) s.motor_steps = 7.0;
    Eigen::Matrix3d A;
    Eigen::Vector3d b;
    CHECK_THROWS_AS(fit_affine(samples, A, b), DegenerateGeometryError);
}

TEST_CASE("noisy linear map: residual at the noise floor, quadratic stays small") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 0.02);
    auto f = [&](double x, double y, double z) {
        return Vec3{0.01 * x + n(rng), 0.01 * y + n(rng), 0.0125 * z + n(rng)};
    };
    auto samples = synth_grid(f);
    CalibrationModel m = fit_calibration(samples);
    // 3D residual: sqrt(3) * 0.02 per-axis noise, minus fitted DoF
    double rmse = calibration_rmse(m, samples);
    CHECK(rmse < 0.045);
    CHECK(rmse > 0.02);
    // quadratic corrections stay at the noise level over the fitted range
    // (affine outputs span about +-2 mm here)
    for (int axis = 0; axis < 3; ++axis)
        for (int c = 4; c < 10; ++c)
            CHECK(std::abs(m.quadratic[axis](c)) * 4.0 < 0.02);
}

TEST_CASE("spherical distortion: quadratic stage improves >= 2x, rmse small") {
    // mimic the device distortion: lateral mm per step 0.0025, quadratic sag
    auto f = [](double gx, double gy, double mz) {
        double x = 0.0025 * gx, y = 0.0025 * gy, z = 0.0125 * mz;
        double r2 = x * x + y * y;
        return Vec3{x - 2.5e-4 * x * x, y - 2.5e-4 * y * y, z - r2 / 400.0};
    };
    auto samples = synth_grid(f, 6, -8000.0, 8000.0);  // +-20 mm lateral
    Eigen::Matrix3d A;
    Eigen::Vector3d b;
    fit_affine(samples, A, b);
    CalibrationModel m = fit_calibration(samples);
    double affine_only = affine_rmse(A, b, samples);
    double full = calibration_rmse(m, samples);
    CHECK(full <= 0.15);
    CHECK(affine_only >= 2.0 * full);
    CHECK(full < 1e-6);  // exactly representable in the quadratic basis
}

TEST_CASE("cubic residue is only partially corrected") {
    auto f = [](double gx, double, double mz) {
        double x = 0.0025 * gx, z = 0.0125 * mz;
        return Vec3{x + 1e-5 * x * x * x, 0.0, z};
    };
    auto samples = synth_grid(f, 6, -8000.0, 8000.0);
    CalibrationModel m = fit_calibration(samples);
    double full = calibration_rmse(m, samples);
    CHECK(full > 1e-6);  // cubic not in the basis
    Eigen::Matrix3d A;
    Eigen::Vector3d b;
    fit_affine(samples, A, b);
    CHECK(full <= affine_rmse(A, b, samples) + 1e-12);  // never worse
}

TEST_CASE("quadratic stage never increases the residual") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0.0, 0.05);
    auto f = [&](double gx, double gy, double mz) {
        double x = 0.0025 * gx, y = 0.0025 * gy, z = 0.0125 * mz;
        return Vec3{x + 0.3 * std::sin(0.2 * y) + n(rng), y + n(rng),
                    z + 0.01 * x * y + n(rng)};
    };
    auto samples = synth_grid(f, 5, -6000.0, 6000.0);
    Eigen::Matrix3d A;
    Eigen::Vector3d b;
    fit_affine(samples, A, b);
    CalibrationModel m = fit_calibration(samples);
    CHECK(calibration_rmse(m, samples) <= affine_rmse(A, b, samples) + 1e-12);
}

TEST_CASE("translation equivariance of the fitted map") {
    auto f = [](double x, double y, double z) {
        return Vec3{0.002 * x, 0.002 * y, 0.012 * z};
    };
    auto samples = synth_grid(f, 5, -5000.0, 5000.0);
    CalibrationModel m = fit_calibration(samples);
    auto shifted = samples;
    for (auto& s : shifted) {
        s.robot_mm = s.robot_mm + Vec3{5.0, -3.0, 2.0};
    }
    CalibrationModel ms = fit_calibration(shifted);
    Vec3 a = apply_calibration(m, 1000.0, -2000.0, 1500.0);
    Vec3 b = apply_calibration(ms, 1000.0, -2000.0, 1500.0);
    CHECK(b.x - a.x == doctest::Approx(5.0).epsilon(1e-6));
    CHECK(b.y - a.y == doctest::Approx(-3.0).epsilon(1e-6));
    CHECK(b.z - a.z == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("extrapolation outside the fitted box is flagged") {
    auto f = [](double x, double y, double z) {
        return Vec3{0.002 * x, 0.002 * y, 0.012 * z};
    };
    auto samples = synth_grid(f, 5, -5000.0, 5000.0);
    CalibrationModel m = fit_calibration(samples);
    bool ex = true;
    (void)apply_calibration(m, 0.0, 0.0, 0.0, &ex);
    CHECK_FALSE(ex);
    (void)apply_calibration(m, 50000.0, 0.0, 0.0, &ex);
    CHECK(ex);
}

TEST_CASE("model JSON round trip") {
    auto f = [](double gx, double gy, double mz) {
        double x = 0.0025 * gx, y = 0.0025 * gy, z = 0.0125 * mz;
        return Vec3{x - 2.5e-4 * x * x, y, z - (x * x + y * y) / 400.0};
    };
    auto samples = synth_grid(f, 5, -6000.0, 6000.0);
    CalibrationModel m = fit_calibration(samples);
    auto path = std::filesystem::temp_directory_path() / "octrack_cal.json";
    m.save_json(path);
    CalibrationModel back = CalibrationModel::load_json(path);
    std::filesystem::remove(path);
    CHECK(back.affine.isApprox(m.affine, 1e-12));
    CHECK(back.offset.isApprox(m.offset, 1e-12));
    for (int axis = 0; axis < 3; ++axis)
        CHECK(back.quadratic[axis].isApprox(m.quadratic[axis], 1e-12));
    Vec3 a = apply_calibration(m, 100.0, 200.0, 300.0);
    Vec3 b = apply_calibration(back, 100.0, 200.0, 300.0);
    CHECK(a.x == doctest::Approx(b.x).epsilon(1e-12));
    CHECK(a.z == doctest::Approx(b.z).epsilon(1e-12));
}

TEST_CASE("samples CSV export writes one row per sample") {
    auto f = [](double x, double y, double z) { return Vec3{x, y, z}; };
    auto samples = synth_grid(f, 3, -10.0, 10.0);
    auto path = std::filesystem::temp_directory_path() / "octrack_samples.csv";
    write_samples_csv(path, samples);
    std::ifstream in(path);
    std::string line;
    std::size_t rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    std::filesystem::remove(path);
    CHECK(rows == samples.size() + 1);  // header
}

TEST_CASE("grid collection produces the full sample set") {
    SimWorld w{.scene = make_scene(SceneKind::plate, 51)};
    w.trajectory.noise_sigma = 0.005;
    w.trajectory.noise_seed = 52;
    w.render_seed = 53;
    ControllerConfig cfg;
    GridSpec grid;
    grid.points_per_axis = 2;
    grid.extent_mm = 6.0;
    grid.samples_per_point = 3;
    auto samples = collect_grid(w, cfg, grid);
    CHECK(samples.size() == 8u * 3u);
    // robot positions spread over the grid extent
    double lo = 1e9, hi = -1e9;
    for (const auto& s : samples) {
        lo = std::min(lo, s.robot_mm.x);
        hi = std::max(hi, s.robot_mm.x);
    }
    CHECK(hi - lo == doctest::Approx(6.0).epsilon(0.05));
    // tracker coordinates follow the robot: fit should be sane
    CalibrationModel m = fit_calibration(samples);
    CHECK(calibration_rmse(m, samples) < 0.5);
}
