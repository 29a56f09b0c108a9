#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "octrack/control.hpp"
#include "octrack/core.hpp"

namespace octrack {

class DegenerateGeometryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CalibrationSample {
    Vec3 robot_mm;
    double galvo_x_steps = 0.0;
    double galvo_y_steps = 0.0;
    double motor_steps = 0.0;
    double t_s = 0.0;
};

/// Affine map from tracker coordinates (galvo/motor steps) to robot-frame mm,
/// followed by a per-axis quadratic correction evaluated on the affine
/// output. Quadratic basis order: 1, x, y, z, x^2, y^2, z^2, xy, xz, yz.
struct CalibrationModel {
    Eigen::Matrix3d affine = Eigen::Matrix3d::Identity();
    Eigen::Vector3d offset = Eigen::Vector3d::Zero();
    std::array<Eigen::Matrix<double, 10, 1>, 3> quadratic{};
    // affine-output bounding box of the fitting set; outputs beyond it are
    // flagged as extrapolated
    Eigen::Vector3d fit_lo = Eigen::Vector3d::Zero();
    Eigen::Vector3d fit_hi = Eigen::Vector3d::Zero();

    void save_json(const std::filesystem::path& path) const;
    static CalibrationModel load_json(const std::filesystem::path& path);
};

struct GridSpec {
    int points_per_axis = 5;
    double extent_mm = 40.0;       // cube edge, centered on the start pose
    int samples_per_point = 20;
    double sample_spacing_s = 0.1;
    double settle_s = 0.3;         // dwell before the first logged sample
    double robot_speed_mms = 20.0; // travel speed between grid points
    // the collection loop runs decimated; must divide into integer rates
    int loop_rate_hz = 25;
    int loop_viz_hz = 0;
};

/// Drives the simulated robot over a serpentine grid with active tracking
/// and records (robot, tracker-coordinate) pairs at each point. The world's
/// trajectory is ignored; motion comes from the grid schedule.
std::vector<CalibrationSample> collect_grid(const SimWorld& world,
                                            const ControllerConfig& cfg,
                                            const GridSpec& grid);

/// Least-squares affine fit: minimizes |A * tracker + b - robot|^2.
void fit_affine(const std::vector<CalibrationSample>& samples, Eigen::Matrix3d& A,
                Eigen::Vector3d& b);

/// Per-axis least squares of the post-affine residuals on the quadratic
/// basis. Ill-conditioned designs (cond > 1e10) get a 1e-8 ridge term.
std::array<Eigen::Matrix<double, 10, 1>, 3>
fit_quadratic(const std::vector<CalibrationSample>& samples, const Eigen::Matrix3d& A,
              const Eigen::Vector3d& b);

/// Convenience: affine, then quadratic, bounding box recorded.
CalibrationModel fit_calibration(const std::vector<CalibrationSample>& samples);

/// Applies the model to tracker coordinates. If extrapolated is non-null it
/// is set when the affine output lies outside the fitting volume.
Vec3 apply_calibration(const CalibrationModel& model, double galvo_x_steps,
                       double galvo_y_steps, double motor_steps,
                       bool* extrapolated = nullptr);

/// Root-mean-square 3D residual of the model over a sample set.
double calibration_rmse(const CalibrationModel& model,
                        const std::vector<CalibrationSample>& samples);
/// Residual of the affine stage alone.
double affine_rmse(const Eigen::Matrix3d& A, const Eigen::Vector3d& b,
                   const std::vector<CalibrationSample>& samples);

void write_samples_csv(const std::filesystem::path& path,
                       const std::vector<CalibrationSample>& samples);

} // namespace octrack
