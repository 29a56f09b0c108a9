#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "octrack/core.hpp"

namespace octrack {

/// Thrown by render_volume when the FOV has no overlap with the scene;
/// the harness treats this as "tracking lost the sample".
class OutOfSceneError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class SceneKind { plate, tissue };

struct PlateParams {
    double amplitude_pp = 0.3;   // surface height peak-to-peak, mm
    double half_extent = 12.0;   // lateral half extent, mm
    double grid_pitch = 0.05;    // heightfield cell size, mm
    double corr_length = 0.3;    // lateral feature size of the surface, mm
    double reflect_min = 0.6;    // darkest surface reflectivity, in (0,1]
    double surface_sigma = 3.0 * 3.5 / 480.0; // depth response width, mm
    // Multiplicative speckle on the surface response: grain cell size and
    // darkest modulation factor. speckle_min = 1 disables speckle.
    double speckle_pitch = 0.04; // mm, about half a lateral voxel
    double speckle_min = 0.25;   // in (0,1]
};

struct TissueParams {
    double half_extent = 8.0;    // lateral half extent, mm
    double depth = 6.0;          // speckle field depth below the surface, mm
    double attenuation = 0.5;    // exponential depth attenuation, 1/mm
    double lateral_pitch = 0.1;  // speckle grid cell, mm
    double axial_pitch = 0.02;   // speckle grid cell, mm
    double speckle_smooth = 1.0; // box-blur radius in cells
};

struct SceneParams {
    PlateParams plate;
    TissueParams tissue;
};

/// Virtual sample. A scene is content in its own local frame; a rigid sample
/// offset shifts that content through world space. Immutable after creation.
class Scene {
public:
    SceneKind kind() const { return kind_; }
    std::uint64_t seed() const { return seed_; }
    const SceneParams& params() const { return params_; }

    /// Plate surface height (mm) and reflectivity at local lateral (x, y).
    double height_at(double x, double y) const;
    double reflectivity_at(double x, double y) const;
    /// Plate speckle modulation in [speckle_min, 1] at local lateral (x, y).
    double speckle_at(double x, double y) const;
    /// Full surface response amplitude: reflectivity × speckle.
    double surface_amplitude_at(double x, double y) const;
    /// Tissue speckle intensity at local (x, y, z); z is depth below the
    /// surface, positive downward. Zero above the surface or out of bounds.
    double tissue_at(double x, double y, double z) const;

    double lateral_half_extent() const;
    bool lateral_in_bounds(double x, double y) const;
    /// Local-frame z interval that contains visible content.
    std::pair<double, double> axial_content_range() const;

    void save(const std::filesystem::path& path) const;
    static Scene load(const std::filesystem::path& path);
    /// Writes the heightfield (plate) or the z mid-plane (tissue) as CSV.
    void export_midplane_csv(const std::filesystem::path& path) const;

    friend Scene make_scene(SceneKind, std::uint64_t, const SceneParams&);

private:
    Scene() = default;

    SceneKind kind_ = SceneKind::plate;
    std::uint64_t seed_ = 0;
    SceneParams params_;

    // plate: grids over [-half_extent, half_extent]^2
    int grid_n_ = 0;
    std::vector<float> height_;
    std::vector<float> reflect_;
    // plate speckle grid over the same extent at speckle_pitch
    int speckle_n_ = 0;
    std::vector<float> plate_speckle_;

    // tissue: grid over lateral [-he, he]^2, axial [0, depth]
    int tnx_ = 0, tnz_ = 0;
    std::vector<float> speckle_;

    double bilinear(const std::vector<float>& g, double x, double y) const;
};

Scene make_scene(SceneKind kind, std::uint64_t seed, const SceneParams& params = {});

enum class MotionKind { static_hold, lateral_diagonal, axial, diagonal_3d, axial_sine };

/// Ground-truth rigid motion of the sample. Linear profiles are triangular
/// waves of constant path speed `velocity` over `span`; diagonal profiles
/// split that speed across the active axes so the path speed stays as
/// configured. axial_sine is a pure z sinusoid with amplitude span/2 and the
/// given peak velocity (used for deadband studies).
struct MotionTrajectory {
    MotionKind kind = MotionKind::static_hold;
    double velocity = 10.0;      // peak path speed, mm/s
    double span = 30.0;          // back-and-forth travel, mm
    double duration = 60.0;      // s
    double noise_sigma = 0.01;   // per-sample position repeatability, mm
    std::uint64_t noise_seed = 0;
};

/// Ground-truth sample displacement at time t (0 <= t <= duration), relative
/// to the start position. Pure: the repeatability noise is a deterministic
/// function of (noise_seed, t).
Vec3 sample_position(const MotionTrajectory& traj, double t);

struct RenderNoise {
    double sigma = 0.05;        // additive intensity noise, 0 disables
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;   // e.g. tick index, for render purity
};

/// Renders the reconstructed-intensity volume seen by an FOV centered at
/// fov.center while the sample content is displaced by sample_offset.
/// Voxel (i,j,k) looks at world position fov.center + ((i-nx/2)dx,
/// (j-ny/2)dy, (k-nz/2)dz) and reads scene content at world - sample_offset.
/// Throws OutOfSceneError when the FOV sees no content at all.
Volume render_volume(const Scene& scene, const Vec3& sample_offset,
                     const FovPose& fov, const VolumeDims& dims,
                     const VoxelPitch& pitch, const RenderNoise& noise);

} // namespace octrack
