#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace octrack {

/// Thrown when a caller violates a documented precondition.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Thrown when inputs are structurally valid but parameter values are unusable.
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

struct VolumeDims {
    int nx = 32;  // lateral fast axis
    int ny = 32;  // lateral slow axis
    int nz = 480; // depth

    bool valid() const { return nx >= 2 && ny >= 2 && nz >= 2; }
    std::size_t count() const {
        return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
               static_cast<std::size_t>(nz);
    }
    bool operator==(const VolumeDims&) const = default;
};

/// Metric size of one voxel. Defaults follow a 2.5 x 2.5 x 3.5 mm FOV
/// sampled at 32 x 32 x 480.
struct VoxelPitch {
    double dx = 2.5 / 32.0;
    double dy = 2.5 / 32.0;
    double dz = 3.5 / 480.0;

    bool valid() const { return dx > 0.0 && dy > 0.0 && dz > 0.0; }
};

/// Integer translation in voxels, normalized to the wraparound range
/// [-dim/2, dim/2] per axis.
struct VoxelShift {
    int sx = 0, sy = 0, sz = 0;
    bool operator==(const VoxelShift&) const = default;
};

struct MetricDisplacement {
    double x = 0.0, y = 0.0, z = 0.0;
};

/// Pose of the scanned field of view: world-mm center, axes world-aligned.
struct FovPose {
    Vec3 center;
};

/// Reconstructed intensity C-scan. Storage is z fastest, then x, then y,
/// matching the on-disk layout.
struct Volume {
    VolumeDims dims;
    VoxelPitch pitch;
    std::vector<float> intensity;
    double timestamp = 0.0;

    Volume() = default;
    Volume(VolumeDims d, VoxelPitch p)
        : dims(d), pitch(p), intensity(d.count(), 0.0f) {}

    std::size_t index(int x, int y, int z) const {
        return (static_cast<std::size_t>(y) * dims.nx + x) * dims.nz + z;
    }
    float& at(int x, int y, int z) { return intensity[index(x, y, z)]; }
    float at(int x, int y, int z) const { return intensity[index(x, y, z)]; }
};

/// Deterministic hash-based randomness used for repeatability noise; a pure
/// function of the key, so simulations stay reproducible and order-free.
std::uint64_t splitmix64(std::uint64_t x);
double hashed_uniform01(std::uint64_t key);
double hashed_normal(std::uint64_t key);

/// Maps a raw cyclic peak index into the signed shift range. A raw component
/// exactly at dim/2 normalizes to +dim/2 (tie rule, applied everywhere).
VoxelShift wrap_shift(int u, int v, int w, const VolumeDims& dims);

/// Componentwise voxels -> millimeters.
MetricDisplacement voxel_to_metric(const VoxelShift& s, const VoxelPitch& p);

/// Flat binary volume files: 16-byte little-endian header
/// (nx, ny, nz, version as uint32) followed by float32 intensities,
/// z fastest, then x, then y.
inline constexpr std::uint32_t kVolumeFileVersion = 1;

void save_volume(const std::filesystem::path& path, const Volume& v);
Volume load_volume(const std::filesystem::path& path,
                   const VoxelPitch& pitch = VoxelPitch{});

} // namespace octrack
