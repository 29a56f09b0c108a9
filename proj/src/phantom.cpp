#include "octrack/phantom.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace octrack {

namespace {

/// Pool of precomputed N(0,1) samples; per-voxel render noise indexes it by
/// hash so a full-volume pass stays cheap.
constexpr std::size_t kNoisePoolBits = 20;
const std::vector<float>& noise_pool() {
    static const std::vector<float> pool = [] {
        std::vector<float> p(std::size_t{1} << kNoisePoolBits);
        for (std::size_t i = 0; i < p.size(); ++i)
            p[i] = static_cast<float>(hashed_normal(0x6f1db0c2a55aULL + i));
        return p;
    }();
    return pool;
}

// exp(-u^2/2) for u in [0, 5], linear interpolation.
constexpr int kGaussLutN = 1024;
const std::array<float, kGaussLutN + 2>& gauss_lut() {
    static const auto lut = [] {
        std::array<float, kGaussLutN + 2> t{};
        for (int i = 0; i < kGaussLutN + 2; ++i) {
            const double u = 5.0 * i / kGaussLutN;
            t[i] = static_cast<float>(std::exp(-0.5 * u * u));
        }
        return t;
    }();
    return lut;
}

inline float gauss_response(float u) {
    u = std::fabs(u);
    if (u >= 5.0f) return 0.0f;
    const float p = u * (kGaussLutN / 5.0f);
    const int i = static_cast<int>(p);
    const float f = p - i;
    const auto& lut = gauss_lut();
    return lut[i] + f * (lut[i + 1] - lut[i]);
}

void box_blur_2d(std::vector<float>& g, int n, int radius, int passes) {
    std::vector<float> tmp(g.size());
    for (int p = 0; p < passes; ++p) {
        for (int axis = 0; axis < 2; ++axis) {
            for (int a = 0; a < n; ++a) {
                for (int b = 0; b < n; ++b) {
                    float acc = 0.0f;
                    int cnt = 0;
                    for (int r = -radius; r <= radius; ++r) {
                        const int bb = b + r;
                        if (bb < 0 || bb >= n) continue;
                        acc += axis == 0 ? g[a * n + bb] : g[bb * n + a];
                        ++cnt;
                    }
                    tmp[axis == 0 ? a * n + b : b * n + a] = acc / cnt;
                }
            }
            g.swap(tmp);
        }
    }
}

void minmax_rescale(std::vector<float>& g, float lo, float hi) {
    const auto [mn_it, mx_it] = std::minmax_element(g.begin(), g.end());
    const float mn = *mn_it;  // copy before the loop rewrites the elements
    const float span = *mx_it - mn;
    if (span <= 0.0f) {
        std::fill(g.begin(), g.end(), 0.5f * (lo + hi));
        return;
    }
    for (auto& v : g) v = lo + (v - mn) / span * (hi - lo);
}

} // namespace

Scene make_scene(SceneKind kind, std::uint64_t seed, const SceneParams& params) {
    Scene s;
    s.kind_ = kind;
    s.seed_ = seed;
    s.params_ = params;

    if (kind == SceneKind::plate) {
        const auto& pp = params.plate;
        if (pp.amplitude_pp <= 0.0 || pp.amplitude_pp > 0.4)
            throw ParameterError("make_scene: plate amplitude outside (0, 0.4] mm");
        if (pp.half_extent <= 0.0 || pp.grid_pitch <= 0.0)
            throw ParameterError("make_scene: invalid plate extent/pitch");

        s.grid_n_ = static_cast<int>(std::round(2.0 * pp.half_extent / pp.grid_pitch)) + 1;
        const std::size_t n2 = static_cast<std::size_t>(s.grid_n_) * s.grid_n_;
        s.height_.resize(n2);
        s.reflect_.resize(n2);
        for (std::size_t i = 0; i < n2; ++i) {
            s.height_[i] = static_cast<float>(hashed_uniform01((seed * 0x10001ULL + i)));
            s.reflect_[i] = static_cast<float>(
                hashed_uniform01(((seed ^ 0x5ca1ab1eULL) * 0x10001ULL + i)));
        }
        const int radius = std::max(1, static_cast<int>(std::round(pp.corr_length / pp.grid_pitch)));
        box_blur_2d(s.height_, s.grid_n_, radius, 3);
        box_blur_2d(s.reflect_, s.grid_n_, radius, 3);
        const float half = static_cast<float>(pp.amplitude_pp / 2.0);
        minmax_rescale(s.height_, -half, half);
        minmax_rescale(s.reflect_, static_cast<float>(pp.reflect_min), 1.0f);

        // Fine-grained multiplicative speckle tied to the scene frame: this
        // is the texture phase correlation actually locks onto (the height
        // and reflectivity fields are far smoother than one voxel).
        if (pp.speckle_min < 0.0 || pp.speckle_min > 1.0 || pp.speckle_pitch <= 0.0)
            throw ParameterError("make_scene: invalid plate speckle params");
        if (pp.speckle_min < 1.0) {
            s.speckle_n_ =
                static_cast<int>(std::round(2.0 * pp.half_extent / pp.speckle_pitch)) + 1;
            const std::size_t ns =
                static_cast<std::size_t>(s.speckle_n_) * s.speckle_n_;
            s.plate_speckle_.resize(ns);
            for (std::size_t i = 0; i < ns; ++i)
                s.plate_speckle_[i] = static_cast<float>(
                    hashed_uniform01(((seed ^ 0x9e3779b97f4aULL) * 0x10001ULL + i)));
            box_blur_2d(s.plate_speckle_, s.speckle_n_, 1, 1);
            minmax_rescale(s.plate_speckle_, static_cast<float>(pp.speckle_min), 1.0f);
        }
    } else {
        const auto& tp = params.tissue;
        if (tp.half_extent <= 0.0 || tp.depth <= 0.0 || tp.attenuation < 0.0 ||
            tp.lateral_pitch <= 0.0 || tp.axial_pitch <= 0.0)
            throw ParameterError("make_scene: invalid tissue params");

        s.tnx_ = static_cast<int>(std::round(2.0 * tp.half_extent / tp.lateral_pitch)) + 1;
        s.tnz_ = static_cast<int>(std::round(tp.depth / tp.axial_pitch)) + 1;
        const std::size_t n3 =
            static_cast<std::size_t>(s.tnx_) * s.tnx_ * s.tnz_;
        s.speckle_.resize(n3);
        for (std::size_t i = 0; i < n3; ++i)
            s.speckle_[i] = static_cast<float>(hashed_uniform01((seed * 0x10001ULL + i)));

        // separable box blur, z fastest in memory
        const int r = std::max(1, static_cast<int>(std::round(tp.speckle_smooth)));
        std::vector<float> tmp(n3);
        auto idx = [&](int x, int y, int z) {
            return (static_cast<std::size_t>(y) * s.tnx_ + x) * s.tnz_ + z;
        };
        auto blur_axis = [&](int axis) {
            const int nn[3] = {s.tnx_, s.tnx_, s.tnz_};
            for (int y = 0; y < s.tnx_; ++y)
                for (int x = 0; x < s.tnx_; ++x)
                    for (int z = 0; z < s.tnz_; ++z) {
                        float acc = 0.0f;
                        int cnt = 0;
                        int c[3] = {x, y, z};
                        for (int d = -r; d <= r; ++d) {
                            int cc = c[axis] + d;
                            if (cc < 0 || cc >= nn[axis]) continue;
                            int p[3] = {x, y, z};
                            p[axis] = cc;
                            acc += s.speckle_[idx(p[0], p[1], p[2])];
                            ++cnt;
                        }
                        tmp[idx(x, y, z)] = acc / cnt;
                    }
            s.speckle_.swap(tmp);
        };
        blur_axis(0);
        blur_axis(1);
        blur_axis(2);
        minmax_rescale(s.speckle_, 0.0f, 1.0f);
        for (int y = 0; y < s.tnx_; ++y)
            for (int x = 0; x < s.tnx_; ++x)
                for (int z = 0; z < s.tnz_; ++z)
                    s.speckle_[idx(x, y, z)] *=
                        static_cast<float>(std::exp(-tp.attenuation * z * tp.axial_pitch));
    }
    return s;
}

double Scene::bilinear(const std::vector<float>& g, double x, double y) const {
    const double pitch = params_.plate.grid_pitch;
    const double he = params_.plate.half_extent;
    const double gx = (x + he) / pitch;
    const double gy = (y + he) / pitch;
    if (gx < 0.0 || gy < 0.0 || gx > grid_n_ - 1 || gy > grid_n_ - 1) return 0.0;
    const int ix = std::min(static_cast<int>(gx), grid_n_ - 2);
    const int iy = std::min(static_cast<int>(gy), grid_n_ - 2);
    const double fx = gx - ix, fy = gy - iy;
    const auto at = [&](int a, int b) { return g[static_cast<std::size_t>(b) * grid_n_ + a]; };
    return (1 - fx) * (1 - fy) * at(ix, iy) + fx * (1 - fy) * at(ix + 1, iy) +
           (1 - fx) * fy * at(ix, iy + 1) + fx * fy * at(ix + 1, iy + 1);
}

double Scene::height_at(double x, double y) const { return bilinear(height_, x, y); }
double Scene::reflectivity_at(double x, double y) const { return bilinear(reflect_, x, y); }

double Scene::speckle_at(double x, double y) const {
    if (plate_speckle_.empty()) return 1.0;
    const double pitch = params_.plate.speckle_pitch;
    const double he = params_.plate.half_extent;
    const double gx = (x + he) / pitch;
    const double gy = (y + he) / pitch;
    if (gx < 0.0 || gy < 0.0 || gx > speckle_n_ - 1 || gy > speckle_n_ - 1) return 0.0;
    const int ix = std::min(static_cast<int>(gx), speckle_n_ - 2);
    const int iy = std::min(static_cast<int>(gy), speckle_n_ - 2);
    const double fx = gx - ix, fy = gy - iy;
    const auto at = [&](int a, int b) {
        return plate_speckle_[static_cast<std::size_t>(b) * speckle_n_ + a];
    };
    return (1 - fx) * (1 - fy) * at(ix, iy) + fx * (1 - fy) * at(ix + 1, iy) +
           (1 - fx) * fy * at(ix, iy + 1) + fx * fy * at(ix + 1, iy + 1);
}

double Scene::surface_amplitude_at(double x, double y) const {
    return reflectivity_at(x, y) * speckle_at(x, y);
}

double Scene::tissue_at(double x, double y, double z) const {
    const auto& tp = params_.tissue;
    if (z < 0.0 || z > tp.depth) return 0.0;
    const double gx = (x + tp.half_extent) / tp.lateral_pitch;
    const double gy = (y + tp.half_extent) / tp.lateral_pitch;
    const double gz = z / tp.axial_pitch;
    if (gx < 0.0 || gy < 0.0 || gx > tnx_ - 1 || gy > tnx_ - 1) return 0.0;
    const int ix = std::min(static_cast<int>(gx), tnx_ - 2);
    const int iy = std::min(static_cast<int>(gy), tnx_ - 2);
    const int iz = std::min(static_cast<int>(gz), tnz_ - 2);
    const double fx = gx - ix, fy = gy - iy, fz = gz - iz;
    auto at = [&](int a, int b, int c) {
        return speckle_[(static_cast<std::size_t>(b) * tnx_ + a) * tnz_ + c];
    };
    auto col = [&](int a, int b) { return (1 - fz) * at(a, b, iz) + fz * at(a, b, iz + 1); };
    return (1 - fx) * (1 - fy) * col(ix, iy) + fx * (1 - fy) * col(ix + 1, iy) +
           (1 - fx) * fy * col(ix, iy + 1) + fx * fy * col(ix + 1, iy + 1);
}

double Scene::lateral_half_extent() const {
    return kind_ == SceneKind::plate ? params_.plate.half_extent
                                     : params_.tissue.half_extent;
}

bool Scene::lateral_in_bounds(double x, double y) const {
    const double he = lateral_half_extent();
    return std::fabs(x) <= he && std::fabs(y) <= he;
}

std::pair<double, double> Scene::axial_content_range() const {
    if (kind_ == SceneKind::plate) {
        const auto [mn, mx] = std::minmax_element(height_.begin(), height_.end());
        const double pad = 5.0 * params_.plate.surface_sigma;
        return {*mn - pad, *mx + pad};
    }
    return {0.0, params_.tissue.depth};
}

Vec3 sample_position(const MotionTrajectory& traj, double t) {
    if (traj.span <= 0.0) throw ParameterError("sample_position: span must be > 0");
    if (traj.velocity < 0.0) throw ParameterError("sample_position: negative velocity");
    if (t < 0.0 || t > traj.duration)
        throw ContractError("sample_position: t outside [0, duration]");

    Vec3 p{};
    if (traj.kind != MotionKind::static_hold && traj.velocity > 0.0) {
        if (traj.kind == MotionKind::axial_sine) {
            const double amp = traj.span / 2.0;
            const double omega = traj.velocity / amp;
            p.z = amp * std::sin(omega * t);
        } else {
            const double phase = std::fmod(traj.velocity * t, 2.0 * traj.span);
            const double d = phase < traj.span ? phase : 2.0 * traj.span - phase;
            switch (traj.kind) {
                case MotionKind::axial: p = {0.0, 0.0, d}; break;
                case MotionKind::lateral_diagonal: {
                    const double c = d / std::numbers::sqrt2;
                    p = {c, c, 0.0};
                    break;
                }
                case MotionKind::diagonal_3d: {
                    const double c = d / std::sqrt(3.0);
                    p = {c, c, c};
                    break;
                }
                default: break;
            }
        }
    }
    if (traj.noise_sigma > 0.0) {
        const std::uint64_t tb = std::bit_cast<std::uint64_t>(t);
        p.x += traj.noise_sigma * hashed_normal(splitmix64(traj.noise_seed ^ tb) + 1);
        p.y += traj.noise_sigma * hashed_normal(splitmix64(traj.noise_seed ^ tb) + 2);
        p.z += traj.noise_sigma * hashed_normal(splitmix64(traj.noise_seed ^ tb) + 3);
    }
    return p;
}

Volume render_volume(const Scene& scene, const Vec3& sample_offset,
                     const FovPose& fov, const VolumeDims& dims,
                     const VoxelPitch& pitch, const RenderNoise& noise) {
    if (!dims.valid() || !pitch.valid())
        throw ContractError("render_volume: invalid dims/pitch");

    // FOV footprint in scene-local coordinates.
    const Vec3 c = fov.center - sample_offset;
    const double hx = dims.nx * pitch.dx / 2.0;
    const double hy = dims.ny * pitch.dy / 2.0;
    const double hz = dims.nz * pitch.dz / 2.0;
    const double he = scene.lateral_half_extent();
    const auto [z_lo, z_hi] = scene.axial_content_range();
    if (c.x + hx < -he || c.x - hx > he || c.y + hy < -he || c.y - hy > he ||
        c.z + hz < z_lo || c.z - hz > z_hi)
        throw OutOfSceneError("render_volume: FOV does not intersect the scene");

    Volume vol(dims, pitch);
    const int nx = dims.nx, ny = dims.ny, nz = dims.nz;

    if (scene.kind() == SceneKind::plate) {
        const double sigma = scene.params().plate.surface_sigma;
        for (int j = 0; j < ny; ++j) {
            const double qy = c.y + (j - ny / 2) * pitch.dy;
            for (int i = 0; i < nx; ++i) {
                const double qx = c.x + (i - nx / 2) * pitch.dx;
                if (!scene.lateral_in_bounds(qx, qy)) continue;
                const float h = static_cast<float>(scene.height_at(qx, qy));
                const float r = static_cast<float>(scene.surface_amplitude_at(qx, qy));
                // surface response only within +-5 sigma of the surface
                const double k_center = (h - c.z) / pitch.dz + nz / 2.0;
                const int k_rad = static_cast<int>(5.0 * sigma / pitch.dz) + 1;
                const int k0 = std::max(0, static_cast<int>(k_center) - k_rad);
                const int k1 = std::min(nz - 1, static_cast<int>(k_center) + k_rad);
                float* a = &vol.intensity[vol.index(i, j, 0)];
                const float inv_sigma = static_cast<float>(1.0 / sigma);
                for (int k = k0; k <= k1; ++k) {
                    const float qz = static_cast<float>(c.z + (k - nz / 2) * pitch.dz);
                    a[k] = r * gauss_response((qz - h) * inv_sigma);
                }
            }
        }
    } else {
        for (int j = 0; j < ny; ++j) {
            const double qy = c.y + (j - ny / 2) * pitch.dy;
            for (int i = 0; i < nx; ++i) {
                const double qx = c.x + (i - nx / 2) * pitch.dx;
                float* a = &vol.intensity[vol.index(i, j, 0)];
                for (int k = 0; k < nz; ++k) {
                    const double qz = c.z + (k - nz / 2) * pitch.dz;
                    a[k] = static_cast<float>(scene.tissue_at(qx, qy, qz));
                }
            }
        }
    }

    if (noise.sigma > 0.0) {
        const auto& pool = noise_pool();
        const std::uint32_t base = static_cast<std::uint32_t>(
            splitmix64(noise.seed * 0x9e3779b97f4a7c15ULL + noise.stream));
        const float s = static_cast<float>(noise.sigma);
        const std::uint32_t mask = (1u << kNoisePoolBits) - 1u;
        float* p = vol.intensity.data();
        const std::size_t n = vol.intensity.size();
        for (std::size_t k = 0; k < n; ++k) {
            // cheap per-voxel integer mix into the precomputed normal pool;
            // the stream seed is XORed in (not added) so that two streams are
            // never index-translated copies of each other, which a whitening
            // correlator would otherwise detect as a coherent shift
            std::uint32_t h = static_cast<std::uint32_t>(k) * 2654435761u;
            h ^= base;
            h ^= h >> 15;
            h *= 0x2c1b3c6dU;
            h ^= h >> 12;
            h *= 0x297a2d39U;
            h ^= h >> 15;
            p[k] = std::clamp(p[k] + s * pool[h & mask], 0.0f, 1.0f);
        }
    } else {
        for (auto& v : vol.intensity) v = std::clamp(v, 0.0f, 1.0f);
    }
    return vol;
}

// ---------------------------------------------------------------------------
// persistence

namespace {
constexpr std::uint32_t kSceneMagic = 0x4353434fu; // "OCSC"
constexpr std::uint32_t kSceneVersion = 2;

template <typename T>
void put(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void get(std::ifstream& f, T& v) {
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
}
void put_grid(std::ofstream& f, const std::vector<float>& g) {
    const std::uint64_t n = g.size();
    put(f, n);
    f.write(reinterpret_cast<const char*>(g.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
}
void get_grid(std::ifstream& f, std::vector<float>& g) {
    std::uint64_t n = 0;
    get(f, n);
    g.resize(n);
    f.read(reinterpret_cast<char*>(g.data()),
           static_cast<std::streamsize>(n * sizeof(float)));
}
} // namespace

void Scene::save(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("Scene::save: cannot open " + path.string());
    put(f, kSceneMagic);
    put(f, kSceneVersion);
    put(f, static_cast<std::uint32_t>(kind_));
    put(f, seed_);
    put(f, params_);
    put(f, grid_n_);
    put(f, speckle_n_);
    put(f, tnx_);
    put(f, tnz_);
    put_grid(f, height_);
    put_grid(f, reflect_);
    put_grid(f, plate_speckle_);
    put_grid(f, speckle_);
    if (!f) throw std::runtime_error("Scene::save: write failed");
}

Scene Scene::load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("Scene::load: cannot open " + path.string());
    std::uint32_t magic = 0, version = 0, kind = 0;
    get(f, magic);
    get(f, version);
    if (magic != kSceneMagic || version != kSceneVersion)
        throw std::runtime_error("Scene::load: bad magic/version");
    Scene s;
    get(f, kind);
    s.kind_ = static_cast<SceneKind>(kind);
    get(f, s.seed_);
    get(f, s.params_);
    get(f, s.grid_n_);
    get(f, s.speckle_n_);
    get(f, s.tnx_);
    get(f, s.tnz_);
    get_grid(f, s.height_);
    get_grid(f, s.reflect_);
    get_grid(f, s.plate_speckle_);
    get_grid(f, s.speckle_);
    if (!f) throw std::runtime_error("Scene::load: truncated file");
    return s;
}

void Scene::export_midplane_csv(const std::filesystem::path& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("export_midplane_csv: cannot open " + path.string());
    if (kind_ == SceneKind::plate) {
        for (int y = 0; y < grid_n_; ++y) {
            for (int x = 0; x < grid_n_; ++x)
                f << height_[static_cast<std::size_t>(y) * grid_n_ + x]
                  << (x + 1 < grid_n_ ? ',' : '\n');
        }
    } else {
        const int zmid = tnz_ / 2;
        for (int y = 0; y < tnx_; ++y) {
            for (int x = 0; x < tnx_; ++x)
                f << speckle_[(static_cast<std::size_t>(y) * tnx_ + x) * tnz_ + zmid]
                  << (x + 1 < tnx_ ? ',' : '\n');
        }
    }
}

} // namespace octrack
