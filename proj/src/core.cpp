#include "octrack/core.hpp"

#include <cstring>
#include <fstream>

namespace octrack {

namespace {

int wrap_component(int c, int dim) {
    // Tie rule: c == dim/2 stays positive.
    return c <= dim / 2 ? c : c - dim;
}

} // namespace

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double hashed_uniform01(std::uint64_t key) {
    return (splitmix64(key) >> 11) * 0x1.0p-53;
}

double hashed_normal(std::uint64_t key) {
    const double u1 = std::max(hashed_uniform01(key), 1e-16);
    const double u2 = hashed_uniform01(key ^ 0xda3e39cb94b95bdbULL);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

VoxelShift wrap_shift(int u, int v, int w, const VolumeDims& dims) {
    if (!dims.valid()) throw ContractError("wrap_shift: invalid dims");
    if (u < 0 || u >= dims.nx || v < 0 || v >= dims.ny || w < 0 || w >= dims.nz)
        throw ContractError("wrap_shift: raw index out of range");
    return {wrap_component(u, dims.nx), wrap_component(v, dims.ny),
            wrap_component(w, dims.nz)};
}

MetricDisplacement voxel_to_metric(const VoxelShift& s, const VoxelPitch& p) {
    if (!p.valid()) throw ContractError("voxel_to_metric: invalid pitch");
    return {s.sx * p.dx, s.sy * p.dy, s.sz * p.dz};
}

void save_volume(const std::filesystem::path& path, const Volume& v) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_volume: cannot open " + path.string());
    const std::uint32_t header[4] = {
        static_cast<std::uint32_t>(v.dims.nx), static_cast<std::uint32_t>(v.dims.ny),
        static_cast<std::uint32_t>(v.dims.nz), kVolumeFileVersion};
    f.write(reinterpret_cast<const char*>(header), sizeof(header));
    f.write(reinterpret_cast<const char*>(v.intensity.data()),
            static_cast<std::streamsize>(v.intensity.size() * sizeof(float)));
    if (!f) throw std::runtime_error("save_volume: write failed");
}

Volume load_volume(const std::filesystem::path& path, const VoxelPitch& pitch) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_volume: cannot open " + path.string());
    std::uint32_t header[4];
    f.read(reinterpret_cast<char*>(header), sizeof(header));
    if (!f) throw std::runtime_error("load_volume: short header");
    if (header[3] != kVolumeFileVersion)
        throw std::runtime_error("load_volume: unsupported version");
    VolumeDims dims{static_cast<int>(header[0]), static_cast<int>(header[1]),
                    static_cast<int>(header[2])};
    if (!dims.valid()) throw std::runtime_error("load_volume: bad dims");
    Volume v(dims, pitch);
    f.read(reinterpret_cast<char*>(v.intensity.data()),
           static_cast<std::streamsize>(v.intensity.size() * sizeof(float)));
    if (!f) throw std::runtime_error("load_volume: truncated data");
    return v;
}

} // namespace octrack
