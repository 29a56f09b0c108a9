#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "octrack/core.hpp"

namespace octrack {

/// Swept-source model: maps raw sample index to wavenumber k and carries the
/// static background baseline. samples_per_ascan = 2 * nz so the positive-
/// frequency half of the spectrum holds exactly nz depth bins.
struct SweepModel {
    int samples_per_ascan = 960;
    double k_min = 1.0;              // 1/mm
    double k_max = 0.0;              // set by make_default
    double nonlinearity = 0.1;       // quadratic sweep deviation, |a| < 1
    std::vector<double> background;  // per-sample baseline, detector units

    /// Wavenumber at (fractional) sample index i in [0, N-1].
    double k_of_index(double i) const;
    /// Maximum depth representable without aliasing, mm.
    double max_depth() const;

    /// Default model for nz depth bins over z_max mm; bin b maps to depth
    /// b * z_max / nz.
    static SweepModel make_default(int nz = 480, double z_max = 3.5);
};

struct RawAScan {
    std::vector<double> samples;
};

struct ReconConfig {
    enum class Window { hann, rectangular };
    Window window = Window::hann;
    double eps = 1e-4;  // log-compression floor, relative to full scale
    int nz = 480;
};

struct Reflector {
    double depth_mm = 0.0;
    double amplitude = 1.0;
};

/// Forward model: sample_i = background_i + sum_j a_j cos(2 k(i) z_j) + noise.
RawAScan synthesize_fringes(const std::vector<Reflector>& reflectors,
                            const SweepModel& sweep, double noise_sigma = 0.0,
                            std::uint64_t noise_seed = 0);

/// Linear-interpolation table from a uniform-k target grid back to raw
/// sample positions. Identity nonlinearity yields the identity table.
struct ResampleTable {
    std::vector<int> src_index;     // lower source sample per target
    std::vector<double> weight_hi;  // weight of src_index + 1
};
ResampleTable build_resampling_table(const SweepModel& sweep);

/// Pipeline up to (and excluding) compression: background subtraction,
/// k-space resampling, windowing, Fourier transform. Returns the nz
/// positive-frequency complex bins; linear in the raw input.
std::vector<std::complex<double>> reconstruct_spectrum(const RawAScan& raw,
                                                       const SweepModel& sweep,
                                                       const ReconConfig& cfg);

/// Full pipeline: reconstruct_spectrum, then log compression of magnitudes,
/// normalized and clipped to [0, 1].
std::vector<double> reconstruct_ascan(const RawAScan& raw, const SweepModel& sweep,
                                      const ReconConfig& cfg);

/// Elementwise reconstruction of nx*ny raw A-scans (A-scan order: x fast,
/// then y, matching the volume layout). Workers > 1 splits A-scans across
/// threads; the result does not depend on the worker count.
Volume reconstruct_volume(const std::vector<RawAScan>& raw, const VolumeDims& dims,
                          const VoxelPitch& pitch, const SweepModel& sweep,
                          const ReconConfig& cfg, int workers = 1);

} // namespace octrack
