#include "octrack/recon.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <random>
#include <thread>

namespace octrack {

namespace {

std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

double hann(int n, int N) {
    return 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * n / (N - 1)));
}

} // namespace

double SweepModel::k_of_index(double i) const {
    const double u = i / (samples_per_ascan - 1);
    return k_min + (k_max - k_min) * (u + nonlinearity * u * (1.0 - u));
}

double SweepModel::max_depth() const {
    // Nyquist of the uniform-k grid: fringe frequency z/pi cycles per unit k.
    const double dk = (k_max - k_min) / (samples_per_ascan - 1);
    return std::numbers::pi / (2.0 * dk);
}

SweepModel SweepModel::make_default(int nz, double z_max) {
    SweepModel m;
    m.samples_per_ascan = 2 * nz;
    m.k_min = 1.0;
    // Span chosen so spectrum bin b lands at depth b * z_max / nz.
    const int n = m.samples_per_ascan;
    m.k_max = m.k_min + nz * std::numbers::pi / z_max * (n - 1) / n;
    m.nonlinearity = 0.1;
    m.background.resize(n);
    for (int i = 0; i < n; ++i) {
        const double u = static_cast<double>(i) / (n - 1);
        m.background[i] = 100.0 + 20.0 * std::cos(2.0 * std::numbers::pi * 1.5 * u);
    }
    return m;
}

RawAScan synthesize_fringes(const std::vector<Reflector>& reflectors,
                            const SweepModel& sweep, double noise_sigma,
                            std::uint64_t noise_seed) {
    const int n = sweep.samples_per_ascan;
    if (n < 4) throw ParameterError("synthesize_fringes: bad sweep length");
    const double zmax = sweep.max_depth();
    for (const auto& r : reflectors)
        if (r.depth_mm < 0.0 || r.depth_mm >= zmax)
            throw ParameterError("synthesize_fringes: reflector depth outside range");

    RawAScan raw;
    raw.samples.resize(n);
    std::mt19937_64 rng(noise_seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        double s = sweep.background.empty() ? 0.0 : sweep.background[i];
        const double k = sweep.k_of_index(i);
        for (const auto& r : reflectors) s += r.amplitude * std::cos(2.0 * k * r.depth_mm);
        if (noise_sigma > 0.0) s += noise_sigma * gauss(rng);
        raw.samples[i] = s;
    }
    return raw;
}

ResampleTable build_resampling_table(const SweepModel& sweep) {
    const int n = sweep.samples_per_ascan;
    std::vector<double> k(n);
    for (int i = 0; i < n; ++i) k[i] = sweep.k_of_index(i);
    for (int i = 0; i + 1 < n; ++i)
        if (k[i + 1] <= k[i])
            throw ParameterError("build_resampling_table: k mapping not monotone");

    ResampleTable t;
    t.src_index.resize(n);
    t.weight_hi.resize(n);
    const double k0 = k.front(), k1 = k.back();
    int lo = 0;
    for (int j = 0; j < n; ++j) {
        const double target = k0 + (k1 - k0) * j / (n - 1);
        while (lo + 2 < n && k[lo + 1] <= target) ++lo;
        t.src_index[j] = lo;
        t.weight_hi[j] = std::clamp((target - k[lo]) / (k[lo + 1] - k[lo]), 0.0, 1.0);
    }
    return t;
}

std::vector<std::complex<double>> reconstruct_spectrum(const RawAScan& raw,
                                                       const SweepModel& sweep,
                                                       const ReconConfig& cfg) {
    const int n = sweep.samples_per_ascan;
    if (static_cast<int>(raw.samples.size()) != n)
        throw ContractError("reconstruct_spectrum: raw length mismatch");
    if (cfg.eps <= 0.0) throw ParameterError("reconstruct_spectrum: eps must be > 0");
    if (cfg.nz < 1 || cfg.nz > n / 2)
        throw ParameterError("reconstruct_spectrum: nz outside [1, n/2]");
    if (!sweep.background.empty() &&
        static_cast<int>(sweep.background.size()) != n)
        throw ContractError("reconstruct_spectrum: background length mismatch");

    // 1. background subtraction (model baseline, then the residual mean so a
    //    constant offset on the detector cancels exactly)
    std::vector<double> x(raw.samples);
    if (!sweep.background.empty())
        for (int i = 0; i < n; ++i) x[i] -= sweep.background[i];
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    for (double& v : x) v -= mean;

    // 2. re-sampling to uniform k
    const ResampleTable t = build_resampling_table(sweep);
    std::vector<double> u(n);
    for (int j = 0; j < n; ++j) {
        const int i = t.src_index[j];
        u[j] = (1.0 - t.weight_hi[j]) * x[i] + t.weight_hi[j] * x[i + 1];
    }

    // 3. windowing
    if (cfg.window == ReconConfig::Window::hann)
        for (int j = 0; j < n; ++j) u[j] *= hann(j, n);

    // 4. Fourier transform, positive-frequency half
    double* in = fftw_alloc_real(n);
    fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
    std::copy(u.begin(), u.end(), in);
    fftw_plan plan;
    {
        std::lock_guard lock(planner_mutex());
        plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE | FFTW_PRESERVE_INPUT);
    }
    fftw_execute(plan);
    std::vector<std::complex<double>> spec(cfg.nz);
    for (int b = 0; b < cfg.nz; ++b) spec[b] = {out[b][0], out[b][1]};
    {
        std::lock_guard lock(planner_mutex());
        fftw_destroy_plan(plan);
    }
    fftw_free(in);
    fftw_free(out);
    return spec;
}

std::vector<double> reconstruct_ascan(const RawAScan& raw, const SweepModel& sweep,
                                      const ReconConfig& cfg) {
    const auto spec = reconstruct_spectrum(raw, sweep, cfg);
    const int n = sweep.samples_per_ascan;

    // Full scale: peak magnitude of a unit-amplitude reflector, (sum of
    // window) / 2.
    double wsum = 0.0;
    for (int j = 0; j < n; ++j)
        wsum += cfg.window == ReconConfig::Window::hann ? hann(j, n) : 1.0;
    const double ref = wsum / 2.0;
    const double denom = std::log1p(1.0 / cfg.eps);

    std::vector<double> out(spec.size());
    for (std::size_t b = 0; b < spec.size(); ++b) {
        const double r = std::abs(spec[b]) / ref;
        out[b] = std::clamp(std::log1p(r / cfg.eps) / denom, 0.0, 1.0);
    }
    return out;
}

Volume reconstruct_volume(const std::vector<RawAScan>& raw, const VolumeDims& dims,
                          const VoxelPitch& pitch, const SweepModel& sweep,
                          const ReconConfig& cfg, int workers) {
    if (static_cast<int>(raw.size()) != dims.nx * dims.ny)
        throw ContractError("reconstruct_volume: A-scan count mismatch");
    if (cfg.nz != dims.nz)
        throw ContractError("reconstruct_volume: depth bin count mismatch");

    Volume vol(dims, pitch);
    auto work = [&](int begin, int end) {
        for (int a = begin; a < end; ++a) {
            const auto col = reconstruct_ascan(raw[a], sweep, cfg);
            float* dst = &vol.intensity[static_cast<std::size_t>(a) * dims.nz];
            for (int z = 0; z < dims.nz; ++z) dst[z] = static_cast<float>(col[z]);
        }
    };

    const int total = dims.nx * dims.ny;
    if (workers <= 1) {
        work(0, total);
    } else {
        std::vector<std::thread> pool;
        const int w = std::min(workers, total);
        for (int i = 0; i < w; ++i)
            pool.emplace_back(work, i * total / w, (i + 1) * total / w);
        for (auto& th : pool) th.join();
    }
    return vol;
}

} // namespace octrack
