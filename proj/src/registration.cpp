#include "octrack/registration.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <string>
#include <thread>

namespace octrack {

namespace {

// FFTW's planner is not thread-safe; plan creation/destruction is serialized.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

std::string wisdom_path() {
    if (const char* p = std::getenv("OCTRACK_FFTW_WISDOM")) return p;
    if (const char* x = std::getenv("XDG_CACHE_HOME"))
        return std::string(x) + "/octrack_fftwf_wisdom";
    if (const char* h = std::getenv("HOME"))
        return std::string(h) + "/.cache/octrack_fftwf_wisdom";
    return "/tmp/octrack_fftwf_wisdom";
}

// Large plans use FFTW_PATIENT, which is ~2x faster at runtime but expensive
// to plan; accumulated wisdom is cached on disk so only the first process
// ever pays the planning cost. Callers must hold the planner mutex.
void import_wisdom_locked() {
    static bool done = false;
    if (done) return;
    done = true;
    fftwf_import_wisdom_from_filename(wisdom_path().c_str());
}

void export_wisdom_locked() {
    const std::filesystem::path p = wisdom_path();
    std::error_code ec;
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path(), ec);
    fftwf_export_wisdom_to_filename(p.string().c_str());
}

double gaussian_weight(int k, int n, double sigma_frac) {
    const int f = k <= n / 2 ? k : k - n; // signed frequency index
    const double s = sigma_frac * (n / 2.0);
    return std::exp(-0.5 * (f / s) * (f / s));
}

} // namespace

std::pair<std::array<int, 3>, float> find_peak(std::span<const float> grid,
                                               const VolumeDims& dims,
                                               int workers) {
    if (grid.empty() || grid.size() != dims.count())
        throw ContractError("find_peak: grid/dims mismatch");

    const std::size_t n = grid.size();
    // Two passes: a branchless max reduction, then the first index holding
    // that value. The first match is the smallest linear index, so ties are
    // resolved identically for any partitioning.
    auto scan = [&](std::size_t begin, std::size_t end) {
        float best_v = grid[begin];
        for (std::size_t i = begin; i < end; ++i)
            best_v = std::max(best_v, grid[i]);
        std::size_t best = begin;
        while (grid[best] != best_v) ++best;
        return std::pair<std::size_t, float>{best, best_v};
    };

    std::size_t best = 0;
    float best_v = grid[0];
    if (workers <= 1) {
        std::tie(best, best_v) = scan(0, n);
    } else {
        const std::size_t w = std::min<std::size_t>(workers, n);
        std::vector<std::pair<std::size_t, float>> parts(w);
        std::vector<std::thread> pool;
        pool.reserve(w);
        for (std::size_t i = 0; i < w; ++i) {
            const std::size_t b = i * n / w;
            const std::size_t e = (i + 1) * n / w;
            pool.emplace_back([&, i, b, e] { parts[i] = scan(b, e); });
        }
        for (auto& t : pool) t.join();
        best = parts[0].first;
        best_v = parts[0].second;
        for (std::size_t i = 1; i < w; ++i) {
            // Tie toward the smallest linear index keeps the result
            // independent of the partitioning.
            if (parts[i].second > best_v) {
                best = parts[i].first;
                best_v = parts[i].second;
            }
        }
    }

    const int nz = dims.nz, nx = dims.nx;
    const int z = static_cast<int>(best % nz);
    const int x = static_cast<int>((best / nz) % nx);
    const int y = static_cast<int>(best / (static_cast<std::size_t>(nz) * nx));
    return {{x, y, z}, best_v};
}

void apply_lowpass(std::span<std::complex<float>> spectrum,
                   const VolumeDims& dims, const FilterParams& fp) {
    if (spectrum.size() != dims.count())
        throw ContractError("apply_lowpass: spectrum/dims mismatch");
    if (fp.sigma <= 0.0) throw ParameterError("apply_lowpass: sigma must be > 0");

    std::size_t i = 0;
    for (int y = 0; y < dims.ny; ++y) {
        const double wy = gaussian_weight(y, dims.ny, fp.sigma);
        for (int x = 0; x < dims.nx; ++x) {
            const double wxy = wy * gaussian_weight(x, dims.nx, fp.sigma);
            for (int z = 0; z < dims.nz; ++z, ++i)
                spectrum[i] *= static_cast<float>(wxy * gaussian_weight(z, dims.nz, fp.sigma));
        }
    }
}

struct PhaseCorrelator::Impl {
    VolumeDims dims;
    FilterParams fp;
    int nkz = 0;          // r2c half-spectrum depth, nz/2 + 1
    std::size_t nspec = 0;

    fftwf_plan fwd = nullptr;
    fftwf_plan inv = nullptr;
    float* real_buf = nullptr;          // dims.count()
    fftwf_complex* spec_buf = nullptr;  // live / cross spectrum
    fftwf_complex* tmpl_spec = nullptr;

    std::vector<float> lowpass;  // half-spectrum Gaussian weights
    double lowpass_sum_full = 0; // sum over the full (hermitian) spectrum
    bool tmpl_set = false;
    bool tmpl_degenerate = false;

    Impl(const VolumeDims& d, const FilterParams& f) : dims(d), fp(f) {
        if (!d.valid()) throw ContractError("PhaseCorrelator: invalid dims");
        if (f.sigma <= 0.0 || f.eps < 0.0)
            throw ParameterError("PhaseCorrelator: invalid filter params");
        nkz = d.nz / 2 + 1;
        nspec = static_cast<std::size_t>(d.ny) * d.nx * nkz;

        real_buf = fftwf_alloc_real(d.count());
        spec_buf = fftwf_alloc_complex(nspec);
        tmpl_spec = fftwf_alloc_complex(nspec);
        {
            std::lock_guard lock(planner_mutex());
            import_wisdom_locked();
            const unsigned flags = d.count() >= 200000 ? FFTW_PATIENT : FFTW_MEASURE;
            fwd = fftwf_plan_dft_r2c_3d(d.ny, d.nx, d.nz, real_buf, spec_buf, flags);
            inv = fftwf_plan_dft_c2r_3d(d.ny, d.nx, d.nz, spec_buf, real_buf, flags);
            if (flags == FFTW_PATIENT) export_wisdom_locked();
        }
        if (!fwd || !inv) throw std::runtime_error("PhaseCorrelator: FFT planning failed");

        lowpass.resize(nspec);
        std::size_t i = 0;
        for (int y = 0; y < d.ny; ++y) {
            const double wy = gaussian_weight(y, d.ny, f.sigma);
            for (int x = 0; x < d.nx; ++x) {
                const double wxy = wy * gaussian_weight(x, d.nx, f.sigma);
                for (int z = 0; z < nkz; ++z, ++i) {
                    const double w = wxy * gaussian_weight(z, d.nz, f.sigma);
                    lowpass[i] = static_cast<float>(w);
                    // kz = 0 and (for even nz) kz = nz/2 have no conjugate twin.
                    const bool self_conj = z == 0 || (d.nz % 2 == 0 && z == d.nz / 2);
                    lowpass_sum_full += self_conj ? w : 2.0 * w;
                }
            }
        }
    }

    ~Impl() {
        std::lock_guard lock(planner_mutex());
        if (fwd) fftwf_destroy_plan(fwd);
        if (inv) fftwf_destroy_plan(inv);
        fftwf_free(real_buf);
        fftwf_free(spec_buf);
        fftwf_free(tmpl_spec);
    }

    // Forward FFT of a volume into dst; returns a texture measure
    // (sum of squared deviations from the first sample) that is exactly
    // zero for constant input, used for the degenerate-input check.
    double forward(const Volume& v, fftwf_complex* dst) {
        const std::size_t n = v.intensity.size();
        const float* src = v.intensity.data();
        const float ref = src[0];
        float dev = 0.0f;
        for (std::size_t i = 0; i < n; ++i) {
            const float x = src[i];
            real_buf[i] = x;
            const float d = x - ref;
            dev += d * d;
        }
        fftwf_execute_dft_r2c(fwd, real_buf, dst);
        return dev;
    }
};

PhaseCorrelator::PhaseCorrelator(const VolumeDims& dims, const FilterParams& fp)
    : impl_(std::make_unique<Impl>(dims, fp)) {}
PhaseCorrelator::~PhaseCorrelator() = default;
PhaseCorrelator::PhaseCorrelator(PhaseCorrelator&&) noexcept = default;
PhaseCorrelator& PhaseCorrelator::operator=(PhaseCorrelator&&) noexcept = default;

const VolumeDims& PhaseCorrelator::dims() const { return impl_->dims; }

void PhaseCorrelator::set_template(const Volume& tmpl) {
    if (tmpl.dims != impl_->dims)
        throw ContractError("PhaseCorrelator: template dims mismatch");
    const double energy = impl_->forward(tmpl, impl_->tmpl_spec);
    impl_->tmpl_degenerate = energy <= 1e-12;
    impl_->tmpl_set = true;
}

MatchResult PhaseCorrelator::correlate(const Volume& live) const {
    Impl& im = *impl_;
    if (!im.tmpl_set) throw ContractError("PhaseCorrelator: no template set");
    if (live.dims != im.dims)
        throw ContractError("PhaseCorrelator: live dims mismatch");

    const double live_energy = im.forward(live, im.spec_buf);
    if (im.tmpl_degenerate || live_energy <= 1e-12)
        return {.shift = {0, 0, 0}, .confidence = 0.0, .degenerate = true};

    // Normalized, low-pass weighted cross-power spectrum, in place.
    const float eps = static_cast<float>(im.fp.eps);
    for (std::size_t i = 0; i < im.nspec; ++i) {
        const float lr = im.spec_buf[i][0], li = im.spec_buf[i][1];
        const float tr = im.tmpl_spec[i][0], ti = im.tmpl_spec[i][1];
        const float cr = lr * tr + li * ti;  // live * conj(template)
        const float ci = li * tr - lr * ti;
        const float scale = im.lowpass[i] / (std::sqrt(cr * cr + ci * ci) + eps);
        im.spec_buf[i][0] = cr * scale;
        im.spec_buf[i][1] = ci * scale;
    }
    fftwf_execute_dft_c2r(im.inv, im.spec_buf, im.real_buf);

    auto [raw, peak] = find_peak({im.real_buf, im.dims.count()}, im.dims);
    MatchResult r;
    r.shift = wrap_shift(raw[0], raw[1], raw[2], im.dims);
    r.confidence = peak / im.lowpass_sum_full;
    return r;
}

MatchResult phase_correlate(const Volume& tmpl, const Volume& live,
                            const FilterParams& fp) {
    if (tmpl.dims != live.dims)
        throw ContractError("phase_correlate: dims mismatch");
    PhaseCorrelator pc(tmpl.dims, fp);
    pc.set_template(tmpl);
    return pc.correlate(live);
}

} // namespace octrack
