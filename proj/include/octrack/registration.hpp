#pragma once

#include <array>
#include <complex>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "octrack/core.hpp"

namespace octrack {

struct FilterParams {
    double sigma = 0.5;  // Gaussian low-pass std as fraction of Nyquist, per axis
    double eps = 1e-9;   // cross-spectrum magnitude normalization guard
};

/// Result of one template/live registration. Convention: the live volume
/// satisfies V(x) = T(x - shift), i.e. shift is the sample displacement from
/// template to live in voxels. confidence is the normalized correlation peak,
/// ~1 for a perfect match, 0 for degenerate (constant) input.
struct MatchResult {
    VoxelShift shift;
    double confidence = 0.0;
    bool degenerate = false;
};

/// Global argmax of a real grid. Ties break toward the smallest linear index;
/// the result does not depend on the worker count.
std::pair<std::array<int, 3>, float> find_peak(std::span<const float> grid,
                                               const VolumeDims& dims,
                                               int workers = 1);

/// Multiplies a full complex spectrum (layout as the volume, z fastest) by a
/// separable Gaussian centered at DC with std sigma * Nyquist per axis.
void apply_lowpass(std::span<std::complex<float>> spectrum,
                   const VolumeDims& dims, const FilterParams& fp);

/// Reusable phase-correlation engine for a fixed volume size. Caches FFT
/// plans, work buffers and (optionally) the template spectrum, so the per-call
/// cost in a tracking loop is one forward FFT, elementwise ops, one inverse
/// FFT and the peak search.
class PhaseCorrelator {
public:
    PhaseCorrelator(const VolumeDims& dims, const FilterParams& fp = {});
    ~PhaseCorrelator();
    PhaseCorrelator(PhaseCorrelator&&) noexcept;
    PhaseCorrelator& operator=(PhaseCorrelator&&) noexcept;
    PhaseCorrelator(const PhaseCorrelator&) = delete;
    PhaseCorrelator& operator=(const PhaseCorrelator&) = delete;

    void set_template(const Volume& tmpl);
    MatchResult correlate(const Volume& live) const;

    const VolumeDims& dims() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// One-shot convenience wrapper around PhaseCorrelator.
MatchResult phase_correlate(const Volume& tmpl, const Volume& live,
                            const FilterParams& fp = {});

} // namespace octrack
