// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Runtime budgets are measured wall-clock on the host.
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <random>
#include <vector>

#include "octrack/calibration.hpp"
#include "octrack/control.hpp"
#include "octrack/harness.hpp"
#include "octrack/phantom.hpp"
#include "octrack/recon.hpp"
#include "octrack/registration.hpp"

using namespace octrack;
using clock_t_ = std::chrono::steady_clock;

namespace {

int g_failures = 0;

bool report(bool ok, const char* fmt, ...) {
    std::printf("[%s] ", ok ? "PASS" : "FAIL");
    va_list args;
    va_start(args, fmt);
    std::vprintf(fmt, args);
    va_end(args);
    std::printf("\n");
    std::fflush(stdout);
    if (!ok) ++g_failures;
    return ok;
}

double seconds_since(clock_t_::time_point t0) {
    return std::chrono::duration<double>(clock_t_::now() - t0).count();
}

const VolumeDims kSmall{16, 16, 64};
const VoxelPitch kSmallPitch{2.5 / 16.0, 2.5 / 16.0, 3.5 / 64.0};

Volume random_volume(std::uint64_t seed) {
    Volume v(kSmall, kSmallPitch);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& x : v.intensity) x = u(rng);
    return v;
}

Volume cyclic_shift(const Volume& t, int dx, int dy, int dz) {
    Volume v(t.dims, t.pitch);
    const auto& d = t.dims;
    for (int y = 0; y < d.ny; ++y)
        for (int x = 0; x < d.nx; ++x)
            for (int z = 0; z < d.nz; ++z) {
                int sx = ((x - dx) % d.nx + d.nx) % d.nx;
                int sy = ((y - dy) % d.ny + d.ny) % d.ny;
                int sz = ((z - dz) % d.nz + d.nz) % d.nz;
                v.at(x, y, z) = t.at(sx, sy, sz);
            }
    return v;
}

void add_noise(Volume& v, double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n(0.0f, static_cast<float>(sigma));
    for (auto& x : v.intensity) x += n(rng);
}

// independent oracle: argmax over all cyclic shifts of the zero-mean spatial
// cross-correlation
VoxelShift brute_force_argmax(const Volume& tmpl, const Volume& live) {
    const auto& d = tmpl.dims;
    const int nx = d.nx, ny = d.ny, nz = d.nz;
    double tm = 0.0, lm = 0.0;
    for (float v : tmpl.intensity) tm += v;
    for (float v : live.intensity) lm += v;
    tm /= static_cast<double>(d.count());
    lm /= static_cast<double>(d.count());

    std::vector<float> t2(static_cast<std::size_t>(nx) * ny * 2 * nz);
    std::vector<float> l0(d.count());
    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x)
            for (int z = 0; z < nz; ++z) {
                float tv = static_cast<float>(tmpl.at(x, y, z) - tm);
                std::size_t r = (static_cast<std::size_t>(y) * nx + x) * 2 * nz;
                t2[r + z] = tv;
                t2[r + nz + z] = tv;
                l0[tmpl.index(x, y, z)] = static_cast<float>(live.at(x, y, z) - lm);
            }

    double best = -1e300;
    int bu = 0, bv = 0, bw = 0;
    std::vector<double> acc(nz);
    for (int sy = 0; sy < ny; ++sy)
        for (int sx = 0; sx < nx; ++sx) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int y = 0; y < ny; ++y)
                for (int x = 0; x < nx; ++x) {
                    const float* lrow = &l0[(static_cast<std::size_t>(y) * nx + x) * nz];
                    int tx = ((x - sx) % nx + nx) % nx;
                    int tyy = ((y - sy) % ny + ny) % ny;
                    const float* trow =
                        &t2[(static_cast<std::size_t>(tyy) * nx + tx) * 2 * nz];
                    for (int sz = 0; sz < nz; ++sz) {
                        const float* ts = trow + nz - sz;
                        float dot = 0.0f;
                        for (int z = 0; z < nz; ++z) dot += lrow[z] * ts[z];
                        acc[sz] += dot;
                    }
                }
            for (int sz = 0; sz < nz; ++sz)
                if (acc[sz] > best) {
                    best = acc[sz];
                    bu = sx;
                    bv = sy;
                    bw = sz;
                }
        }
    return wrap_shift(bu, bv, bw, d);
}

void criterion_1() {
    auto t0 = clock_t_::now();
    std::mt19937_64 rng(1001);
    std::uniform_int_distribution<int> dxy(-6, 6), dz(-24, 24);
    PhaseCorrelator pc(kSmall);

    int agree = 0;
    const int pairs = 200;
    for (int i = 0; i < pairs; ++i) {
        Volume t = random_volume(2000 + i);
        Volume l = cyclic_shift(t, dxy(rng), dxy(rng), dz(rng));
        double sigma = 0.02 + 0.08 * ((i % 5) / 4.0);  // 0.02 .. 0.1
        add_noise(l, sigma, 3000 + i);
        pc.set_template(t);
        if (pc.correlate(l).shift == brute_force_argmax(t, l)) ++agree;
    }

    int exact = 0;
    const int clean = 50;
    for (int i = 0; i < clean; ++i) {
        Volume t = random_volume(5000 + i);
        int sx = dxy(rng), sy = dxy(rng), sz = dz(rng);
        Volume l = cyclic_shift(t, sx, sy, sz);
        pc.set_template(t);
        if (pc.correlate(l).shift == VoxelShift{sx, sy, sz}) ++exact;
    }
    double dt = seconds_since(t0);
    report(agree >= 196 && exact == clean && dt < 60.0,
           "criterion 1: registration oracle — %d/%d noisy pairs match brute force "
           "(>=196), %d/%d clean exact, %.1f s (<60 s)",
           agree, pairs, exact, clean, dt);
}

void criterion_2() {
    Volume t = random_volume(42);
    PhaseCorrelator pc(kSmall);
    pc.set_template(t);
    int bad = 0;
    for (int dx = -4; dx <= 4; ++dx)
        for (int dy = -4; dy <= 4; ++dy)
            for (int dz = -4; dz <= 4; ++dz)
                if (pc.correlate(cyclic_shift(t, dx, dy, dz)).shift !=
                    VoxelShift{dx, dy, dz})
                    ++bad;
    report(bad == 0, "criterion 2: shift equivariance over {-4..4}^3 — %d/729 mismatches",
           bad);
}

void criterion_3() {
    SweepModel s = SweepModel::make_default();
    ReconConfig cfg;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> depth(0.2, 3.3);
    int bad = 0;
    for (int i = 0; i < 50; ++i) {
        double d = depth(rng);
        RawAScan raw = synthesize_fringes({{d, 1.0}}, s, 0.01, rng());
        auto out = reconstruct_ascan(raw, s, cfg);
        int pk = 0;
        for (std::size_t b = 1; b < out.size(); ++b)
            if (out[b] > out[pk]) pk = static_cast<int>(b);
        int expected = static_cast<int>(std::round(d * 480.0 / 3.5));
        if (std::abs(pk - expected) > 1) ++bad;
    }

    RawAScan a = synthesize_fringes({{1.5, 1.0}}, s, 0.0, 0);
    RawAScan b = a;
    for (auto& v : b.samples) v += 42.0;
    auto sa = reconstruct_spectrum(a, s, cfg);
    auto sb = reconstruct_spectrum(b, s, cfg);
    double scale = 0.0, diff = 0.0;
    for (std::size_t i = 0; i < sa.size(); ++i) {
        scale = std::max(scale, std::abs(sa[i]));
        diff = std::max(diff, std::abs(sa[i] - sb[i]));
    }
    report(bad == 0 && diff <= 1e-6 * scale,
           "criterion 3: reconstruction — %d/50 peak-bin errors >1, background "
           "invariance %.2e (<=1e-6 rel)",
           bad, diff / scale);
}

void criterion_4() {
    auto t0 = clock_t_::now();
    SimWorld w{.scene = make_scene(SceneKind::plate, 4001)};
    w.trajectory.noise_sigma = 0.01;
    w.trajectory.noise_seed = 4002;
    w.render_seed = 4003;
    ControllerConfig cfg;
    auto samples = collect_grid(w, cfg, GridSpec{});
    Eigen::Matrix3d A;
    Eigen::Vector3d b;
    fit_affine(samples, A, b);
    CalibrationModel m = fit_calibration(samples);
    double full = calibration_rmse(m, samples);
    double aff = affine_rmse(A, b, samples);
    double dt = seconds_since(t0);
    report(samples.size() == 2500 && full <= 0.15 && aff >= 2.0 * full && dt < 120.0,
           "criterion 4: calibration — %zu samples, rmse %.4f mm (<=0.15), affine-only "
           "%.4f mm (>=2x), %.1f s (<120 s)",
           samples.size(), full, aff, dt);
}

struct LoopOutcome {
    bool rmse_ok_3d = false;
    bool rmse_ok_lat = false;
    bool no_failures = false;
    double worst_3d = 0.0, worst_lat = 0.0;
    int failures = 0;
};

LoopOutcome run_criterion5(double compression) {
    ExperimentConfig diag;
    diag.motion = MotionKind::diagonal_3d;
    diag.velocities_mms = {25.0};
    diag.repeats = 6;
    diag.duration_s = 60.0;
    diag.seed = 501;
    diag.time_compression = compression;

    ExperimentConfig lat = diag;
    lat.motion = MotionKind::lateral_diagonal;
    lat.velocities_mms = {10.0};
    lat.seed = 502;

    LoopOutcome o;
    ExperimentReport rd = run_experiment(diag, {});
    ExperimentReport rl = run_experiment(lat, {});
    o.rmse_ok_3d = true;
    o.rmse_ok_lat = true;
    o.no_failures = true;
    for (const RunResult& r : rd.runs) {
        o.worst_3d = std::max(o.worst_3d, r.rmse_mm);
        if (r.failed) {
            o.no_failures = false;
            ++o.failures;
        }
        if (r.rmse_mm > 0.3 || r.rmse_mm < 0.0) o.rmse_ok_3d = false;
    }
    for (const RunResult& r : rl.runs) {
        o.worst_lat = std::max(o.worst_lat, r.rmse_mm);
        if (r.failed) {
            o.no_failures = false;
            ++o.failures;
        }
        if (r.rmse_mm > 0.2 || r.rmse_mm < 0.0) o.rmse_ok_lat = false;
    }
    return o;
}

void criterion_5() {
    auto t0 = clock_t_::now();
    LoopOutcome full = run_criterion5(1.0);
    double dt_full = seconds_since(t0);
    report(full.rmse_ok_3d && full.rmse_ok_lat && full.no_failures,
           "criterion 5a: closed loop at full rate — 3D 25 mm/s worst rmse %.3f mm "
           "(<=0.3), lateral 10 mm/s worst rmse %.3f mm (<=0.2), %d failures",
           full.worst_3d, full.worst_lat, full.failures);
    report(dt_full < 600.0,
           "criterion 5b: full-rate runtime %.0f s (<600 s budget; single-core host)",
           dt_full);

    LoopOutcome comp = run_criterion5(10.0);
    bool identical = comp.rmse_ok_3d == full.rmse_ok_3d &&
                     comp.rmse_ok_lat == full.rmse_ok_lat &&
                     comp.no_failures == full.no_failures;
    report(identical,
           "criterion 5c: 10x time-compressed mode pass/fail identical — 3D %s/%s, "
           "lateral %s/%s, failures %d/%d",
           comp.rmse_ok_3d ? "ok" : "bad", full.rmse_ok_3d ? "ok" : "bad",
           comp.rmse_ok_lat ? "ok" : "bad", full.rmse_ok_lat ? "ok" : "bad",
           comp.failures, full.failures);
}

void criterion_6() {
    SimWorld w{.scene = make_scene(SceneKind::plate, 601)};
    w.trajectory.kind = MotionKind::axial_sine;
    w.trajectory.velocity = 1.5;
    w.trajectory.span = 0.14;  // amplitude 0.07 mm; 0.7 * 0.07 < 0.075
    w.trajectory.noise_sigma = 0.005;
    w.trajectory.noise_seed = 602;
    w.render_seed = 603;
    ControllerConfig cfg;
    TrackingLog log = run_loop(w, cfg, 10.0);
    report(log.motor_commands_issued == 0 && !log.lost_sample,
           "criterion 6: deadband — %lld motor commands over 10 s (expect 0)",
           static_cast<long long>(log.motor_commands_issued));
}

void criterion_7() {
    auto make = [](MotionKind kind, std::uint64_t seed) {
        SimWorld w{.scene = make_scene(SceneKind::plate, seed)};
        w.trajectory.kind = kind;
        w.trajectory.velocity = 40.0;
        w.trajectory.span = 30.0;
        w.trajectory.noise_sigma = 0.01;
        w.trajectory.noise_seed = seed + 1;
        w.render_seed = seed + 2;
        return w;
    };
    ControllerConfig cfg;
    TrackingLog axial = run_loop(make(MotionKind::axial, 701), cfg, 10.0);
    TrackingLog lateral = run_loop(make(MotionKind::lateral_diagonal, 711), cfg, 10.0);
    LatencyCurve ca = latency_sweep(axial, -0.05, 0.05, 0.001);
    LatencyCurve cl = latency_sweep(lateral, -0.05, 0.05, 0.001);
    double rmse_a0 = compute_rmse(axial, 0.0);
    double rmse_l0 = compute_rmse(lateral, 0.0);
    report(ca.argmin_delay_s > cl.argmin_delay_s && rmse_l0 < rmse_a0,
           "criterion 7: latency sweep at 40 mm/s — axial argmin %.1f ms > lateral "
           "%.1f ms; rmse(0) lateral %.3f < axial %.3f mm",
           1e3 * ca.argmin_delay_s, 1e3 * cl.argmin_delay_s, rmse_l0, rmse_a0);
}

void criterion_8() {
    SimWorld w{.scene = make_scene(SceneKind::plate, 801)};
    w.trajectory.kind = MotionKind::lateral_diagonal;
    w.trajectory.velocity = 10.0;
    w.trajectory.noise_seed = 802;
    w.render_seed = 803;
    ControllerConfig cfg;
    TrackingLog log = run_loop(w, cfg, 2.0);
    bool clean_ok = !run_failed(log);
    TrackingLog bad = log;  // fault injection: one sample pushed above 2 mm
    bad.entries[bad.entries.size() / 2].est.x += 2.1;
    bool injected_fails = run_failed(bad);
    report(clean_ok && injected_fails,
           "criterion 8: failure rule — clean run failed=%d, injected 2.1 mm error "
           "failed=%d",
           !clean_ok, injected_fails);
}

void criterion_9() {
    BenchmarkConfig cfg;
    cfg.seconds = 5.0;
    BenchmarkResult r = benchmark_throughput(cfg);
    report(r.mean_vps >= 100.0,
           "criterion 9: throughput — %.1f vol/s mean (p5 %.1f) on 32x32x480 vs "
           "target %.0f vol/s (pass >=100)",
           r.mean_vps, r.p5_vps, r.target_vps);
}

void criterion_10() {
    ExperimentConfig cfg;
    cfg.motion = MotionKind::diagonal_3d;
    cfg.velocities_mms = {15.0};
    cfg.repeats = 2;
    cfg.duration_s = 10.0;
    cfg.time_compression = 10.0;
    cfg.seed = 1010;
    auto dir1 = std::filesystem::temp_directory_path() / "octrack_acc_d1";
    auto dir2 = std::filesystem::temp_directory_path() / "octrack_acc_d2";
    std::string a = run_experiment(cfg, dir1).to_json();
    std::string b = run_experiment(cfg, dir2).to_json();
    std::filesystem::remove_all(dir1);
    std::filesystem::remove_all(dir2);
    report(a == b && !a.empty(),
           "criterion 10: determinism — report JSON byte-identical across runs (%zu "
           "bytes)",
           a.size());
}

} // namespace

int main() {
    auto t0 = clock_t_::now();
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    criterion_10();
    criterion_5();  // longest last
    std::printf("acceptance: %d failure(s), total %.0f s\n", g_failures,
                seconds_since(t0));
    return g_failures == 0 ? 0 : 1;
}
