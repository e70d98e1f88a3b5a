#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "ddsense/errors.hpp"
#include "ddsense/linalg.hpp"
#include "ddsense/schedule.hpp"

// Propagation engines for the three physical models:
//   * bare driven qubit (2x2, pure state),
//   * sensor + unpolarised target spin (4x4 density matrix),
//   * three-level leak system (3x3, pure state).
//
// Unit convention: times in tau, frequencies in 1/tau.  A detuning d
// contributes phase 2 pi d per tau of free evolution, i.e. the free
// Hamiltonian carries pi d sigma_z.  A Rabi frequency w drives at
// pi w sigma_phi, so the nominal pi-pulse duration is 1/(2w).

namespace ddsense {

struct ErrorModel {
    double rotation_fraction = 1.0; // 1 = perfect pulses
    double detuning = 0.0;          // drive offset from the qubit resonance, 1/tau
};

// Target-spin parameters for NMR-style sensing.  The secular dipolar
// interaction keeps the z-z and z-x terms; by default both have equal
// magnitude.
struct SensingModel {
    double f_larmor = 0.5; // target precession frequency, 1/tau
    double a_zz = 0.0;     // coupling amplitudes, 1/tau
    double a_zx = 0.0;

    static SensingModel equal_coupling(double f_larmor, double a) {
        return SensingModel{f_larmor, a, a};
    }
};

struct LeakModel {
    double delta_leak = 0.0; // energy of |3> in the frame where |1>-|2> is resonant
    double rabi = 0.0;       // drive strength, 1/tau
};

enum class PulseModel { Delta, Finite };

struct EngineOptions {
    PulseModel pulse_model = PulseModel::Delta;
};

namespace detail {

constexpr double two_pi = 2.0 * std::numbers::pi;

inline double nominal_angle(PulseKind k) {
    return k == PulseKind::Full ? std::numbers::pi : std::numbers::pi / 2.0;
}

// Realised pulse duration under the schedule's scaling mode.
inline double realized_duration(const SequenceSchedule& s, const PulseEvent& ev,
                                double rotation_fraction) {
    if (s.mode == ScalingMode::DurationScaled)
        return ev.duration * rotation_fraction;
    return ev.duration;
}

// Drive amplitude entering the Hamiltonian (before envelope slicing).
inline double realized_amplitude(const SequenceSchedule& s, double rotation_fraction) {
    const double w = s.rabi();
    if (s.mode == ScalingMode::DurationScaled)
        return w;
    return w * rotation_fraction;
}

inline void require_delta(const SequenceSchedule& s) {
    if (!s.is_delta())
        throw model_mismatch("delta engine requires zero pulse durations "
                             "(schedule has finite-width pulses)");
}

inline void require_finite(const SequenceSchedule& s, double rotation_fraction) {
    if (s.is_delta())
        throw model_mismatch("finite-width engine requires nonzero pulse durations");
    if (s.mode == ScalingMode::DurationScaled)
        check_overlap(s.pi_duration * rotation_fraction, s.tau);
}

// Small cache of composed pulse unitaries, keyed by (kind, phase).  The
// phase set per protocol is at most four values, so linear scan is fine.
class PulseCache {
  public:
    template <typename Builder>
    const CMatrix& get(PulseKind kind, double phase, Builder&& build) {
        for (const auto& e : entries_)
            if (e.kind == kind && e.phase == phase)
                return e.u;
        entries_.push_back({kind, phase, build()});
        return entries_.back().u;
    }

  private:
    struct Entry {
        PulseKind kind;
        double phase;
        CMatrix u;
    };
    std::vector<Entry> entries_;
};

// Walks the schedule, calling free_evolve(dt) for the gaps between realised
// pulse extents and pulse(event) for each pulse, in time order.
template <typename FreeFn, typename PulseFn>
void walk_schedule(const SequenceSchedule& s, double rotation_fraction,
                   FreeFn&& free_evolve, PulseFn&& pulse) {
    double cursor = s.events.front().center
                    - realized_duration(s, s.events.front(), rotation_fraction) / 2.0;
    for (const PulseEvent& ev : s.events) {
        const double dur = realized_duration(s, ev, rotation_fraction);
        const double start = ev.center - dur / 2.0;
        double gap = start - cursor;
        if (gap < -1e-9 * s.tau)
            throw invalid_input("schedule events overlap");
        if (gap > 0.0)
            free_evolve(gap);
        pulse(ev, dur);
        cursor = start + dur;
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Two-level engine

inline double run_two_level(const SequenceSchedule& s, const ErrorModel& errors,
                            const EngineOptions& opts = {}) {
    const double f = errors.rotation_fraction;
    const double d = errors.detuning;
    CVector psi(2);
    psi << 1.0, 0.0;

    const auto free_phase = [&](double dt) {
        // exp(-i pi d dt sigma_z)
        const cxd ph = std::exp(cxd(0.0, -std::numbers::pi * d * dt));
        psi(0) *= ph;
        psi(1) *= std::conj(ph);
    };

    if (opts.pulse_model == PulseModel::Delta) {
        detail::require_delta(s);
        detail::walk_schedule(s, f, free_phase, [&](const PulseEvent& ev, double) {
            psi = rotation_unitary(f * detail::nominal_angle(ev.kind), ev.phase) * psi;
        });
    } else {
        detail::require_finite(s, f);
        const double amp = detail::realized_amplitude(s, f);
        const std::vector<double> slices = envelope_slice_amplitudes(s.envelope);
        detail::PulseCache cache;
        detail::walk_schedule(s, f, free_phase, [&](const PulseEvent& ev, double dur) {
            const CMatrix& u = cache.get(ev.kind, ev.phase, [&] {
                CMatrix acc = CMatrix::Identity(2, 2);
                const double dt = dur / static_cast<double>(slices.size());
                for (double w : slices) {
                    CMatrix h = std::numbers::pi * d * pauli_z()
                                + std::numbers::pi * amp * w
                                      * (std::cos(ev.phase) * pauli_x()
                                         + std::sin(ev.phase) * pauli_y());
                    acc = expm_hermitian(h, dt) * acc;
                }
                return acc;
            });
            psi = u * psi;
        });
    }
    return std::norm(psi(0));
}

// ---------------------------------------------------------------------------
// Sensing engine: sensor (first factor) + unpolarised target (second factor)

namespace detail {

inline CMatrix sensing_free_hamiltonian(double d, const SensingModel& m) {
    const CMatrix id = CMatrix::Identity(2, 2);
    return std::numbers::pi
           * (d * kron(pauli_z(), id) + m.f_larmor * kron(id, pauli_z())
              + 0.5 * kron(pauli_z(), m.a_zz * pauli_z() + m.a_zx * pauli_x()));
}

} // namespace detail

inline double run_sensing(const SequenceSchedule& s, const ErrorModel& errors,
                          const SensingModel& model, const EngineOptions& opts = {}) {
    const double f = errors.rotation_fraction;
    const CMatrix id2 = CMatrix::Identity(2, 2);
    const CMatrix h_free = detail::sensing_free_hamiltonian(errors.detuning, model);

    CMatrix rho = CMatrix::Zero(4, 4);
    rho(0, 0) = 0.5; // |up><up| (x) I/2
    rho(1, 1) = 0.5;

    // free-evolution cache keyed by interval length (tau/2 and tau in practice)
    std::vector<std::pair<double, CMatrix>> free_cache;
    const auto free_evolve = [&](double dt) {
        for (const auto& [len, u] : free_cache)
            if (len == dt) {
                rho = conjugate_density(rho, u);
                return;
            }
        free_cache.emplace_back(dt, expm_hermitian(h_free, dt));
        rho = conjugate_density(rho, free_cache.back().second);
    };

    detail::PulseCache cache;
    if (opts.pulse_model == PulseModel::Delta) {
        detail::require_delta(s);
        detail::walk_schedule(s, f, free_evolve, [&](const PulseEvent& ev, double) {
            const CMatrix& u = cache.get(ev.kind, ev.phase, [&] {
                return kron(rotation_unitary(f * detail::nominal_angle(ev.kind), ev.phase),
                            id2);
            });
            rho = conjugate_density(rho, u);
        });
    } else {
        detail::require_finite(s, f);
        const double amp = detail::realized_amplitude(s, f);
        const std::vector<double> slices = envelope_slice_amplitudes(s.envelope);
        detail::walk_schedule(s, f, free_evolve, [&](const PulseEvent& ev, double dur) {
            const CMatrix& u = cache.get(ev.kind, ev.phase, [&] {
                CMatrix acc = CMatrix::Identity(4, 4);
                const double dt = dur / static_cast<double>(slices.size());
                for (double w : slices) {
                    CMatrix drive = std::numbers::pi * amp * w
                                    * (std::cos(ev.phase) * pauli_x()
                                       + std::sin(ev.phase) * pauli_y());
                    acc = expm_hermitian(h_free + kron(drive, id2), dt) * acc;
                }
                return acc;
            });
            rho = conjugate_density(rho, u);
        });
    }
    return (rho(0, 0) + rho(1, 1)).real();
}

// ---------------------------------------------------------------------------
// Three-level leak engine

inline std::array<double, 3> run_leak(const SequenceSchedule& s, const LeakModel& model,
                                      const EngineOptions& opts = {}) {
    if (opts.pulse_model == PulseModel::Delta)
        throw model_mismatch("leak model needs finite-width pulses (delta option set)");
    detail::require_finite(s, 1.0);
    if (model.rabi <= 0.0)
        throw invalid_input("leak model requires rabi > 0");

    const double w0 = model.rabi;
    const double delta = model.delta_leak;
    const std::vector<double> slices = envelope_slice_amplitudes(s.envelope);

    CVector psi(3);
    psi << 1.0, 0.0, 0.0;

    const auto free_evolve = [&](double dt) {
        psi(2) *= std::exp(cxd(0.0, -detail::two_pi * delta * dt));
    };

    detail::PulseCache cache;
    detail::walk_schedule(s, 1.0, free_evolve, [&](const PulseEvent& ev, double dur) {
        const CMatrix& u = cache.get(ev.kind, ev.phase, [&] {
            CMatrix acc = CMatrix::Identity(3, 3);
            const double dt = dur / static_cast<double>(slices.size());
            for (double wslice : slices) {
                const cxd g = std::numbers::pi * w0 * wslice * std::exp(cxd(0.0, -ev.phase));
                CMatrix h = CMatrix::Zero(3, 3);
                h(0, 1) = g;
                h(1, 2) = g;
                h(1, 0) = std::conj(g);
                h(2, 1) = std::conj(g);
                h(2, 2) = detail::two_pi * delta;
                acc = expm_hermitian(h, dt) * acc;
            }
            return acc;
        });
        psi = u * psi;
    });
    return {std::norm(psi(0)), std::norm(psi(1)), std::norm(psi(2))};
}

// ---------------------------------------------------------------------------
// Coupling calibration

// Smallest coupling a > 0 that maximises the conditional sensor flip for
// perfect delta pulses at resonance (f_larmor = 1/(2 tau)): bracket the first
// maximum of P_up(a) on an ascending scan, then shrink by golden section.
// Deterministic for fixed inputs.
inline double calibrate_coupling(int n, double tau, Protocol protocol) {
    const SequenceSchedule s = build_schedule(protocol, n, tau, 0.0);
    const double f_larmor = 0.5 / tau;
    const auto p_up = [&](double a) {
        return run_sensing(s, ErrorModel{1.0, 0.0},
                           SensingModel::equal_coupling(f_larmor, a),
                           EngineOptions{PulseModel::Delta});
    };

    const double step = 0.25 / (n * tau);
    double a_prev = 0.0;
    double p_prev = p_up(0.0);
    double a_cur = step;
    while (true) {
        const double p_cur = p_up(a_cur);
        if (p_cur < p_prev)
            break;
        a_prev = a_cur;
        p_prev = p_cur;
        a_cur += step;
    }

    double lo = std::max(a_prev - step, 0.0);
    double hi = a_cur;
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = hi - g * (hi - lo);
    double x2 = lo + g * (hi - lo);
    double p1 = p_up(x1);
    double p2 = p_up(x2);
    while (hi - lo > std::max(1e-14, 1e-10 * hi)) {
        if (p1 < p2) {
            lo = x1;
            x1 = x2;
            p1 = p2;
            x2 = lo + g * (hi - lo);
            p2 = p_up(x2);
        } else {
            hi = x2;
            x2 = x1;
            p2 = p1;
            x1 = hi - g * (hi - lo);
            p1 = p_up(x1);
        }
    }
    return (lo + hi) / 2.0;
}

} // namespace ddsense
