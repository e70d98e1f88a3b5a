#pragma once

// Test-only oracles, independent of the library's propagation path: the
// engines exponentiate each piecewise-constant Hamiltonian exactly, the
// oracles integrate the Schrodinger equation with classic RK4 (or first-order
// Euler) on the same timeline.

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "ddsense/engines.hpp"
#include "ddsense/linalg.hpp"
#include "ddsense/schedule.hpp"

namespace oracle {

using ddsense::CMatrix;
using ddsense::cxd;

struct Segment {
    CMatrix h;
    double dt;
};

// RK4 for dU/dt = -i H U on each constant segment, with the step budget
// distributed over segments in proportion to their length (at least 8 steps
// per segment so short pulses are still resolved).
inline CMatrix rk4_propagator(const std::vector<Segment>& segments, int total_steps) {
    double total_time = 0.0;
    for (const auto& s : segments)
        total_time += s.dt;
    const Eigen::Index dim = segments.front().h.rows();
    CMatrix u = CMatrix::Identity(dim, dim);
    for (const auto& seg : segments) {
        if (seg.dt <= 0.0)
            continue;
        const int steps =
            std::max(8, static_cast<int>(std::ceil(total_steps * seg.dt / total_time)));
        const double h = seg.dt / steps;
        const CMatrix a = cxd(0.0, -1.0) * seg.h;
        for (int i = 0; i < steps; ++i) {
            const CMatrix k1 = a * u;
            const CMatrix k2 = a * (u + (h / 2.0) * k1);
            const CMatrix k3 = a * (u + (h / 2.0) * k2);
            const CMatrix k4 = a * (u + h * k3);
            u = u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }
    return u;
}

// First-order Euler, U <- (1 - i H dt) U.
inline CMatrix euler_propagator(const CMatrix& h, double t, int steps) {
    const Eigen::Index dim = h.rows();
    const CMatrix step = CMatrix::Identity(dim, dim) + cxd(0.0, -1.0) * h * (t / steps);
    CMatrix u = CMatrix::Identity(dim, dim);
    for (int i = 0; i < steps; ++i)
        u = step * u;
    return u;
}

// ---------------------------------------------------------------------------
// Timeline builders.  These re-derive the Hamiltonians from the schedule
// fields rather than calling into the engine walkers.

inline double realized_duration(const ddsense::SequenceSchedule& s,
                                const ddsense::PulseEvent& ev, double f) {
    return s.mode == ddsense::ScalingMode::DurationScaled ? ev.duration * f : ev.duration;
}

inline double realized_amplitude(const ddsense::SequenceSchedule& s, double f) {
    return s.mode == ddsense::ScalingMode::DurationScaled ? s.rabi() : s.rabi() * f;
}

template <typename PulseHamiltonian>
std::vector<Segment> build_segments(const ddsense::SequenceSchedule& s, double f,
                                    const CMatrix& h_free, PulseHamiltonian&& h_pulse) {
    const std::vector<double> slices = ddsense::envelope_slice_amplitudes(s.envelope);
    std::vector<Segment> segs;
    double cursor = s.events.front().center - realized_duration(s, s.events.front(), f) / 2.0;
    for (const auto& ev : s.events) {
        const double dur = realized_duration(s, ev, f);
        const double start = ev.center - dur / 2.0;
        if (start - cursor > 0.0)
            segs.push_back({h_free, start - cursor});
        const double dt = dur / static_cast<double>(slices.size());
        for (double w : slices)
            segs.push_back({h_pulse(ev, w), dt});
        cursor = start + dur;
    }
    return segs;
}

inline std::vector<Segment> two_level_segments(const ddsense::SequenceSchedule& s,
                                               const ddsense::ErrorModel& e) {
    using std::numbers::pi;
    const CMatrix h_free = pi * e.detuning * ddsense::pauli_z();
    const double amp = realized_amplitude(s, e.rotation_fraction);
    return build_segments(s, e.rotation_fraction, h_free,
                          [&](const ddsense::PulseEvent& ev, double w) {
                              return CMatrix(h_free
                                             + pi * amp * w
                                                   * (std::cos(ev.phase) * ddsense::pauli_x()
                                                      + std::sin(ev.phase) * ddsense::pauli_y()));
                          });
}

inline std::vector<Segment> sensing_segments(const ddsense::SequenceSchedule& s,
                                             const ddsense::ErrorModel& e,
                                             const ddsense::SensingModel& m) {
    using std::numbers::pi;
    const CMatrix id2 = CMatrix::Identity(2, 2);
    const CMatrix h_free =
        pi * (e.detuning * ddsense::kron(ddsense::pauli_z(), id2)
              + m.f_larmor * ddsense::kron(id2, ddsense::pauli_z())
              + 0.5 * ddsense::kron(ddsense::pauli_z(),
                                    m.a_zz * ddsense::pauli_z() + m.a_zx * ddsense::pauli_x()));
    const double amp = realized_amplitude(s, e.rotation_fraction);
    return build_segments(s, e.rotation_fraction, h_free,
                          [&](const ddsense::PulseEvent& ev, double w) {
                              const CMatrix drive =
                                  pi * amp * w
                                  * (std::cos(ev.phase) * ddsense::pauli_x()
                                     + std::sin(ev.phase) * ddsense::pauli_y());
                              return CMatrix(h_free + ddsense::kron(drive, id2));
                          });
}

inline std::vector<Segment> leak_segments(const ddsense::SequenceSchedule& s,
                                          const ddsense::LeakModel& m) {
    using std::numbers::pi;
    CMatrix h_free = CMatrix::Zero(3, 3);
    h_free(2, 2) = 2.0 * pi * m.delta_leak;
    return build_segments(s, 1.0, h_free, [&](const ddsense::PulseEvent& ev, double w) {
        const cxd g = pi * m.rabi * w * std::exp(cxd(0.0, -ev.phase));
        CMatrix h = h_free;
        h(0, 1) = g;
        h(1, 2) = g;
        h(1, 0) = std::conj(g);
        h(2, 1) = std::conj(g);
        return h;
    });
}

// Probability observables computed from a full-sequence oracle propagator.
inline double two_level_p_up(const CMatrix& u) { return std::norm(u(0, 0)); }

inline double sensing_p_up(const CMatrix& u) {
    CMatrix rho = CMatrix::Zero(4, 4);
    rho(0, 0) = 0.5;
    rho(1, 1) = 0.5;
    rho = u * rho * u.adjoint();
    return (rho(0, 0) + rho(1, 1)).real();
}

inline std::array<double, 3> leak_populations(const CMatrix& u) {
    return {std::norm(u(0, 0)), std::norm(u(1, 0)), std::norm(u(2, 0))};
}

} // namespace oracle
