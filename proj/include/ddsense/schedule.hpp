#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "ddsense/errors.hpp"
#include "ddsense/protocols.hpp"

namespace ddsense {

enum class PulseKind { Half, Full }; // nominal pi/2 or pi

// How a rotation fraction f != 1 is realised on finite-width pulses:
// either the Rabi amplitude is scaled at fixed duration (keeps the timing
// grid intact), or the duration is scaled at fixed amplitude (matches
// sweeping the pulse length on hardware).  The two coincide for delta pulses.
enum class ScalingMode { AmplitudeScaled, DurationScaled };

// Pulse envelope.  Tukey pulses are discretised into `slices` equal-time
// piecewise-constant steps, renormalised so the zero-detuning area equals the
// nominal rotation angle.
struct Envelope {
    enum class Shape { Rectangular, Tukey };
    Shape shape = Shape::Rectangular;
    double taper = 0.0; // Tukey alpha in [0, 1]
    int slices = 1;

    static Envelope rectangular() { return Envelope{}; }
    static Envelope tukey(double alpha, int slices = 64) {
        if (alpha < 0.0 || alpha > 1.0)
            throw invalid_input("tukey taper must lie in [0, 1]");
        if (slices < 1)
            throw invalid_input("envelope slices must be >= 1");
        return Envelope{Shape::Tukey, alpha, slices};
    }
};

// Relative slice amplitudes for one pulse, mean-normalised to 1 so the pulse
// area is independent of the envelope shape.
inline std::vector<double> envelope_slice_amplitudes(const Envelope& env) {
    if (env.shape == Envelope::Shape::Rectangular)
        return {1.0};
    std::vector<double> w(static_cast<size_t>(env.slices));
    const double a = env.taper;
    double sum = 0.0;
    for (int i = 0; i < env.slices; ++i) {
        const double x = (i + 0.5) / env.slices;
        double v = 1.0;
        if (a > 0.0) {
            if (x < a / 2.0)
                v = 0.5 * (1.0 + std::cos(std::numbers::pi * (2.0 * x / a - 1.0)));
            else if (x > 1.0 - a / 2.0)
                v = 0.5 * (1.0 + std::cos(std::numbers::pi * (2.0 * (1.0 - x) / a - 1.0)));
        }
        w[static_cast<size_t>(i)] = v;
        sum += v;
    }
    const double mean = sum / env.slices;
    for (double& v : w)
        v /= mean;
    return w;
}

struct PulseEvent {
    PulseKind kind;
    double phase;    // radians; x = 0, y = pi/2, -x = pi, -y = 3pi/2
    double center;   // time of the pulse center, tau units
    double duration; // nominal extent, tau units; 0 for delta pulses
};

// A protocol realised on the timing grid: pi/2 at t = 0, pi pulses at
// tau/2 + k tau, closing pi/2 at n tau.  All times refer to pulse centers.
struct SequenceSchedule {
    Protocol protocol = Protocol::CPMG;
    int pulse_count = 0;   // number of pi pulses (n)
    double tau = 1.0;      // inter-pi spacing; the time unit of everything else
    double pi_duration = 0.0;
    double rotation_fraction = 1.0; // value the schedule was validated for
    ScalingMode mode = ScalingMode::AmplitudeScaled;
    Envelope envelope;
    std::vector<PulseEvent> events;
    double total = 0.0; // center of first pi/2 to end of the last pi/2

    bool is_delta() const { return pi_duration == 0.0; }
    // nominal Rabi frequency implied by the pi duration, 1/tau units
    double rabi() const { return pi_duration > 0.0 ? 1.0 / (2.0 * pi_duration) : 0.0; }
};

namespace detail {
// The pi/2-to-pi gap closes first: (3/4) T_pi <= tau/2.
inline void check_overlap(double effective_pi_duration, double tau) {
    const double limit = (2.0 / 3.0) * tau;
    if (effective_pi_duration > limit * (1.0 + 1e-12))
        throw invalid_input("pi duration " + std::to_string(effective_pi_duration)
                            + " exceeds (2/3) tau = " + std::to_string(limit)
                            + "; pulses would overlap");
}
} // namespace detail

inline SequenceSchedule build_schedule(Protocol protocol, int n, double tau,
                                       double pi_duration,
                                       double rotation_fraction = 1.0,
                                       ScalingMode mode = ScalingMode::AmplitudeScaled,
                                       Envelope envelope = Envelope::rectangular()) {
    if (tau <= 0.0)
        throw invalid_input("tau must be positive");
    if (pi_duration < 0.0)
        throw invalid_input("pi duration must be >= 0");
    if (rotation_fraction < 0.0)
        throw invalid_input("rotation fraction must be >= 0");
    const double realized =
        mode == ScalingMode::DurationScaled ? pi_duration * rotation_fraction : pi_duration;
    detail::check_overlap(realized, tau);

    const std::vector<double> phases = protocol_phases(protocol, n);

    SequenceSchedule s;
    s.protocol = protocol;
    s.pulse_count = n;
    s.tau = tau;
    s.pi_duration = pi_duration;
    s.rotation_fraction = rotation_fraction;
    s.mode = mode;
    s.envelope = envelope;
    s.events.reserve(static_cast<size_t>(n) + 2);
    s.events.push_back({PulseKind::Half, 0.0, 0.0, pi_duration / 2.0});
    for (int k = 0; k < n; ++k)
        s.events.push_back({PulseKind::Full, phases[static_cast<size_t>(k)],
                            tau / 2.0 + k * tau, pi_duration});
    s.events.push_back({PulseKind::Half, 0.0, n * tau, pi_duration / 2.0});
    s.total = n * tau + pi_duration / 4.0;
    return s;
}

// Initial pi/2 phase offset by 180 degrees; used for phase-cycled readout,
// where the signal is the difference between the two initial-phase runs.
inline SequenceSchedule with_initial_phase_flipped(SequenceSchedule s) {
    s.events.front().phase += std::numbers::pi;
    return s;
}

} // namespace ddsense
