#pragma once

#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddsense/engines.hpp"
#include "ddsense/errors.hpp"
#include "ddsense/schedule.hpp"
#include "ddsense/version.hpp"

// Sweep runners that turn engine runs into datasets: 1-D spectra, 2-D error
// maps, leak spectra and delta-averaged leak decay curves.  Grid points are
// evaluated independently and written by index, so results are bit-identical
// for any worker count.

namespace ddsense {

struct AxisSpec {
    std::string name;
    double start = 0.0;
    double stop = 1.0;
    int points = 2;
};

// Grid coordinates such that doubling the resolution (2p-1 points) reproduces
// the coarse coordinates bit-identically at shared indices.
inline std::vector<double> axis_values(const AxisSpec& a) {
    if (a.points < 2)
        throw invalid_input("axis '" + a.name + "' needs at least 2 points");
    if (!(a.start < a.stop))
        throw invalid_input("axis '" + a.name + "' needs start < stop");
    std::vector<double> v(static_cast<size_t>(a.points));
    for (int i = 0; i < a.points; ++i)
        v[static_cast<size_t>(i)] =
            a.start + (a.stop - a.start) * (static_cast<double>(i) / (a.points - 1));
    return v;
}

struct GridResult {
    std::vector<AxisSpec> axes;                    // 1 or 2
    std::vector<std::vector<double>> axis_values;  // coordinates per axis
    std::vector<std::string> value_names;          // one per value column
    std::vector<std::vector<double>> values;       // [column][flat index]
    nlohmann::json metadata;                       // resolved config + version

    // flat index for (i, j) on a 2-D grid: axis 0 outer, axis 1 inner
    size_t flat(size_t i, size_t j) const { return i * axis_values.at(1).size() + j; }
};

inline int default_thread_count() {
    if (const char* env = std::getenv("DDSENSE_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0)
            return v;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
}

// Runs fn(i) for i in [0, count) on `threads` workers, statically partitioned.
inline void parallel_for_index(int count, int threads, const std::function<void(int)>& fn) {
    if (threads <= 0)
        threads = default_thread_count();
    if (threads <= 1 || count <= 1) {
        for (int i = 0; i < count; ++i)
            fn(i);
        return;
    }
    threads = std::min(threads, count);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        const int begin = static_cast<int>(static_cast<long long>(count) * t / threads);
        const int end = static_cast<int>(static_cast<long long>(count) * (t + 1) / threads);
        pool.emplace_back([&fn, begin, end] {
            for (int i = begin; i < end; ++i)
                fn(i);
        });
    }
    for (auto& th : pool)
        th.join();
}

// Shared sequence setup for the sweep runners.
struct SequenceParams {
    Protocol protocol = Protocol::CPMG;
    int n = 256;
    double tau = 1.0;
    PulseModel pulse_model = PulseModel::Delta;
    double pi_duration = 0.0; // tau units; ignored for delta pulses
    ScalingMode mode = ScalingMode::AmplitudeScaled;
    Envelope envelope;

    SequenceSchedule schedule(double rotation_fraction) const {
        return build_schedule(protocol, n, tau,
                              pulse_model == PulseModel::Delta ? 0.0 : pi_duration,
                              rotation_fraction, mode, envelope);
    }
    EngineOptions options() const { return EngineOptions{pulse_model}; }
};

namespace detail {

inline nlohmann::json base_metadata(nlohmann::json config) {
    return nlohmann::json{{"tool", "ddsense"}, {"version", ddsense::version},
                          {"config", std::move(config)}};
}

template <typename Fn>
double phase_cycled(bool cycle, const SequenceSchedule& s, Fn&& eval) {
    const double direct = eval(s);
    if (!cycle)
        return direct;
    return direct - eval(with_initial_phase_flipped(s));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Larmor-frequency spectrum of the sensing signal.  The axis is f_larmor in
// units of 1/(2 tau), so resonance sits at 1.

struct SpectrumSpec {
    SequenceParams seq;
    ErrorModel errors;
    double coupling = 0.0; // a_zz = a_zx, 1/tau units
    AxisSpec axis{"f_larmor_2tau", 0.5, 1.5, 201};
    bool phase_cycle = false;
};

inline GridResult spectrum_scan(const SpectrumSpec& spec, int threads = 0) {
    const SequenceSchedule s = spec.seq.schedule(spec.errors.rotation_fraction);
    const EngineOptions opts = spec.seq.options();
    const std::vector<double> xs = axis_values(spec.axis);

    GridResult out;
    out.axes = {spec.axis};
    out.axis_values = {xs};
    out.value_names = {spec.phase_cycle ? "signal" : "p_up"};
    out.values.assign(1, std::vector<double>(xs.size(), 0.0));
    parallel_for_index(static_cast<int>(xs.size()), threads, [&](int i) {
        const double f_larmor = xs[static_cast<size_t>(i)] / (2.0 * spec.seq.tau);
        const SensingModel m = SensingModel::equal_coupling(f_larmor, spec.coupling);
        out.values[0][static_cast<size_t>(i)] =
            detail::phase_cycled(spec.phase_cycle, s, [&](const SequenceSchedule& sch) {
                return run_sensing(sch, spec.errors, m, opts);
            });
    });
    return out;
}

// ---------------------------------------------------------------------------
// 2-D rotation-fraction x detuning map, with or without the target spin.

struct ErrorMapSpec {
    SequenceParams seq;
    bool interaction_on = false;
    double coupling = 0.0;     // used when interaction_on
    double f_larmor = 0.0;     // 1/tau; defaults to resonance 1/(2 tau) if 0
    AxisSpec f_axis{"rotation_fraction", 0.5, 1.5, 201};
    AxisSpec d_axis{"detuning", 0.0, 1.0, 201};
    bool phase_cycle = false;
};

inline GridResult error_map(const ErrorMapSpec& spec, int threads = 0) {
    const std::vector<double> fs = axis_values(spec.f_axis);
    const std::vector<double> ds = axis_values(spec.d_axis);
    const EngineOptions opts = spec.seq.options();
    const double f_larmor =
        spec.f_larmor > 0.0 ? spec.f_larmor : 0.5 / spec.seq.tau;

    GridResult out;
    out.axes = {spec.f_axis, spec.d_axis};
    out.axis_values = {fs, ds};
    out.value_names = {spec.phase_cycle ? "signal" : "p_up"};
    out.values.assign(1, std::vector<double>(fs.size() * ds.size(), 0.0));
    const int total = static_cast<int>(fs.size() * ds.size());
    parallel_for_index(total, threads, [&](int idx) {
        const size_t i = static_cast<size_t>(idx) / ds.size();
        const size_t j = static_cast<size_t>(idx) % ds.size();
        const ErrorModel err{fs[i], ds[j]};
        const SequenceSchedule s = spec.seq.schedule(err.rotation_fraction);
        out.values[0][static_cast<size_t>(idx)] =
            detail::phase_cycled(spec.phase_cycle, s, [&](const SequenceSchedule& sch) {
                if (!spec.interaction_on)
                    return run_two_level(sch, err, opts);
                return run_sensing(sch, err,
                                   SensingModel::equal_coupling(f_larmor, spec.coupling),
                                   opts);
            });
    });
    return out;
}

// ---------------------------------------------------------------------------
// Leak spectra: populations of the three levels vs third-level detuning.

struct LeakSpectrumSpec {
    Protocol protocol = Protocol::CP;
    int n = 256;
    double tau = 1.0;
    double rabi = 2.0; // 1/tau; pi duration is 1/(2 rabi)
    Envelope envelope;
    AxisSpec delta_axis{"delta_leak", 10.0, 30.0, 2001};
};

inline GridResult leak_spectrum(const LeakSpectrumSpec& spec, int threads = 0) {
    if (spec.rabi <= 0.0)
        throw invalid_input("leak spectrum requires rabi > 0");
    const SequenceSchedule s =
        build_schedule(spec.protocol, spec.n, spec.tau, 1.0 / (2.0 * spec.rabi), 1.0,
                       ScalingMode::AmplitudeScaled, spec.envelope);
    const std::vector<double> deltas = axis_values(spec.delta_axis);

    GridResult out;
    out.axes = {spec.delta_axis};
    out.axis_values = {deltas};
    out.value_names = {"p1", "p2", "p3"};
    out.values.assign(3, std::vector<double>(deltas.size(), 0.0));
    parallel_for_index(static_cast<int>(deltas.size()), threads, [&](int i) {
        const LeakModel m{deltas[static_cast<size_t>(i)], spec.rabi};
        const auto p = run_leak(s, m, EngineOptions{PulseModel::Finite});
        for (int c = 0; c < 3; ++c)
            out.values[static_cast<size_t>(c)][static_cast<size_t>(i)] = p[static_cast<size_t>(c)];
    });
    return out;
}

// ---------------------------------------------------------------------------
// Delta-averaged leak decay: mean correct-state probability p2 vs pulse
// count, averaged over a uniform deterministic grid of third-level detunings.

struct LeakDecaySpec {
    std::vector<Protocol> protocols{Protocol::CP, Protocol::CPMG, Protocol::APCP,
                                    Protocol::XY16, Protocol::MLEV32Y};
    std::vector<int> n_values;
    double tau = 1.0;
    double duty = 0.5; // pi duration as a fraction of the pi-pulse period tau
    double delta_min = 20.0;
    double delta_max = 25.0;
    int samples = 101;
    Envelope envelope;
};

inline GridResult leak_decay(const LeakDecaySpec& spec, int threads = 0) {
    if (spec.protocols.empty() || spec.n_values.empty())
        throw invalid_input("leak decay needs at least one protocol and one n");
    if (spec.samples < 2)
        throw invalid_input("leak decay needs samples >= 2");
    if (!(spec.delta_min < spec.delta_max))
        throw invalid_input("leak decay needs delta_min < delta_max");
    if (spec.duty <= 0.0)
        throw invalid_input("leak decay needs duty > 0");
    for (Protocol p : spec.protocols)
        for (int n : spec.n_values)
            if (n <= 0 || n % block_length(p) != 0)
                throw invalid_input("n = " + std::to_string(n) + " invalid for "
                                    + to_string(p));

    const double pi_duration = spec.duty * spec.tau;
    const double rabi = 1.0 / (2.0 * pi_duration);
    const std::vector<double> deltas =
        axis_values(AxisSpec{"delta_leak", spec.delta_min, spec.delta_max, spec.samples});

    GridResult out;
    AxisSpec n_axis{"n", static_cast<double>(spec.n_values.front()),
                    static_cast<double>(spec.n_values.back()),
                    static_cast<int>(spec.n_values.size())};
    out.axes = {n_axis};
    out.axis_values = {std::vector<double>(spec.n_values.begin(), spec.n_values.end())};
    for (Protocol p : spec.protocols)
        out.value_names.push_back("p2_" + to_string(p));
    out.values.assign(spec.protocols.size(),
                      std::vector<double>(spec.n_values.size(), 0.0));

    const int total = static_cast<int>(spec.protocols.size() * spec.n_values.size());
    parallel_for_index(total, threads, [&](int idx) {
        const size_t ip = static_cast<size_t>(idx) / spec.n_values.size();
        const size_t in = static_cast<size_t>(idx) % spec.n_values.size();
        const SequenceSchedule s =
            build_schedule(spec.protocols[ip], spec.n_values[in], spec.tau, pi_duration,
                           1.0, ScalingMode::AmplitudeScaled, spec.envelope);
        double acc = 0.0;
        for (double d : deltas)
            acc += run_leak(s, LeakModel{d, rabi}, EngineOptions{PulseModel::Finite})[1];
        out.values[ip][in] = acc / static_cast<double>(deltas.size());
    });
    return out;
}

} // namespace ddsense
