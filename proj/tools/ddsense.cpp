// ddsense command-line driver: batch sweeps, single runs, calibration and
// curve fitting, with deterministic CSV/JSON emission.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "ddsense/ddsense.hpp"

namespace {

using nlohmann::json;
using namespace ddsense;

constexpr int exit_ok = 0;
constexpr int exit_config = 2;
constexpr int exit_engine = 3;
constexpr int exit_fit = 4;

struct cli_error {
    int code;
    std::string message;
};

[[noreturn]] void fail_config(const std::string& msg) { throw cli_error{exit_config, msg}; }

// JSON config document with strict unknown-key rejection.  Every key must be
// consumed by a get()/maybe() call before finish().
class StrictConfig {
  public:
    StrictConfig() : doc_(json::object()) {}
    explicit StrictConfig(json doc) : doc_(std::move(doc)) {
        if (!doc_.is_object())
            fail_config("config document must be a JSON object");
    }

    static StrictConfig load(const std::string& path) {
        std::ifstream is(path);
        if (!is)
            fail_config("cannot open config file '" + path + "'");
        json doc;
        try {
            is >> doc;
        } catch (const json::exception& e) {
            fail_config("config file '" + path + "': " + e.what());
        }
        return StrictConfig(std::move(doc));
    }

    template <typename T>
    std::optional<T> maybe(const std::string& key) {
        used_.insert(key);
        if (!doc_.contains(key))
            return std::nullopt;
        try {
            return doc_.at(key).get<T>();
        } catch (const json::exception&) {
            fail_config("config key '" + key + "' has the wrong type");
        }
    }

    std::optional<json> maybe_raw(const std::string& key) {
        used_.insert(key);
        if (!doc_.contains(key))
            return std::nullopt;
        return doc_.at(key);
    }

    void finish() const {
        for (const auto& [key, _] : doc_.items())
            if (!used_.count(key))
                fail_config("unknown config key '" + key + "'");
    }

  private:
    json doc_;
    std::set<std::string> used_;
};

// flag > config > default
template <typename T>
T resolve(const std::optional<T>& flag, std::optional<T> cfg, T def) {
    if (flag)
        return *flag;
    if (cfg)
        return *cfg;
    return def;
}

struct OutputOpts {
    std::optional<std::string> out;
    std::optional<std::string> format;
    std::optional<int> threads;

    std::string resolved_format(StrictConfig& cfg) const {
        const std::string f = resolve(format, cfg.maybe<std::string>("format"),
                                      std::string("csv"));
        if (f != "csv" && f != "json")
            fail_config("format must be 'csv' or 'json'");
        return f;
    }
    std::string resolved_out(StrictConfig& cfg, const std::string& subcommand,
                             const std::string& fmt) const {
        return resolve(out, cfg.maybe<std::string>("out"), subcommand + "." + fmt);
    }
    int resolved_threads(StrictConfig& cfg) const {
        return resolve(threads, cfg.maybe<int>("threads"), 0);
    }
};

struct SequenceFlags {
    std::optional<std::string> protocol;
    std::optional<int> n;
    std::optional<double> tau;
    std::optional<std::string> pulse_model;
    std::optional<double> pi_duration;
    std::optional<double> rabi;
    std::optional<double> rotation_fraction;
    std::optional<double> detuning;
    std::optional<std::string> scaling_mode;
    std::optional<std::string> envelope_shape;
    std::optional<double> envelope_taper;
    std::optional<int> envelope_slices;
};

void add_sequence_flags(CLI::App* app, SequenceFlags& f) {
    app->add_option("--protocol", f.protocol, "protocol name (case-insensitive)");
    app->add_option("--n", f.n, "number of pi pulses");
    app->add_option("--tau", f.tau, "pi-pulse spacing (time unit)");
    app->add_option("--pulse-model", f.pulse_model, "delta or finite");
    app->add_option("--pi-duration", f.pi_duration, "pi-pulse duration, tau units");
    app->add_option("--rabi", f.rabi, "Rabi frequency, 1/tau (alternative to --pi-duration)");
    app->add_option("--rotation-fraction", f.rotation_fraction, "rotation fraction (1 = perfect)");
    app->add_option("--detuning", f.detuning, "drive detuning, 1/tau");
    app->add_option("--scaling-mode", f.scaling_mode, "amplitude or duration scaling of errors");
    app->add_option("--envelope-shape", f.envelope_shape, "rectangular or tukey");
    app->add_option("--envelope-taper", f.envelope_taper, "tukey taper alpha in [0,1]");
    app->add_option("--envelope-slices", f.envelope_slices, "piecewise slices per tukey pulse");
}

void add_output_flags(CLI::App* app, OutputOpts& o) {
    app->add_option("--out", o.out, "output file path");
    app->add_option("--format", o.format, "csv or json");
    app->add_option("--threads", o.threads, "worker threads (default: DDSENSE_THREADS or all cores)");
}

Envelope resolve_envelope(const SequenceFlags& f, StrictConfig& cfg) {
    std::string shape = resolve(f.envelope_shape, std::optional<std::string>{}, std::string());
    double taper = f.envelope_taper.value_or(-1.0);
    int slices = f.envelope_slices.value_or(-1);
    if (auto env = cfg.maybe_raw("envelope")) {
        StrictConfig e(*env);
        if (shape.empty())
            shape = e.maybe<std::string>("shape").value_or("");
        if (taper < 0.0)
            taper = e.maybe<double>("taper").value_or(-1.0);
        if (slices < 0)
            slices = e.maybe<int>("slices").value_or(-1);
        e.finish();
    }
    if (shape.empty())
        shape = "rectangular";
    if (shape == "rectangular")
        return Envelope::rectangular();
    if (shape == "tukey")
        return Envelope::tukey(taper < 0.0 ? 0.5 : taper, slices < 0 ? 64 : slices);
    fail_config("unknown envelope shape '" + shape + "'");
}

json envelope_to_json(const Envelope& e) {
    if (e.shape == Envelope::Shape::Rectangular)
        return {{"shape", "rectangular"}};
    return {{"shape", "tukey"}, {"taper", e.taper}, {"slices", e.slices}};
}

// Resolves the shared sequence block; n and protocol are required.
SequenceParams resolve_sequence(const SequenceFlags& f, StrictConfig& cfg,
                                PulseModel default_model = PulseModel::Delta) {
    SequenceParams seq;
    const auto proto = resolve(f.protocol, cfg.maybe<std::string>("protocol"), std::string());
    if (proto.empty())
        fail_config("missing required option: protocol");
    seq.protocol = protocol_from_string(proto);
    const int n = resolve(f.n, cfg.maybe<int>("n"), 0);
    if (n <= 0)
        fail_config("missing or invalid option: n");
    seq.n = n;
    seq.tau = resolve(f.tau, cfg.maybe<double>("tau"), 1.0);

    const std::string model = resolve(f.pulse_model, cfg.maybe<std::string>("pulse_model"),
                                      std::string(default_model == PulseModel::Delta
                                                      ? "delta"
                                                      : "finite"));
    if (model == "delta")
        seq.pulse_model = PulseModel::Delta;
    else if (model == "finite")
        seq.pulse_model = PulseModel::Finite;
    else
        fail_config("pulse_model must be 'delta' or 'finite'");

    std::optional<double> pi_dur = f.pi_duration;
    if (!pi_dur)
        pi_dur = cfg.maybe<double>("pi_duration");
    std::optional<double> rabi = f.rabi;
    if (!rabi)
        rabi = cfg.maybe<double>("rabi");
    if (pi_dur && rabi)
        fail_config("give either pi_duration or rabi, not both");
    if (rabi) {
        if (*rabi <= 0.0)
            fail_config("rabi must be > 0");
        pi_dur = 1.0 / (2.0 * *rabi);
    }
    seq.pi_duration = pi_dur.value_or(0.0);
    if (seq.pulse_model == PulseModel::Finite && seq.pi_duration <= 0.0)
        fail_config("finite pulse model needs pi_duration or rabi");

    const std::string mode = resolve(f.scaling_mode, cfg.maybe<std::string>("scaling_mode"),
                                     std::string("amplitude"));
    if (mode == "amplitude")
        seq.mode = ScalingMode::AmplitudeScaled;
    else if (mode == "duration")
        seq.mode = ScalingMode::DurationScaled;
    else
        fail_config("scaling_mode must be 'amplitude' or 'duration'");

    seq.envelope = resolve_envelope(f, cfg);
    return seq;
}

ErrorModel resolve_errors(const SequenceFlags& f, StrictConfig& cfg) {
    ErrorModel e;
    e.rotation_fraction = resolve(f.rotation_fraction, cfg.maybe<double>("rotation_fraction"), 1.0);
    e.detuning = resolve(f.detuning, cfg.maybe<double>("detuning"), 0.0);
    return e;
}

json sequence_to_json(const SequenceParams& seq) {
    return {{"protocol", to_string(seq.protocol)},
            {"n", seq.n},
            {"tau", seq.tau},
            {"pulse_model", seq.pulse_model == PulseModel::Delta ? "delta" : "finite"},
            {"pi_duration", seq.pi_duration},
            {"scaling_mode", seq.mode == ScalingMode::AmplitudeScaled ? "amplitude" : "duration"},
            {"envelope", envelope_to_json(seq.envelope)}};
}

// "auto" -> calibrate_coupling for this sequence; otherwise a number.
double resolve_coupling(const std::optional<std::string>& flag, StrictConfig& cfg,
                        const SequenceParams& seq) {
    std::string val = resolve(flag, [&]() -> std::optional<std::string> {
        if (auto raw = cfg.maybe_raw("coupling")) {
            if (raw->is_string())
                return raw->get<std::string>();
            if (raw->is_number())
                return format_full(raw->get<double>());
            fail_config("coupling must be a number or \"auto\"");
        }
        return std::nullopt;
    }(), std::string("auto"));
    if (val == "auto")
        return calibrate_coupling(seq.n, seq.tau, seq.protocol);
    try {
        size_t pos = 0;
        const double a = std::stod(val, &pos);
        if (pos != val.size())
            throw std::invalid_argument(val);
        return a;
    } catch (const std::exception&) {
        fail_config("coupling must be a number or \"auto\"");
    }
}

void emit(const GridResult& grid, const std::string& path, const std::string& fmt) {
    write_grid(grid, path, fmt, timestamp_utc());
    std::cout << "wrote " << path << "\n";
}

// ---------------------------------------------------------------------------
// Subcommand handlers.  Each returns the process exit code.

int run_spectrum(const SequenceFlags& sf, const OutputOpts& oo,
                 const std::optional<std::string>& config_path,
                 const std::optional<std::string>& coupling_flag,
                 const std::optional<double>& fmin, const std::optional<double>& fmax,
                 const std::optional<int>& points, bool phase_cycle_flag,
                 const std::optional<double>& tau_seconds_flag) {
    StrictConfig cfg = config_path ? StrictConfig::load(*config_path) : StrictConfig();
    if (auto sub = cfg.maybe<std::string>("subcommand"); sub && *sub != "spectrum")
        fail_config("config file is for subcommand '" + *sub + "'");

    SpectrumSpec spec;
    spec.seq = resolve_sequence(sf, cfg);
    spec.errors = resolve_errors(sf, cfg);
    spec.axis = AxisSpec{"f_larmor_2tau",
                         resolve(fmin, cfg.maybe<double>("fmin"), 0.5),
                         resolve(fmax, cfg.maybe<double>("fmax"), 1.5),
                         resolve(points, cfg.maybe<int>("points"), 201)};
    spec.phase_cycle = phase_cycle_flag || cfg.maybe<bool>("phase_cycle").value_or(false);
    const auto tau_seconds = tau_seconds_flag ? tau_seconds_flag : cfg.maybe<double>("tau_seconds");

    const std::string fmt = oo.resolved_format(cfg);
    const std::string out = oo.resolved_out(cfg, "spectrum", fmt);
    const int threads = oo.resolved_threads(cfg);
    spec.coupling = resolve_coupling(coupling_flag, cfg, spec.seq);
    cfg.finish();

    json config = sequence_to_json(spec.seq);
    config["subcommand"] = "spectrum";
    config["rotation_fraction"] = spec.errors.rotation_fraction;
    config["detuning"] = spec.errors.detuning;
    config["coupling"] = spec.coupling;
    config["fmin"] = spec.axis.start;
    config["fmax"] = spec.axis.stop;
    config["points"] = spec.axis.points;
    config["phase_cycle"] = spec.phase_cycle;
    if (tau_seconds)
        config["tau_seconds"] = *tau_seconds;

    GridResult grid = spectrum_scan(spec, threads);
    if (tau_seconds) {
        std::vector<double> hz(grid.axis_values[0].size());
        for (size_t i = 0; i < hz.size(); ++i)
            hz[i] = grid.axis_values[0][i] / (2.0 * *tau_seconds);
        grid.value_names.push_back("f_larmor_hz");
        grid.values.push_back(std::move(hz));
    }
    grid.metadata = detail::base_metadata(config);
    emit(grid, out, fmt);
    return exit_ok;
}

int run_errormap(const SequenceFlags& sf, const OutputOpts& oo,
                 const std::optional<std::string>& config_path,
                 const std::optional<std::string>& interaction,
                 const std::optional<std::string>& coupling_flag,
                 const std::optional<double>& f_min, const std::optional<double>& f_max,
                 const std::optional<int>& f_points, const std::optional<double>& d_min,
                 const std::optional<double>& d_max, const std::optional<int>& d_points,
                 bool phase_cycle_flag) {
    StrictConfig cfg = config_path ? StrictConfig::load(*config_path) : StrictConfig();
    if (auto sub = cfg.maybe<std::string>("subcommand"); sub && *sub != "errormap")
        fail_config("config file is for subcommand '" + *sub + "'");

    ErrorMapSpec spec;
    spec.seq = resolve_sequence(sf, cfg);
    const std::string inter = resolve(interaction, cfg.maybe<std::string>("interaction"),
                                      std::string("off"));
    if (inter != "on" && inter != "off")
        fail_config("interaction must be 'on' or 'off'");
    spec.interaction_on = inter == "on";
    spec.f_axis = AxisSpec{"rotation_fraction",
                           resolve(f_min, cfg.maybe<double>("f_min"), 0.5),
                           resolve(f_max, cfg.maybe<double>("f_max"), 1.5),
                           resolve(f_points, cfg.maybe<int>("f_points"), 201)};
    spec.d_axis = AxisSpec{"detuning",
                           resolve(d_min, cfg.maybe<double>("d_min"), 0.0),
                           resolve(d_max, cfg.maybe<double>("d_max"), 1.0),
                           resolve(d_points, cfg.maybe<int>("d_points"), 201)};
    spec.phase_cycle = phase_cycle_flag || cfg.maybe<bool>("phase_cycle").value_or(false);

    const std::string fmt = oo.resolved_format(cfg);
    const std::string out = oo.resolved_out(cfg, "errormap", fmt);
    const int threads = oo.resolved_threads(cfg);
    if (spec.interaction_on)
        spec.coupling = resolve_coupling(coupling_flag, cfg, spec.seq);
    else
        cfg.maybe_raw("coupling"); // tolerated but unused
    cfg.finish();

    // validate n/protocol before launching the sweep
    protocol_phases(spec.seq.protocol, spec.seq.n);

    json config = sequence_to_json(spec.seq);
    config["subcommand"] = "errormap";
    config["interaction"] = inter;
    if (spec.interaction_on)
        config["coupling"] = spec.coupling;
    config["f_min"] = spec.f_axis.start;
    config["f_max"] = spec.f_axis.stop;
    config["f_points"] = spec.f_axis.points;
    config["d_min"] = spec.d_axis.start;
    config["d_max"] = spec.d_axis.stop;
    config["d_points"] = spec.d_axis.points;
    config["phase_cycle"] = spec.phase_cycle;

    GridResult grid = error_map(spec, threads);
    grid.metadata = detail::base_metadata(config);
    emit(grid, oo.resolved_out(cfg, "errormap", fmt), fmt);
    (void)out;
    return exit_ok;
}

int run_leak_spectrum(const SequenceFlags& sf, const OutputOpts& oo,
                      const std::optional<std::string>& config_path,
                      const std::optional<double>& delta_min,
                      const std::optional<double>& delta_max,
                      const std::optional<int>& points,
                      const std::optional<double>& tau_seconds_flag) {
    StrictConfig cfg = config_path ? StrictConfig::load(*config_path) : StrictConfig();
    if (auto sub = cfg.maybe<std::string>("subcommand"); sub && *sub != "leak-spectrum")
        fail_config("config file is for subcommand '" + *sub + "'");

    LeakSpectrumSpec spec;
    SequenceParams seq = resolve_sequence(sf, cfg, PulseModel::Finite);
    if (seq.pulse_model != PulseModel::Finite)
        fail_config("leak-spectrum requires the finite pulse model");
    spec.protocol = seq.protocol;
    spec.n = seq.n;
    spec.tau = seq.tau;
    spec.rabi = 1.0 / (2.0 * seq.pi_duration);
    spec.envelope = seq.envelope;
    spec.delta_axis = AxisSpec{"delta_leak",
                               resolve(delta_min, cfg.maybe<double>("delta_min"), 10.0),
                               resolve(delta_max, cfg.maybe<double>("delta_max"), 30.0),
                               resolve(points, cfg.maybe<int>("points"), 2001)};
    const auto tau_seconds = tau_seconds_flag ? tau_seconds_flag : cfg.maybe<double>("tau_seconds");

    const std::string fmt = oo.resolved_format(cfg);
    const std::string out = oo.resolved_out(cfg, "leak-spectrum", fmt);
    const int threads = oo.resolved_threads(cfg);
    cfg.finish();

    json config = sequence_to_json(seq);
    config["subcommand"] = "leak-spectrum";
    config["delta_min"] = spec.delta_axis.start;
    config["delta_max"] = spec.delta_axis.stop;
    config["points"] = spec.delta_axis.points;
    if (tau_seconds)
        config["tau_seconds"] = *tau_seconds;

    GridResult grid = leak_spectrum(spec, threads);
    if (tau_seconds) {
        std::vector<double> hz(grid.axis_values[0].size());
        for (size_t i = 0; i < hz.size(); ++i)
            hz[i] = grid.axis_values[0][i] / *tau_seconds;
        grid.value_names.push_back("delta_leak_hz");
        grid.values.push_back(std::move(hz));
    }
    grid.metadata = detail::base_metadata(config);
    emit(grid, out, fmt);
    return exit_ok;
}

int run_leak_decay(const OutputOpts& oo, const std::optional<std::string>& config_path,
                   const std::optional<std::string>& protocols_flag,
                   const std::optional<std::string>& n_values_flag,
                   const std::optional<int>& n_max, const std::optional<double>& duty,
                   const std::optional<double>& delta_min,
                   const std::optional<double>& delta_max,
                   const std::optional<int>& samples, const std::optional<double>& tau) {
    StrictConfig cfg = config_path ? StrictConfig::load(*config_path) : StrictConfig();
    if (auto sub = cfg.maybe<std::string>("subcommand"); sub && *sub != "leak-decay")
        fail_config("config file is for subcommand '" + *sub + "'");

    LeakDecaySpec spec;
    std::vector<std::string> names;
    if (protocols_flag) {
        std::stringstream ss(*protocols_flag);
        std::string item;
        while (std::getline(ss, item, ','))
            names.push_back(item);
    } else if (auto v = cfg.maybe<std::vector<std::string>>("protocols")) {
        names = *v;
    } else {
        names = {"CP", "CPMG", "APCP", "XY16", "MLEV32Y"};
    }
    spec.protocols.clear();
    for (const auto& name : names)
        spec.protocols.push_back(protocol_from_string(name));

    spec.tau = resolve(tau, cfg.maybe<double>("tau"), 1.0);
    spec.duty = resolve(duty, cfg.maybe<double>("duty"), 0.5);
    spec.delta_min = resolve(delta_min, cfg.maybe<double>("delta_min"), 20.0);
    spec.delta_max = resolve(delta_max, cfg.maybe<double>("delta_max"), 25.0);
    spec.samples = resolve(samples, cfg.maybe<int>("samples"), 101);

    if (n_values_flag) {
        std::stringstream ss(*n_values_flag);
        std::string item;
        while (std::getline(ss, item, ','))
            spec.n_values.push_back(std::stoi(item));
    } else if (auto v = cfg.maybe<std::vector<int>>("n_values")) {
        spec.n_values = *v;
    } else {
        int lcm = 1;
        for (Protocol p : spec.protocols)
            lcm = std::lcm(lcm, block_length(p));
        const int top = resolve(n_max, cfg.maybe<int>("n_max"), 256);
        for (int n = lcm; n <= top; n += lcm)
            spec.n_values.push_back(n);
        if (spec.n_values.empty())
            fail_config("n_max is below one protocol block");
    }

    const std::string fmt = oo.resolved_format(cfg);
    const std::string out = oo.resolved_out(cfg, "leak-decay", fmt);
    const int threads = oo.resolved_threads(cfg);
    cfg.finish();

    json config = {{"subcommand", "leak-decay"},
                   {"protocols", names},
                   {"n_values", spec.n_values},
                   {"tau", spec.tau},
                   {"duty", spec.duty},
                   {"delta_min", spec.delta_min},
                   {"delta_max", spec.delta_max},
                   {"samples", spec.samples}};

    GridResult grid = leak_decay(spec, threads);
    grid.metadata = detail::base_metadata(config);
    emit(grid, out, fmt);
    return exit_ok;
}

int run_sense(const SequenceFlags& sf, const OutputOpts& oo,
              const std::optional<std::string>& config_path,
              const std::optional<std::string>& system_flag,
              const std::optional<double>& f_larmor,
              const std::optional<std::string>& coupling_flag,
              const std::optional<double>& delta_leak, bool phase_cycle_flag) {
    StrictConfig cfg = config_path ? StrictConfig::load(*config_path) : StrictConfig();
    if (auto sub = cfg.maybe<std::string>("subcommand"); sub && *sub != "sense")
        fail_config("config file is for subcommand '" + *sub + "'");

    // exactly one system block: two_level | sensing | leak
    std::string system = system_flag.value_or("");
    json sys_block = json::object();
    int blocks = 0;
    for (const char* name : {"two_level", "sensing", "leak"}) {
        if (auto b = cfg.maybe_raw(name)) {
            ++blocks;
            if (system.empty())
                system = name;
            else if (system != name)
                fail_config("conflicting system blocks");
            sys_block = *b;
        }
    }
    if (blocks > 1)
        fail_config("config must contain exactly one system block");
    if (system.empty())
        fail_config("missing system block (two_level | sensing | leak)");

    SequenceParams seq = resolve_sequence(sf, cfg,
                                          system == "leak" ? PulseModel::Finite
                                                           : PulseModel::Delta);
    ErrorModel errors = resolve_errors(sf, cfg);
    const bool phase_cycle = phase_cycle_flag || cfg.maybe<bool>("phase_cycle").value_or(false);

    const std::string fmt = oo.resolved_format(cfg);
    const std::string out = oo.resolved_out(cfg, "sense", fmt);

    StrictConfig sys(sys_block);
    json config = sequence_to_json(seq);
    config["subcommand"] = "sense";
    config["rotation_fraction"] = errors.rotation_fraction;
    config["detuning"] = errors.detuning;
    config["phase_cycle"] = phase_cycle;

    std::vector<std::string> names;
    std::vector<double> values;
    const SequenceSchedule schedule = seq.schedule(errors.rotation_fraction);
    const EngineOptions opts = seq.options();

    if (system == "two_level") {
        sys.finish();
        cfg.finish();
        config["two_level"] = json::object();
        const double v = detail::phase_cycled(phase_cycle, schedule, [&](const auto& s) {
            return run_two_level(s, errors, opts);
        });
        names = {phase_cycle ? "signal" : "p_up"};
        values = {v};
    } else if (system == "sensing") {
        double fl = resolve(f_larmor, sys.maybe<double>("f_larmor"), 0.5 / seq.tau);
        std::optional<std::string> c = coupling_flag;
        if (!c) {
            if (auto raw = sys.maybe_raw("coupling"))
                c = raw->is_string() ? raw->get<std::string>()
                                     : format_full(raw->get<double>());
        }
        sys.finish();
        const double coupling = resolve_coupling(c, cfg, seq);
        cfg.finish();
        config["sensing"] = {{"f_larmor", fl}, {"coupling", coupling}};
        const SensingModel m = SensingModel::equal_coupling(fl, coupling);
        const double v = detail::phase_cycled(phase_cycle, schedule, [&](const auto& s) {
            return run_sensing(s, errors, m, opts);
        });
        names = {phase_cycle ? "signal" : "p_up"};
        values = {v};
    } else {
        const double dl = resolve(delta_leak, sys.maybe<double>("delta"), 0.0);
        sys.finish();
        cfg.finish();
        config["leak"] = {{"delta", dl}};
        const LeakModel m{dl, schedule.rabi()};
        const auto p = run_leak(schedule, m, opts);
        names = {"p1", "p2", "p3"};
        values = {p[0], p[1], p[2]};
    }

    const std::string ts = timestamp_utc();
    std::ofstream os(out);
    if (!os)
        fail_config("cannot open output file '" + out + "'");
    if (fmt == "csv") {
        os << "# ddsense " << version << "\n# timestamp: " << ts << "\n# config: "
           << config.dump() << "\n";
        for (size_t i = 0; i < names.size(); ++i)
            os << csv_field(names[i]) << (i + 1 < names.size() ? "," : "\n");
        for (size_t i = 0; i < values.size(); ++i)
            os << format_full(values[i]) << (i + 1 < values.size() ? "," : "\n");
    } else {
        json j = {{"tool", "ddsense"}, {"version", version}, {"timestamp", ts},
                  {"config", config}};
        for (size_t i = 0; i < names.size(); ++i)
            j["values"][names[i]] = values[i];
        os << j.dump(2) << "\n";
    }
    for (size_t i = 0; i < names.size(); ++i)
        std::cout << names[i] << " = " << format_full(values[i]) << "\n";
    return exit_ok;
}

int run_fit(const OutputOpts& oo, const std::optional<std::string>& config_path,
            const std::optional<std::string>& model_flag,
            const std::optional<std::string>& input_flag,
            const std::optional<double>& fix_offset_flag) {
    StrictConfig cfg = config_path ? StrictConfig::load(*config_path) : StrictConfig();
    if (auto sub = cfg.maybe<std::string>("subcommand"); sub && *sub != "fit")
        fail_config("config file is for subcommand '" + *sub + "'");

    const std::string model = resolve(model_flag, cfg.maybe<std::string>("model"),
                                      std::string());
    if (model != "decay" && model != "lorentzian")
        fail_config("fit model must be 'decay' or 'lorentzian'");
    const std::string input = resolve(input_flag, cfg.maybe<std::string>("input"),
                                      std::string());
    if (input.empty())
        fail_config("missing input CSV path");
    std::optional<double> fix_offset = fix_offset_flag;
    if (!fix_offset)
        fix_offset = cfg.maybe<double>("fix_offset");

    const std::string fmt = oo.resolved_format(cfg);
    const std::string out = oo.resolved_out(cfg, "fit", fmt);
    cfg.finish();

    const DataSeries data = ingest_csv(input);

    json config = {{"subcommand", "fit"}, {"model", model}, {"input", input}};
    if (fix_offset)
        config["fix_offset"] = *fix_offset;

    json result = {{"tool", "ddsense"}, {"version", version},
                   {"timestamp", timestamp_utc()}, {"config", config}};
    bool converged = false;
    if (model == "decay") {
        const DecayFit fit = fit_flat_rate_decay(data, fix_offset);
        converged = fit.diag.converged;
        result["fit"] = {{"gamma_max", fit.gamma_max}, {"t2", fit.t2},
                         {"amplitude", fit.amplitude}, {"offset", fit.offset},
                         {"residual_norm", fit.diag.residual_norm},
                         {"iterations", fit.diag.iterations},
                         {"converged", fit.diag.converged}};
        std::cout << "gamma_max = " << format_full(fit.gamma_max)
                  << "\nt2 = " << format_full(fit.t2) << "\n";
    } else {
        const LorentzianFit fit = fit_lorentzian(data);
        converged = fit.diag.converged;
        result["fit"] = {{"center", fit.center}, {"fwhm", fit.fwhm},
                         {"depth", fit.depth}, {"asymptote", fit.asymptote},
                         {"residual_norm", fit.diag.residual_norm},
                         {"iterations", fit.diag.iterations},
                         {"converged", fit.diag.converged}};
        std::cout << "center = " << format_full(fit.center)
                  << "\nfwhm = " << format_full(fit.fwhm) << "\n";
    }

    std::ofstream os(out);
    if (!os)
        fail_config("cannot open output file '" + out + "'");
    os << result.dump(2) << "\n";
    if (!converged) {
        std::cerr << "fit did not converge\n";
        return exit_fit;
    }
    return exit_ok;
}

int run_calibrate(const std::optional<std::string>& config_path,
                  const SequenceFlags& sf, const std::optional<std::string>& out) {
    StrictConfig cfg = config_path ? StrictConfig::load(*config_path) : StrictConfig();
    if (auto sub = cfg.maybe<std::string>("subcommand"); sub && *sub != "calibrate")
        fail_config("config file is for subcommand '" + *sub + "'");
    const auto proto = resolve(sf.protocol, cfg.maybe<std::string>("protocol"), std::string());
    if (proto.empty())
        fail_config("missing required option: protocol");
    const Protocol protocol = protocol_from_string(proto);
    const int n = resolve(sf.n, cfg.maybe<int>("n"), 0);
    if (n <= 0)
        fail_config("missing or invalid option: n");
    const double tau = resolve(sf.tau, cfg.maybe<double>("tau"), 1.0);
    cfg.finish();

    protocol_phases(protocol, n); // validate n before the (long) search

    const double a = calibrate_coupling(n, tau, protocol);
    std::cout << format_full(a) << "\n";
    if (out) {
        std::ofstream os(*out);
        if (!os)
            fail_config("cannot open output file '" + *out + "'");
        json j = {{"tool", "ddsense"}, {"version", version},
                  {"timestamp", timestamp_utc()},
                  {"config", {{"subcommand", "calibrate"}, {"protocol", to_string(protocol)},
                              {"n", n}, {"tau", tau}}},
                  {"coupling", a}};
        os << j.dump(2) << "\n";
    }
    return exit_ok;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynamical-decoupling sensing simulator"};
    app.require_subcommand(1);

    std::optional<std::string> config_path;
    app.add_option("--config", config_path, "JSON config file (flags override)")
        ->expected(1);

    SequenceFlags sf;
    OutputOpts oo;

    auto* spectrum = app.add_subcommand("spectrum", "sensing signal vs target Larmor frequency");
    add_sequence_flags(spectrum, sf);
    add_output_flags(spectrum, oo);
    std::optional<std::string> coupling;
    std::optional<double> fmin, fmax, tau_seconds;
    std::optional<int> points;
    bool phase_cycle = false;
    spectrum->add_option("--coupling", coupling, "coupling in 1/tau, or 'auto'");
    spectrum->add_option("--fmin", fmin, "axis start, f_larmor in 1/(2 tau) units");
    spectrum->add_option("--fmax", fmax, "axis stop");
    spectrum->add_option("--points", points, "axis points");
    spectrum->add_flag("--phase-cycle", phase_cycle, "report the two-phase difference signal");
    spectrum->add_option("--tau-seconds", tau_seconds, "tau in seconds; adds SI columns");

    auto* errormap = app.add_subcommand("errormap", "rotation-fraction x detuning map");
    add_sequence_flags(errormap, sf);
    add_output_flags(errormap, oo);
    std::optional<std::string> interaction;
    std::optional<double> f_min, f_max, d_min, d_max;
    std::optional<int> f_points, d_points;
    errormap->add_option("--interaction", interaction, "'on' (with target spin) or 'off'");
    errormap->add_option("--coupling", coupling, "coupling in 1/tau, or 'auto'");
    errormap->add_option("--f-min", f_min, "rotation fraction axis start");
    errormap->add_option("--f-max", f_max, "rotation fraction axis stop");
    errormap->add_option("--f-points", f_points, "rotation fraction axis points");
    errormap->add_option("--d-min", d_min, "detuning axis start");
    errormap->add_option("--d-max", d_max, "detuning axis stop");
    errormap->add_option("--d-points", d_points, "detuning axis points");
    errormap->add_flag("--phase-cycle", phase_cycle, "report the two-phase difference signal");

    auto* leak_spec = app.add_subcommand("leak-spectrum", "three-level populations vs leak detuning");
    add_sequence_flags(leak_spec, sf);
    add_output_flags(leak_spec, oo);
    std::optional<double> delta_min, delta_max;
    leak_spec->add_option("--delta-min", delta_min, "leak detuning axis start, 1/tau");
    leak_spec->add_option("--delta-max", delta_max, "leak detuning axis stop");
    leak_spec->add_option("--points", points, "axis points");
    leak_spec->add_option("--tau-seconds", tau_seconds, "tau in seconds; adds SI columns");

    auto* leak_dec = app.add_subcommand("leak-decay", "delta-averaged correct-state probability vs n");
    add_output_flags(leak_dec, oo);
    std::optional<std::string> protocols_flag, n_values_flag;
    std::optional<int> n_max, samples;
    std::optional<double> duty, ld_tau;
    leak_dec->add_option("--protocols", protocols_flag, "comma-separated protocol list");
    leak_dec->add_option("--n-values", n_values_flag, "comma-separated pulse counts");
    leak_dec->add_option("--n-max", n_max, "largest n (multiples of the common block)");
    leak_dec->add_option("--duty", duty, "pi duration as a fraction of tau");
    leak_dec->add_option("--delta-min", delta_min, "averaging range start, 1/tau");
    leak_dec->add_option("--delta-max", delta_max, "averaging range stop");
    leak_dec->add_option("--samples", samples, "averaging grid points");
    leak_dec->add_option("--tau", ld_tau, "pi-pulse spacing");

    auto* sense = app.add_subcommand("sense", "single run of one engine");
    add_sequence_flags(sense, sf);
    add_output_flags(sense, oo);
    std::optional<std::string> system;
    std::optional<double> f_larmor, delta_leak;
    sense->add_option("--system", system, "two_level | sensing | leak");
    sense->add_option("--f-larmor", f_larmor, "target Larmor frequency, 1/tau");
    sense->add_option("--coupling", coupling, "coupling in 1/tau, or 'auto'");
    sense->add_option("--delta", delta_leak, "third-level detuning, 1/tau");
    sense->add_flag("--phase-cycle", phase_cycle, "report the two-phase difference signal");

    auto* fit = app.add_subcommand("fit", "fit a decay or Lorentzian model to CSV data");
    add_output_flags(fit, oo);
    std::optional<std::string> fit_model, fit_input;
    std::optional<double> fix_offset;
    fit->add_option("--model", fit_model, "decay | lorentzian");
    fit->add_option("--input", fit_input, "input CSV (x,y[,sigma] with header)");
    fit->add_option("--fix-offset", fix_offset, "hold the decay offset at this value");

    auto* calibrate = app.add_subcommand("calibrate", "coupling for a full conditional flip");
    add_sequence_flags(calibrate, sf);
    std::optional<std::string> cal_out;
    calibrate->add_option("--out", cal_out, "optional JSON record path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0)
            return app.exit(e); // --help
        app.exit(e);
        return exit_config;
    }

    try {
        if (spectrum->parsed())
            return run_spectrum(sf, oo, config_path, coupling, fmin, fmax, points,
                                phase_cycle, tau_seconds);
        if (errormap->parsed())
            return run_errormap(sf, oo, config_path, interaction, coupling, f_min, f_max,
                                f_points, d_min, d_max, d_points, phase_cycle);
        if (leak_spec->parsed())
            return run_leak_spectrum(sf, oo, config_path, delta_min, delta_max, points,
                                     tau_seconds);
        if (leak_dec->parsed())
            return run_leak_decay(oo, config_path, protocols_flag, n_values_flag, n_max,
                                  duty, delta_min, delta_max, samples, ld_tau);
        if (sense->parsed())
            return run_sense(sf, oo, config_path, system, f_larmor, coupling, delta_leak,
                             phase_cycle);
        if (fit->parsed())
            return run_fit(oo, config_path, fit_model, fit_input, fix_offset);
        if (calibrate->parsed())
            return run_calibrate(config_path, sf, cal_out);
    } catch (const cli_error& e) {
        std::cerr << "error: " << e.message << "\n";
        return e.code;
    } catch (const model_mismatch& e) {
        std::cerr << "engine error: " << e.what() << "\n";
        return exit_engine;
    } catch (const invalid_input& e) {
        // bad counts, overlaps and malformed data are configuration problems
        std::cerr << "error: " << e.what() << "\n";
        return exit_config;
    } catch (const std::exception& e) {
        std::cerr << "engine error: " << e.what() << "\n";
        return exit_engine;
    }
    return exit_config;
}
