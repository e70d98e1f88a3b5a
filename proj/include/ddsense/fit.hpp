#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "ddsense/errors.hpp"

// Nonlinear least-squares fitting for the two analysis models:
//   * uniform-rate-average decay  A (1 - exp(-G t)) / (G t) + B, the exact
//     average of exp(-g t) over a flat distribution g in [0, G]; the reported
//     coherence time is the inverse average rate, T2 = 2/G;
//   * Lorentzian dip  asym - A (w/2)^2 / ((x - f0)^2 + (w/2)^2).
//
// Fits run Levenberg-Marquardt with a central-difference Jacobian on
// span-normalised coordinates.  Rate and width parameters are optimised in
// log space, which keeps them positive and makes x-rescaling an exact shift.

namespace ddsense {

struct DataSeries {
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> sigma; // optional per-point uncertainties

    bool has_sigma() const { return !sigma.empty(); }
    size_t size() const { return x.size(); }

    void validate() const {
        if (x.size() != y.size())
            throw invalid_input("data series: x and y lengths differ");
        if (has_sigma() && sigma.size() != x.size())
            throw invalid_input("data series: sigma length mismatch");
        for (size_t i = 1; i < x.size(); ++i)
            if (!(x[i] > x[i - 1]))
                throw invalid_input("data series: x must be strictly increasing");
        if (has_sigma())
            for (double s : sigma)
                if (!(s > 0.0))
                    throw invalid_input("data series: sigma values must be positive");
    }
};

struct FitDiagnostics {
    double residual_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

struct DecayFit {
    double gamma_max = 0.0; // maximum rate of the flat distribution
    double t2 = 0.0;        // 2 / gamma_max
    double amplitude = 0.0;
    double offset = 0.0;
    FitDiagnostics diag;
};

struct LorentzianFit {
    double center = 0.0;
    double fwhm = 0.0;
    double depth = 0.0;
    double asymptote = 0.0;
    FitDiagnostics diag;
};

inline double flat_rate_decay_model(double t, double gamma_max, double amplitude,
                                    double offset) {
    if (!(gamma_max > 0.0))
        throw invalid_input("flat_rate_decay_model: gamma_max must be > 0");
    const double x = gamma_max * t;
    if (std::abs(x) < 1e-8)
        return amplitude * (1.0 - x / 2.0) + offset;
    return amplitude * (1.0 - std::exp(-x)) / x + offset;
}

namespace detail {

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct LMOutcome {
    Eigen::VectorXd params;
    double cost = 0.0; // sum of squared residuals
    int iterations = 0;
    bool converged = false;
};

// Damped least squares with Marquardt scaling.  Steps are accepted only when
// they lower the cost, so the final cost never exceeds the starting cost.
inline LMOutcome levenberg_marquardt(const ResidualFn& residuals, Eigen::VectorXd p) {
    constexpr double fd_step = 1e-6;
    constexpr double step_tol_hard = 1e-13;
    constexpr double step_tol_flag = 1e-8;
    constexpr double lambda_max = 1e14;
    constexpr int max_iterations = 400;

    const auto cost_of = [](const Eigen::VectorXd& r) { return r.squaredNorm(); };
    const auto rel_step = [](const Eigen::VectorXd& dp, const Eigen::VectorXd& pref) {
        double m = 0.0;
        for (Eigen::Index i = 0; i < dp.size(); ++i)
            m = std::max(m, std::abs(dp(i)) / std::max(1.0, std::abs(pref(i))));
        return m;
    };

    LMOutcome out;
    Eigen::VectorXd r = residuals(p);
    double cost = cost_of(r);
    double lambda = 1e-3;
    bool converged = false;
    int iter = 0;

    for (; iter < max_iterations; ++iter) {
        // central-difference Jacobian
        Eigen::MatrixXd jac(r.size(), p.size());
        for (Eigen::Index k = 0; k < p.size(); ++k) {
            Eigen::VectorXd pp = p, pm = p;
            pp(k) += fd_step;
            pm(k) -= fd_step;
            jac.col(k) = (residuals(pp) - residuals(pm)) / (2.0 * fd_step);
        }
        const Eigen::MatrixXd jtj = jac.transpose() * jac;
        const Eigen::VectorXd jtr = jac.transpose() * r;

        bool accepted = false;
        while (lambda <= lambda_max) {
            Eigen::MatrixXd m = jtj;
            m.diagonal() += lambda * jtj.diagonal();
            const Eigen::VectorXd dp = m.ldlt().solve(-jtr);
            if (dp.allFinite()) {
                const double step = rel_step(dp, p);
                const Eigen::VectorXd pt = p + dp;
                const Eigen::VectorXd rt = residuals(pt);
                const double ct = cost_of(rt);
                if (std::isfinite(ct) && ct < cost) {
                    p = pt;
                    r = rt;
                    cost = ct;
                    lambda = std::max(lambda / 3.0, 1e-12);
                    accepted = true;
                    if (step < step_tol_flag)
                        converged = true;
                    if (step < step_tol_hard)
                        iter = max_iterations; // done
                    break;
                }
                // a vanishing proposed step at moderate damping means we sit
                // on the optimum even if no strict decrease is possible
                if (step < step_tol_hard && lambda <= 1.0) {
                    converged = true;
                    iter = max_iterations;
                    accepted = true;
                    break;
                }
            }
            lambda *= 4.0;
        }
        if (!accepted)
            break;
    }

    out.params = p;
    out.cost = cost;
    out.iterations = std::min(iter, max_iterations);
    out.converged = converged;
    return out;
}

inline Eigen::VectorXd weights_of(const DataSeries& data) {
    Eigen::VectorXd w = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(data.size()));
    if (data.has_sigma())
        for (size_t i = 0; i < data.size(); ++i)
            w(static_cast<Eigen::Index>(i)) = 1.0 / data.sigma[i];
    return w;
}

} // namespace detail

// Fits the flat-rate-distribution decay.  Multi-start over 16 log-spaced
// gamma_max seeds spanning [0.1, 100] per data span, which avoids the flat
// local minimum at gamma_max -> 0.  The offset floats unless fixed_offset is
// given.  A failed fit reports converged = false instead of throwing.
inline DecayFit fit_flat_rate_decay(const DataSeries& data,
                                    std::optional<double> fixed_offset = std::nullopt) {
    data.validate();
    const size_t nparams = fixed_offset ? 2 : 3;
    if (data.size() < nparams + 1)
        throw invalid_input("fit_flat_rate_decay: too few points");
    const double span = data.x.back() - data.x.front();

    const Eigen::VectorXd w = detail::weights_of(data);
    const auto residuals = [&](const Eigen::VectorXd& p) {
        const double gamma_hat = std::exp(p(0));
        const double amplitude = p(1);
        const double offset = fixed_offset ? *fixed_offset : p(2);
        Eigen::VectorXd r(static_cast<Eigen::Index>(data.size()));
        for (size_t i = 0; i < data.size(); ++i) {
            const double t_hat = data.x[i] / span;
            r(static_cast<Eigen::Index>(i)) =
                w(static_cast<Eigen::Index>(i))
                * (flat_rate_decay_model(t_hat, gamma_hat, amplitude, offset) - data.y[i]);
        }
        return r;
    };

    const double amp0 = data.y.front() - data.y.back();
    const double off0 = data.y.back();
    std::optional<detail::LMOutcome> best;
    for (int k = 0; k < 16; ++k) {
        const double gamma_seed = 0.1 * std::pow(1000.0, k / 15.0); // 0.1 .. 100
        Eigen::VectorXd p0(static_cast<Eigen::Index>(nparams));
        p0(0) = std::log(gamma_seed);
        p0(1) = amp0;
        if (!fixed_offset)
            p0(2) = off0;
        detail::LMOutcome o = detail::levenberg_marquardt(residuals, p0);
        if (!best || o.cost < best->cost)
            best = std::move(o);
    }

    DecayFit fit;
    fit.gamma_max = std::exp(best->params(0)) / span;
    fit.t2 = 2.0 / fit.gamma_max;
    fit.amplitude = best->params(1);
    fit.offset = fixed_offset ? *fixed_offset : best->params(2);
    fit.diag = {std::sqrt(best->cost), best->iterations, best->converged};
    return fit;
}

// Lorentzian dip fit; initial center from the minimum point, width from the
// half-depth crossings.
inline LorentzianFit fit_lorentzian(const DataSeries& data) {
    data.validate();
    if (data.size() < 5)
        throw invalid_input("fit_lorentzian: need at least 5 points");
    const double mid = (data.x.front() + data.x.back()) / 2.0;
    const double span = data.x.back() - data.x.front();

    const Eigen::VectorXd w = detail::weights_of(data);
    const auto residuals = [&](const Eigen::VectorXd& p) {
        const double f0 = p(0);
        const double width = std::exp(p(1));
        const double depth = p(2);
        const double asym = p(3);
        Eigen::VectorXd r(static_cast<Eigen::Index>(data.size()));
        for (size_t i = 0; i < data.size(); ++i) {
            const double xh = (data.x[i] - mid) / span;
            const double hw2 = (width / 2.0) * (width / 2.0);
            const double model = asym - depth * hw2 / ((xh - f0) * (xh - f0) + hw2);
            r(static_cast<Eigen::Index>(i)) = w(static_cast<Eigen::Index>(i)) * (model - data.y[i]);
        }
        return r;
    };

    const size_t imin =
        static_cast<size_t>(std::min_element(data.y.begin(), data.y.end()) - data.y.begin());
    const double asym0 = (data.y.front() + data.y.back()) / 2.0;
    const double depth0 = std::max(asym0 - data.y[imin], 1e-12);
    const double half = asym0 - depth0 / 2.0;
    double lo = data.x[imin], hi = data.x[imin];
    for (size_t i = 0; i < data.size(); ++i) {
        if (data.y[i] < half) {
            lo = std::min(lo, data.x[i]);
            hi = std::max(hi, data.x[i]);
        }
    }
    const double width0 = hi > lo ? (hi - lo) / span : 0.25;

    Eigen::VectorXd p0(4);
    p0(0) = (data.x[imin] - mid) / span;
    p0(1) = std::log(width0);
    p0(2) = depth0;
    p0(3) = asym0;
    const detail::LMOutcome o = detail::levenberg_marquardt(residuals, p0);

    LorentzianFit fit;
    fit.center = mid + o.params(0) * span;
    fit.fwhm = std::exp(o.params(1)) * span;
    fit.depth = o.params(2);
    fit.asymptote = o.params(3);
    fit.diag = {std::sqrt(o.cost), o.iterations, o.converged};
    return fit;
}

} // namespace ddsense
