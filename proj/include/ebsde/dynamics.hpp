#pragma once

#include "ebsde/core.hpp"
#include "ebsde/geometry.hpp"

#include <optional>
#include <ostream>
#include <string>

namespace ebsde {

/// Potential U of a Kolmogorov model (b = -grad U, sigma = sqrt(2) I).
struct KolmogorovPotential {
    ScalarFn U;
    VectorFn grad;
    MatrixFn hess;
};

struct SdeModel {
    int dim = 1;
    VectorFn drift;
    MatrixFn sigma;
    std::optional<KolmogorovPotential> potential;
    bool sigma_constant = false;
    std::string description;
};

inline SdeModel make_model(int dim, VectorFn drift, MatrixFn sigma, bool sigma_constant = false,
                           std::string description = {}) {
    SdeModel m;
    m.dim = dim;
    m.drift = std::move(drift);
    m.sigma = std::move(sigma);
    m.sigma_constant = sigma_constant;
    m.description = std::move(description);
    return m;
}

inline SdeModel make_kolmogorov(int dim, KolmogorovPotential potential, std::string description = {}) {
    SdeModel m;
    m.dim = dim;
    auto grad = potential.grad;
    m.drift = [grad](const Vec& x) -> Vec { return -grad(x); };
    const double s2 = std::sqrt(2.0);
    m.sigma = [dim, s2](const Vec&) -> Mat { return s2 * identity(dim); };
    m.sigma_constant = true;
    m.potential = std::move(potential);
    m.description = std::move(description);
    return m;
}

/// U(x) = scale |x|^2 / 2.
inline KolmogorovPotential quadratic_potential(int dim, double scale = 1.0) {
    return {[scale](const Vec& x) { return 0.5 * scale * x.squaredNorm(); },
            [scale](const Vec& x) -> Vec { return scale * x; },
            [scale, dim](const Vec&) -> Mat { return scale * identity(dim); }};
}

/// U(x) = scale |x|^4.
inline KolmogorovPotential quartic_potential(int dim, double scale = 1.0) {
    return {[scale](const Vec& x) { return scale * x.squaredNorm() * x.squaredNorm(); },
            [scale](const Vec& x) -> Vec { return 4.0 * scale * x.squaredNorm() * x; },
            [scale, dim](const Vec& x) -> Mat {
                return 4.0 * scale * (x.squaredNorm() * identity(dim) + 2.0 * x * x.transpose());
            }};
}

/// L f = 1/2 Tr(sigma sigma^T Hess f) + b . grad f
inline double generator_apply(const SdeModel& model, const C2Field& f, const Vec& x) {
    const Mat s = model.sigma(x);
    const Mat a = s * s.transpose();
    return 0.5 * (a.cwiseProduct(f.hessian(x))).sum() + model.drift(x).dot(f.gradient(x));
}

inline C2Field phi_field(const Domain& d) { return {d.phi, d.grad_phi, d.hess_phi}; }

enum class ReflectionScheme {
    /// Euler step followed by projection; dK is the projection displacement.
    projection,
    /// Euler step with the local time over the step sampled from the
    /// Brownian-bridge maximum of the normal component against the tangent
    /// wall at the nearest boundary point. Exact for a flat wall with
    /// constant coefficients.
    bridge,
};

inline const char* to_string(ReflectionScheme s) { return s == ReflectionScheme::projection ? "projection" : "bridge"; }

struct StepResult {
    Vec x;
    double dK = 0.0;
    /// Boundary point where the pushing acted (meaningful when dK > 0).
    Vec contact;
};

/// One step of the reflected SDE from x with standard normal noise. The
/// uniform variate in (0, 1] is used only by the bridge scheme.
inline StepResult step_reflected(const SdeModel& model, const Domain& domain, const Vec& x, double h, const Vec& noise,
                                 ReflectionScheme scheme = ReflectionScheme::projection, double uniform = 0.5) {
    if (!(h > 0.0)) throw Error(ErrorCode::InvalidArgument, "dynamics", "time step must be positive");
    const Mat s = model.sigma(x);
    const Vec increment = model.drift(x) * h + s * noise * std::sqrt(h);
    if (increment.norm() > domain.diameter_hint())
        throw Error(ErrorCode::StepTooLarge, "dynamics", "one step moved farther than the domain diameter; reduce h");
    Vec pre = x + increment;
    StepResult out;
    if (scheme == ReflectionScheme::projection) {
        if (domain.phi(pre) >= 0.0) {
            out.x = pre;
            out.contact = pre;
            return out;
        }
        out.x = nearest_boundary_point(domain, pre);
        out.dK = (out.x - pre).norm();
        out.contact = out.x;
        return out;
    }

    const Vec bp = nearest_boundary_point(domain, x);
    const Vec gb = domain.grad_phi(bp);
    const Vec n = gb / gb.norm();
    const double a = std::max(0.0, (x - bp).dot(n));
    const double sn2 = (s.transpose() * n).squaredNorm() * h;
    const double wn = -increment.dot(n);
    double m = wn;
    if (sn2 > 0.0) m = 0.5 * (wn + std::sqrt(wn * wn - 2.0 * sn2 * std::log(uniform)));
    double dK = std::max(0.0, m - a);
    Vec next = pre + dK * n;
    out.contact = bp;
    if (domain.phi(next) < 0.0) {
        const Vec p = nearest_boundary_point(domain, next);
        dK += (p - next).norm();
        out.contact = p;
        next = p;
    }
    out.x = next;
    out.dK = dK;
    return out;
}

/// Discrete trajectory of (X, K). noise[i] drives the step from X[i] to X[i+1].
struct ReflectedPath {
    double h = 0.0;
    std::vector<Vec> X;
    std::vector<double> K;
    std::vector<double> dK;
    std::vector<Vec> contact;
    std::vector<std::size_t> reflection_events;
    std::vector<Vec> noise;

    std::size_t steps() const { return dK.size(); }
    double time(std::size_t i) const { return h * static_cast<double>(i); }
};

inline std::size_t checked_steps(double T, double h) {
    if (!(h > 0.0) || T < 0.0) throw Error(ErrorCode::InvalidArgument, "dynamics", "need h > 0 and T >= 0");
    const double r = T / h;
    const auto n = static_cast<std::size_t>(std::llround(r));
    if (std::abs(r - static_cast<double>(n)) > 1e-6 * std::max(1.0, r))
        throw Error(ErrorCode::InvalidArgument, "dynamics", "T/h must be an integer");
    return n;
}

struct SimulationOptions {
    ReflectionScheme scheme = ReflectionScheme::bridge;
    bool record_noise = true;
};

inline ReflectedPath simulate(const SdeModel& model, const Domain& domain, const Vec& x0, double T, double h,
                              std::uint64_t seed, SimulationOptions opts = {}, std::uint64_t stream = 0) {
    if (!domain.contains(x0)) throw Error(ErrorCode::InvalidArgument, "dynamics", "x0 must lie in the closed domain");
    const std::size_t n = checked_steps(T, h);
    PathRng rng(seed, stream);
    ReflectedPath path;
    path.h = h;
    path.X.reserve(n + 1);
    path.K.reserve(n + 1);
    path.X.push_back(x0);
    path.K.push_back(0.0);
    Vec x = x0;
    double K = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec xi = rng.normal_vector(model.dim);
        const double u = rng.uniform_open();
        const StepResult r = step_reflected(model, domain, x, h, xi, opts.scheme, u);
        x = r.x;
        K += r.dK;
        if (r.dK > 0.0) path.reflection_events.push_back(i);
        path.X.push_back(x);
        path.K.push_back(K);
        path.dK.push_back(r.dK);
        path.contact.push_back(r.contact);
        if (opts.record_noise) path.noise.push_back(xi);
    }
    return path;
}

inline void write_path_csv(std::ostream& os, const ReflectedPath& path) {
    os << "t";
    const int dim = path.X.empty() ? 0 : static_cast<int>(path.X.front().size());
    for (int k = 0; k < dim; ++k) os << ",x" << k;
    os << ",K\n";
    os.precision(17);
    for (std::size_t i = 0; i < path.X.size(); ++i) {
        os << path.time(i);
        for (int k = 0; k < dim; ++k) os << ',' << path.X[i][k];
        os << ',' << path.K[i] << '\n';
    }
}

/// Discretized K_T - (phi(X_T) - phi(x0) - sum L phi(X_i) h - sum grad phi^T sigma sqrt(h) noise_i).
inline double local_time_identity_gap(const ReflectedPath& path, const SdeModel& model, const Domain& domain) {
    if (path.noise.size() != path.steps())
        throw Error(ErrorCode::InvalidArgument, "dynamics", "path was simulated without recorded noise");
    const C2Field f = phi_field(domain);
    double acc = domain.phi(path.X.back()) - domain.phi(path.X.front());
    const double sh = std::sqrt(path.h);
    for (std::size_t i = 0; i < path.steps(); ++i) {
        const Vec& x = path.X[i];
        acc -= generator_apply(model, f, x) * path.h;
        acc -= domain.grad_phi(x).dot(model.sigma(x) * path.noise[i]) * sh;
    }
    return path.K.back() - acc;
}

/// Occupation measure of a path over [lo, hi] along coordinate `axis`.
struct Histogram {
    std::vector<double> centers;
    std::vector<double> mass;
    double width = 0.0;

    double density(std::size_t i) const { return mass[i] / width; }
};

inline Histogram make_histogram(double lo, double hi, int bins) {
    Histogram hist;
    hist.width = (hi - lo) / bins;
    for (int b = 0; b < bins; ++b) hist.centers.push_back(lo + (b + 0.5) * hist.width);
    hist.mass.assign(bins, 0.0);
    return hist;
}

inline void accumulate(Histogram& hist, double lo, double value) {
    const int bins = static_cast<int>(hist.mass.size());
    int b = static_cast<int>(std::floor((value - lo) / hist.width));
    b = std::clamp(b, 0, bins - 1);
    hist.mass[b] += 1.0;
}

inline void normalize(Histogram& hist) {
    double total = 0.0;
    for (double m : hist.mass) total += m;
    if (total > 0.0)
        for (double& m : hist.mass) m /= total;
}

inline Histogram occupation_histogram(const ReflectedPath& path, double lo, double hi, int bins, int axis = 0) {
    Histogram hist = make_histogram(lo, hi, bins);
    for (std::size_t i = 1; i < path.X.size(); ++i) accumulate(hist, lo, path.X[i][axis]);
    normalize(hist);
    return hist;
}

inline void write_histogram_csv(std::ostream& os, const Histogram& hist) {
    os << "bin_center,mass\n";
    os.precision(17);
    for (std::size_t i = 0; i < hist.mass.size(); ++i) os << hist.centers[i] << ',' << hist.mass[i] << '\n';
}

/// Euler step of the unreflected diffusion with potential U + n d^2(., G).
inline Vec step_penalized(const SdeModel& model, const Domain& domain, double n, const Vec& x, double h,
                          const Vec& noise) {
    if (!model.potential) throw Error(ErrorCode::NotKolmogorov, "dynamics", "penalized dynamics needs a potential");
    Vec grad = model.potential->grad(x);
    if (domain.phi(x) < 0.0) grad += 2.0 * n * (x - nearest_boundary_point(domain, x));
    return x - grad * h + std::sqrt(2.0 * h) * noise;
}

/// Grid quadrature of the Gibbs density exp(-U)/N restricted to the domain.
struct DensityGrid {
    std::vector<Vec> points;
    std::vector<double> weights;  // quadrature weights (cell measure)
    std::vector<double> density;  // normalized density at points
    double normalization = 0.0;   // N = integral of exp(-U) over the domain

    template <class F>
    double expectation(F&& f) const {
        double s = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) s += weights[i] * density[i] * f(points[i]);
        return s;
    }
    double total_mass() const {
        return expectation([](const Vec&) { return 1.0; });
    }
};

namespace detail {

/// Quadrature nodes and weights over the closed domain: composite Simpson on
/// the interval in 1-d, midpoint cells with sub-sampled cut cells otherwise.
inline void domain_quadrature(const Domain& domain, int points_per_axis, std::vector<Vec>& pts,
                              std::vector<double>& wts) {
    pts.clear();
    wts.clear();
    if (domain.dim == 1) {
        Vec lo_out = domain.bounding_box.lo, hi_out = domain.bounding_box.hi;
        const double pad = 0.01 * domain.bounding_box.diagonal() + 1e-12;
        lo_out[0] -= pad;
        hi_out[0] += pad;
        const double a = project(domain, lo_out)[0];
        const double b = project(domain, hi_out)[0];
        int m = std::max(3, points_per_axis);
        if (m % 2 == 0) ++m;
        const double hx = (b - a) / (m - 1);
        for (int i = 0; i < m; ++i) {
            Vec p(1);
            p[0] = a + i * hx;
            pts.push_back(p);
            const double w = (i == 0 || i == m - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
            wts.push_back(w * hx / 3.0);
        }
        return;
    }
    const Box& box = domain.bounding_box;
    const int dim = domain.dim;
    const int m = std::max(2, points_per_axis);
    Vec cell = (box.hi - box.lo) / m;
    double vol = 1.0;
    for (int k = 0; k < dim; ++k) vol *= cell[k];
    const int sub = 4;
    std::vector<int> idx(dim, 0);
    while (true) {
        Vec c(dim);
        for (int k = 0; k < dim; ++k) c[k] = box.lo[k] + (idx[k] + 0.5) * cell[k];
        const double phic = domain.phi(c);
        const double reach = 0.5 * cell.norm();
        if (phic > reach) {
            pts.push_back(c);
            wts.push_back(vol);
        } else if (phic > -reach) {
            std::vector<int> j(dim, 0);
            const double subvol = vol / std::pow(sub, dim);
            while (true) {
                Vec p(dim);
                for (int k = 0; k < dim; ++k) p[k] = c[k] - 0.5 * cell[k] + (j[k] + 0.5) * cell[k] / sub;
                if (domain.phi(p) >= 0.0) {
                    pts.push_back(p);
                    wts.push_back(subvol);
                }
                int k = 0;
                while (k < dim && ++j[k] == sub) j[k++] = 0;
                if (k == dim) break;
            }
        }
        int k = 0;
        while (k < dim && ++idx[k] == m) idx[k++] = 0;
        if (k == dim) break;
    }
}

}  // namespace detail

inline DensityGrid invariant_density(const SdeModel& model, const Domain& domain, int points_per_axis = 2001) {
    if (!model.potential) throw Error(ErrorCode::NotKolmogorov, "dynamics", "invariant density needs a potential");
    DensityGrid g;
    detail::domain_quadrature(domain, points_per_axis, g.points, g.weights);
    std::vector<double> raw(g.points.size());
    double umin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < g.points.size(); ++i) umin = std::min(umin, model.potential->U(g.points[i]));
    double N = 0.0;
    for (std::size_t i = 0; i < g.points.size(); ++i) {
        raw[i] = std::exp(-(model.potential->U(g.points[i]) - umin));
        N += g.weights[i] * raw[i];
    }
    g.density.resize(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) g.density[i] = raw[i] / N;
    g.normalization = N * std::exp(-umin);
    return g;
}

/// Draws from the Gibbs law on the domain by rejection from the bounding box.
class GibbsSampler {
public:
    GibbsSampler(const SdeModel& model, const Domain& domain) : model_(&model), domain_(&domain) {
        if (!model.potential) throw Error(ErrorCode::NotKolmogorov, "dynamics", "Gibbs sampling needs a potential");
        umin_ = std::numeric_limits<double>::infinity();
        for (const Vec& p : domain_samples(domain, 65)) umin_ = std::min(umin_, model.potential->U(p));
        // Grid minimum can overshoot the true one slightly; margin keeps acceptance <= 1.
        umin_ -= 0.05 * (1.0 + std::abs(umin_));
    }

    Vec draw(PathRng& rng) const {
        const Box& box = domain_->bounding_box;
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        for (int attempt = 0; attempt < 1000000; ++attempt) {
            Vec p(box.dim());
            for (int k = 0; k < box.dim(); ++k) p[k] = box.lo[k] + (box.hi[k] - box.lo[k]) * unif(rng.engine());
            if (domain_->phi(p) < 0.0) continue;
            if (unif(rng.engine()) <= std::exp(-(model_->potential->U(p) - umin_))) return p;
        }
        throw Error(ErrorCode::NonConvergence, "dynamics", "rejection sampler failed to accept");
    }

private:
    const SdeModel* model_;
    const Domain* domain_;
    double umin_;
};

/// Time after which statistics are treated as stationary: 20 / |eta|.
inline double default_burn_in(double eta) {
    if (eta < -1e-3) return std::min(200.0, 20.0 / std::abs(eta));
    return 50.0;
}

struct KRateOptions {
    double T = 20.0;
    double h = 1e-3;
    std::size_t paths = 1000;
    std::uint64_t seed = 1;
    ReflectionScheme scheme = ReflectionScheme::bridge;
    /// Used only without a potential: burn-in from the centroid.
    double burn_in = 20.0;
    unsigned threads = 0;
};

/// Stationary start: Gibbs draw when a potential exists, burn-in otherwise.
inline Vec stationary_start(const SdeModel& model, const Domain& domain, PathRng& rng, double burn_in, double h,
                            ReflectionScheme scheme, const GibbsSampler* sampler) {
    if (sampler) return sampler->draw(rng);
    Vec x = domain.centroid;
    const std::size_t n = static_cast<std::size_t>(std::ceil(burn_in / h));
    for (std::size_t i = 0; i < n; ++i) {
        const Vec xi = rng.normal_vector(model.dim);
        x = step_reflected(model, domain, x, h, xi, scheme, rng.uniform_open()).x;
    }
    return x;
}

/// Stationary estimate of E[K_T]/T with its standard error across paths.
inline Estimate expected_K_rate(const SdeModel& model, const Domain& domain, const KRateOptions& opts) {
    const std::size_t n = checked_steps(opts.T, opts.h);
    std::optional<GibbsSampler> sampler;
    if (model.potential) sampler.emplace(model, domain);
    std::vector<double> rates(opts.paths);
    parallel_for(
        opts.paths,
        [&](std::size_t p) {
            PathRng rng(opts.seed, p);
            Vec x = stationary_start(model, domain, rng, opts.burn_in, opts.h, opts.scheme, sampler ? &*sampler : nullptr);
            double K = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const Vec xi = rng.normal_vector(model.dim);
                const StepResult r = step_reflected(model, domain, x, opts.h, xi, opts.scheme, rng.uniform_open());
                x = r.x;
                K += r.dK;
            }
            rates[p] = K / opts.T;
        },
        opts.threads);
    return estimate_from(rates);
}

/// E[K_t] on a time grid from a fixed start, for the linear-growth check.
struct KGrowthProfile {
    std::vector<double> times;
    std::vector<Estimate> expected_K;
};

inline KGrowthProfile k_growth_profile(const SdeModel& model, const Domain& domain, const Vec& x0,
                                       const std::vector<double>& times, double h, std::size_t paths,
                                       std::uint64_t seed, ReflectionScheme scheme = ReflectionScheme::bridge) {
    KGrowthProfile out;
    out.times = times;
    std::vector<std::size_t> marks;
    for (double t : times) marks.push_back(checked_steps(t, h));
    const std::size_t n = marks.empty() ? 0 : *std::max_element(marks.begin(), marks.end());
    std::vector<std::vector<double>> samples(times.size(), std::vector<double>(paths));
    parallel_for(paths, [&](std::size_t p) {
        PathRng rng(seed, p);
        Vec x = x0;
        double K = 0.0;
        for (std::size_t i = 0; i <= n; ++i) {
            for (std::size_t j = 0; j < marks.size(); ++j)
                if (marks[j] == i) samples[j][p] = K;
            if (i == n) break;
            const Vec xi = rng.normal_vector(model.dim);
            const StepResult r = step_reflected(model, domain, x, h, xi, scheme, rng.uniform_open());
            x = r.x;
            K += r.dK;
        }
    });
    for (auto& s : samples) out.expected_K.push_back(estimate_from(s));
    return out;
}

/// Long-run moments of the penalized diffusion along one coordinate.
struct MomentEstimate {
    Estimate first;
    Estimate second;
};

struct PenalizedOptions {
    double T = 50.0;
    double h = 1e-3;
    double burn_in = 10.0;
    std::size_t paths = 200;
    std::uint64_t seed = 1;
    int axis = 0;
};

inline MomentEstimate penalized_moments(const SdeModel& model, const Domain& domain, double n,
                                        const PenalizedOptions& opts) {
    const std::size_t steps = checked_steps(opts.T, opts.h);
    const std::size_t burn = static_cast<std::size_t>(std::ceil(opts.burn_in / opts.h));
    std::vector<double> m1(opts.paths), m2(opts.paths);
    parallel_for(opts.paths, [&](std::size_t p) {
        PathRng rng(opts.seed, p);
        Vec x = domain.centroid;
        for (std::size_t i = 0; i < burn; ++i) x = step_penalized(model, domain, n, x, opts.h, rng.normal_vector(model.dim));
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < steps; ++i) {
            x = step_penalized(model, domain, n, x, opts.h, rng.normal_vector(model.dim));
            s1 += x[opts.axis];
            s2 += x[opts.axis] * x[opts.axis];
        }
        m1[p] = s1 / static_cast<double>(steps);
        m2[p] = s2 / static_cast<double>(steps);
    });
    return {estimate_from(m1), estimate_from(m2)};
}

/// Same statistics for the reflected diffusion (the n -> infinity limit).
inline MomentEstimate reflected_moments(const SdeModel& model, const Domain& domain, const PenalizedOptions& opts,
                                        ReflectionScheme scheme = ReflectionScheme::bridge) {
    const std::size_t steps = checked_steps(opts.T, opts.h);
    const std::size_t burn = static_cast<std::size_t>(std::ceil(opts.burn_in / opts.h));
    std::vector<double> m1(opts.paths), m2(opts.paths);
    parallel_for(opts.paths, [&](std::size_t p) {
        PathRng rng(opts.seed, p);
        Vec x = domain.centroid;
        for (std::size_t i = 0; i < burn + steps; ++i) {
            const Vec xi = rng.normal_vector(model.dim);
            x = step_reflected(model, domain, x, opts.h, xi, scheme, rng.uniform_open()).x;
            if (i >= burn) {
                m1[p] += x[opts.axis];
                m2[p] += x[opts.axis] * x[opts.axis];
            }
        }
        m1[p] /= static_cast<double>(steps);
        m2[p] /= static_cast<double>(steps);
    });
    return {estimate_from(m1), estimate_from(m2)};
}

struct DeviationOptions {
    double h = 1e-3;
    std::size_t paths = 2000;
    std::uint64_t seed = 1;
    ReflectionScheme scheme = ReflectionScheme::bridge;
    double burn_in = 20.0;
};

/// Frequency of the event {(1/T) int_0^T f(X_t) dt <= level} under a stationary start.
inline Estimate lower_deviation_frequency(const SdeModel& model, const Domain& domain,
                                          const std::function<double(const Vec&)>& f, double level, double T,
                                          const DeviationOptions& opts = {}) {
    const std::size_t n = checked_steps(T, opts.h);
    if (n == 0) throw Error(ErrorCode::InvalidArgument, "dynamics", "need T > 0");
    std::optional<GibbsSampler> sampler;
    if (model.potential) sampler.emplace(model, domain);
    std::vector<double> hits(opts.paths);
    parallel_for(opts.paths, [&](std::size_t p) {
        PathRng rng(opts.seed, p);
        Vec x = stationary_start(model, domain, rng, opts.burn_in, opts.h, opts.scheme, sampler ? &*sampler : nullptr);
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const Vec xi = rng.normal_vector(model.dim);
            const Vec next = step_reflected(model, domain, x, opts.h, xi, opts.scheme, rng.uniform_open()).x;
            s += 0.5 * (f(x) + f(next));
            x = next;
        }
        hits[p] = s / static_cast<double>(n) <= level ? 1.0 : 0.0;
    });
    return estimate_from(hits);
}

}  // namespace ebsde
