#pragma once

#include "ebsde/driver.hpp"
#include "ebsde/dynamics.hpp"
#include "ebsde/grid.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <optional>

namespace ebsde {

enum class NonlinearMethod { newton, picard };

struct GridSolveOptions {
    GridSpec grid;
    NonlinearMethod method = NonlinearMethod::newton;
    double tol = 1e-10;
    int max_iterations = 200;
    /// Extra diffusion epsilon * I. Negative: none, unless sigma is singular and
    /// the discrete system is too, then h and 2h with linear extrapolation.
    double viscosity = -1.0;
};

struct SolveInfo {
    int iterations = 0;
    double residual = 0.0;
    std::vector<double> viscosities;
};

namespace detail {

/// Discrete problem on a fixed grid:
///   L_h v + psi(x, sigma^T D v) - alpha v [- lambda] = 0 at PDE nodes,
///   Neumann rows at 2-d boundary nodes, optional normalization v(ref) = 0.
class GridProblem {
public:
    GridProblem(const SdeModel& model, const Domain& domain, const DriverSpec& driver, std::shared_ptr<const Grid> grid)
        : model_(model), domain_(domain), driver_(driver), grid_(std::move(grid)) {
        const Grid& g = *grid_;
        const std::size_t n = g.size();
        a_.resize(n);
        b_.resize(n);
        s_.resize(n);
        gb_.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const Vec& x = g.nodes[i];
            s_[i] = model.sigma(x);
            a_[i] = s_[i] * s_[i].transpose();
            b_[i] = model.drift(x);
            gb_[i] = g.boundary[i] ? driver.g(g.boundary_point[i]) : 0.0;
        }
    }

    bool sigma_singular() const {
        for (const Mat& a : a_)
            if (min_eigenvalue(a) <= 1e-12) return true;
        return false;
    }

    const Grid& grid() const { return *grid_; }

    bool pde_row(std::size_t i) const { return grid_->dim == 1 || !grid_->boundary[i]; }

    /// Inward normal derivative required at boundary node i.
    double neumann_target(std::size_t i, double mu) const { return mu - gb_[i]; }

    /// Row-consistent gradient: central in the interior, boundary data in 1-d.
    Vec discrete_gradient(std::size_t i, const Eigen::VectorXd& u, double mu) const {
        const Grid& g = *grid_;
        if (g.dim == 1 && g.boundary[i]) return g.normal[i] * neumann_target(i, mu);
        Vec out(g.dim);
        for (int k = 0; k < g.dim; ++k) {
            const int m = g.nbr[i][2 * k], p = g.nbr[i][2 * k + 1];
            out[k] = (u[p] - u[m]) / (2 * g.h);
        }
        return out;
    }

    struct Linear {
        Eigen::SparseMatrix<double> A;
        Eigen::VectorXd c;
    };

    /// Linear part A u + c of the residual, u = (v, lambda) when ergodic.
    Linear assemble(double alpha, double mu, bool ergodic, double eps, std::size_t ref) const {
        const Grid& g = *grid_;
        const std::size_t n = g.size();
        const std::size_t N = ergodic ? n + 1 : n;
        const double h = g.h;
        std::vector<Eigen::Triplet<double>> t;
        t.reserve(n * (g.dim == 1 ? 4 : 10));
        Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(N));
        for (std::size_t i = 0; i < n; ++i) {
            const int row = static_cast<int>(i);
            if (!pde_row(i)) {
                // sum_k |n_k| (v_k - v_i) / h = mu - g
                const Vec& nn = g.normal[i];
                double diag = 0.0, wsum = 0.0;
                for (int k = 0; k < g.dim; ++k) {
                    const int nb = g.nbr[i][2 * k + (nn[k] > 0 ? 1 : 0)];
                    if (nb < 0 || std::abs(nn[k]) < 1e-14) continue;
                    const double w = std::abs(nn[k]);
                    t.emplace_back(row, nb, w / h);
                    diag -= w / h;
                    wsum += w;
                }
                if (wsum <= 0.0)
                    throw Error(ErrorCode::InvalidArgument, "discounted_solver",
                                "boundary node without an inward neighbour; refine the grid");
                t.emplace_back(row, row, diag);
                c[row] = -neumann_target(i, mu);
                continue;
            }
            const Mat& a = a_[i];
            const Vec& b = b_[i];
            double diag = -alpha;
            for (int k = 0; k < g.dim; ++k) {
                const double akk = a(k, k) + eps;
                const double bk = b[k];
                const int m = g.nbr[i][2 * k], p = g.nbr[i][2 * k + 1];
                const double dd = 0.5 * akk / (h * h);
                diag -= 2.0 * dd;
                if (m >= 0 && p >= 0) {
                    double cm = dd, cp = dd;
                    if (std::abs(bk) * h <= akk) {
                        cp += bk / (2 * h);
                        cm -= bk / (2 * h);
                    } else if (bk > 0) {
                        cp += bk / h;
                        diag -= bk / h;
                    } else {
                        cm -= bk / h;
                        diag += bk / h;
                    }
                    t.emplace_back(row, m, cm);
                    t.emplace_back(row, p, cp);
                } else {
                    // 1-d boundary: ghost value v_inner - 2h q; the first derivative is n q exactly
                    const int inner = m >= 0 ? m : p;
                    const double q = neumann_target(i, mu);
                    t.emplace_back(row, inner, 2.0 * dd);
                    c[row] += -2.0 * h * q * dd + bk * g.normal[i][0] * q;
                }
            }
            if (g.dim == 2 && std::abs(a(0, 1)) > 0.0) {
                const auto [ti, tj] = g.tensor[i];
                const int pp = g.node_at(ti + 1, tj + 1), pm = g.node_at(ti + 1, tj - 1);
                const int mp = g.node_at(ti - 1, tj + 1), mm = g.node_at(ti - 1, tj - 1);
                if (pp >= 0 && pm >= 0 && mp >= 0 && mm >= 0) {
                    const double w = a(0, 1) / (4 * h * h);
                    t.emplace_back(row, pp, w);
                    t.emplace_back(row, mm, w);
                    t.emplace_back(row, pm, -w);
                    t.emplace_back(row, mp, -w);
                }
            }
            t.emplace_back(row, row, diag);
            if (ergodic) t.emplace_back(row, static_cast<int>(n), -1.0);
        }
        if (ergodic) t.emplace_back(static_cast<int>(n), static_cast<int>(ref), 1.0);
        Linear out;
        out.A.resize(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
        out.A.setFromTriplets(t.begin(), t.end());
        out.c = c;
        return out;
    }

    /// psi(x_i, sigma^T D v) at PDE rows.
    Eigen::VectorXd nonlinear(const Eigen::VectorXd& u, double mu, std::vector<Vec>* z_out = nullptr) const {
        const std::size_t n = grid_->size();
        Eigen::VectorXd out = Eigen::VectorXd::Zero(u.size());
        if (z_out) z_out->assign(n, Vec());
        for (std::size_t i = 0; i < n; ++i) {
            if (!pde_row(i)) continue;
            const Vec z = s_[i].transpose() * discrete_gradient(i, u, mu);
            out[static_cast<Eigen::Index>(i)] = driver_.psi(grid_->nodes[i], z);
            if (z_out) (*z_out)[i] = z;
        }
        return out;
    }

    /// Jacobian of the nonlinear part.
    Eigen::SparseMatrix<double> nonlinear_jacobian(const Eigen::VectorXd& u, const std::vector<Vec>& z) const {
        const Grid& g = *grid_;
        std::vector<Eigen::Triplet<double>> t;
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!pde_row(i) || (g.dim == 1 && g.boundary[i])) continue;
            const Vec beta = driver_.grad_z(g.nodes[i], z[i]);
            const Vec sb = s_[i] * beta;
            for (int k = 0; k < g.dim; ++k) {
                if (sb[k] == 0.0) continue;
                t.emplace_back(static_cast<int>(i), g.nbr[i][2 * k + 1], sb[k] / (2 * g.h));
                t.emplace_back(static_cast<int>(i), g.nbr[i][2 * k], -sb[k] / (2 * g.h));
            }
        }
        Eigen::SparseMatrix<double> J(u.size(), u.size());
        J.setFromTriplets(t.begin(), t.end());
        return J;
    }

    struct Output {
        Eigen::VectorXd u;
        int iterations = 0;
        double residual = 0.0;
    };

    Output solve(double alpha, double mu, bool ergodic, double eps, std::size_t ref, const GridSolveOptions& opts,
                 const Eigen::VectorXd* init) const {
        const Linear lin = assemble(alpha, mu, ergodic, eps, ref);
        const Eigen::Index N = lin.A.rows();
        Eigen::VectorXd u = (init && init->size() == N) ? *init : Eigen::VectorXd::Zero(N);
        auto residual = [&](const Eigen::VectorXd& w, std::vector<Vec>* z) {
            return Eigen::VectorXd(lin.A * w + lin.c + nonlinear(w, mu, z));
        };
        std::vector<Vec> z;
        Eigen::VectorXd r = residual(u, &z);
        double rn = r.lpNorm<Eigen::Infinity>();
        Output out;
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        if (opts.method == NonlinearMethod::picard) lu.compute(lin.A);
        double last_step = std::numeric_limits<double>::infinity();
        for (int it = 1; it <= opts.max_iterations; ++it) {
            out.iterations = it;
            Eigen::VectorXd step;
            if (opts.method == NonlinearMethod::newton) {
                Eigen::SparseMatrix<double> J = lin.A + nonlinear_jacobian(u, z);
                J.makeCompressed();
                lu.compute(J);
                if (lu.info() != Eigen::Success)
                    throw Error(ErrorCode::PicardDiverged, "discounted_solver", "singular Newton matrix");
                step = lu.solve(-r);
                double damp = 1.0;
                Eigen::VectorXd trial = u + step;
                std::vector<Vec> zt;
                Eigen::VectorXd rt = residual(trial, &zt);
                for (int ls = 0; ls < 8 && rt.lpNorm<Eigen::Infinity>() > rn && rn > opts.tol; ++ls) {
                    damp *= 0.5;
                    trial = u + damp * step;
                    rt = residual(trial, &zt);
                }
                step *= damp;
                u = trial;
                r = rt;
                z = zt;
            } else {
                if (lu.info() != Eigen::Success)
                    throw Error(ErrorCode::PicardDiverged, "discounted_solver", "singular linear system");
                const Eigen::VectorXd rhs = -(lin.c + nonlinear(u, mu));
                Eigen::VectorXd next = lu.solve(rhs);
                step = next - u;
                const double sn = step.lpNorm<Eigen::Infinity>();
                if (sn > last_step) step *= 0.5;  // oscillation damping
                last_step = sn;
                u += step;
                r = residual(u, &z);
            }
            rn = r.lpNorm<Eigen::Infinity>();
            const double scale = 1.0 + u.lpNorm<Eigen::Infinity>();
            if (!std::isfinite(rn)) break;
            if (rn <= opts.tol * scale || step.lpNorm<Eigen::Infinity>() <= 1e-14 * scale) {
                out.u = u;
                out.residual = rn;
                return out;
            }
        }
        throw Error(ErrorCode::PicardDiverged, "discounted_solver",
                    "nonlinear iteration did not converge; increase alpha, refine the grid or reduce K_psi_z");
    }

private:
    const SdeModel& model_;
    const Domain& domain_;
    const DriverSpec& driver_;
    std::shared_ptr<const Grid> grid_;
    std::vector<Mat> a_, s_;
    std::vector<Vec> b_;
    std::vector<double> gb_;
};

/// Viscosity fallback with extrapolation weights, used when the scheme without
/// added diffusion is singular (several recurrent classes of the discrete chain).
inline std::vector<std::pair<double, double>> viscosity_plan(const GridProblem& p, const GridSolveOptions& opts) {
    if (opts.viscosity >= 0.0) return {{opts.viscosity, 1.0}};
    const double h = p.grid().h;
    return {{h, 2.0}, {2.0 * h, -1.0}};
}

inline Eigen::VectorXd solve_with_viscosity(const GridProblem& p, double alpha, double mu, bool ergodic, std::size_t ref,
                                            const GridSolveOptions& opts, SolveInfo& info) {
    if (opts.viscosity < 0.0) {
        try {
            const auto o = p.solve(alpha, mu, ergodic, 0.0, ref, opts, nullptr);
            info.iterations += o.iterations;
            info.residual = std::max(info.residual, o.residual);
            info.viscosities = {0.0};
            return o.u;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::PicardDiverged || !p.sigma_singular()) throw;
        }
    }
    Eigen::VectorXd u;
    info.viscosities.clear();
    for (const auto& [eps, w] : viscosity_plan(p, opts)) {
        const auto o = p.solve(alpha, mu, ergodic, eps, ref, opts, nullptr);
        u = info.viscosities.empty() ? Eigen::VectorXd(w * o.u) : Eigen::VectorXd(u + w * o.u);
        info.iterations += o.iterations;
        info.residual = std::max(info.residual, o.residual);
        info.viscosities.push_back(eps);
    }
    return u;
}

inline GridFunction finish(const GridProblem& p, std::shared_ptr<const Grid> grid, const Eigen::VectorXd& u, double mu) {
    const std::size_t n = grid->size();
    std::vector<double> v(u.data(), u.data() + n);
    GridFunction f = make_grid_function(grid, v);
    if (grid->dim == 1)
        for (std::size_t i = 0; i < n; ++i)
            if (grid->boundary[i]) f.gradient[i] = grid->normal[i] * p.neumann_target(i, mu);
    return f;
}

}  // namespace detail

struct DiscountedSolution {
    GridFunction v;
    double alpha = 0.0;
    double mu = 0.0;
    SolveInfo info;
};

/// Grid solution of L v + psi(x, grad v^T sigma) - alpha v = 0 in G with
/// grad v . grad phi + g = mu on the boundary.
inline DiscountedSolution solve_discounted(const SdeModel& model, const Domain& domain, const DriverSpec& driver,
                                           double alpha, double mu, const GridSolveOptions& opts = {},
                                           std::shared_ptr<const Grid> grid = nullptr) {
    if (!(alpha > 0.0)) throw Error(ErrorCode::InvalidArgument, "discounted_solver", "alpha must be positive");
    if (!grid) grid = make_grid(domain, opts.grid);
    detail::GridProblem prob(model, domain, driver, grid);
    DiscountedSolution out;
    out.alpha = alpha;
    out.mu = mu;
    const Eigen::VectorXd u = detail::solve_with_viscosity(prob, alpha, mu, false, 0, opts, out.info);
    out.v = detail::finish(prob, grid, u, mu);
    return out;
}

/// Largest difference quotient |v(x) - v(x')| / |x - x'| over grid pairs.
inline double lipschitz_diagnostic(const GridFunction& v) {
    const Grid& g = *v.grid;
    double best = 0.0;
    if (g.dim == 1) {
        // in 1-d the largest chord slope is attained by neighbouring nodes
        for (std::size_t i = 0; i + 1 < g.size(); ++i)
            best = std::max(best, std::abs(v.values[i + 1] - v.values[i]) / (g.nodes[i + 1] - g.nodes[i]).norm());
        return best;
    }
    const std::size_t n = g.size();
    const std::size_t stride = std::max<std::size_t>(1, n / 3000);
    for (std::size_t i = 0; i < n; i += stride)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            best = std::max(best, std::abs(v.values[i] - v.values[j]) / (g.nodes[i] - g.nodes[j]).norm());
        }
    return best;
}

}  // namespace ebsde
