#pragma once

#include "ebsde/geometry.hpp"

#include <array>
#include <memory>
#include <ostream>

namespace ebsde {

struct GridSpec {
    double hx = 1e-2;
};

/// Tensor mesh over the closed domain. In 1-d the nodes run from one
/// boundary point to the other. In 2-d the domain is embedded in its bounding
/// box; inside nodes with an outside axis neighbour are boundary nodes and
/// carry the projection of the node onto the boundary and the normal there.
struct Grid {
    int dim = 1;
    double h = 0.0;
    Vec origin;
    std::array<int, 2> extent{0, 1};
    std::vector<int> index_of;  // tensor index -> node id, -1 outside
    std::vector<Vec> nodes;
    std::vector<std::array<int, 2>> tensor;  // node id -> tensor index
    std::vector<bool> boundary;
    std::vector<Vec> boundary_point;
    std::vector<Vec> normal;
    /// Axis neighbours: nbr[i][2k] in direction -e_k, nbr[i][2k+1] in +e_k, -1 when absent.
    std::vector<std::array<int, 4>> nbr;

    std::size_t size() const { return nodes.size(); }

    int node_at(int i, int j = 0) const {
        if (i < 0 || i >= extent[0] || j < 0 || j >= extent[1]) return -1;
        return index_of[static_cast<std::size_t>(j) * extent[0] + i];
    }

    int nearest_node(const Vec& x) const {
        const int i0 = static_cast<int>(std::lround((x[0] - origin[0]) / h));
        const int j0 = dim == 2 ? static_cast<int>(std::lround((x[1] - origin[1]) / h)) : 0;
        int best = -1;
        double dbest = 1e300;
        for (int r = 0; r < 4 && best < 0; ++r)
            for (int di = -r; di <= r; ++di)
                for (int dj = (dim == 2 ? -r : 0); dj <= (dim == 2 ? r : 0); ++dj) {
                    const int id = node_at(std::clamp(i0 + di, 0, extent[0] - 1), std::clamp(j0 + dj, 0, extent[1] - 1));
                    if (id < 0) continue;
                    const double d = (nodes[id] - x).norm();
                    if (d < dbest) {
                        dbest = d;
                        best = id;
                    }
                }
        if (best >= 0) return best;
        for (std::size_t id = 0; id < nodes.size(); ++id) {
            const double d = (nodes[id] - x).norm();
            if (d < dbest) {
                dbest = d;
                best = static_cast<int>(id);
            }
        }
        return best;
    }
};

inline std::shared_ptr<Grid> make_grid(const Domain& domain, const GridSpec& spec) {
    if (!(spec.hx > 0.0)) throw Error(ErrorCode::InvalidArgument, "discounted_solver", "grid spacing must be positive");
    auto g = std::make_shared<Grid>();
    g->dim = domain.dim;
    if (domain.dim == 1) {
        Vec lo = domain.bounding_box.lo, hi = domain.bounding_box.hi;
        const double pad = 0.01 * domain.bounding_box.diagonal() + 1e-12;
        lo[0] -= pad;
        hi[0] += pad;
        const double a = project(domain, lo)[0], b = project(domain, hi)[0];
        const int n = std::max(3, static_cast<int>(std::lround((b - a) / spec.hx)) + 1);
        g->h = (b - a) / (n - 1);
        g->origin = Vec::Constant(1, a);
        g->extent = {n, 1};
        for (int i = 0; i < n; ++i) {
            Vec p(1);
            p[0] = (i == n - 1) ? b : a + i * g->h;
            g->index_of.push_back(i);
            g->nodes.push_back(p);
            g->tensor.push_back({i, 0});
            const bool bnd = (i == 0 || i == n - 1);
            g->boundary.push_back(bnd);
            g->boundary_point.push_back(p);
            g->normal.push_back(bnd ? Vec(domain.grad_phi(p).normalized()) : zeros(1));
            g->nbr.push_back({i > 0 ? i - 1 : -1, i < n - 1 ? i + 1 : -1, -1, -1});
        }
        return g;
    }
    if (domain.dim != 2)
        throw Error(ErrorCode::InvalidArgument, "discounted_solver", "grid solves are available in 1-d and 2-d only");
    const Box& box = domain.bounding_box;
    const double h = spec.hx;
    std::array<int, 2> m{};
    Vec origin(2);
    for (int k = 0; k < 2; ++k) {
        m[k] = static_cast<int>(std::ceil((box.hi[k] - box.lo[k]) / h - 1e-9)) + 1;
        origin[k] = 0.5 * (box.lo[k] + box.hi[k]) - 0.5 * (m[k] - 1) * h;
    }
    g->h = h;
    g->origin = origin;
    g->extent = m;
    g->index_of.assign(static_cast<std::size_t>(m[0]) * m[1], -1);
    const double tol = domain.boundary_tol();
    for (int j = 0; j < m[1]; ++j)
        for (int i = 0; i < m[0]; ++i) {
            Vec p(2);
            p << origin[0] + i * h, origin[1] + j * h;
            if (domain.phi(p) < -tol) continue;
            g->index_of[static_cast<std::size_t>(j) * m[0] + i] = static_cast<int>(g->nodes.size());
            g->nodes.push_back(p);
            g->tensor.push_back({i, j});
        }
    const std::size_t n = g->nodes.size();
    g->boundary.assign(n, false);
    g->boundary_point.resize(n);
    g->normal.assign(n, zeros(2));
    g->nbr.resize(n);
    for (std::size_t id = 0; id < n; ++id) {
        const auto [i, j] = g->tensor[id];
        g->nbr[id] = {g->node_at(i - 1, j), g->node_at(i + 1, j), g->node_at(i, j - 1), g->node_at(i, j + 1)};
        bool bnd = false;
        for (int s : g->nbr[id]) bnd = bnd || s < 0;
        g->boundary[id] = bnd;
        g->boundary_point[id] = g->nodes[id];
        if (bnd) {
            const Vec p = nearest_boundary_point(domain, g->nodes[id]);
            g->boundary_point[id] = p;
            g->normal[id] = domain.grad_phi(p).normalized();
        }
    }
    return g;
}

/// Node values with a gradient per node, interpolated between nodes.
struct GridFunction {
    std::shared_ptr<const Grid> grid;
    std::vector<double> values;
    std::vector<Vec> gradient;

    double max_abs() const {
        double m = 0.0;
        for (double v : values) m = std::max(m, std::abs(v));
        return m;
    }

    double value_at(const Vec& x) const { return interpolate(x, false)[0]; }
    Vec gradient_at(const Vec& x) const { return interpolate(x, true); }

private:
    Vec interpolate(const Vec& x, bool grad) const {
        const Grid& g = *grid;
        auto pick = [&](int id) -> Vec {
            if (grad) return gradient[id];
            Vec v(1);
            v[0] = values[id];
            return v;
        };
        if (g.dim == 1) {
            const double s = (x[0] - g.origin[0]) / g.h;
            const int n = g.extent[0];
            int i = std::clamp(static_cast<int>(std::floor(s)), 0, n - 2);
            const double t = std::clamp(s - i, 0.0, 1.0);
            return (1.0 - t) * pick(i) + t * pick(i + 1);
        }
        const double s0 = (x[0] - g.origin[0]) / g.h, s1 = (x[1] - g.origin[1]) / g.h;
        const int i = static_cast<int>(std::floor(s0)), j = static_cast<int>(std::floor(s1));
        const int c00 = g.node_at(i, j), c10 = g.node_at(i + 1, j), c01 = g.node_at(i, j + 1), c11 = g.node_at(i + 1, j + 1);
        if (c00 >= 0 && c10 >= 0 && c01 >= 0 && c11 >= 0) {
            const double t = s0 - i, u = s1 - j;
            return (1 - t) * (1 - u) * pick(c00) + t * (1 - u) * pick(c10) + (1 - t) * u * pick(c01) + t * u * pick(c11);
        }
        const int id = g.nearest_node(x);
        if (grad) return gradient[id];
        Vec v(1);
        v[0] = values[id] + gradient[id].dot(x - g.nodes[id]);
        return v;
    }
};

/// Gradient from node values: central in the interior, one-sided at the edge
/// (second order in 1-d).
inline std::vector<Vec> grid_gradient(const Grid& g, const std::vector<double>& v) {
    std::vector<Vec> out(g.size(), zeros(g.dim));
    const double h = g.h;
    for (std::size_t id = 0; id < g.size(); ++id) {
        for (int k = 0; k < g.dim; ++k) {
            const int m = g.nbr[id][2 * k], p = g.nbr[id][2 * k + 1];
            if (m >= 0 && p >= 0) {
                out[id][k] = (v[p] - v[m]) / (2 * h);
            } else if (p >= 0) {
                const int pp = g.nbr[p][2 * k + 1];
                out[id][k] = pp >= 0 ? (-3 * v[id] + 4 * v[p] - v[pp]) / (2 * h) : (v[p] - v[id]) / h;
            } else if (m >= 0) {
                const int mm = g.nbr[m][2 * k];
                out[id][k] = mm >= 0 ? (3 * v[id] - 4 * v[m] + v[mm]) / (2 * h) : (v[id] - v[m]) / h;
            }
        }
    }
    return out;
}

inline GridFunction make_grid_function(std::shared_ptr<const Grid> grid, std::vector<double> values) {
    GridFunction f;
    f.gradient = grid_gradient(*grid, values);
    f.values = std::move(values);
    f.grid = std::move(grid);
    return f;
}

/// Samples a field on the grid nodes; gradients come from the field itself.
inline GridFunction sample_on_grid(std::shared_ptr<const Grid> grid, const ScalarFn& value, const VectorFn& gradient) {
    GridFunction f;
    for (const Vec& p : grid->nodes) {
        f.values.push_back(value(p));
        f.gradient.push_back(gradient(p));
    }
    f.grid = std::move(grid);
    return f;
}

inline void write_grid_function_csv(std::ostream& os, const GridFunction& f) {
    const int dim = f.grid->dim;
    for (int k = 0; k < dim; ++k) os << "x" << k << ',';
    os << "value";
    for (int k = 0; k < dim; ++k) os << ",grad" << k;
    os << '\n';
    os.precision(17);
    for (std::size_t i = 0; i < f.values.size(); ++i) {
        for (int k = 0; k < dim; ++k) os << f.grid->nodes[i][k] << ',';
        os << f.values[i];
        for (int k = 0; k < dim; ++k) os << ',' << f.gradient[i][k];
        os << '\n';
    }
}

}  // namespace ebsde
