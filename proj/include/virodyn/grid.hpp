#pragma once

// Cell-centered structured grids in 1/2/3 space dimensions with homogeneous
// Neumann boundaries, plus the finite-volume operators built on them.
// Boundary handling is ghost-cell mirroring, which is equivalent to zero
// flux through wall faces; all operators below are written in flux form so
// that interior fluxes telescope under summation.

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <istream>
#include <ostream>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace virodyn {

struct GridSpec {
    int dim = 1;
    std::array<double, 3> length{1.0, 1.0, 1.0};
    std::array<int, 3> cells{1, 1, 1};
    std::array<double, 3> h{1.0, 1.0, 1.0};

    std::size_t total() const {
        std::size_t n = 1;
        for (int d = 0; d < dim; ++d) n *= static_cast<std::size_t>(cells[d]);
        return n;
    }

    double cell_volume() const {
        double v = 1.0;
        for (int d = 0; d < dim; ++d) v *= h[d];
        return v;
    }

    // Row-major: the last axis is contiguous.
    std::size_t stride(int axis) const {
        std::size_t s = 1;
        for (int d = axis + 1; d < dim; ++d) s *= static_cast<std::size_t>(cells[d]);
        return s;
    }

    // Coordinate of the cell center along one axis.
    double center(int axis, int i) const {
        return (static_cast<double>(i) + 0.5) * h[axis];
    }

    bool same_layout(const GridSpec& o) const {
        if (dim != o.dim) return false;
        for (int d = 0; d < dim; ++d)
            if (cells[d] != o.cells[d] || h[d] != o.h[d]) return false;
        return true;
    }

    double min_h() const {
        double m = h[0];
        for (int d = 1; d < dim; ++d) m = std::min(m, h[d]);
        return m;
    }
};

inline GridSpec make_grid(int dim, const std::vector<double>& lengths,
                          const std::vector<int>& cells) {
    if (dim < 1 || dim > 3)
        throw std::invalid_argument("make_grid: dim must be 1, 2 or 3");
    if (lengths.size() != static_cast<std::size_t>(dim) ||
        cells.size() != static_cast<std::size_t>(dim))
        throw std::invalid_argument("make_grid: lengths/cells size must equal dim");
    GridSpec g;
    g.dim = dim;
    for (int d = 0; d < dim; ++d) {
        if (!(lengths[d] > 0.0) || !std::isfinite(lengths[d]))
            throw std::invalid_argument("make_grid: lengths must be positive finite");
        if (cells[d] < 2)
            throw std::invalid_argument("make_grid: cell counts must be >= 2");
        g.length[d] = lengths[d];
        g.cells[d] = cells[d];
        g.h[d] = lengths[d] / cells[d];
    }
    return g;
}

struct ScalarField {
    GridSpec grid;
    std::vector<double> values;

    ScalarField() = default;
    explicit ScalarField(const GridSpec& g, double fill = 0.0)
        : grid(g), values(g.total(), fill) {}

    std::size_t size() const { return values.size(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }
};

// Fill a field by evaluating fn at cell centers; fn receives (x[, y[, z]])
// padded with zeros for unused axes.
template <class Fn>
inline ScalarField sample_field(const GridSpec& g, Fn&& fn) {
    ScalarField f(g);
    std::array<double, 3> x{0.0, 0.0, 0.0};
    std::size_t idx = 0;
    const int n0 = g.dim > 0 ? g.cells[0] : 1;
    const int n1 = g.dim > 1 ? g.cells[1] : 1;
    const int n2 = g.dim > 2 ? g.cells[2] : 1;
    for (int i0 = 0; i0 < n0; ++i0) {
        x[0] = g.center(0, i0);
        for (int i1 = 0; i1 < n1; ++i1) {
            if (g.dim > 1) x[1] = g.center(1, i1);
            for (int i2 = 0; i2 < n2; ++i2) {
                if (g.dim > 2) x[2] = g.center(2, i2);
                f.values[idx++] = fn(x[0], x[1], x[2]);
            }
        }
    }
    return f;
}

namespace detail {

// Visit every grid line along `axis`: calls body(base, stride, count) for
// each 1-d line of cells, where cell j of the line sits at base + j*stride.
template <class Body>
inline void for_each_line(const GridSpec& g, int axis, Body&& body) {
    const std::size_t S = g.stride(axis);
    const std::size_t N = static_cast<std::size_t>(g.cells[axis]);
    const std::size_t total = g.total();
    const std::size_t block = N * S;
    for (std::size_t b = 0; b < total; b += block)
        for (std::size_t off = 0; off < S; ++off)
            body(b + off, S, N);
}

} // namespace detail

// out += per-axis flux divergence of grad f (mirrored ghosts => wall flux 0).
inline void laplacian_into(const ScalarField& f, ScalarField& out) {
    assert(f.grid.same_layout(out.grid));
    const GridSpec& g = f.grid;
    std::fill(out.values.begin(), out.values.end(), 0.0);
    for (int d = 0; d < g.dim; ++d) {
        const double inv_h = 1.0 / g.h[d];
        detail::for_each_line(g, d, [&](std::size_t base, std::size_t S, std::size_t N) {
            const double* fv = f.values.data();
            double* ov = out.values.data();
            double flux_lo = 0.0;
            for (std::size_t j = 0; j < N; ++j) {
                const std::size_t idx = base + j * S;
                const double flux_hi =
                    (j + 1 < N) ? (fv[idx + S] - fv[idx]) * inv_h : 0.0;
                ov[idx] += (flux_hi - flux_lo) * inv_h;
                flux_lo = flux_hi;
            }
        });
    }
}

inline ScalarField laplacian(const ScalarField& f) {
    ScalarField out(f.grid);
    laplacian_into(f, out);
    return out;
}

// e^{-v} div(e^v grad a) with arithmetic-mean face weights, given e^v
// precomputed. Reduces bitwise to laplacian(a) when expv == 1 everywhere.
inline void weighted_laplacian_into(const ScalarField& a, const ScalarField& expv,
                                    ScalarField& out) {
    assert(a.grid.same_layout(expv.grid) && a.grid.same_layout(out.grid));
    const GridSpec& g = a.grid;
    std::fill(out.values.begin(), out.values.end(), 0.0);
    for (int d = 0; d < g.dim; ++d) {
        const double inv_h = 1.0 / g.h[d];
        detail::for_each_line(g, d, [&](std::size_t base, std::size_t S, std::size_t N) {
            const double* av = a.values.data();
            const double* ev = expv.values.data();
            double* ov = out.values.data();
            double flux_lo = 0.0;
            for (std::size_t j = 0; j < N; ++j) {
                const std::size_t idx = base + j * S;
                double flux_hi = 0.0;
                if (j + 1 < N) {
                    const double w = 0.5 * (ev[idx] + ev[idx + S]);
                    flux_hi = w * ((av[idx + S] - av[idx]) * inv_h);
                }
                ov[idx] += (flux_hi - flux_lo) * inv_h;
                flux_lo = flux_hi;
            }
        });
    }
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] /= expv.values[i];
}

inline ScalarField weighted_laplacian(const ScalarField& a, const ScalarField& v) {
    ScalarField expv(a.grid);
    for (std::size_t i = 0; i < expv.size(); ++i) expv.values[i] = std::exp(v.values[i]);
    ScalarField out(a.grid);
    weighted_laplacian_into(a, expv, out);
    return out;
}

// Conservative div(u grad v): arithmetic-mean face value of u times the face
// gradient of v, wall fluxes zero. No sign flip; the caller subtracts it.
inline void div_flux_into(const ScalarField& u, const ScalarField& v, ScalarField& out) {
    assert(u.grid.same_layout(v.grid) && u.grid.same_layout(out.grid));
    const GridSpec& g = u.grid;
    std::fill(out.values.begin(), out.values.end(), 0.0);
    for (int d = 0; d < g.dim; ++d) {
        const double inv_h = 1.0 / g.h[d];
        detail::for_each_line(g, d, [&](std::size_t base, std::size_t S, std::size_t N) {
            const double* uv = u.values.data();
            const double* vv = v.values.data();
            double* ov = out.values.data();
            double flux_lo = 0.0;
            for (std::size_t j = 0; j < N; ++j) {
                const std::size_t idx = base + j * S;
                double flux_hi = 0.0;
                if (j + 1 < N) {
                    const double um = 0.5 * (uv[idx] + uv[idx + S]);
                    flux_hi = um * ((vv[idx + S] - vv[idx]) * inv_h);
                }
                ov[idx] += (flux_hi - flux_lo) * inv_h;
                flux_lo = flux_hi;
            }
        });
    }
}

inline ScalarField div_flux(const ScalarField& u, const ScalarField& v) {
    ScalarField out(u.grid);
    div_flux_into(u, v, out);
    return out;
}

// Sum over axes of (central-difference grad v)_d * (central-difference grad a)_d.
// Mirrored ghosts make the one-sided boundary differences; the normal
// derivative at the wall itself is zero.
inline void grad_dot_into(const ScalarField& v, const ScalarField& a, ScalarField& out) {
    assert(v.grid.same_layout(a.grid) && v.grid.same_layout(out.grid));
    const GridSpec& g = v.grid;
    std::fill(out.values.begin(), out.values.end(), 0.0);
    for (int d = 0; d < g.dim; ++d) {
        const double inv_2h = 0.5 / g.h[d];
        detail::for_each_line(g, d, [&](std::size_t base, std::size_t S, std::size_t N) {
            const double* vv = v.values.data();
            const double* av = a.values.data();
            double* ov = out.values.data();
            for (std::size_t j = 0; j < N; ++j) {
                const std::size_t idx = base + j * S;
                const double v_lo = (j > 0) ? vv[idx - S] : vv[idx];
                const double v_hi = (j + 1 < N) ? vv[idx + S] : vv[idx];
                const double a_lo = (j > 0) ? av[idx - S] : av[idx];
                const double a_hi = (j + 1 < N) ? av[idx + S] : av[idx];
                ov[idx] += ((v_hi - v_lo) * inv_2h) * ((a_hi - a_lo) * inv_2h);
            }
        });
    }
}

inline ScalarField grad_dot(const ScalarField& v, const ScalarField& a) {
    ScalarField out(v.grid);
    grad_dot_into(v, a, out);
    return out;
}

// Midpoint-rule integral with compensated summation, so that telescoping
// flux sums cancel to roundoff.
inline double integrate(const ScalarField& f) {
    double sum = 0.0, c = 0.0;
    for (double x : f.values) {
        const double y = x - c;
        const double t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    return sum * f.grid.cell_volume();
}

inline double min_value(const ScalarField& f) {
    double m = f.values[0];
    for (double x : f.values) m = std::min(m, x);
    return m;
}

inline double max_value(const ScalarField& f) {
    double m = f.values[0];
    for (double x : f.values) m = std::max(m, x);
    return m;
}

inline double max_abs(const ScalarField& f) {
    double m = 0.0;
    for (double x : f.values) m = std::max(m, std::abs(x));
    return m;
}

// Plain-text field dump: "dim n1 [n2 [n3]] h1 [h2 [h3]]" header, then one
// value per line, row-major, 17 significant digits.
inline void write_field(std::ostream& os, const ScalarField& f) {
    const GridSpec& g = f.grid;
    os << g.dim;
    for (int d = 0; d < g.dim; ++d) os << ' ' << g.cells[d];
    char buf[40];
    for (int d = 0; d < g.dim; ++d) {
        std::snprintf(buf, sizeof buf, "%.17g", g.h[d]);
        os << ' ' << buf;
    }
    os << '\n';
    for (double x : f.values) {
        std::snprintf(buf, sizeof buf, "%.17g", x);
        os << buf << '\n';
    }
}

inline void write_field(const std::string& path, const ScalarField& f) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_field: cannot open " + path);
    write_field(os, f);
}

inline ScalarField read_field(std::istream& is) {
    int dim = 0;
    if (!(is >> dim) || dim < 1 || dim > 3)
        throw std::runtime_error("read_field: bad dimension in header");
    std::vector<int> cells(dim);
    std::vector<double> h(dim);
    for (int d = 0; d < dim; ++d)
        if (!(is >> cells[d]) || cells[d] < 1)
            throw std::runtime_error("read_field: bad cell count in header");
    for (int d = 0; d < dim; ++d)
        if (!(is >> h[d]) || !(h[d] > 0.0))
            throw std::runtime_error("read_field: bad spacing in header");
    GridSpec g;
    g.dim = dim;
    for (int d = 0; d < dim; ++d) {
        g.cells[d] = cells[d];
        g.h[d] = h[d];
        g.length[d] = h[d] * cells[d];
    }
    ScalarField f(g);
    for (std::size_t i = 0; i < f.size(); ++i)
        if (!(is >> f.values[i]))
            throw std::runtime_error("read_field: truncated value list");
    return f;
}

inline ScalarField read_field(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_field: cannot open " + path);
    return read_field(is);
}

} // namespace virodyn
