#pragma once

// Flat desk-scale surface models: a periodic-x cylinder or an x-bounded
// rectangle, sampled on a uniform node grid, with complex scalar fields,
// optional node masks, and second-order Wirtinger finite differences.
//
// Layout convention used everywhere: row-major with x fastest, so the node
// (i, j) lives at values[j*nx + i].

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "cll/error.hpp"

namespace cll {

using cd = std::complex<double>;

// short scientific form for diagnostics (std::to_string flattens 1e-9 to 0)
inline std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6e", v);
    return buf;
}

struct GridDomain {
    int nx = 0;
    int ny = 0;
    double x_period = 0.0; // > 0: periodic in x with spacing x_period/nx
    double x_min = 0.0;
    double x_max = 0.0; // only meaningful when non-periodic
    double y_min = 0.0;
    double y_max = 0.0;
    double hx = 0.0;
    double hy = 0.0;

    bool periodic_x() const { return x_period > 0.0; }
    double x(int i) const { return x_min + hx * i; }
    double y(int j) const { return y_min + hy * j; }
    cd z(int i, int j) const { return cd(x(i), y(j)); }
    std::size_t size() const { return static_cast<std::size_t>(nx) * ny; }
    std::size_t index(int i, int j) const { return static_cast<std::size_t>(j) * nx + i; }

    bool operator==(const GridDomain&) const = default;
};

inline GridDomain make_domain(int nx, int ny, double x_period, double y_min, double y_max) {
    if (nx < 4 || ny < 4)
        throw ConstructionError("make_domain: need nx >= 4 and ny >= 4");
    if (!(y_max > y_min))
        throw ConstructionError("make_domain: need y_max > y_min");
    if (!(x_period > 0.0))
        throw ConstructionError("make_domain: x_period must be > 0 for the cylinder model; "
                                "use make_rect_domain for an x-bounded rectangle");
    GridDomain d;
    d.nx = nx;
    d.ny = ny;
    d.x_period = x_period;
    d.x_min = 0.0;
    d.x_max = x_period;
    d.y_min = y_min;
    d.y_max = y_max;
    d.hx = x_period / nx;
    d.hy = (y_max - y_min) / (ny - 1);
    return d;
}

inline GridDomain make_rect_domain(int nx, int ny, double x_min, double x_max,
                                   double y_min, double y_max) {
    if (nx < 4 || ny < 4)
        throw ConstructionError("make_rect_domain: need nx >= 4 and ny >= 4");
    if (!(x_max > x_min) || !(y_max > y_min))
        throw ConstructionError("make_rect_domain: need x_max > x_min and y_max > y_min");
    GridDomain d;
    d.nx = nx;
    d.ny = ny;
    d.x_period = 0.0;
    d.x_min = x_min;
    d.x_max = x_max;
    d.y_min = y_min;
    d.y_max = y_max;
    d.hx = (x_max - x_min) / (nx - 1);
    d.hy = (y_max - y_min) / (ny - 1);
    return d;
}

// One complex sample per node.  The mask vector is either empty (all nodes
// live) or full-size with 1 marking dead nodes; stencils and pointwise
// operations treat masked nodes as missing data and mask everything they
// touch downstream.
struct ComplexField {
    GridDomain domain;
    std::vector<cd> values;
    std::vector<std::uint8_t> mask;

    ComplexField() = default;
    explicit ComplexField(const GridDomain& d, cd fill = cd(0.0, 0.0))
        : domain(d), values(d.size(), fill) {}

    cd& at(int i, int j) { return values[domain.index(i, j)]; }
    const cd& at(int i, int j) const { return values[domain.index(i, j)]; }

    bool has_mask() const { return !mask.empty(); }
    bool masked(std::size_t n) const { return has_mask() && mask[n] != 0; }
    bool masked(int i, int j) const { return masked(domain.index(i, j)); }

    void ensure_mask() {
        if (mask.empty()) mask.assign(values.size(), 0);
    }
    void mask_node(int i, int j) {
        ensure_mask();
        mask[domain.index(i, j)] = 1;
    }
};

inline void check_same_domain(const ComplexField& a, const ComplexField& b, const char* op) {
    if (!(a.domain == b.domain))
        throw ValidationError(std::string(op) + ": fields live on different domains");
}

inline std::vector<std::uint8_t> mask_union(const ComplexField& a, const ComplexField& b) {
    if (!a.has_mask() && !b.has_mask()) return {};
    std::vector<std::uint8_t> m(a.values.size(), 0);
    for (std::size_t n = 0; n < m.size(); ++n)
        m[n] = static_cast<std::uint8_t>((a.masked(n) ? 1 : 0) | (b.masked(n) ? 1 : 0));
    return m;
}

template <class F>
ComplexField sample_field(const GridDomain& d, F&& f) {
    ComplexField out(d);
    for (int j = 0; j < d.ny; ++j)
        for (int i = 0; i < d.nx; ++i) {
            if constexpr (std::is_invocable_v<F, double, double>)
                out.at(i, j) = f(d.x(i), d.y(j));
            else
                out.at(i, j) = f(d.z(i, j));
        }
    return out;
}

inline ComplexField constant_field(const GridDomain& d, cd value) {
    return ComplexField(d, value);
}

// ---- pointwise algebra -----------------------------------------------------

namespace detail {
template <class Op>
ComplexField zip(const ComplexField& a, const ComplexField& b, Op op, const char* name) {
    check_same_domain(a, b, name);
    ComplexField out(a.domain);
    out.mask = mask_union(a, b);
    for (std::size_t n = 0; n < out.values.size(); ++n)
        out.values[n] = op(a.values[n], b.values[n]);
    return out;
}
template <class Op>
ComplexField map(const ComplexField& a, Op op) {
    ComplexField out(a.domain);
    out.mask = a.mask;
    for (std::size_t n = 0; n < out.values.size(); ++n)
        out.values[n] = op(a.values[n]);
    return out;
}
} // namespace detail

inline ComplexField operator+(const ComplexField& a, const ComplexField& b) {
    return detail::zip(a, b, [](cd x, cd y) { return x + y; }, "operator+");
}
inline ComplexField operator-(const ComplexField& a, const ComplexField& b) {
    return detail::zip(a, b, [](cd x, cd y) { return x - y; }, "operator-");
}
inline ComplexField operator*(const ComplexField& a, const ComplexField& b) {
    return detail::zip(a, b, [](cd x, cd y) { return x * y; }, "operator*");
}
inline ComplexField operator*(cd s, const ComplexField& a) {
    return detail::map(a, [s](cd x) { return s * x; });
}
inline ComplexField operator*(const ComplexField& a, cd s) { return s * a; }
inline ComplexField operator-(const ComplexField& a) { return cd(-1.0, 0.0) * a; }

inline ComplexField conj_field(const ComplexField& a) {
    return detail::map(a, [](cd x) { return std::conj(x); });
}
inline ComplexField real_field(const ComplexField& a) {
    return detail::map(a, [](cd x) { return cd(x.real(), 0.0); });
}
inline ComplexField imag_field(const ComplexField& a) {
    return detail::map(a, [](cd x) { return cd(x.imag(), 0.0); });
}
inline ComplexField abs2_field(const ComplexField& a) {
    return detail::map(a, [](cd x) { return cd(std::norm(x), 0.0); });
}
inline ComplexField exp_field(const ComplexField& a) {
    return detail::map(a, [](cd x) { return std::exp(x); });
}

// Pointwise quotient; nodes where |b| <= floor are masked instead of divided.
inline ComplexField div_field(const ComplexField& a, const ComplexField& b, double floor = 0.0) {
    check_same_domain(a, b, "div_field");
    ComplexField out(a.domain);
    out.mask = mask_union(a, b);
    for (std::size_t n = 0; n < out.values.size(); ++n) {
        if (std::abs(b.values[n]) <= floor) {
            out.ensure_mask();
            out.mask[n] = 1;
            out.values[n] = cd(0.0, 0.0);
        } else {
            out.values[n] = a.values[n] / b.values[n];
        }
    }
    return out;
}

// ---- sup norms -------------------------------------------------------------

inline bool node_is_boundary(const GridDomain& d, int i, int j) {
    if (j == 0 || j == d.ny - 1) return true;
    if (!d.periodic_x() && (i == 0 || i == d.nx - 1)) return true;
    return false;
}

namespace detail {
inline double sup_impl(const ComplexField& f, int depth) {
    double m = 0.0;
    bool any = false;
    for (int j = 0; j < f.domain.ny; ++j)
        for (int i = 0; i < f.domain.nx; ++i) {
            if (j < depth || j >= f.domain.ny - depth) continue;
            if (!f.domain.periodic_x() && (i < depth || i >= f.domain.nx - depth)) continue;
            std::size_t n = f.domain.index(i, j);
            if (f.masked(n)) continue;
            double a = std::abs(f.values[n]);
            if (!std::isfinite(a))
                throw ValidationError("sup_norm: non-finite sample at unmasked node");
            any = true;
            if (a > m) m = a;
        }
    if (!any)
        throw ValidationError("sup_norm: no unmasked nodes in range");
    return m;
}
} // namespace detail

inline double sup_norm(const ComplexField& f) { return detail::sup_impl(f, 0); }

// Sup over nodes where the stencil equations are actually enforced: skips the
// Dirichlet rows (and non-periodic x edges).  Gate checks use this.  Depth 2
// is for quantities built by composing two first-derivative stencils (e.g.
// curvature): the one-sided closure contaminates one extra row at first
// order, and excluding it restores second-order convergence.
inline double sup_norm_interior(const ComplexField& f, int depth = 1) {
    return detail::sup_impl(f, depth);
}

// Minimum of |f| over the same interior range; witnesses that a field stays
// bounded away from zero where it matters.
inline double min_abs_interior(const ComplexField& f, int depth = 1) {
    double m = std::numeric_limits<double>::infinity();
    bool any = false;
    for (int j = 0; j < f.domain.ny; ++j)
        for (int i = 0; i < f.domain.nx; ++i) {
            if (j < depth || j >= f.domain.ny - depth) continue;
            if (!f.domain.periodic_x() && (i < depth || i >= f.domain.nx - depth)) continue;
            std::size_t n = f.domain.index(i, j);
            if (f.masked(n)) continue;
            double a = std::abs(f.values[n]);
            if (!std::isfinite(a))
                throw ValidationError("min_abs_interior: non-finite sample at unmasked node");
            any = true;
            if (a < m) m = a;
        }
    if (!any)
        throw ValidationError("min_abs_interior: no unmasked nodes in range");
    return m;
}

// Marks the Dirichlet rows (and non-periodic x edges) as dead.  Derived
// residual fields use it so that downstream sups see interior nodes only.
inline void mask_boundary_rows(ComplexField& f) {
    f.ensure_mask();
    for (int j = 0; j < f.domain.ny; ++j)
        for (int i = 0; i < f.domain.nx; ++i)
            if (node_is_boundary(f.domain, i, j)) f.mask[f.domain.index(i, j)] = 1;
}

// ---- Wirtinger finite differences ------------------------------------------
//
// Second-order stencils throughout: centered in the interior, periodic wrap
// across the x seam on cylinders, one-sided three-point (first derivative)
// and four-point (second derivative) rows at non-periodic edges.  All are
// exact on polynomials of degree <= 2.

namespace detail {

enum class Axis { x, y };

inline ComplexField axis_derivative(const ComplexField& f, Axis ax) {
    const GridDomain& d = f.domain;
    ComplexField out(d);
    const bool periodic = (ax == Axis::x) && d.periodic_x();
    const int n_ax = (ax == Axis::x) ? d.nx : d.ny;
    const double h = (ax == Axis::x) ? d.hx : d.hy;
    auto value = [&](int i, int j, int k) -> cd {
        // k-th node along the axis, other index fixed
        return (ax == Axis::x) ? f.at(k, j) : f.at(i, k);
    };
    auto touch_masked = [&](int i, int j, const int* ks, int nk) -> bool {
        if (!f.has_mask()) return false;
        for (int t = 0; t < nk; ++t) {
            std::size_t idx = (ax == Axis::x) ? d.index(ks[t], j) : d.index(i, ks[t]);
            if (f.mask[idx]) return true;
        }
        return false;
    };
    for (int j = 0; j < d.ny; ++j) {
        for (int i = 0; i < d.nx; ++i) {
            const int c = (ax == Axis::x) ? i : j;
            cd v;
            int touched[3];
            if (periodic) {
                int p = (c + 1) % n_ax, m = (c - 1 + n_ax) % n_ax;
                v = (value(i, j, p) - value(i, j, m)) / (2.0 * h);
                touched[0] = p; touched[1] = m; touched[2] = c;
            } else if (c == 0) {
                // difference form of (-3 f0 + 4 f1 - f2): constants cancel exactly
                v = (3.0 * (value(i, j, 1) - value(i, j, 0)) + (value(i, j, 1) - value(i, j, 2))) /
                    (2.0 * h);
                touched[0] = 0; touched[1] = 1; touched[2] = 2;
            } else if (c == n_ax - 1) {
                v = (3.0 * (value(i, j, n_ax - 1) - value(i, j, n_ax - 2)) +
                     (value(i, j, n_ax - 3) - value(i, j, n_ax - 2))) /
                    (2.0 * h);
                touched[0] = n_ax - 1; touched[1] = n_ax - 2; touched[2] = n_ax - 3;
            } else {
                v = (value(i, j, c + 1) - value(i, j, c - 1)) / (2.0 * h);
                touched[0] = c + 1; touched[1] = c - 1; touched[2] = c;
            }
            out.at(i, j) = v;
            if (touch_masked(i, j, touched, 3)) {
                out.ensure_mask();
                out.mask[d.index(i, j)] = 1;
            }
        }
    }
    return out;
}

inline ComplexField axis_second(const ComplexField& f, Axis ax) {
    const GridDomain& d = f.domain;
    ComplexField out(d);
    const bool periodic = (ax == Axis::x) && d.periodic_x();
    const int n_ax = (ax == Axis::x) ? d.nx : d.ny;
    const double h2 = ((ax == Axis::x) ? d.hx * d.hx : d.hy * d.hy);
    auto value = [&](int i, int j, int k) -> cd {
        return (ax == Axis::x) ? f.at(k, j) : f.at(i, k);
    };
    auto touch_masked = [&](int i, int j, const int* ks, int nk) -> bool {
        if (!f.has_mask()) return false;
        for (int t = 0; t < nk; ++t) {
            std::size_t idx = (ax == Axis::x) ? d.index(ks[t], j) : d.index(i, ks[t]);
            if (f.mask[idx]) return true;
        }
        return false;
    };
    for (int j = 0; j < d.ny; ++j) {
        for (int i = 0; i < d.nx; ++i) {
            const int c = (ax == Axis::x) ? i : j;
            cd v;
            int touched[4];
            int nt = 0;
            if (periodic) {
                int p = (c + 1) % n_ax, m = (c - 1 + n_ax) % n_ax;
                v = (value(i, j, p) + value(i, j, m) - 2.0 * value(i, j, c)) / h2;
                touched[0] = p; touched[1] = m; touched[2] = c; nt = 3;
            } else if (c == 0) {
                // difference form of (2 f0 - 5 f1 + 4 f2 - f3)
                v = (2.0 * (value(i, j, 0) - value(i, j, 1)) -
                     3.0 * (value(i, j, 1) - value(i, j, 2)) +
                     (value(i, j, 2) - value(i, j, 3))) /
                    h2;
                touched[0] = 0; touched[1] = 1; touched[2] = 2; touched[3] = 3; nt = 4;
            } else if (c == n_ax - 1) {
                v = (2.0 * (value(i, j, n_ax - 1) - value(i, j, n_ax - 2)) -
                     3.0 * (value(i, j, n_ax - 2) - value(i, j, n_ax - 3)) +
                     (value(i, j, n_ax - 3) - value(i, j, n_ax - 4))) /
                    h2;
                touched[0] = n_ax - 1; touched[1] = n_ax - 2; touched[2] = n_ax - 3;
                touched[3] = n_ax - 4; nt = 4;
            } else {
                v = (value(i, j, c + 1) + value(i, j, c - 1) - 2.0 * value(i, j, c)) / h2;
                touched[0] = c + 1; touched[1] = c - 1; touched[2] = c; nt = 3;
            }
            out.at(i, j) = v;
            if (touch_masked(i, j, touched, nt)) {
                out.ensure_mask();
                out.mask[d.index(i, j)] = 1;
            }
        }
    }
    return out;
}

} // namespace detail

inline ComplexField d_z(const ComplexField& f) {
    ComplexField dx = detail::axis_derivative(f, detail::Axis::x);
    ComplexField dy = detail::axis_derivative(f, detail::Axis::y);
    return 0.5 * (dx - cd(0.0, 1.0) * dy);
}

inline ComplexField d_zbar(const ComplexField& f) {
    ComplexField dx = detail::axis_derivative(f, detail::Axis::x);
    ComplexField dy = detail::axis_derivative(f, detail::Axis::y);
    return 0.5 * (dx + cd(0.0, 1.0) * dy);
}

// The mixed Wirtinger derivative as the quarter-Laplacian, one five-point
// stencil rather than two first-derivative passes.
inline ComplexField dzbar_dz(const ComplexField& f) {
    ComplexField sxx = detail::axis_second(f, detail::Axis::x);
    ComplexField syy = detail::axis_second(f, detail::Axis::y);
    return 0.25 * (sxx + syy);
}

inline ComplexField operator*(double s, const ComplexField& a) { return cd(s, 0.0) * a; }
inline ComplexField operator*(const ComplexField& a, double s) { return cd(s, 0.0) * a; }

// ---- 2x2 matrix fields -----------------------------------------------------

enum class FormType : std::uint8_t { none, dz, dzbar, two_form };

struct MatrixField {
    ComplexField a11, a12, a21, a22;
    FormType form = FormType::none;

    MatrixField() = default;
    explicit MatrixField(const GridDomain& d, FormType ft = FormType::none)
        : a11(d), a12(d), a21(d), a22(d), form(ft) {}

    const GridDomain& domain() const { return a11.domain; }
};

inline MatrixField mat_add(const MatrixField& A, const MatrixField& B) {
    MatrixField out;
    out.a11 = A.a11 + B.a11;
    out.a12 = A.a12 + B.a12;
    out.a21 = A.a21 + B.a21;
    out.a22 = A.a22 + B.a22;
    out.form = A.form;
    return out;
}

inline MatrixField mat_sub(const MatrixField& A, const MatrixField& B) {
    MatrixField out;
    out.a11 = A.a11 - B.a11;
    out.a12 = A.a12 - B.a12;
    out.a21 = A.a21 - B.a21;
    out.a22 = A.a22 - B.a22;
    out.form = A.form;
    return out;
}

inline MatrixField mat_scale(cd s, const MatrixField& A) {
    MatrixField out;
    out.a11 = s * A.a11;
    out.a12 = s * A.a12;
    out.a21 = s * A.a21;
    out.a22 = s * A.a22;
    out.form = A.form;
    return out;
}

// Pointwise matrix product (no form bookkeeping; caller sets the tag).
inline MatrixField mat_mul(const MatrixField& A, const MatrixField& B) {
    MatrixField out;
    out.a11 = A.a11 * B.a11 + A.a12 * B.a21;
    out.a12 = A.a11 * B.a12 + A.a12 * B.a22;
    out.a21 = A.a21 * B.a11 + A.a22 * B.a21;
    out.a22 = A.a21 * B.a12 + A.a22 * B.a22;
    out.form = FormType::none;
    return out;
}

inline MatrixField mat_commutator(const MatrixField& A, const MatrixField& B) {
    return mat_sub(mat_mul(A, B), mat_mul(B, A));
}

inline ComplexField mat_trace(const MatrixField& A) { return A.a11 + A.a22; }

inline ComplexField mat_det(const MatrixField& A) { return A.a11 * A.a22 - A.a12 * A.a21; }

inline MatrixField mat_apply(const MatrixField& A, const std::function<ComplexField(const ComplexField&)>& op) {
    MatrixField out;
    out.a11 = op(A.a11);
    out.a12 = op(A.a12);
    out.a21 = op(A.a21);
    out.a22 = op(A.a22);
    out.form = A.form;
    return out;
}

inline double sup_norm(const MatrixField& A) {
    double m = sup_norm(A.a11);
    m = std::max(m, sup_norm(A.a12));
    m = std::max(m, sup_norm(A.a21));
    m = std::max(m, sup_norm(A.a22));
    return m;
}

inline double sup_norm_interior(const MatrixField& A, int depth = 1) {
    double m = sup_norm_interior(A.a11, depth);
    m = std::max(m, sup_norm_interior(A.a12, depth));
    m = std::max(m, sup_norm_interior(A.a21, depth));
    m = std::max(m, sup_norm_interior(A.a22, depth));
    return m;
}

inline double trace_free_defect(const MatrixField& A) { return sup_norm(mat_trace(A)); }

} // namespace cll
