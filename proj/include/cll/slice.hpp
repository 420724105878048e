#pragma once

// Fixed-point data and slice data in the local upper-triangular frame:
//
//   Phi0 = [[0,0],[phi1,0]] dz,   H = diag(e^u, e^{-u}),
//   perturbation fields (phi2, phi3, b) with
//
//     r1 = d_zbar(phi1)
//     r2 = d_zbar(phi2) + b*phi1
//     r3 = d_zbar(phi3) - 2*b*phi2
//     r4 = d_z(b) + 2*b*d_z(u) - sign*2*conj(phi1)*phi2*e^{-2u}
//
// all required to vanish.  The sign tag on the last equation selects between
// the two internally consistent orientation conventions for the metric
// adjoint; +1 is the default, -1 is the convention under which the
// one-parameter connection families built downstream are flat.  See README
// for the full accounting.
//
// synthesize_slice solves the coupled linear system (r2 = r4 = 0) directly,
// one x-frequency at a time: on the cylinder the periodic centered x-stencil
// diagonalizes over Fourier modes with symbol i*kappa_m, and each mode leaves
// a first-order two-point boundary value problem in y for the pair
// (phi2_hat, b_hat).  Data rows are placed on the stable end of each
// characteristic (phi2 data on the inflow row, b pinned to zero on the
// opposite row), which keeps every mode's collocation matrix well
// conditioned.  This replaces the alternating fixed-point sweep sketched in
// the interface contract: the direct solve is unconditionally stable, needs
// no relaxation tuning, and makes the linearity properties exact.

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "cll/error.hpp"
#include "cll/expr.hpp"
#include "cll/grid.hpp"
#include "cll/hitchin.hpp"

namespace cll {

// max(floor, scale_factor * h^2 * field_scale) with h the coarser spacing;
// the default residual gate for discretized constraint checks.
inline double default_gate(const GridDomain& d, double field_scale, double floor = 1e-6,
                           double scale_factor = 10.0) {
    double h = std::max(d.hx, d.hy);
    return std::max(floor, scale_factor * h * h * std::max(1.0, field_scale));
}

struct FixedPointData {
    GridDomain domain;
    ComplexField phi1;
    ComplexField u;
};

struct BBSliceData {
    FixedPointData base;
    ComplexField phi2;
    ComplexField phi3;
    ComplexField b;
    int dprime_sign = +1;
};

namespace slice_detail {

// e^{-2u} with |u| clamped to 30; reports whether clamping fired.
inline ComplexField damped_weight(const ComplexField& u, bool* clamped = nullptr) {
    ComplexField out(u.domain);
    out.mask = u.mask;
    bool hit = false;
    for (std::size_t n = 0; n < u.values.size(); ++n) {
        double v = u.values[n].real();
        if (std::abs(v) > 30.0) {
            hit = true;
            v = (v > 0.0) ? 30.0 : -30.0;
        }
        out.values[n] = cd(std::exp(-2.0 * v), 0.0);
    }
    if (clamped) *clamped = hit;
    return out;
}

} // namespace slice_detail

inline FixedPointData make_fixed_point(const ComplexField& phi1, const ComplexField& u,
                                       double gate_floor = 1e-6, double gate_scale = 10.0) {
    check_same_domain(phi1, u, "make_fixed_point");
    const GridDomain& d = phi1.domain;
    double scale = std::max(1.0, sup_norm(phi1));
    double gate = default_gate(d, scale, gate_floor, gate_scale);

    double holo = sup_norm_interior(d_zbar(phi1));
    if (holo > gate)
        throw GateError("make_fixed_point: phi1 holomorphy gate failed (sup " +
                        sci(holo) + " > gate " + sci(gate) + ")");
    double hres = sup_norm_interior(hitchin_residual(u, phi1));
    if (hres > gate)
        throw GateError("make_fixed_point: metric equation gate failed (sup " +
                        sci(hres) + " > gate " + sci(gate) + ")");
    return FixedPointData{d, phi1, u};
}

inline ComplexField r2_residual(const BBSliceData& s) {
    return d_zbar(s.phi2) + s.b * s.base.phi1;
}

inline ComplexField r3_residual(const BBSliceData& s) {
    return d_zbar(s.phi3) - 2.0 * (s.b * s.phi2);
}

inline ComplexField r4_residual(const BBSliceData& s) {
    ComplexField w = slice_detail::damped_weight(s.base.u);
    ComplexField coupling = conj_field(s.base.phi1) * s.phi2 * w;
    return d_z(s.b) + 2.0 * (s.b * d_z(s.base.u)) -
           (2.0 * static_cast<double>(s.dprime_sign)) * coupling;
}

struct HolomorphicityResiduals {
    ComplexField r1, r2, r3;
};

inline HolomorphicityResiduals holomorphicity_residuals(const BBSliceData& s) {
    check_same_domain(s.phi2, s.base.phi1, "holomorphicity_residuals");
    check_same_domain(s.phi3, s.base.phi1, "holomorphicity_residuals");
    check_same_domain(s.b, s.base.phi1, "holomorphicity_residuals");
    return HolomorphicityResiduals{d_zbar(s.base.phi1), r2_residual(s), r3_residual(s)};
}

inline ComplexField dprime_residual(const BBSliceData& s) {
    check_same_domain(s.phi2, s.base.u, "dprime_residual");
    check_same_domain(s.b, s.base.u, "dprime_residual");
    return r4_residual(s);
}

inline BBSliceData make_bb_slice(const FixedPointData& base, const ComplexField& phi2,
                                 const ComplexField& phi3, const ComplexField& b,
                                 int dprime_sign = +1, double gate_floor = 1e-6,
                                 double gate_scale = 10.0) {
    if (dprime_sign != 1 && dprime_sign != -1)
        throw ValidationError("make_bb_slice: dprime_sign must be +1 or -1");
    BBSliceData s{base, phi2, phi3, b, dprime_sign};
    double field_scale = std::max({1.0, sup_norm(base.phi1), sup_norm(phi2), sup_norm(phi3),
                                   sup_norm(b)});
    double gate = default_gate(base.domain, field_scale, gate_floor, gate_scale);
    HolomorphicityResiduals hr = holomorphicity_residuals(s);
    double v2 = sup_norm_interior(hr.r2);
    double v3 = sup_norm_interior(hr.r3);
    double v4 = sup_norm_interior(dprime_residual(s));
    if (v2 > gate || v3 > gate || v4 > gate)
        throw GateError("make_bb_slice: slice equation gate failed (r2 " + sci(v2) +
                        ", r3 " + sci(v3) + ", r4 " + sci(v4) +
                        " vs gate " + sci(gate) + ")");
    return s;
}

// s = (phi2, phi1) spans the kernel line of the nilpotent matrix
// [[phi2, phi3], [phi1, -phi2]]; nilpotency is gated, not assumed.  The check
// is algebraic (no stencil is involved), so the gate does not scale with h^2:
// it is the floor times the squared field scale.
inline std::pair<ComplexField, ComplexField> kernel_section(const BBSliceData& s,
                                                            double gate_floor = 1e-6) {
    ComplexField det_defect = s.phi2 * s.phi2 + s.phi3 * s.base.phi1;
    double field_scale =
        std::max({1.0, sup_norm(s.base.phi1), sup_norm(s.phi2), sup_norm(s.phi3)});
    double gate = gate_floor * field_scale * field_scale;
    double defect = sup_norm(det_defect);
    if (defect > gate)
        throw DegeneracyError("Higgs field not nilpotent; kernel line undefined (sup|phi2^2 + "
                              "phi3*phi1| = " +
                              sci(defect) + " > gate " + sci(gate) +
                              ")");
    return {s.phi2, s.base.phi1};
}

// ---- synthesis ----------------------------------------------------------------

struct SliceSynthesisOptions {
    int dprime_sign = +1;
    // "dbar": solve d_zbar(phi3) = 2*b*phi2 with the zero-mean particular
    // solution; "nilpotent": phi3 = -phi2^2/phi1 (needs constant phi1 != 0),
    // which satisfies the same equation up to O(h^2) and makes the matrix
    // exactly nilpotent.
    std::string phi3_mode = "dbar";
    Expression phi3_addition; // optional holomorphic extra term, empty = none
};

struct SliceSynthesisReport {
    double r1 = 0.0, r2 = 0.0, r3 = 0.0, r4 = 0.0; // achieved interior sups
    bool u_clamped = false;
};

namespace slice_detail {

inline Eigen::MatrixXcd dy_matrix(int ny, double hy) {
    Eigen::MatrixXcd D = Eigen::MatrixXcd::Zero(ny, ny);
    const double a = 1.0 / (2.0 * hy);
    D(0, 0) = -3.0 * a;
    D(0, 1) = 4.0 * a;
    D(0, 2) = -1.0 * a;
    for (int j = 1; j < ny - 1; ++j) {
        D(j, j - 1) = -a;
        D(j, j + 1) = a;
    }
    D(ny - 1, ny - 1) = 3.0 * a;
    D(ny - 1, ny - 2) = -4.0 * a;
    D(ny - 1, ny - 3) = 1.0 * a;
    return D;
}

// forward DFT of one grid row, normalized by 1/nx
inline Eigen::VectorXcd dft_row(const ComplexField& f, int j) {
    const GridDomain& d = f.domain;
    Eigen::VectorXcd out(d.nx);
    const double two_pi = 6.28318530717958647692;
    for (int m = 0; m < d.nx; ++m) {
        cd acc(0.0, 0.0);
        for (int i = 0; i < d.nx; ++i) {
            double th = -two_pi * m * i / d.nx;
            acc += f.at(i, j) * cd(std::cos(th), std::sin(th));
        }
        out[m] = acc / static_cast<double>(d.nx);
    }
    return out;
}

// per-mode coefficients of a full field: column m holds g_hat_m over j
inline Eigen::MatrixXcd dft_field(const ComplexField& f) {
    const GridDomain& d = f.domain;
    Eigen::MatrixXcd out(d.ny, d.nx);
    for (int j = 0; j < d.ny; ++j) out.row(j) = dft_row(f, j).transpose();
    return out;
}

inline ComplexField idft_field(const Eigen::MatrixXcd& coef, const GridDomain& d) {
    ComplexField out(d);
    const double two_pi = 6.28318530717958647692;
    for (int j = 0; j < d.ny; ++j)
        for (int i = 0; i < d.nx; ++i) {
            cd acc(0.0, 0.0);
            for (int m = 0; m < d.nx; ++m) {
                double th = two_pi * m * i / d.nx;
                acc += coef(j, m) * cd(std::cos(th), std::sin(th));
            }
            out.at(i, j) = acc;
        }
    return out;
}

inline void require_synthesizable(const FixedPointData& base) {
    const GridDomain& d = base.domain;
    if (!d.periodic_x())
        throw ValidationError("synthesize_slice: needs the periodic-x cylinder model");
    cd p0 = base.phi1.at(0, 0);
    double pscale = std::max(1.0, std::abs(p0));
    for (const cd& v : base.phi1.values)
        if (std::abs(v - p0) > 1e-12 * pscale)
            throw ValidationError("synthesize_slice: phi1 must be constant for the per-mode solve");
    double uscale = 1.0;
    for (const cd& v : base.u.values) uscale = std::max(uscale, std::abs(v.real()));
    for (int j = 0; j < d.ny; ++j)
        for (int i = 1; i < d.nx; ++i)
            if (std::abs(base.u.at(i, j) - base.u.at(0, j)) > 1e-10 * uscale)
                throw ValidationError(
                    "synthesize_slice: u must be x-independent for the per-mode solve");
}

} // namespace slice_detail

inline BBSliceData synthesize_slice(const FixedPointData& base, const ComplexField& seed,
                                    double delta_gate = 1e-6,
                                    const SliceSynthesisOptions& options = {},
                                    SliceSynthesisReport* report = nullptr) {
    using namespace slice_detail;
    using Eigen::MatrixXcd;
    using Eigen::VectorXcd;

    check_same_domain(seed, base.phi1, "synthesize_slice");
    if (!(delta_gate > 0.0)) throw ValidationError("synthesize_slice: delta_gate must be > 0");
    if (options.dprime_sign != 1 && options.dprime_sign != -1)
        throw ValidationError("synthesize_slice: dprime_sign must be +1 or -1");
    if (options.phi3_mode != "dbar" && options.phi3_mode != "nilpotent")
        throw ValidationError("synthesize_slice: phi3_mode must be `dbar` or `nilpotent`");
    require_synthesizable(base);

    const GridDomain& d = base.domain;
    const int nx = d.nx, ny = d.ny;
    const cd phi1 = base.phi1.at(0, 0);
    if (options.phi3_mode == "nilpotent" && std::abs(phi1) == 0.0)
        throw ValidationError("synthesize_slice: nilpotent phi3 mode needs phi1 != 0");

    SliceSynthesisReport local_report;
    SliceSynthesisReport& rep = report ? *report : local_report;

    // y-line data shared by every mode
    MatrixXcd Dy = dy_matrix(ny, d.hy);
    VectorXcd ucol(ny), dzu(ny), w(ny);
    bool clamped = false;
    for (int j = 0; j < ny; ++j) ucol[j] = cd(base.u.at(0, j).real(), 0.0);
    VectorXcd dyu = Dy * ucol;
    for (int j = 0; j < ny; ++j) {
        dzu[j] = cd(0.0, -0.5) * dyu[j]; // d_z u for x-independent u
        double uv = ucol[j].real();
        if (std::abs(uv) > 30.0) {
            clamped = true;
            uv = (uv > 0.0) ? 30.0 : -30.0;
        }
        w[j] = std::conj(phi1) * std::exp(-2.0 * uv);
    }
    rep.u_clamped = clamped;

    VectorXcd seed_bottom = dft_row(seed, 0);
    VectorXcd seed_top = dft_row(seed, ny - 1);

    const double two_pi = 6.28318530717958647692;
    const double sgn = static_cast<double>(options.dprime_sign);
    MatrixXcd phi2_hat(ny, nx), b_hat(ny, nx);

    for (int m = 0; m < nx; ++m) {
        double kappa = std::sin(two_pi * m / nx) / d.hx;
        bool up = (kappa >= 0.0); // phi2 data on the bottom row, b pinned on top

        MatrixXcd A = MatrixXcd::Zero(2 * ny, 2 * ny);
        VectorXcd rhs = VectorXcd::Zero(2 * ny);
        int row = 0;

        // phi2 data row (inflow end of the decaying characteristic)
        {
            int jd = up ? 0 : ny - 1;
            A(row, jd) = cd(1.0, 0.0);
            rhs[row] = up ? seed_bottom[m] : seed_top[m];
            ++row;
        }
        // b data row on the opposite end
        {
            int jd = up ? ny - 1 : 0;
            A(row, ny + jd) = cd(1.0, 0.0);
            rhs[row] = cd(0.0, 0.0);
            ++row;
        }
        // r2 collocation: (i/2)(kappa*phi2_j + (Dy*phi2)_j) + phi1*b_j = 0
        for (int j = (up ? 1 : 0); j <= (up ? ny - 1 : ny - 2); ++j) {
            A(row, j) += cd(0.0, 0.5) * kappa;
            for (int k = 0; k < ny; ++k) A(row, k) += cd(0.0, 0.5) * Dy(j, k);
            A(row, ny + j) += phi1;
            ++row;
        }
        // r4 collocation: (i/2)(kappa*b_j - (Dy*b)_j) + 2*dzu_j*b_j - sign*2*w_j*phi2_j = 0
        for (int j = (up ? 0 : 1); j <= (up ? ny - 2 : ny - 1); ++j) {
            A(row, ny + j) += cd(0.0, 0.5) * kappa + 2.0 * dzu[j];
            for (int k = 0; k < ny; ++k) A(row, ny + k) += cd(0.0, -0.5) * Dy(j, k);
            A(row, j) -= sgn * 2.0 * w[j];
            ++row;
        }

        Eigen::PartialPivLU<MatrixXcd> lu(A);
        VectorXcd sol = lu.solve(rhs);
        for (int j = 0; j < ny; ++j) {
            phi2_hat(j, m) = sol[j];
            b_hat(j, m) = sol[ny + j];
        }
    }

    ComplexField phi2 = idft_field(phi2_hat, d);
    ComplexField b = idft_field(b_hat, d);

    ComplexField phi3(d);
    if (options.phi3_mode == "nilpotent") {
        cd inv = cd(-1.0, 0.0) / phi1;
        for (std::size_t n = 0; n < phi3.values.size(); ++n)
            phi3.values[n] = inv * phi2.values[n] * phi2.values[n];
    } else {
        // d_zbar(phi3) = 2*b*phi2, mode by mode, zero data on the inflow row
        ComplexField g = 2.0 * (b * phi2);
        MatrixXcd g_hat = dft_field(g);
        MatrixXcd phi3_hat(ny, nx);
        for (int m = 0; m < nx; ++m) {
            double kappa = std::sin(two_pi * m / nx) / d.hx;
            bool up = (kappa >= 0.0);
            MatrixXcd A = MatrixXcd::Zero(ny, ny);
            VectorXcd rhs = VectorXcd::Zero(ny);
            int row = 0;
            int jd = up ? 0 : ny - 1;
            A(row, jd) = cd(1.0, 0.0);
            ++row;
            for (int j = (up ? 1 : 0); j <= (up ? ny - 1 : ny - 2); ++j) {
                A(row, j) += cd(0.0, 0.5) * kappa;
                for (int k = 0; k < ny; ++k) A(row, k) += cd(0.0, 0.5) * Dy(j, k);
                rhs[row] = g_hat(j, m);
                ++row;
            }
            Eigen::PartialPivLU<MatrixXcd> lu(A);
            phi3_hat.col(m) = lu.solve(rhs);
        }
        phi3 = idft_field(phi3_hat, d);
        cd mean(0.0, 0.0);
        for (const cd& v : phi3.values) mean += v;
        mean /= static_cast<double>(phi3.values.size());
        for (cd& v : phi3.values) v -= mean;
    }
    if (!options.phi3_addition.empty()) {
        ComplexField extra = options.phi3_addition.sample(d);
        phi3 = phi3 + extra;
    }

    BBSliceData out{base, phi2, phi3, b, options.dprime_sign};
    HolomorphicityResiduals hr = holomorphicity_residuals(out);
    rep.r1 = sup_norm_interior(hr.r1);
    rep.r2 = sup_norm_interior(hr.r2);
    rep.r3 = sup_norm_interior(hr.r3);
    rep.r4 = sup_norm_interior(dprime_residual(out));
    double worst = std::max({rep.r1, rep.r2, rep.r3, rep.r4});
    if (worst > delta_gate)
        throw SynthesisError("synthesize_slice: residual gate " + sci(delta_gate) +
                                 " not met (worst " + sci(worst) + ")",
                             {rep.r1, rep.r2, rep.r3, rep.r4});
    return out;
}

} // namespace cll
