#pragma once

// Kernel-line analysis on a slice.  The wedge density measures whether the
// metric-adjoint part of the secondary derivative preserves the kernel line
// of the nilpotent Higgs matrix; the masked ratio f = phi1/phi2 and the
// forced value f1 = 2 d_zbar d_z u / (d_z b + 2 b d_z u) tie the slice
// equations together: when the metric equation and the coupling equation
// hold, f1 = -f wherever both sides are defined.  A preserved kernel line
// would force f1 = +f instead, so away from the fixed point the two demands
// collide; contradiction_sup quantifies how exactly the slice realizes
// f1 = -f.
//
// eq1_res = d_z f - 2 f d_z u is the preserved-kernel hypothesis residual:
// it vanishes exactly where the wedge does (wedge = phi2^2 * eq1_res), so on
// a generic slice it stays O(|f|) and is not expected to shrink under grid
// refinement.  eq2_res = d_zbar f - b f^2 follows from the holomorphicity
// residuals and does shrink at the stencil rate; it is an internal
// consistency check on the computed ratio.

#include "cll/slice.hpp"

namespace cll {

struct IdentityGates {
    double hitchin_res = 0.0;       // sup interior |dzbar_dz u + |phi1|^2 e^{-2u}|
    double dprime_res = 0.0;        // sup interior |r4|
    double nilpotency = 0.0;        // sup |phi2^2 + phi3 phi1|
    double mask_threshold = 0.0;    // relative |phi2| cut used for f
    double denominator_floor = 0.0; // absolute floor used for f1
};

struct IdentityReport {
    ComplexField f;        // phi1/phi2, masked below the phi2 cut
    ComplexField wedge;    // kernel-line wedge density
    ComplexField f1_value; // forced ratio, masked at the denominator floor
    ComplexField eq1_res;  // d_z f - 2 f d_z u
    ComplexField eq2_res;  // d_zbar f - b f^2
    double contradiction_sup = 0.0;    // sup interior joint |f1_value + f|
    double ratio_scale = 0.0;          // sup interior joint |f|
    double contradiction_scaled = 0.0; // contradiction_sup / max(1, ratio_scale)
    bool degenerate = false;           // no jointly unmasked node (the fixed point)
    IdentityGates gates;
};

// phi2 (d_z - d_z u) phi1 - phi1 (d_z + d_z u) phi2.  Bilinear in (phi1,
// phi2); identically zero iff the kernel line is preserved.
inline ComplexField wedge_with_dH(const BBSliceData& s) {
    kernel_section(s); // nilpotency gate
    ComplexField du = d_z(s.base.u);
    ComplexField left = s.phi2 * (d_z(s.base.phi1) - du * s.base.phi1);
    ComplexField right = s.base.phi1 * (d_z(s.phi2) + du * s.phi2);
    return left - right;
}

inline IdentityReport identity_chain(const BBSliceData& s, double mask_threshold = 1e-3) {
    if (!(mask_threshold > 0.0) || mask_threshold >= 1.0)
        throw ValidationError("identity_chain: mask_threshold must lie in (0, 1)");

    IdentityReport rep;
    rep.gates.mask_threshold = mask_threshold;
    rep.gates.hitchin_res = sup_norm_interior(hitchin_residual(s.base.u, s.base.phi1));
    rep.gates.dprime_res = sup_norm_interior(dprime_residual(s));
    rep.gates.nilpotency = sup_norm(s.phi2 * s.phi2 + s.phi3 * s.base.phi1);

    rep.wedge = wedge_with_dH(s);

    ComplexField du = d_z(s.base.u);
    rep.f = div_field(s.base.phi1, s.phi2, mask_threshold * sup_norm(s.phi2));
    rep.eq1_res = d_z(rep.f) - 2.0 * (rep.f * du);
    rep.eq2_res = d_zbar(rep.f) - s.b * (rep.f * rep.f);

    ComplexField denominator = d_z(s.b) + 2.0 * (s.b * du);
    rep.gates.denominator_floor = 1e-8 * std::max(1.0, sup_norm(denominator));
    rep.f1_value =
        div_field(2.0 * dzbar_dz(s.base.u), denominator, rep.gates.denominator_floor);

    // joint sup over the rows where the stencil equations are enforced
    const GridDomain& d = s.base.domain;
    bool any = false;
    double sup_dev = 0.0, sup_f = 0.0;
    for (int j = 1; j < d.ny - 1; ++j)
        for (int i = 0; i < d.nx; ++i) {
            if (!d.periodic_x() && (i == 0 || i == d.nx - 1)) continue;
            std::size_t n = d.index(i, j);
            if (rep.f.masked(n) || rep.f1_value.masked(n)) continue;
            any = true;
            sup_dev = std::max(sup_dev, std::abs(rep.f1_value.values[n] + rep.f.values[n]));
            sup_f = std::max(sup_f, std::abs(rep.f.values[n]));
        }
    if (!any) {
        rep.degenerate = true;
        return rep;
    }
    rep.contradiction_sup = sup_dev;
    rep.ratio_scale = sup_f;
    rep.contradiction_scaled = sup_dev / std::max(1.0, sup_f);
    return rep;
}

// min over live nodes of |wedge| / |s|_H^2 with |s|_H^2 = e^u |phi2|^2 +
// e^{-u} |phi1|^2.  Strictly positive output is the per-slice witness that
// the kernel line is not preserved.
inline double preserved_kernel_probe(const BBSliceData& s) {
    double section_scale = std::max({1.0, sup_norm(s.base.phi1), sup_norm(s.phi2)});
    if (sup_norm(s.phi2) <= 1e-12 * section_scale)
        throw DegeneracyError(
            "preserved_kernel_probe: slice is the fixed point (phi2 vanishes); the kernel "
            "line is preserved there by construction, so the probe is undefined");

    ComplexField wedge = wedge_with_dH(s);
    ComplexField ns2 = exp_field(s.base.u) * abs2_field(s.phi2) +
                       exp_field(cd(-1.0, 0.0) * s.base.u) * abs2_field(s.base.phi1);
    double out = 1e300;
    bool any = false;
    for (std::size_t n = 0; n < wedge.values.size(); ++n) {
        if (wedge.masked(n) || ns2.masked(n)) continue;
        double den = ns2.values[n].real();
        if (!(den > 0.0))
            throw DegeneracyError("preserved_kernel_probe: section norm vanishes at a node");
        any = true;
        out = std::min(out, std::abs(wedge.values[n]) / den);
    }
    if (!any)
        throw ValidationError("preserved_kernel_probe: no live nodes on the domain");
    return out;
}

} // namespace cll
