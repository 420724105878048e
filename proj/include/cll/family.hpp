#pragma once

// Laurent families of connections A(r) = sum_k r^k (Mz_k dz + Mzbar_k dzbar)
// built from slice data, their curvature, constant diagonal gauge moves
// g(r) = diag(r^p, r^{-p}), and the secondary expansion around the kernel
// line of a nilpotent Higgs field.
//
// Power bookkeeping under g(r): the (1,2) entry of a power-k coefficient
// moves to power k + 2p, the (2,1) entry to k - 2p, diagonals stay.  These
// are pure re-indexings with no arithmetic, so gauge round trips are
// bit-exact.

#include <map>
#include <utility>

#include "cll/error.hpp"
#include "cll/grid.hpp"
#include "cll/slice.hpp"

namespace cll {

struct LaurentCoefficient {
    MatrixField Mz;
    MatrixField Mzbar;
};

struct LaurentConnectionFamily {
    GridDomain domain;
    std::map<int, LaurentCoefficient> coefficients; // powers within [-3, 2]
};

inline constexpr int family_power_min = -3;
inline constexpr int family_power_max = 2;

inline void validate_family(const LaurentConnectionFamily& fam) {
    for (const auto& [k, coef] : fam.coefficients) {
        if (k < family_power_min || k > family_power_max)
            throw ValidationError("family: power " + std::to_string(k) + " outside [" +
                                  std::to_string(family_power_min) + ", " +
                                  std::to_string(family_power_max) + "]");
        if (!(coef.Mz.domain() == fam.domain) || !(coef.Mzbar.domain() == fam.domain))
            throw ValidationError("family: coefficient domain mismatch at power " +
                                  std::to_string(k));
        double sz = sup_norm(coef.Mz); // throws on non-finite entries
        double szbar = sup_norm(coef.Mzbar);
        double tf = std::max(trace_free_defect(coef.Mz), trace_free_defect(coef.Mzbar));
        double scale = std::max(1.0, std::max(sz, szbar));
        if (tf > 1e-10 * scale)
            throw ValidationError("family: coefficient at power " + std::to_string(k) +
                                  " is not trace-free (defect " + sci(tf) + ")");
    }
}

inline LaurentConnectionFamily build_family(const BBSliceData& slice, double hbar) {
    if (!(hbar != 0.0) || !std::isfinite(hbar))
        throw ValidationError("build_family: hbar must be a nonzero finite real");

    // refuse un-gated input, reporting all four residuals
    {
        double field_scale = std::max({1.0, sup_norm(slice.base.phi1), sup_norm(slice.phi2),
                                       sup_norm(slice.phi3), sup_norm(slice.b)});
        double gate = default_gate(slice.base.domain, field_scale);
        HolomorphicityResiduals hr = holomorphicity_residuals(slice);
        double v1 = sup_norm_interior(hr.r1);
        double v2 = sup_norm_interior(hr.r2);
        double v3 = sup_norm_interior(hr.r3);
        double v4 = sup_norm_interior(dprime_residual(slice));
        if (std::max({v1, v2, v3, v4}) > gate)
            throw GateError("build_family: slice fails its equation gates (r1 " + sci(v1) +
                            ", r2 " + sci(v2) + ", r3 " + sci(v3) + ", r4 " + sci(v4) +
                            " vs gate " + sci(gate) + ")");
    }

    const GridDomain& d = slice.base.domain;
    const ComplexField& u = slice.base.u;
    ComplexField dzu = d_z(u);
    ComplexField weight = slice_detail::damped_weight(u); // e^{-2u}, clamped

    LaurentConnectionFamily fam;
    fam.domain = d;

    // power +1: the full Higgs field over hbar, dz-valued
    LaurentCoefficient c1{MatrixField(d, FormType::dz), MatrixField(d, FormType::dzbar)};
    cd inv_h = cd(1.0 / hbar, 0.0);
    c1.Mz.a11 = inv_h * slice.phi2;
    c1.Mz.a12 = inv_h * slice.phi3;
    c1.Mz.a21 = inv_h * slice.base.phi1;
    c1.Mz.a22 = -(inv_h * slice.phi2);
    fam.coefficients[1] = std::move(c1);

    // power 0: diagonal metric connection (dz) and the slice (0,1)-entry (dzbar)
    LaurentCoefficient c0{MatrixField(d, FormType::dz), MatrixField(d, FormType::dzbar)};
    c0.Mz.a11 = dzu;
    c0.Mz.a22 = -dzu;
    c0.Mzbar.a12 = slice.b;
    fam.coefficients[0] = std::move(c0);

    // power -1: hbar times the metric adjoint of Phi0, dzbar-valued.
    // Orientation fixed so the fixed-point family is flat: the entry is
    // +conj(phi1) e^{-2u}.
    LaurentCoefficient cm1{MatrixField(d, FormType::dz), MatrixField(d, FormType::dzbar)};
    cm1.Mzbar.a12 = cd(hbar, 0.0) * (conj_field(slice.base.phi1) * weight);
    fam.coefficients[-1] = std::move(cm1);

    validate_family(fam);
    return fam;
}

// A(r) as a pair (A_z, A_zbar); powers are summed in ascending order.
inline std::pair<MatrixField, MatrixField> evaluate(const LaurentConnectionFamily& fam,
                                                    double r) {
    if (!(r > 0.0))
        throw ValidationError("evaluate: family evaluation needs r > 0");
    MatrixField Az(fam.domain, FormType::dz);
    MatrixField Azbar(fam.domain, FormType::dzbar);
    for (const auto& [k, coef] : fam.coefficients) {
        cd rk(std::pow(r, k), 0.0);
        Az = mat_add(Az, mat_scale(rk, coef.Mz));
        Azbar = mat_add(Azbar, mat_scale(rk, coef.Mzbar));
    }
    Az.form = FormType::dz;
    Azbar.form = FormType::dzbar;
    return {Az, Azbar};
}

// F = d_z(A_zbar) - d_zbar(A_z) + [A_z, A_zbar], the dz^dzbar coefficient.
inline MatrixField curvature_residual(const LaurentConnectionFamily& fam, double r) {
    auto [Az, Azbar] = evaluate(fam, r);
    MatrixField dAzbar = mat_apply(Azbar, [](const ComplexField& f) { return d_z(f); });
    MatrixField dAz = mat_apply(Az, [](const ComplexField& f) { return d_zbar(f); });
    MatrixField F = mat_add(mat_sub(dAzbar, dAz), mat_commutator(Az, Azbar));
    F.form = FormType::two_form;
    return F;
}

// Conjugation by g(r) = diag(r^p, r^{-p}) with half-integer p; entries are
// re-indexed across powers, nothing is recomputed.
inline LaurentConnectionFamily gauge_transform(const LaurentConnectionFamily& fam, double p) {
    double two_p = 2.0 * p;
    if (two_p != std::floor(two_p))
        throw ValidationError("gauge_transform: exponent must be a half-integer");
    int shift = static_cast<int>(two_p);

    LaurentConnectionFamily out;
    out.domain = fam.domain;
    auto slot = [&](int k) -> LaurentCoefficient& {
        auto it = out.coefficients.find(k);
        if (it == out.coefficients.end()) {
            if (k < family_power_min || k > family_power_max)
                throw ValidationError("gauge_transform: shifted power " + std::to_string(k) +
                                      " overflows [" + std::to_string(family_power_min) + ", " +
                                      std::to_string(family_power_max) + "]");
            it = out.coefficients
                     .emplace(k, LaurentCoefficient{MatrixField(fam.domain, FormType::dz),
                                                    MatrixField(fam.domain, FormType::dzbar)})
                     .first;
        }
        return it->second;
    };
    auto nonzero = [](const ComplexField& f) {
        for (const cd& v : f.values)
            if (v != cd(0.0, 0.0)) return true;
        return false;
    };

    for (const auto& [k, coef] : fam.coefficients) {
        for (const MatrixField* part : {&coef.Mz, &coef.Mzbar}) {
            bool is_z = (part == &coef.Mz);
            if (nonzero(part->a11) || nonzero(part->a22)) {
                auto& dst = slot(k);
                (is_z ? dst.Mz.a11 : dst.Mzbar.a11) = part->a11;
                (is_z ? dst.Mz.a22 : dst.Mzbar.a22) = part->a22;
            }
            if (nonzero(part->a12)) {
                auto& dst = slot(k + shift);
                (is_z ? dst.Mz.a12 : dst.Mzbar.a12) = part->a12;
            }
            if (nonzero(part->a21)) {
                auto& dst = slot(k - shift);
                (is_z ? dst.Mz.a21 : dst.Mzbar.a21) = part->a21;
            }
        }
    }
    return out;
}

// Sup of the evaluated family with the leading powers 0 and 1 dropped: the
// remainder beyond r*Phi + D.  Algebraic in the coefficients, so the sup runs
// over the full grid.
inline double expansion_tail_sup(const LaurentConnectionFamily& fam, double r) {
    if (!(r > 0.0))
        throw ValidationError("expansion_tail_sup: needs r > 0");
    MatrixField Rz(fam.domain, FormType::dz);
    MatrixField Rzbar(fam.domain, FormType::dzbar);
    for (const auto& [k, coef] : fam.coefficients) {
        if (k == 0 || k == 1) continue;
        cd rk(std::pow(r, k), 0.0);
        Rz = mat_add(Rz, mat_scale(rk, coef.Mz));
        Rzbar = mat_add(Rzbar, mat_scale(rk, coef.Mzbar));
    }
    return std::max(sup_norm(Rz), sup_norm(Rzbar));
}

inline ComplexField det_higgs(const MatrixField& phi) {
    if (phi.form != FormType::dz)
        throw ValidationError("det_higgs: expected a dz-tagged Higgs matrix");
    double scale = std::max(1.0, sup_norm(phi));
    if (trace_free_defect(phi) > 1e-10 * scale)
        throw ValidationError("det_higgs: matrix is not trace-free");
    return mat_det(phi);
}

// ---- secondary expansion --------------------------------------------------------

struct SecondaryHiggsData {
    ComplexField phi_tilde; // (1,2) of the secondary Higgs field
    ComplexField a_minus1;  // (2,1) of the secondary Higgs field (dz part)
    MatrixField dprime_z;    // diagonal power-0 coefficients after the move
    MatrixField dprime_zbar;
    ComplexField det_field; // -phi_tilde * a_minus1, computed exactly as that product
    LaurentConnectionFamily transformed; // full family for tail studies
    double kernel_rotation_defect = 0.0; // sup of the zeroed first-column entries
    double a_minus1_dzbar_defect = 0.0;  // sup of the (2,1) dzbar part at power +1
};

namespace family_detail {

struct FrameRotation {
    MatrixField G;     // columns: kernel direction, its H-orthogonal partner
    MatrixField Ginv;  // inverse using det G = -1
};

inline FrameRotation kernel_frame(const BBSliceData& slice, double min_section_norm = 1e-12) {
    const GridDomain& d = slice.base.domain;
    FrameRotation fr{MatrixField(d), MatrixField(d)};
    for (int j = 0; j < d.ny; ++j)
        for (int i = 0; i < d.nx; ++i) {
            double uv = slice.base.u.at(i, j).real();
            double eu = std::exp(uv), emu = std::exp(-uv);
            cd s1 = slice.phi2.at(i, j);
            cd s2 = slice.base.phi1.at(i, j);
            double ns = std::sqrt(eu * std::norm(s1) + emu * std::norm(s2));
            if (!(ns > min_section_norm))
                throw DegeneracyError("secondary_expansion: kernel section vanishes at node (" +
                                      std::to_string(i) + ", " + std::to_string(j) + ")");
            fr.G.a11.at(i, j) = s1 / ns;
            fr.G.a21.at(i, j) = s2 / ns;
            fr.G.a12.at(i, j) = emu * std::conj(s2) / ns;
            fr.G.a22.at(i, j) = -eu * std::conj(s1) / ns;
        }
    // det G = -1 by construction, so the adjugate gives the inverse directly
    fr.Ginv.a11 = -fr.G.a22;
    fr.Ginv.a12 = fr.G.a12;
    fr.Ginv.a21 = fr.G.a21;
    fr.Ginv.a22 = -fr.G.a11;
    return fr;
}

} // namespace family_detail

inline SecondaryHiggsData secondary_expansion(const LaurentConnectionFamily& fam,
                                              const BBSliceData& slice,
                                              double gate_floor = 1e-6) {
    try {
        kernel_section(slice, gate_floor);
    } catch (const DegeneracyError& e) {
        throw DegeneracyError(std::string(e.what()) +
                              "; no secondary expansion exists, run the WKB holonomy "
                              "analysis on the family directly");
    }
    const GridDomain& d = fam.domain;
    if (!(d == slice.base.domain))
        throw ValidationError("secondary_expansion: family and slice domains differ");

    family_detail::FrameRotation fr = family_detail::kernel_frame(slice);

    // rotate every coefficient; the derivative term lands at power 0
    LaurentConnectionFamily rotated;
    rotated.domain = d;
    for (const auto& [k, coef] : fam.coefficients) {
        LaurentCoefficient rc{MatrixField(d, FormType::dz), MatrixField(d, FormType::dzbar)};
        rc.Mz = mat_mul(fr.Ginv, mat_mul(coef.Mz, fr.G));
        rc.Mzbar = mat_mul(fr.Ginv, mat_mul(coef.Mzbar, fr.G));
        rc.Mz.form = FormType::dz;
        rc.Mzbar.form = FormType::dzbar;
        rotated.coefficients[k] = std::move(rc);
    }
    {
        auto it = rotated.coefficients.find(0);
        if (it == rotated.coefficients.end()) {
            rotated.coefficients[0] =
                LaurentCoefficient{MatrixField(d, FormType::dz), MatrixField(d, FormType::dzbar)};
            it = rotated.coefficients.find(0);
        }
        MatrixField dGz = mat_apply(fr.G, [](const ComplexField& f) { return d_z(f); });
        MatrixField dGzbar = mat_apply(fr.G, [](const ComplexField& f) { return d_zbar(f); });
        it->second.Mz = mat_add(it->second.Mz, mat_mul(fr.Ginv, dGz));
        it->second.Mzbar = mat_add(it->second.Mzbar, mat_mul(fr.Ginv, dGzbar));
        it->second.Mz.form = FormType::dz;
        it->second.Mzbar.form = FormType::dzbar;
    }

    // In the rotated frame the Higgs coefficient annihilates the first basis
    // vector, so its first column and (by trace-freeness) second diagonal
    // entry sit at rounding level; they are gated and then cleared so the
    // Laurent re-indexing below cannot overflow on numerical dust.
    SecondaryHiggsData out;
    {
        auto it = rotated.coefficients.find(1);
        if (it == rotated.coefficients.end())
            throw ValidationError("secondary_expansion: family has no Higgs coefficient");
        MatrixField& M = it->second.Mz;
        double scale = std::max(1.0, sup_norm(M));
        double defect =
            std::max({sup_norm(M.a11), sup_norm(M.a21), sup_norm(M.a22)});
        if (defect > gate_floor * scale)
            throw GateError("secondary_expansion: rotated Higgs field is not upper-triangular "
                            "(defect " + sci(defect) + "); kernel rotation failed");
        out.kernel_rotation_defect = defect;
        M.a11 = ComplexField(d);
        M.a21 = ComplexField(d);
        M.a22 = ComplexField(d);
    }

    // substitute r -> r^2 by doubling every power, then apply p = -1/2
    LaurentConnectionFamily squared;
    squared.domain = d;
    for (auto& [k, coef] : rotated.coefficients) squared.coefficients[2 * k] = std::move(coef);
    LaurentConnectionFamily shifted = gauge_transform(squared, -0.5);

    const LaurentCoefficient* c1 = nullptr;
    if (auto it = shifted.coefficients.find(1); it != shifted.coefficients.end())
        c1 = &it->second;
    if (!c1)
        throw ValidationError("secondary_expansion: no power-1 coefficient after the move");

    out.phi_tilde = c1->Mz.a12;
    out.a_minus1 = c1->Mz.a21;
    out.a_minus1_dzbar_defect = sup_norm(c1->Mzbar.a21);
    out.det_field = -(out.phi_tilde * out.a_minus1);

    out.dprime_z = MatrixField(d, FormType::dz);
    out.dprime_zbar = MatrixField(d, FormType::dzbar);
    if (auto it = shifted.coefficients.find(0); it != shifted.coefficients.end()) {
        out.dprime_z = it->second.Mz;
        out.dprime_zbar = it->second.Mzbar;
    }
    out.transformed = std::move(shifted);
    return out;
}

} // namespace cll
