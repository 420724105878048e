#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cll/identity.hpp"

using namespace cll;

namespace {

const double pi = 3.14159265358979323846;

FixedPointData strip_base(int n = 48) {
    GridDomain d = make_domain(n, n, 2.0, 0.5, 1.5);
    ComplexField one(d, cd(1.0, 0.0));
    ComplexField u = sample_field(d, [](double, double y) { return cd(std::log(2.0 * y), 0.0); });
    return make_fixed_point(one, u);
}

BBSliceData fixed_point_slice(const FixedPointData& base) {
    ComplexField zero(base.domain);
    return BBSliceData{base, zero, zero, zero, +1};
}

// slice in the coupling orientation whose chain closes as f1 = -f
BBSliceData chain_slice(int n, cd amp = cd(0.01, 0.0)) {
    FixedPointData base = strip_base(n);
    ComplexField seed = sample_field(base.domain, [&](double x, double) {
        return amp * std::exp(cd(0.0, pi * x));
    });
    SliceSynthesisOptions opt;
    opt.dprime_sign = +1;
    opt.phi3_mode = "nilpotent";
    return synthesize_slice(base, seed, 1e-5, opt);
}

// flat rectangle with u = 0 and polynomial section data
BBSliceData polynomial_slice(int n = 32) {
    GridDomain d = make_rect_domain(n, n, -1.0, 1.0, 0.25, 1.25);
    ComplexField one(d, cd(1.0, 0.0));
    ComplexField zero(d);
    FixedPointData base{d, one, zero};
    ComplexField phi2 = sample_field(d, [](double x, double y) { return cd(x, y); });
    ComplexField phi3 = sample_field(d, [](double x, double y) {
        cd z(x, y);
        return -z * z;
    });
    return BBSliceData{base, phi2, phi3, zero, +1};
}

} // namespace

TEST_CASE("wedge density", "[identity]") {
    SECTION("vanishes identically at the fixed point") {
        BBSliceData fp = fixed_point_slice(strip_base());
        REQUIRE(sup_norm(wedge_with_dH(fp)) == 0.0);
    }

    SECTION("linear section data gives the constant density -1") {
        BBSliceData s = polynomial_slice();
        ComplexField w = wedge_with_dH(s);
        REQUIRE(sup_norm(w + ComplexField(s.base.domain, cd(1.0, 0.0))) < 1e-12);
    }

    SECTION("density is quadratic under section rescaling") {
        BBSliceData s = polynomial_slice();
        ComplexField w = wedge_with_dH(s);
        for (cd c : {cd(2.0, 0.0), cd(0.6, 0.8)}) {
            BBSliceData cs = s;
            cs.base.phi1 = c * s.base.phi1;
            cs.phi2 = c * s.phi2;
            cs.phi3 = c * s.phi3;
            ComplexField cw = wedge_with_dH(cs);
            REQUIRE(sup_norm(cw - (c * c) * w) < 1e-12 * std::norm(c) * sup_norm(w));
        }
    }

    SECTION("non-nilpotent data is gated") {
        BBSliceData s = polynomial_slice();
        s.phi3 = ComplexField(s.base.domain, cd(1.0, 0.0));
        REQUIRE_THROWS_AS(wedge_with_dH(s), DegeneracyError);
    }
}

TEST_CASE("identity chain at the fixed point", "[identity]") {
    BBSliceData fp = fixed_point_slice(strip_base());
    IdentityReport rep = identity_chain(fp);
    REQUIRE(rep.degenerate);
    REQUIRE(rep.contradiction_sup == 0.0);
    REQUIRE(rep.f.has_mask());
    for (std::size_t n = 0; n < rep.f.values.size(); ++n) REQUIRE(rep.f.masked(n));
    REQUIRE(sup_norm(rep.wedge) == 0.0);
}

TEST_CASE("identity chain closes on a synthesized slice", "[identity]") {
    BBSliceData s = chain_slice(48);
    IdentityReport rep = identity_chain(s);
    double h = std::max(s.base.domain.hx, s.base.domain.hy);

    REQUIRE_FALSE(rep.degenerate);
    REQUIRE(rep.gates.dprime_res < 1e-12);
    REQUIRE(rep.gates.nilpotency < 1e-12);
    REQUIRE(rep.gates.hitchin_res < 10.0 * h * h);

    SECTION("forced ratio equals -f to the stencil level") {
        REQUIRE(rep.ratio_scale > 1e2); // f is genuinely large at this amplitude
        REQUIRE(rep.contradiction_scaled < 2e-4);
        REQUIRE(rep.contradiction_sup < 0.3);
    }

    SECTION("contradiction tightens under grid refinement") {
        IdentityReport fine = identity_chain(chain_slice(96));
        REQUIRE(rep.contradiction_scaled / fine.contradiction_scaled > 3.0);
    }

    SECTION("perturbing the coupling field is detected at 10x") {
        BBSliceData bad = s;
        bad.b = cd(1.1, 0.0) * s.b;
        IdentityReport brep = identity_chain(bad);
        REQUIRE(brep.contradiction_sup > 10.0 * rep.contradiction_sup);
    }

    SECTION("holomorphy consequence shrinks at the stencil rate") {
        REQUIRE(sup_norm_interior(rep.eq2_res) < 3.0 * h * h * rep.ratio_scale);
    }

    SECTION("wedge and eq1 are two forms of one density") {
        ComplexField link = rep.wedge - s.phi2 * s.phi2 * rep.eq1_res;
        REQUIRE(sup_norm_interior(link) < 5.0 * h * h * sup_norm_interior(rep.wedge));
        // eq1 is the preserved-kernel hypothesis residual; it must stay
        // comparable to |f| rather than vanish
        REQUIRE(sup_norm_interior(rep.eq1_res) > rep.ratio_scale);
    }

    SECTION("masks only widen when the threshold grows") {
        IdentityReport loose = identity_chain(s, 1e-2);
        for (std::size_t n = 0; n < rep.f.values.size(); ++n)
            if (rep.f.masked(n)) REQUIRE(loose.f.masked(n));
    }

    SECTION("repeat evaluation is bit-identical") {
        IdentityReport again = identity_chain(s);
        REQUIRE(again.contradiction_sup == rep.contradiction_sup);
        REQUIRE(again.ratio_scale == rep.ratio_scale);
    }

    SECTION("threshold validation") {
        REQUIRE_THROWS_AS(identity_chain(s, 0.0), ValidationError);
        REQUIRE_THROWS_AS(identity_chain(s, 1.5), ValidationError);
    }
}

TEST_CASE("preserved kernel probe", "[identity]") {
    SECTION("fixed point is referred to the degenerate case") {
        BBSliceData fp = fixed_point_slice(strip_base());
        REQUIRE_THROWS_WITH(preserved_kernel_probe(fp),
                            Catch::Matchers::ContainsSubstring("fixed point"));
    }

    SECTION("synthesized slice witnesses the obstruction") {
        BBSliceData s = chain_slice(48);
        double probe = preserved_kernel_probe(s);
        REQUIRE(probe > 1e-3);
    }

    SECTION("normalized probe is invariant under section rescaling") {
        BBSliceData s = polynomial_slice();
        double probe = preserved_kernel_probe(s);
        for (cd c : {cd(2.0, 0.0), cd(0.6, 0.8)}) {
            BBSliceData cs = s;
            cs.base.phi1 = c * s.base.phi1;
            cs.phi2 = c * s.phi2;
            cs.phi3 = c * s.phi3;
            double scaled = preserved_kernel_probe(cs);
            REQUIRE(scaled == Catch::Approx(probe).epsilon(1e-12));
        }
    }
}
