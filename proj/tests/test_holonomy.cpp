#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <random>

#include "cll/holonomy.hpp"

using namespace cll;

namespace {

const double pi = 3.14159265358979323846;

MatrixField const_mat(const GridDomain& d, FormType ft, cd m11, cd m12, cd m21, cd m22) {
    MatrixField M(d, ft);
    M.a11 = constant_field(d, m11);
    M.a12 = constant_field(d, m12);
    M.a21 = constant_field(d, m21);
    M.a22 = constant_field(d, m22);
    M.form = ft;
    return M;
}

LaurentCoefficient const_coefficient(const GridDomain& d, cd z11, cd z12, cd z21, cd z22,
                                     cd b11 = 0.0, cd b12 = 0.0, cd b21 = 0.0, cd b22 = 0.0) {
    return {const_mat(d, FormType::dz, z11, z12, z21, z22),
            const_mat(d, FormType::dzbar, b11, b12, b21, b22)};
}

// separable model: r*diag(1,-1) + i*pi*diag(1,-1), exactly solvable
LaurentConnectionFamily diagonal_model(const GridDomain& d) {
    LaurentConnectionFamily fam;
    fam.domain = d;
    const cd ipi(0.0, pi);
    fam.coefficients[1] = const_coefficient(d, 1.0, 0.0, 0.0, -1.0);
    fam.coefficients[0] = const_coefficient(d, ipi, 0.0, 0.0, -ipi);
    return fam;
}

// hyperbolic Higgs with non-commuting lower-order terms
LaurentConnectionFamily generic_model(const GridDomain& d) {
    LaurentConnectionFamily fam;
    fam.domain = d;
    fam.coefficients[1] = const_coefficient(d, 0.8, 0.3, 0.25, -0.8);
    fam.coefficients[0] =
        const_coefficient(d, cd(0.0, 0.1), 0.2, -0.1, cd(0.0, -0.1), 0.0, 0.05, -0.02, 0.0);
    fam.coefficients[-1] = const_coefficient(d, 0.0, 0.15, 0.05, 0.0, 0.0, 0.1, 0.02, 0.0);
    return fam;
}

EigenBranch manual_branch(std::vector<cd> mu) {
    EigenBranch b;
    b.min_re = mu.empty() ? 0.0 : mu[0].real();
    for (const cd& m : mu) b.min_re = std::min(b.min_re, m.real());
    b.mu = std::move(mu);
    b.min_abs_det = 1.0;
    return b;
}

// closed form for the exponential of a trace-free 2x2 matrix
Mat2 exp_trace_free(const Mat2& M) {
    cd s = std::sqrt(-mat2_det(M));
    cd ch = std::cosh(s);
    cd sh = (std::abs(s) < 1e-12) ? cd(1.0, 0.0) : std::sinh(s) / s;
    return Mat2{ch + sh * M.a11, sh * M.a12, sh * M.a21, ch + sh * M.a22};
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("loop construction and serialization", "[holonomy]") {
    GridDomain d = make_domain(32, 32, 2.0, 0.5, 1.5);

    Loop loop = horizontal_loop(d, 1.0, 64);
    REQUIRE(loop.nt == 64);
    REQUIRE(loop.z.size() == 65);
    REQUIRE(loop.z[0] == cd(0.0, 1.0));
    REQUIRE(std::abs(loop.z[64] - cd(2.0, 1.0)) < 1e-15);

    Loop back = reversed(loop);
    REQUIRE(back.z[0] == loop.z[64]);
    REQUIRE(back.z[64] == loop.z[0]);

    SECTION("csv round trip") {
        std::string path = temp_path("cll_test_loop.csv");
        write_loop_csv(path, loop);
        Loop in = read_loop_csv(path);
        REQUIRE(in.nt == loop.nt);
        for (int i = 0; i <= loop.nt; ++i) REQUIRE(in.z[i] == loop.z[i]);
        std::filesystem::remove(path);
    }

    SECTION("degenerate inputs are refused") {
        REQUIRE_THROWS_AS(make_loop(4, [](double t) { return cd(t, 1.0); }), ValidationError);
        REQUIRE_THROWS_AS(horizontal_loop(d, 1.0, 64, 2), ValidationError);
        GridDomain rect = make_rect_domain(16, 16, 0.0, 1.0, 0.0, 1.0);
        REQUIRE_THROWS_AS(horizontal_loop(rect, 0.5, 64), ValidationError);
    }
}

TEST_CASE("pullback along circles", "[holonomy]") {
    GridDomain d = make_domain(24, 24, 1.0, 0.0, 1.0);
    LaurentConnectionFamily fam;
    fam.domain = d;
    fam.coefficients[0] =
        const_coefficient(d, cd(0.1, 0.2), 1.0, -0.5, cd(-0.1, -0.2), 0.3, cd(0.0, 0.4), 0.7, -0.3);

    Loop loop = horizontal_loop(d, 0.5, 32);
    LoopSamples s = pullback_loop(fam, loop, 1.0);

    SECTION("unit-speed horizontal circle adds the two form parts") {
        const auto& c0 = fam.coefficients[0];
        Mat2 expect{c0.Mz.a11.at(0, 0) + c0.Mzbar.a11.at(0, 0),
                    c0.Mz.a12.at(0, 0) + c0.Mzbar.a12.at(0, 0),
                    c0.Mz.a21.at(0, 0) + c0.Mzbar.a21.at(0, 0),
                    c0.Mz.a22.at(0, 0) + c0.Mzbar.a22.at(0, 0)};
        for (const Mat2& c : s.C) REQUIRE(mat2_max_abs(c - expect) < 1e-12);
    }

    SECTION("reversing the orientation negates and reflects the samples") {
        LoopSamples rs = pullback_loop(fam, reversed(loop), 1.0);
        for (int i = 0; i < loop.nt; ++i) {
            Mat2 mirrored = cd(-1.0, 0.0) * s.C[(loop.nt - i) % loop.nt];
            REQUIRE(mat2_max_abs(rs.C[i] - mirrored) < 1e-12);
        }
    }

    SECTION("open curves are refused") {
        Loop open = make_loop(32, [](double t) { return cd(t, 0.5 + 0.3 * t); });
        REQUIRE_THROWS_WITH(pullback_loop(fam, open, 1.0),
                            Catch::Matchers::ContainsSubstring("not closed"));
    }

    SECTION("curves leaving the strip are refused with the offending time") {
        Loop out = sine_loop(d, 0.5, 0.8, 32);
        REQUIRE_THROWS_WITH(pullback_loop(fam, out, 1.0),
                            Catch::Matchers::ContainsSubstring("leaves the domain at t ="));
    }
}

TEST_CASE("eigenvalue branch of the Higgs pullback", "[holonomy]") {
    GridDomain d = make_domain(24, 24, 1.0, 0.0, 1.0);

    SECTION("diagonal and off-diagonal constant models") {
        MatrixField diag = const_mat(d, FormType::dz, 0.7, 0.0, 0.0, -0.7);
        auto b1 = higgs_eigen_branch(pullback_higgs(diag, horizontal_loop(d, 0.5, 32)));
        for (const cd& m : b1.mu) REQUIRE(std::abs(m - cd(0.7, 0.0)) < 1e-12);
        REQUIRE(is_wkb(b1));
        REQUIRE(std::abs(central_charge(b1) - cd(0.7, 0.0)) < 1e-12);

        MatrixField off = const_mat(d, FormType::dz, 0.0, 1.0, 0.49, 0.0);
        auto b2 = higgs_eigen_branch(pullback_higgs(off, horizontal_loop(d, 0.5, 32)));
        for (const cd& m : b2.mu) REQUIRE(std::abs(m - cd(0.7, 0.0)) < 1e-12);
    }

    SECTION("nilpotent pullback is refused") {
        MatrixField nil = const_mat(d, FormType::dz, 0.0, 1.0, 0.0, 0.0);
        REQUIRE_THROWS_AS(higgs_eigen_branch(pullback_higgs(nil, horizontal_loop(d, 0.5, 32))),
                          DegeneracyError);
    }

    SECTION("trace check on manual samples") {
        LoopSamples s;
        s.nt = 16;
        s.H.assign(16, Mat2{cd(1.0, 0.0), 0.0, 0.0, 0.0});
        REQUIRE_THROWS_AS(higgs_eigen_branch(s), ValidationError);
    }

    SECTION("square-root monodromy is flagged and blocks the WKB gate") {
        LoopSamples s;
        s.nt = 64;
        s.H.resize(64);
        for (int i = 0; i < 64; ++i)
            s.H[i] = Mat2{0.0, cd(1.0, 0.0), std::exp(cd(0.0, 2.0 * pi * i / 64.0)), 0.0};
        auto br = higgs_eigen_branch(s);
        REQUIRE(br.monodromy_flip);
        REQUIRE_FALSE(is_wkb(br));
        // the branch follows exp(i*pi*t) pointwise until the flip
        REQUIRE(std::abs(br.mu[16] - std::exp(cd(0.0, pi * 0.25))) < 1e-12);
    }

    SECTION("branch converges quadratically under loop refinement") {
        GridDomain fine = make_domain(64, 64, 2.0, 0.5, 1.5);
        MatrixField H(fine, FormType::dz);
        H.a11 = sample_field(fine, [](double x, double y) {
            return cd(0.2 * std::cos(pi * x), 0.1 * y);
        });
        H.a12 = sample_field(fine, [](double x, double y) {
            return cd(1.0 + 0.2 * y, 0.1 * std::sin(pi * x));
        });
        H.a21 = sample_field(fine, [](double x, double y) {
            return cd(0.8, 0.05 * std::cos(pi * x) * y);
        });
        H.a22 = cd(-1.0, 0.0) * H.a11;
        auto b64 = higgs_eigen_branch(pullback_higgs(H, sine_loop(fine, 1.0, 0.2, 64)));
        auto b128 = higgs_eigen_branch(pullback_higgs(H, sine_loop(fine, 1.0, 0.2, 128)));
        auto b256 = higgs_eigen_branch(pullback_higgs(H, sine_loop(fine, 1.0, 0.2, 256)));
        double d1 = 0.0, d2 = 0.0;
        for (int i = 0; i < 64; ++i) d1 = std::max(d1, std::abs(b64.mu[i] - b128.mu[2 * i]));
        for (int i = 0; i < 128; ++i) d2 = std::max(d2, std::abs(b128.mu[i] - b256.mu[2 * i]));
        REQUIRE(d1 / d2 > 2.5);
        REQUIRE(d1 / d2 < 6.0);
    }
}

TEST_CASE("central charge quadrature", "[holonomy]") {
    auto sampled = [](auto f, int n) {
        std::vector<cd> mu(n);
        for (int i = 0; i < n; ++i) mu[i] = f(static_cast<double>(i) / n);
        return manual_branch(std::move(mu));
    };

    auto ones = sampled([](double) { return cd(1.0, 0.0); }, 64);
    REQUIRE(is_wkb(ones));
    REQUIRE(central_charge(ones) == cd(1.0, 0.0));

    auto circling = sampled([](double t) { return std::exp(cd(0.0, 2.0 * pi * t)); }, 64);
    REQUIRE_FALSE(is_wkb(circling));
    REQUIRE(std::abs(central_charge(circling)) < 1e-13);

    auto offset = sampled([](double t) { return cd(2.0 + std::sin(2.0 * pi * t), 0.0); }, 64);
    REQUIRE(is_wkb(offset));
    REQUIRE(std::abs(central_charge(offset) - cd(2.0, 0.0)) < 1e-13);

    REQUIRE_THROWS_AS(central_charge(manual_branch({})), ValidationError);
}

TEST_CASE("path-ordered exponential of elementary coefficients", "[holonomy]") {
    Mat2 M{cd(0.3, 0.1), cd(1.1, -0.2), cd(-0.4, 0.3), cd(-0.3, -0.1)};

    SECTION("constant coefficient reproduces the matrix exponential") {
        auto hol = path_ordered_exp([&](double) { return M; }, 128);
        Mat2 expect = exp_trace_free(M);
        REQUIRE(mat2_max_abs(hol.matrix() - expect) < 1e-10 * mat2_max_abs(expect));
        REQUIRE_FALSE(hol.rescaled);
    }

    SECTION("commuting time dependence integrates the scalar factor") {
        auto hol = path_ordered_exp(
            [&](double t) { return cd(1.0 + std::cos(2.0 * pi * t), 0.0) * M; }, 256);
        Mat2 expect = exp_trace_free(M); // integral of the factor over [0,1] is 1
        REQUIRE(mat2_max_abs(hol.matrix() - expect) < 1e-9 * mat2_max_abs(expect));
    }

    SECTION("step refinement shows fourth-order self-consistency") {
        auto coeff = [](double t) {
            const double w = 2.0 * pi * t;
            return Mat2{cd(0.3 * std::cos(w), 0.2 * std::sin(w)), cd(1.0, 0.4 * std::sin(2 * w)),
                        cd(-0.7 + 0.3 * std::sin(w), 0.0),
                        cd(-0.3 * std::cos(w), -0.2 * std::sin(w))};
        };
        double d1 = mat2_max_abs(path_ordered_exp(coeff, 64).Y - path_ordered_exp(coeff, 128).Y);
        double d2 = mat2_max_abs(path_ordered_exp(coeff, 128).Y - path_ordered_exp(coeff, 256).Y);
        REQUIRE(d1 / d2 > 10.0);
        REQUIRE(d1 / d2 < 24.0);
    }

    SECTION("bad inputs are refused") {
        REQUIRE_THROWS_AS(path_ordered_exp([&](double) { return M; }, 0), ValidationError);
        REQUIRE_THROWS_AS(path_ordered_exp(
                              [](double) {
                                  return Mat2{cd(1.0 / 0.0, 0.0), 0.0, 0.0, 0.0};
                              },
                              64),
                          ValidationError);
    }
}

TEST_CASE("unimodularity and reversal across randomized coefficients", "[holonomy]") {
    std::mt19937 rng(20260816u);
    std::uniform_real_distribution<double> pick(-1.0, 1.0);
    double worst_det = 0.0;
    double worst_reversal = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        cd c[6];
        for (cd& v : c) v = cd(pick(rng), pick(rng));
        auto coeff = [&](double t) {
            const double w = 2.0 * pi * t;
            cd s1(std::cos(w) + std::sin(w), 0.0);
            cd s2(std::cos(2 * w) + std::sin(2 * w), 0.0);
            cd a = c[0] * s1 + c[1] * s2;
            return Mat2{a, c[2] * s1 + c[3], c[4] * s2 + c[5], -a};
        };
        auto hol = path_ordered_exp(coeff, 256);
        worst_det = std::max(worst_det, sl2_defect(hol));
        auto rev =
            path_ordered_exp([&](double t) { return cd(-1.0, 0.0) * coeff(1.0 - t); }, 256);
        worst_reversal =
            std::max(worst_reversal, mat2_max_abs(rev.Y * hol.Y - Mat2::identity()));
    }
    REQUIRE(worst_det < 1e-8);
    REQUIRE(worst_reversal < 1e-8);
}

TEST_CASE("trace is invariant under periodic frame conjugation", "[holonomy]") {
    auto coeff = [](double t) {
        const double w = 2.0 * pi * t;
        return Mat2{cd(0.2 * std::sin(w), 0.3), cd(0.9, -0.1 * std::cos(w)),
                    cd(-0.5 * std::cos(w), 0.2), cd(-0.2 * std::sin(w), -0.3)};
    };
    auto frame = [](double t) {
        double p = 2.0 * pi * t;
        return Mat2{cd(std::cos(p), 0.0), cd(std::sin(p), 0.0), cd(-std::sin(p), 0.0),
                    cd(std::cos(p), 0.0)};
    };
    auto frame_dot = [](double t) {
        double p = 2.0 * pi * t;
        return cd(2.0 * pi, 0.0) * Mat2{cd(-std::sin(p), 0.0), cd(std::cos(p), 0.0),
                                        cd(-std::cos(p), 0.0), cd(-std::sin(p), 0.0)};
    };
    auto conjugated = [&](double t) {
        Mat2 g = frame(t);
        Mat2 ginv = mat2_inverse(g);
        return ginv * (coeff(t) * g - frame_dot(t));
    };
    cd t1 = mat2_trace(path_ordered_exp(coeff, 512).matrix());
    cd t2 = mat2_trace(path_ordered_exp(conjugated, 512).matrix());
    REQUIRE(std::abs(t1 - t2) < 1e-8 * std::max(1.0, std::abs(t1)));
}

TEST_CASE("overflow switches to exponent bookkeeping", "[holonomy]") {
    auto stiff = [](double) {
        return Mat2{cd(800.0, 0.0), 0.0, 0.0, cd(-800.0, 0.0)};
    };
    auto hol = path_ordered_exp(stiff, 64);
    REQUIRE(hol.rescaled);
    REQUIRE(std::abs(hol.log_abs_trace() - 800.0) < 1e-3);
    REQUIRE(std::abs(hol.trace(cd(-800.0, 0.0)) - cd(1.0, 0.0)) < 1e-3);
    REQUIRE_THROWS_AS(hol.matrix(), GateError);
}

TEST_CASE("growth sweep on the separable diagonal model", "[holonomy]") {
    GridDomain d = make_domain(16, 16, 1.0, 0.0, 1.0);
    LaurentConnectionFamily fam = diagonal_model(d);
    Loop loop = horizontal_loop(d, 0.5, 256);

    WkbSweepReport rep = wkb_sweep(fam, loop, {0.2, 0.1, 0.05});
    REQUIRE(std::abs(rep.Z - cd(1.0, 0.0)) < 1e-12);
    REQUIRE(std::abs(rep.hol_aplus - cd(-1.0, 0.0)) < 1e-9);
    REQUIRE(rep.frame_wrap == 1.0);
    for (const WkbSweepRow& row : rep.rows) {
        double allowed = 1e-6 + std::exp(-2.0 / row.eps);
        REQUIRE(std::abs(row.q - cd(-1.0, 0.0)) <= allowed);
        REQUIRE(std::abs(row.log_abs_trace - 1.0 / row.eps) < 1e-3 / row.eps);
    }

    SECTION("repeat runs are bit-identical") {
        WkbSweepReport again = wkb_sweep(fam, loop, {0.2, 0.1, 0.05});
        for (std::size_t k = 0; k < rep.rows.size(); ++k) {
            REQUIRE(again.rows[k].q == rep.rows[k].q);
            REQUIRE(again.rows[k].log_abs_trace == rep.rows[k].log_abs_trace);
        }
    }

    SECTION("sweep table serialization") {
        std::string path = temp_path("cll_test_sweep.csv");
        write_sweep_csv(path, rep);
        std::string text = io::read_text(path);
        REQUIRE(text.rfind("eps,re_q,im_q,abs_dev,log_abs_trace\n", 0) == 0);
        REQUIRE(std::count(text.begin(), text.end(), '\n') == 4);
        std::filesystem::remove(path);
    }
}

TEST_CASE("sweep deviation scales linearly in epsilon on a generic family", "[holonomy]") {
    GridDomain d = make_domain(16, 16, 1.0, 0.0, 1.0);
    LaurentConnectionFamily fam = generic_model(d);
    Loop loop = horizontal_loop(d, 0.5, 256);

    WkbSweepReport rep = wkb_sweep(fam, loop, {0.2, 0.1, 0.05, 0.025});
    REQUIRE(rep.min_re_mu > 0.5);
    for (std::size_t k = 1; k < rep.rows.size(); ++k) {
        double ratio = rep.rows[k - 1].abs_dev / rep.rows[k].abs_dev;
        REQUIRE(ratio > 1.6);
        REQUIRE(ratio < 2.6);
    }

    SECTION("scaled log-trace converges monotonically to the central charge") {
        WkbSweepReport growth = wkb_sweep(fam, loop, {0.08, 0.04, 0.02, 0.01});
        double prev_gap = 1e300;
        for (const WkbSweepRow& row : growth.rows) {
            double gap = std::abs(row.eps * row.log_abs_trace - growth.Z.real());
            REQUIRE(gap < prev_gap);
            prev_gap = gap;
        }
        REQUIRE(prev_gap < 0.05 * std::abs(growth.Z.real()));
    }

    SECTION("non-WKB loops are refused with the gate named") {
        LaurentConnectionFamily rotated = generic_model(d);
        rotated.coefficients[1] = const_coefficient(d, cd(0.0, 1.0), 0.0, 0.0, cd(0.0, -1.0));
        REQUIRE_THROWS_WITH(wkb_sweep(rotated, loop, {0.1}),
                            Catch::Matchers::ContainsSubstring("Re mu"));
    }

    SECTION("epsilon lists must decrease and stay positive") {
        REQUIRE_THROWS_AS(wkb_sweep(fam, loop, {}), ValidationError);
        REQUIRE_THROWS_AS(wkb_sweep(fam, loop, {0.1, 0.2}), ValidationError);
        REQUIRE_THROWS_AS(wkb_sweep(fam, loop, {0.1, -0.05}), ValidationError);
    }
}

TEST_CASE("loop search over the scanned circle families", "[holonomy]") {
    GridDomain strip = make_domain(48, 48, 2.0, 0.5, 1.5);

    SECTION("hyperbolic constant field is found on the first circle") {
        MatrixField H = const_mat(strip, FormType::dz, 1.0, 0.0, 0.0, -1.0);
        WkbLoopResult found = find_wkb_loop(H);
        REQUIRE(found.margin == Catch::Approx(2.0).margin(1e-9)); // speed of the x-circle
        REQUIRE(found.loop.z[0].imag() == Catch::Approx(1.0));
    }

    SECTION("nilpotent field reports degeneracy") {
        MatrixField H = const_mat(strip, FormType::dz, 0.0, 1.0, 0.0, 0.0);
        REQUIRE_THROWS_AS(find_wkb_loop(H), DegeneracyError);
    }

    SECTION("anti-hyperbolic field exhausts the scan with the best margin") {
        MatrixField H = const_mat(strip, FormType::dz, cd(0.0, 1.0), 0.0, 0.0, cd(0.0, -1.0));
        REQUIRE_THROWS_WITH(find_wkb_loop(H),
                            Catch::Matchers::ContainsSubstring("best margin"));
    }

    SECTION("secondary Higgs data of a synthesized slice admits a loop") {
        ComplexField one(strip, cd(1.0, 0.0));
        ComplexField u = sample_field(
            strip, [](double, double y) { return cd(std::log(2.0 * y), 0.0); });
        FixedPointData base = make_fixed_point(one, u);
        ComplexField seed = sample_field(strip, [](double x, double) {
            return 0.01 * (1.0 + 0.3 * std::exp(cd(0.0, pi * x)));
        });
        SliceSynthesisOptions opt;
        opt.dprime_sign = -1;
        opt.phi3_mode = "nilpotent";
        BBSliceData slice = synthesize_slice(base, seed, 1e-5, opt);
        LaurentConnectionFamily fam = build_family(slice, 1.0);
        SecondaryHiggsData sec = secondary_expansion(fam, slice);

        MatrixField reduced(strip, FormType::dz);
        reduced.a12 = sec.phi_tilde;
        reduced.a21 = sec.a_minus1;
        WkbLoopResult found = find_wkb_loop(reduced);
        REQUIRE(found.margin > 0.0);

        EigenBranch branch = higgs_eigen_branch(pullback_higgs(reduced, found.loop));
        REQUIRE(is_wkb(branch));
        cd Z = central_charge(branch);
        REQUIRE(std::isfinite(Z.real()));
        REQUIRE(std::abs(Z) > 1e-3);
    }
}
