#pragma once

// Loops on the surface, pullbacks of Laurent connection families, eigenvalue
// branches of the pulled-back Higgs coefficient, central charges, and
// path-ordered exponentials, culminating in the exponential-growth sweep
// q(eps) = Tr Hol(eps) * exp(-Z/eps).
//
// Holonomy convention: Hol is Y(1) for Y' = C(t) Y, Y(0) = I.  With this
// orientation the diagonal model family r*diag(1,-1) + i*pi*diag(1,-1)
// produces q(eps) -> exp(i*pi) = -1, which pins the sign once and for all.
//
// The abelian comparison value is extracted in the eigenframe V(t) of the
// Higgs pullback, propagated continuously in t: a_plus(t) is the (1,1) entry
// of V^{-1} C0 V - V^{-1} V', where C0 is the pullback of the power-0
// coefficient alone.  Over a closed loop the frame may return to minus
// itself; that sign is the wrap factor multiplying exp(mean a_plus).  The
// frame normalization drops out of the closed-loop integral, so unit
// Euclidean columns are used throughout.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "cll/error.hpp"
#include "cll/family.hpp"
#include "cll/grid.hpp"
#include "cll/io.hpp"

namespace cll {

// ---- constant-size complex 2x2 matrices -------------------------------------

struct Mat2 {
    cd a11{0.0, 0.0}, a12{0.0, 0.0}, a21{0.0, 0.0}, a22{0.0, 0.0};

    static Mat2 identity() { return {cd(1, 0), cd(0, 0), cd(0, 0), cd(1, 0)}; }

    friend Mat2 operator+(const Mat2& A, const Mat2& B) {
        return {A.a11 + B.a11, A.a12 + B.a12, A.a21 + B.a21, A.a22 + B.a22};
    }
    friend Mat2 operator-(const Mat2& A, const Mat2& B) {
        return {A.a11 - B.a11, A.a12 - B.a12, A.a21 - B.a21, A.a22 - B.a22};
    }
    friend Mat2 operator*(cd s, const Mat2& A) {
        return {s * A.a11, s * A.a12, s * A.a21, s * A.a22};
    }
    friend Mat2 operator*(const Mat2& A, const Mat2& B) {
        return {A.a11 * B.a11 + A.a12 * B.a21, A.a11 * B.a12 + A.a12 * B.a22,
                A.a21 * B.a11 + A.a22 * B.a21, A.a21 * B.a12 + A.a22 * B.a22};
    }
};

inline cd mat2_trace(const Mat2& A) { return A.a11 + A.a22; }
inline cd mat2_det(const Mat2& A) { return A.a11 * A.a22 - A.a12 * A.a21; }

inline double mat2_max_abs(const Mat2& A) {
    return std::max(std::max(std::abs(A.a11), std::abs(A.a12)),
                    std::max(std::abs(A.a21), std::abs(A.a22)));
}

inline Mat2 mat2_inverse(const Mat2& A, double degeneracy_gate = 1e-12) {
    cd det = mat2_det(A);
    if (std::abs(det) <= degeneracy_gate * std::max(1.0, mat2_max_abs(A)))
        throw DegeneracyError("mat2_inverse: matrix is singular to the gate");
    cd inv = cd(1.0, 0.0) / det;
    return {inv * A.a22, -inv * A.a12, -inv * A.a21, inv * A.a11};
}

// ---- loops -------------------------------------------------------------------

// Uniformly sampled closed curve: z[i] at t = i/nt for i = 0..nt, with z[nt]
// the closure point.  Positions are stored unwrapped, so a cylinder loop with
// winding w ends at z[0] + w * x_period.
struct Loop {
    int nt = 0;
    std::vector<cd> z;
};

template <typename F> Loop make_loop(int nt, F&& position) {
    if (nt < 8) throw ValidationError("make_loop: need at least 8 samples");
    Loop loop;
    loop.nt = nt;
    loop.z.resize(static_cast<std::size_t>(nt) + 1);
    for (int i = 0; i <= nt; ++i) loop.z[i] = position(static_cast<double>(i) / nt);
    return loop;
}

inline Loop horizontal_loop(const GridDomain& d, double y0, int nt, int orientation = +1) {
    if (!d.periodic_x())
        throw ValidationError("horizontal_loop: closed circles need a periodic domain");
    if (orientation != 1 && orientation != -1)
        throw ValidationError("horizontal_loop: orientation must be +1 or -1");
    double span = orientation * d.x_period;
    return make_loop(nt, [&](double t) { return cd(d.x_min + t * span, y0); });
}

inline Loop sine_loop(const GridDomain& d, double y0, double amp, int nt, int orientation = +1) {
    if (!d.periodic_x())
        throw ValidationError("sine_loop: closed circles need a periodic domain");
    double span = orientation * d.x_period;
    const double two_pi = 6.283185307179586476925286766559;
    return make_loop(nt, [&](double t) {
        return cd(d.x_min + t * span, y0 + amp * std::sin(two_pi * t));
    });
}

inline Loop reversed(const Loop& loop) {
    Loop out;
    out.nt = loop.nt;
    out.z.assign(loop.z.rbegin(), loop.z.rend());
    return out;
}

inline void write_loop_csv(const std::string& path, const Loop& loop) {
    std::string text = "t,x,y\n";
    for (int i = 0; i <= loop.nt; ++i) {
        text += io::format_float(static_cast<double>(i) / loop.nt);
        text += ',';
        text += io::format_float(loop.z[i].real());
        text += ',';
        text += io::format_float(loop.z[i].imag());
        text += '\n';
    }
    io::atomic_write_text(path, text);
}

inline Loop read_loop_csv(const std::string& path) {
    std::string text = io::read_text(path);
    std::vector<std::string> lines;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        std::string line = text.substr(pos, nl - pos);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
        pos = nl + 1;
    }
    if (lines.empty() || lines[0] != "t,x,y")
        throw ValidationError("read_loop_csv: expected header t,x,y in " + path);
    Loop loop;
    loop.nt = static_cast<int>(lines.size()) - 2;
    if (loop.nt < 8) throw ValidationError("read_loop_csv: too few samples in " + path);
    for (std::size_t k = 1; k < lines.size(); ++k) {
        const std::string& line = lines[k];
        std::size_t c1 = line.find(',');
        std::size_t c2 = (c1 == std::string::npos) ? std::string::npos : line.find(',', c1 + 1);
        if (c2 == std::string::npos)
            throw ValidationError("read_loop_csv: malformed row in " + path);
        double t = std::stod(line.substr(0, c1));
        double x = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
        double y = std::stod(line.substr(c2 + 1));
        double expect = static_cast<double>(k - 1) / loop.nt;
        if (std::abs(t - expect) > 1e-9)
            throw ValidationError("read_loop_csv: non-uniform t grid in " + path);
        loop.z.emplace_back(x, y);
    }
    return loop;
}

// ---- pullback ----------------------------------------------------------------

struct LoopSamples {
    GridDomain domain;
    int nt = 0;
    std::vector<cd> z;    // nt + 1 positions, closure included
    std::vector<cd> zdot; // nt velocities, centered differences
    std::vector<Mat2> C;  // full pulled-back coefficient at the given r
    std::vector<Mat2> H;  // Higgs (power +1) pullback, r-independent
    std::vector<Mat2> C0; // power-0 pullback, r-independent
    double r = 1.0;
};

namespace holonomy_detail {

inline cd bilinear(const ComplexField& f, double x, double y, double t_report) {
    const GridDomain& d = f.domain;
    double fx, fy;
    int ix, jy;
    if (d.periodic_x()) {
        double xm = std::fmod(x - d.x_min, d.x_period);
        if (xm < 0) xm += d.x_period;
        double s = xm / d.hx;
        ix = std::min(static_cast<int>(s), d.nx - 1);
        fx = s - ix;
    } else {
        double tol = 1e-9 * std::max(1.0, std::abs(d.x_max - d.x_min));
        if (x < d.x_min - tol || x > d.x_max + tol)
            throw ValidationError("pullback: loop leaves the domain at t = " + sci(t_report));
        double s = (x - d.x_min) / d.hx;
        ix = std::min(std::max(static_cast<int>(s), 0), d.nx - 2);
        fx = s - ix;
    }
    double tol = 1e-9 * std::max(1.0, std::abs(d.y_max - d.y_min));
    if (y < d.y_min - tol || y > d.y_max + tol)
        throw ValidationError("pullback: loop leaves the domain at t = " + sci(t_report));
    double s = (y - d.y_min) / d.hy;
    jy = std::min(std::max(static_cast<int>(s), 0), d.ny - 2);
    fy = s - jy;

    int ix2 = d.periodic_x() ? (ix + 1) % d.nx : ix + 1;
    cd f00 = f.at(ix, jy), f10 = f.at(ix2, jy);
    cd f01 = f.at(ix, jy + 1), f11 = f.at(ix2, jy + 1);
    return (1.0 - fx) * (1.0 - fy) * f00 + fx * (1.0 - fy) * f10 + (1.0 - fx) * fy * f01 +
           fx * fy * f11;
}

inline Mat2 sample_matrix(const MatrixField& M, cd z, double t_report) {
    return {bilinear(M.a11, z.real(), z.imag(), t_report),
            bilinear(M.a12, z.real(), z.imag(), t_report),
            bilinear(M.a21, z.real(), z.imag(), t_report),
            bilinear(M.a22, z.real(), z.imag(), t_report)};
}

inline void check_closed(const Loop& loop, const GridDomain& d) {
    if (loop.nt < 8 || loop.z.size() != static_cast<std::size_t>(loop.nt) + 1)
        throw ValidationError("pullback: loop needs nt >= 8 samples plus the closure point");
    cd gap = loop.z.back() - loop.z.front();
    double tol = 1e-9 * std::max(1.0, std::abs(d.x_period) + std::abs(d.y_max - d.y_min));
    if (std::abs(gap.imag()) > tol)
        throw ValidationError("pullback: curve is not closed (y end gap " + sci(gap.imag()) +
                              ")");
    if (d.periodic_x()) {
        double w = gap.real() / d.x_period;
        if (std::abs(w - std::round(w)) > 1e-9)
            throw ValidationError("pullback: curve is not closed modulo the x-period (gap " +
                                  sci(gap.real()) + ")");
    } else if (std::abs(gap.real()) > tol) {
        throw ValidationError("pullback: curve is not closed (x end gap " + sci(gap.real()) +
                              ")");
    }
}

inline std::vector<cd> loop_velocity(const Loop& loop) {
    // centered differences; the neighbor below sample 0 is the last sample
    // shifted by the (exact) closure offset, so windings are respected
    int nt = loop.nt;
    cd offset = loop.z[nt] - loop.z[0];
    std::vector<cd> zdot(nt);
    for (int i = 0; i < nt; ++i) {
        cd next = (i + 1 <= nt) ? loop.z[i + 1] : loop.z[1] + offset;
        cd prev = (i == 0) ? loop.z[nt - 1] - offset : loop.z[i - 1];
        zdot[i] = (next - prev) * (0.5 * nt);
    }
    return zdot;
}

} // namespace holonomy_detail

inline LoopSamples pullback_loop(const LaurentConnectionFamily& fam, const Loop& loop,
                                 double r) {
    holonomy_detail::check_closed(loop, fam.domain);
    auto [Az, Azbar] = evaluate(fam, r);

    LoopSamples s;
    s.domain = fam.domain;
    s.nt = loop.nt;
    s.z = loop.z;
    s.zdot = holonomy_detail::loop_velocity(loop);
    s.r = r;
    s.C.resize(loop.nt);
    for (int i = 0; i < loop.nt; ++i) {
        double t = static_cast<double>(i) / loop.nt;
        Mat2 mz = holonomy_detail::sample_matrix(Az, loop.z[i], t);
        Mat2 mzbar = holonomy_detail::sample_matrix(Azbar, loop.z[i], t);
        s.C[i] = s.zdot[i] * mz + std::conj(s.zdot[i]) * mzbar;
    }
    if (auto it = fam.coefficients.find(1); it != fam.coefficients.end()) {
        s.H.resize(loop.nt);
        for (int i = 0; i < loop.nt; ++i) {
            double t = static_cast<double>(i) / loop.nt;
            Mat2 mz = holonomy_detail::sample_matrix(it->second.Mz, loop.z[i], t);
            Mat2 mzbar = holonomy_detail::sample_matrix(it->second.Mzbar, loop.z[i], t);
            s.H[i] = s.zdot[i] * mz + std::conj(s.zdot[i]) * mzbar;
        }
    }
    if (auto it = fam.coefficients.find(0); it != fam.coefficients.end()) {
        s.C0.resize(loop.nt);
        for (int i = 0; i < loop.nt; ++i) {
            double t = static_cast<double>(i) / loop.nt;
            Mat2 mz = holonomy_detail::sample_matrix(it->second.Mz, loop.z[i], t);
            Mat2 mzbar = holonomy_detail::sample_matrix(it->second.Mzbar, loop.z[i], t);
            s.C0[i] = s.zdot[i] * mz + std::conj(s.zdot[i]) * mzbar;
        }
    }
    return s;
}

// pullback of a bare Higgs matrix field (dz-tagged); C and H coincide
inline LoopSamples pullback_higgs(const MatrixField& phi, const Loop& loop) {
    if (phi.form != FormType::dz)
        throw ValidationError("pullback_higgs: expected a dz-tagged matrix field");
    holonomy_detail::check_closed(loop, phi.domain());
    LoopSamples s;
    s.domain = phi.domain();
    s.nt = loop.nt;
    s.z = loop.z;
    s.zdot = holonomy_detail::loop_velocity(loop);
    s.C.resize(loop.nt);
    for (int i = 0; i < loop.nt; ++i) {
        double t = static_cast<double>(i) / loop.nt;
        s.C[i] = s.zdot[i] * holonomy_detail::sample_matrix(phi, loop.z[i], t);
    }
    s.H = s.C;
    return s;
}

// ---- eigenvalue branch -------------------------------------------------------

struct EigenBranch {
    std::vector<cd> mu;
    bool monodromy_flip = false; // branch returns to -mu(0) after one circuit
    double min_re = 0.0;
    double min_abs_det = 0.0;
};

inline EigenBranch higgs_eigen_branch(const LoopSamples& samples,
                                      double degeneracy_gate = 1e-8) {
    if (samples.H.empty())
        throw ValidationError("higgs_eigen_branch: samples carry no Higgs pullback");
    const auto& H = samples.H;
    double scale = 0.0;
    for (const Mat2& M : H) scale = std::max(scale, mat2_max_abs(M));
    double trace_tol = 1e-8 * std::max(1.0, scale);
    double det_gate = degeneracy_gate * std::max(1.0, scale) * std::max(1.0, scale);

    EigenBranch out;
    out.mu.resize(H.size());
    out.min_abs_det = 1e300;
    for (std::size_t i = 0; i < H.size(); ++i) {
        if (std::abs(mat2_trace(H[i])) > trace_tol)
            throw ValidationError("higgs_eigen_branch: pullback is not trace-free at sample " +
                                  std::to_string(i));
        cd det = mat2_det(H[i]);
        out.min_abs_det = std::min(out.min_abs_det, std::abs(det));
        if (std::abs(det) < det_gate)
            throw DegeneracyError(
                "higgs_eigen_branch: Higgs pullback is nilpotent to the gate at sample " +
                std::to_string(i) + " (|det| = " + sci(std::abs(det)) + " < " + sci(det_gate) +
                "); eigenvalues do not separate");
        out.mu[i] = std::sqrt(-det);
    }

    // orient the branch at t = 0, then continue by nearest choice
    cd& mu0 = out.mu[0];
    if (mu0.real() < 0.0 || (mu0.real() == 0.0 && mu0.imag() < 0.0)) mu0 = -mu0;
    for (std::size_t i = 1; i < out.mu.size(); ++i) {
        const cd prev = out.mu[i - 1];
        if (std::abs(out.mu[i] - prev) > std::abs(out.mu[i] + prev)) out.mu[i] = -out.mu[i];
        double jump = std::abs(out.mu[i] - prev);
        if (jump > 0.8 * (std::abs(out.mu[i]) + std::abs(prev)))
            throw ValidationError("higgs_eigen_branch: branch tracking failed near t = " +
                                  sci(static_cast<double>(i) / samples.nt) +
                                  "; refine the loop sampling");
    }
    // wrap: continuing past the last sample must land on +mu(0)
    const cd last = out.mu.back();
    cd wrap = out.mu[0];
    if (std::abs(wrap - last) > std::abs(wrap + last)) {
        out.monodromy_flip = true;
    }

    out.min_re = out.mu[0].real();
    for (const cd& m : out.mu) out.min_re = std::min(out.min_re, m.real());
    return out;
}

inline bool is_wkb(const EigenBranch& branch) {
    return !branch.monodromy_flip && branch.min_re > 0.0;
}

// trapezoid rule on the uniform periodic grid collapses to the mean
inline cd central_charge(const EigenBranch& branch) {
    if (branch.mu.empty()) throw ValidationError("central_charge: empty branch");
    cd sum(0.0, 0.0);
    for (const cd& m : branch.mu) sum += m;
    return sum / static_cast<double>(branch.mu.size());
}

// ---- path-ordered exponential --------------------------------------------------

struct HolonomyResult {
    Mat2 Y;                 // holonomy = exp(log_scale) * Y
    double log_scale = 0.0;
    bool rescaled = false;
    int steps = 0;
    double sup_c = 0.0;

    Mat2 matrix() const {
        if (log_scale + std::log(std::max(mat2_max_abs(Y), 1e-300)) > 700.0)
            throw GateError("holonomy matrix exceeds double range; use trace accessors");
        return std::exp(cd(log_scale, 0.0)) * Y;
    }
    // Tr(Hol) * exp(extra_exponent), exponents combined before exponentiating
    cd trace(cd extra_exponent = cd(0.0, 0.0)) const {
        return mat2_trace(Y) * std::exp(cd(log_scale, 0.0) + extra_exponent);
    }
    double log_abs_trace() const { return std::log(std::abs(mat2_trace(Y))) + log_scale; }
};

// |det Hol - 1| measured in log space so rescaled results stay meaningful
inline double sl2_defect(const HolonomyResult& h) {
    cd det = mat2_det(h.Y);
    if (det == cd(0.0, 0.0)) return 1e300;
    double logmod = std::log(std::abs(det)) + 2.0 * h.log_scale;
    double arg = std::arg(det);
    return std::hypot(logmod, arg);
}

inline HolonomyResult path_ordered_exp(const std::function<Mat2(double)>& C, int substeps) {
    if (substeps < 1) throw ValidationError("path_ordered_exp: substeps must be positive");

    // step control: steps per unit t >= 20 * sup|C|
    int scan = std::max(substeps, 128);
    double sup_c = 0.0;
    for (int k = 0; k <= scan; ++k)
        sup_c = std::max(sup_c, mat2_max_abs(C(static_cast<double>(k) / scan)));
    if (!std::isfinite(sup_c))
        throw ValidationError("path_ordered_exp: coefficient function is not finite");
    int steps = std::max({substeps, 64, static_cast<int>(std::ceil(20.0 * sup_c))});
    if (steps > 4000000)
        throw ValidationError("path_ordered_exp: coefficient too stiff (needs " +
                              std::to_string(steps) + " steps)");

    HolonomyResult out;
    out.steps = steps;
    out.sup_c = sup_c;
    Mat2 Y = Mat2::identity();
    const double h = 1.0 / steps;
    for (int i = 0; i < steps; ++i) {
        double t = static_cast<double>(i) * h;
        Mat2 c1 = C(t);
        Mat2 cm = C(t + 0.5 * h);
        Mat2 c2 = C(t + h);
        Mat2 k1 = c1 * Y;
        Mat2 k2 = cm * (Y + cd(0.5 * h, 0.0) * k1);
        Mat2 k3 = cm * (Y + cd(0.5 * h, 0.0) * k2);
        Mat2 k4 = c2 * (Y + cd(h, 0.0) * k3);
        Y = Y + cd(h / 6.0, 0.0) * (k1 + cd(2.0, 0.0) * k2 + cd(2.0, 0.0) * k3 + k4);
        double m = mat2_max_abs(Y);
        if (m > 1e150) {
            Y = cd(1.0 / m, 0.0) * Y;
            out.log_scale += std::log(m);
            out.rescaled = true;
        }
    }
    out.Y = Y;
    return out;
}

// periodic cubic (Catmull-Rom) interpolation of sampled coefficients, so the
// integrator sees a smooth function between loop samples
inline std::function<Mat2(double)> sample_interpolator(std::vector<Mat2> samples) {
    if (samples.size() < 4)
        throw ValidationError("sample_interpolator: need at least 4 samples");
    return [data = std::move(samples)](double t) {
        int n = static_cast<int>(data.size());
        double tm = t - std::floor(t);
        double s = tm * n;
        int i = std::min(static_cast<int>(s), n - 1);
        double u = s - i;
        auto at = [&](int k) -> const Mat2& { return data[((k % n) + n) % n]; };
        const Mat2 &p0 = at(i - 1), &p1 = at(i), &p2 = at(i + 1), &p3 = at(i + 2);
        Mat2 term = p1 + cd(0.5 * u, 0.0) * (p2 - p0);
        Mat2 q2 = cd(2.0, 0.0) * p0 - cd(5.0, 0.0) * p1 + cd(4.0, 0.0) * p2 - p3;
        Mat2 q3 = cd(3.0, 0.0) * (p1 - p2) + (p3 - p0);
        return term + cd(0.5 * u * u, 0.0) * q2 + cd(0.5 * u * u * u, 0.0) * q3;
    };
}

inline HolonomyResult path_ordered_exp(const LoopSamples& samples, int substeps = 0) {
    int n = std::max(substeps, samples.nt);
    return path_ordered_exp(sample_interpolator(samples.C), n);
}

// ---- WKB sweep -----------------------------------------------------------------

struct WkbSweepRow {
    double eps = 0.0;
    cd q;
    double abs_dev = 0.0;      // |q / hol_aplus - 1|
    double log_abs_trace = 0.0;
};

struct WkbSweepReport {
    cd Z;
    cd hol_aplus;
    double frame_wrap = 1.0; // +1 or -1
    double min_re_mu = 0.0;
    std::vector<WkbSweepRow> rows;
    cd q_extrapolated;
};

namespace holonomy_detail {

struct Frame {
    std::vector<Mat2> V; // columns: mu-eigenvector, (-mu)-eigenvector
    double wrap_plus = 1.0;
    double wrap_minus = 1.0;
};

// right-multiply by diag(c1, c2): scales column 1 by c1 and column 2 by c2
inline Mat2 scale_columns(const Mat2& M, double c1, double c2) {
    return {c1 * M.a11, c2 * M.a12, c1 * M.a21, c2 * M.a22};
}

inline std::pair<cd, cd> eigvec(const Mat2& H, cd mu) {
    // kernel of H - mu: the two candidate columns are proportional; take the
    // better conditioned one
    cd v1a = H.a12, v1b = mu - H.a11;
    cd v2a = mu + H.a11 /* = mu - a22 for trace-free H */, v2b = H.a21;
    double n1 = std::abs(v1a) + std::abs(v1b);
    double n2 = std::abs(v2a) + std::abs(v2b);
    cd a = (n1 >= n2) ? v1a : v2a;
    cd b = (n1 >= n2) ? v1b : v2b;
    double n = std::sqrt(std::norm(a) + std::norm(b));
    if (!(n > 0.0)) throw DegeneracyError("eigenframe: vanishing eigenvector candidate");
    return {a / n, b / n};
}

inline Frame continuous_frame(const LoopSamples& samples, const EigenBranch& branch) {
    int nt = samples.nt;
    Frame fr;
    fr.V.resize(nt);
    cd pa, pb, qa, qb; // previous columns
    for (int i = 0; i < nt; ++i) {
        auto [va, vb] = eigvec(samples.H[i], branch.mu[i]);
        auto [wa, wb] = eigvec(samples.H[i], -branch.mu[i]);
        if (i > 0) {
            if ((std::conj(pa) * va + std::conj(pb) * vb).real() < 0.0) { va = -va; vb = -vb; }
            if ((std::conj(qa) * wa + std::conj(qb) * wb).real() < 0.0) { wa = -wa; wb = -wb; }
        }
        pa = va; pb = vb; qa = wa; qb = wb;
        fr.V[i] = {va, wa, vb, wb};
        if (std::abs(mat2_det(fr.V[i])) < 1e-8)
            throw DegeneracyError("eigenframe: eigenvectors nearly parallel at sample " +
                                  std::to_string(i));
    }
    // the frame at t = 1 is the frame at t = 0 up to a sign per column
    auto [va, vb] = eigvec(samples.H[0], branch.mu[0]);
    auto [wa, wb] = eigvec(samples.H[0], -branch.mu[0]);
    fr.wrap_plus = ((std::conj(pa) * va + std::conj(pb) * vb).real() < 0.0) ? -1.0 : 1.0;
    fr.wrap_minus = ((std::conj(qa) * wa + std::conj(qb) * wb).real() < 0.0) ? -1.0 : 1.0;
    return fr;
}

} // namespace holonomy_detail

inline WkbSweepReport wkb_sweep(const LaurentConnectionFamily& fam, const Loop& loop,
                                const std::vector<double>& eps_list, int substeps = 512) {
    if (eps_list.empty()) throw ValidationError("wkb_sweep: empty epsilon list");
    for (std::size_t k = 0; k < eps_list.size(); ++k) {
        if (!(eps_list[k] > 0.0))
            throw ValidationError("wkb_sweep: epsilon values must be positive");
        if (k > 0 && !(eps_list[k] < eps_list[k - 1]))
            throw ValidationError("wkb_sweep: epsilon list must decrease strictly");
    }

    LoopSamples base = pullback_loop(fam, loop, 1.0);
    EigenBranch branch = higgs_eigen_branch(base);
    if (!is_wkb(branch))
        throw GateError("wkb_sweep: not a WKB loop for this family (min Re mu = " +
                        sci(branch.min_re) +
                        (branch.monodromy_flip ? ", branch has monodromy" : "") +
                        "); Re mu > 0 is required at every sample");

    WkbSweepReport rep;
    rep.Z = central_charge(branch);
    rep.min_re_mu = branch.min_re;

    // abelian comparison value on the mu-eigenline
    {
        holonomy_detail::Frame fr = holonomy_detail::continuous_frame(base, branch);
        int nt = base.nt;
        if (base.C0.empty()) base.C0.assign(nt, Mat2{});
        cd mean_aplus(0.0, 0.0);
        for (int i = 0; i < nt; ++i) {
            const Mat2& V = fr.V[i];
            // centered derivative of the frame, per-column wrap signs at the seam
            Mat2 next = fr.V[(i + 1) % nt];
            Mat2 prev = fr.V[(i - 1 + nt) % nt];
            if (i + 1 == nt)
                next = holonomy_detail::scale_columns(next, fr.wrap_plus, fr.wrap_minus);
            if (i == 0)
                prev = holonomy_detail::scale_columns(prev, fr.wrap_plus, fr.wrap_minus);
            Mat2 vdot = cd(0.5 * nt, 0.0) * (next - prev);
            Mat2 Vinv = mat2_inverse(V);
            Mat2 a = Vinv * (base.C0[i] * V - vdot);
            mean_aplus += a.a11;
        }
        mean_aplus = mean_aplus / static_cast<double>(nt);
        rep.frame_wrap = fr.wrap_plus;
        rep.hol_aplus = cd(fr.wrap_plus, 0.0) * std::exp(mean_aplus);
    }

    for (double eps : eps_list) {
        LoopSamples s = pullback_loop(fam, loop, 1.0 / eps);
        HolonomyResult hol = path_ordered_exp(s, substeps);
        WkbSweepRow row;
        row.eps = eps;
        row.q = hol.trace(-rep.Z / eps);
        row.abs_dev = std::abs(row.q / rep.hol_aplus - 1.0);
        row.log_abs_trace = hol.log_abs_trace();
        rep.rows.push_back(row);
    }

    std::size_t n = rep.rows.size();
    rep.q_extrapolated = (n >= 2) ? (2.0 * rep.rows[n - 1].q - rep.rows[n - 2].q)
                                  : rep.rows[0].q;
    return rep;
}

inline void write_sweep_csv(const std::string& path, const WkbSweepReport& rep) {
    std::string text = "eps,re_q,im_q,abs_dev,log_abs_trace\n";
    for (const WkbSweepRow& row : rep.rows) {
        text += io::format_float(row.eps);
        text += ',';
        text += io::format_float(row.q.real());
        text += ',';
        text += io::format_float(row.q.imag());
        text += ',';
        text += io::format_float(row.abs_dev);
        text += ',';
        text += io::format_float(row.log_abs_trace);
        text += '\n';
    }
    io::atomic_write_text(path, text);
}

// ---- WKB loop search -----------------------------------------------------------

struct WkbLoopResult {
    Loop loop;
    double margin = 0.0; // min Re mu along the found loop
};

// Heuristic scan: horizontal circles in both orientations, then sinusoidal
// perturbations.  Existence in general is not attempted; a failed scan
// reports the best margin it saw.
inline WkbLoopResult find_wkb_loop(const MatrixField& higgs, int nt = 128,
                                   double margin_factor = 0.05) {
    const GridDomain& d = higgs.domain();
    if (!d.periodic_x())
        throw ValidationError("find_wkb_loop: the scan needs a periodic domain");

    double height = d.y_max - d.y_min;
    double best_margin = -1e300;
    bool any_branch = false;
    for (double frac : {0.5, 0.35, 0.65, 0.25, 0.75}) {
        double y0 = d.y_min + frac * height;
        for (int orient : {+1, -1}) {
            for (double amp_frac : {0.0, 0.08, 0.16}) {
                if (frac - amp_frac < 0.05 || frac + amp_frac > 0.95) continue;
                Loop loop = (amp_frac == 0.0)
                                ? horizontal_loop(d, y0, nt, orient)
                                : sine_loop(d, y0, amp_frac * height, nt, orient);
                EigenBranch branch;
                try {
                    branch = higgs_eigen_branch(pullback_higgs(higgs, loop));
                } catch (const DegeneracyError&) {
                    continue;
                }
                any_branch = true;
                double sup_mu = 0.0;
                for (const cd& m : branch.mu) sup_mu = std::max(sup_mu, std::abs(m));
                if (branch.monodromy_flip) continue;
                best_margin = std::max(best_margin, branch.min_re);
                if (branch.min_re >= margin_factor * sup_mu)
                    return {loop, branch.min_re};
            }
        }
    }
    if (!any_branch)
        throw DegeneracyError("find_wkb_loop: Higgs field is nilpotent to the gate on every "
                              "scanned loop");
    throw GateError("find_wkb_loop: scan exhausted without a WKB loop (best margin " +
                    sci(best_margin) + ")");
}

} // namespace cll
