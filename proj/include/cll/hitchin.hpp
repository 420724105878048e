#pragma once

// Newton solver for the scalar curvature equation
//
//     d_zbar d_z u + |phi1|^2 e^{-2u} = 0
//
// on a cylinder (periodic x, Dirichlet y rows) or rectangle (Dirichlet all
// around).  u is the metric exponent of H = diag(e^u, e^{-u}); it is kept in
// a ComplexField with enforced real values so the rest of the field plumbing
// applies unchanged.

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cmath>
#include <vector>

#include "cll/error.hpp"
#include "cll/grid.hpp"

namespace cll {

struct HitchinProblem {
    GridDomain domain;
    ComplexField phi1;
    ComplexField boundary_u; // read on Dirichlet rows only
};

struct HitchinSolveReport {
    int iterations = 0;
    std::vector<double> residual_history; // interior sup after each Newton step
};

namespace hitchin_detail {

inline void require_real(const ComplexField& f, const char* what) {
    double scale = 1.0;
    for (const cd& v : f.values) scale = std::max(scale, std::abs(v.real()));
    for (const cd& v : f.values)
        if (std::abs(v.imag()) > 1e-12 * scale)
            throw ValidationError(std::string(what) + ": field has non-real samples");
}

inline ComplexField strip_imag(const ComplexField& f) {
    ComplexField out = f;
    for (cd& v : out.values) v = cd(v.real(), 0.0);
    return out;
}

struct InteriorMap {
    std::vector<std::size_t> node_of_row;
    std::vector<int> row_of_node; // -1 on Dirichlet nodes
    int rows = 0;
};

inline InteriorMap build_interior_map(const GridDomain& d) {
    InteriorMap m;
    m.row_of_node.assign(d.size(), -1);
    for (int j = 0; j < d.ny; ++j)
        for (int i = 0; i < d.nx; ++i) {
            if (node_is_boundary(d, i, j)) continue;
            m.row_of_node[d.index(i, j)] = m.rows++;
            m.node_of_row.push_back(d.index(i, j));
        }
    return m;
}

// Assembles  (-Laplacian + diag(shift))  over interior nodes, with the
// Dirichlet contribution of a prescribed full-grid field returned in rhs_bc.
inline Eigen::SparseMatrix<double> assemble(const GridDomain& d, const InteriorMap& map,
                                            const std::vector<double>& shift,
                                            const ComplexField& dirichlet,
                                            Eigen::VectorXd& rhs_bc) {
    const double ax = 1.0 / (d.hx * d.hx);
    const double ay = 1.0 / (d.hy * d.hy);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(map.rows) * 5);
    rhs_bc = Eigen::VectorXd::Zero(map.rows);

    for (int row = 0; row < map.rows; ++row) {
        std::size_t n = map.node_of_row[row];
        int i = static_cast<int>(n % d.nx);
        int j = static_cast<int>(n / d.nx);
        trip.emplace_back(row, row, 2.0 * ax + 2.0 * ay + shift[row]);
        auto couple = [&](int ii, int jj, double a) {
            int r2 = map.row_of_node[d.index(ii, jj)];
            if (r2 >= 0)
                trip.emplace_back(row, r2, -a);
            else
                rhs_bc[row] += a * dirichlet.at(ii, jj).real();
        };
        int ip = d.periodic_x() ? (i + 1) % d.nx : i + 1;
        int im = d.periodic_x() ? (i - 1 + d.nx) % d.nx : i - 1;
        couple(ip, j, ax);
        couple(im, j, ax);
        couple(i, j + 1, ay);
        couple(i, j - 1, ay);
    }
    Eigen::SparseMatrix<double> A(map.rows, map.rows);
    A.setFromTriplets(trip.begin(), trip.end());
    return A;
}

} // namespace hitchin_detail

inline HitchinProblem make_hitchin_problem(const ComplexField& phi1,
                                           const ComplexField& boundary_u,
                                           double holomorphy_gate = 1e-6) {
    check_same_domain(phi1, boundary_u, "make_hitchin_problem");
    const GridDomain& d = phi1.domain;

    double phi1_scale = std::max(1.0, sup_norm(phi1));
    double defect = sup_norm(d_zbar(phi1));
    if (defect > holomorphy_gate * phi1_scale)
        throw GateError("make_hitchin_problem: phi1 fails the holomorphy gate (d_zbar sup " +
                        sci(defect) + " > " +
                        sci(holomorphy_gate * phi1_scale) + ")");

    for (int j = 0; j < d.ny; ++j)
        for (int i = 0; i < d.nx; ++i) {
            if (!node_is_boundary(d, i, j)) continue;
            cd v = boundary_u.at(i, j);
            if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
                throw ValidationError("make_hitchin_problem: non-finite boundary data");
            if (std::abs(v.imag()) > 1e-12 * std::max(1.0, std::abs(v.real())))
                throw ValidationError("make_hitchin_problem: boundary data must be real");
        }

    return HitchinProblem{d, phi1, boundary_u};
}

inline ComplexField hitchin_residual(const ComplexField& u, const ComplexField& phi1) {
    check_same_domain(u, phi1, "hitchin_residual");
    hitchin_detail::require_real(u, "hitchin_residual");
    ComplexField ur = hitchin_detail::strip_imag(u);
    ComplexField mixed = dzbar_dz(ur);
    ComplexField weight = abs2_field(phi1);
    ComplexField damp = detail::map(ur, [](cd v) { return std::exp(-2.0 * v.real()); });
    return mixed + weight * damp;
}

// Laplace solve with the given Dirichlet rows; the Newton initial guess.
inline ComplexField harmonic_extension(const GridDomain& d, const ComplexField& boundary_u) {
    using namespace hitchin_detail;
    InteriorMap map = build_interior_map(d);
    std::vector<double> zero_shift(map.rows, 0.0);
    Eigen::VectorXd rhs_bc;
    Eigen::SparseMatrix<double> A = assemble(d, map, zero_shift, boundary_u, rhs_bc);
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
    solver.compute(A);
    if (solver.info() != Eigen::Success)
        throw ValidationError("harmonic_extension: factorization failed");
    Eigen::VectorXd sol = solver.solve(rhs_bc);

    ComplexField u(d);
    for (int j = 0; j < d.ny; ++j)
        for (int i = 0; i < d.nx; ++i)
            if (node_is_boundary(d, i, j)) u.at(i, j) = cd(boundary_u.at(i, j).real(), 0.0);
    for (int row = 0; row < map.rows; ++row) u.values[map.node_of_row[row]] = cd(sol[row], 0.0);
    return u;
}

inline ComplexField solve_hitchin(const HitchinProblem& problem, double tol = 1e-9,
                                  int max_iter = 40, HitchinSolveReport* report = nullptr,
                                  const ComplexField* initial_guess = nullptr) {
    using namespace hitchin_detail;
    if (!(tol > 0.0)) throw ValidationError("solve_hitchin: tol must be > 0");
    if (max_iter < 1) throw ValidationError("solve_hitchin: max_iter must be >= 1");
    const GridDomain& d = problem.domain;

    ComplexField u;
    if (initial_guess) {
        check_same_domain(*initial_guess, problem.phi1, "solve_hitchin initial guess");
        require_real(*initial_guess, "solve_hitchin initial guess");
        u = strip_imag(*initial_guess);
        for (int j = 0; j < d.ny; ++j)
            for (int i = 0; i < d.nx; ++i)
                if (node_is_boundary(d, i, j))
                    u.at(i, j) = cd(problem.boundary_u.at(i, j).real(), 0.0);
    } else if (sup_norm(problem.phi1) > 0.0) {
        u = harmonic_extension(d, problem.boundary_u);
    } else {
        u = ComplexField(d);
        for (int j = 0; j < d.ny; ++j)
            for (int i = 0; i < d.nx; ++i)
                if (node_is_boundary(d, i, j))
                    u.at(i, j) = cd(problem.boundary_u.at(i, j).real(), 0.0);
    }

    InteriorMap map = build_interior_map(d);
    ComplexField weight = abs2_field(problem.phi1); // |phi1|^2, never changes

    auto interior_residual = [&](const ComplexField& uu) {
        ComplexField r = hitchin_residual(uu, problem.phi1);
        mask_boundary_rows(r);
        return r;
    };

    ComplexField res_field = interior_residual(u);
    double res = sup_norm(res_field);

    HitchinSolveReport local_report;
    HitchinSolveReport& rep = report ? *report : local_report;
    rep.iterations = 0;
    rep.residual_history.clear();

    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
    bool analyzed = false;
    int growth_streak = 0;

    while (res > tol) {
        if (rep.iterations >= max_iter)
            throw DivergenceError("solve_hitchin: residual " + sci(res) +
                                      " above tol after " + std::to_string(max_iter) +
                                      " iterations",
                                  rep.residual_history);

        // (-Lap + 8|phi1|^2 e^{-2u}) delta = 4 N(u) on interior nodes, delta = 0 on rows
        std::vector<double> shift(map.rows);
        Eigen::VectorXd rhs(map.rows);
        for (int row = 0; row < map.rows; ++row) {
            std::size_t n = map.node_of_row[row];
            double w = weight.values[n].real() * std::exp(-2.0 * u.values[n].real());
            shift[row] = 8.0 * w;
            rhs[row] = 4.0 * (res_field.values[n].real());
        }
        ComplexField zero_bc(d);
        Eigen::VectorXd rhs_bc;
        Eigen::SparseMatrix<double> A = assemble(d, map, shift, zero_bc, rhs_bc);
        if (!analyzed) {
            solver.analyzePattern(A);
            analyzed = true;
        }
        solver.factorize(A);
        if (solver.info() != Eigen::Success)
            throw DivergenceError("solve_hitchin: linear solve failed", rep.residual_history);
        Eigen::VectorXd delta = solver.solve(rhs);

        // damped update: halve the step until the residual drops (<= 10 halvings)
        double step = 1.0;
        ComplexField u_next = u;
        ComplexField res_next;
        double res_new = res;
        for (int halving = 0; halving <= 10; ++halving) {
            u_next = u;
            for (int row = 0; row < map.rows; ++row)
                u_next.values[map.node_of_row[row]] =
                    cd(u.values[map.node_of_row[row]].real() + step * delta[row], 0.0);
            res_next = interior_residual(u_next);
            res_new = sup_norm(res_next);
            if (res_new < res || halving == 10) break;
            step *= 0.5;
        }

        u = u_next;
        res_field = res_next;
        rep.residual_history.push_back(res_new);
        ++rep.iterations;

        if (res_new >= res) {
            if (++growth_streak >= 5)
                throw DivergenceError("solve_hitchin: residual non-decreasing over 5 steps",
                                      rep.residual_history);
        } else {
            growth_streak = 0;
        }
        res = res_new;
    }
    return u;
}

} // namespace cll
