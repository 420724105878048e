// cll: batch front end over the conformal-limit laboratory headers.
//
// One subcommand per pipeline stage plus the end-to-end `closedness` run.
// Every invocation writes a self-describing report bundle into --out:
// manifest.txt carries the results, the seed, and a copy of the parsed
// configuration; tables are comma-separated with fixed headers.
//
// Exit codes: 0 success, 2 configuration/validation problems, 3 gate
// refusals, 4 numerical divergence.  Failures leave a machine-readable
// record in <out>/error.txt and on stderr.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "cll/config.hpp"
#include "cll/family.hpp"
#include "cll/hitchin.hpp"
#include "cll/holonomy.hpp"
#include "cll/identity.hpp"
#include "cll/io.hpp"
#include "cll/slice.hpp"

namespace fs = std::filesystem;
using namespace cll;

namespace {

struct RunContext {
    std::string command;
    Config config;
    fs::path out;
    fs::path config_dir; // base for relative paths inside the config
    unsigned long long seed = 0;
    int threads = 1;
    bool verbose = false;

    void note(const std::string& line) const {
        if (verbose) std::cout << "[cll " << command << "] " << line << "\n";
    }

    // strict typo guard, called once all config reads for a command are done
    void require_fully_consumed() const {
        std::vector<std::string> unread = config.unread_keys();
        if (unread.empty()) return;
        std::string list;
        for (const std::string& k : unread) {
            if (!list.empty()) list += ", ";
            list += "`" + k + "`";
        }
        throw ConfigError(config.origin() + ": unknown configuration keys: " + list);
    }

    fs::path resolve(const std::string& p) const {
        fs::path path(p);
        return path.is_relative() ? config_dir / path : path;
    }
};

io::Manifest base_manifest(const RunContext& rc) {
    io::Manifest m;
    io::manifest_set(m, "command", rc.command);
    io::manifest_set(m, "seed", std::to_string(rc.seed));
    io::manifest_set(m, "threads", std::to_string(rc.threads));
    return m;
}

// results first, then the verbatim key-value copy of the configuration
void finish_manifest(const RunContext& rc, io::Manifest m) {
    for (const auto& kv : rc.config.entries())
        io::manifest_set(m, "config." + kv.first, kv.second);
    io::write_manifest(rc.out / "manifest.txt", m);
}

void set_float(io::Manifest& m, const std::string& key, double v) {
    io::manifest_set(m, key, io::format_float(v));
}

std::string one_line(std::string s) {
    for (char& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

// Sweep lists must be strictly monotone (either direction); the epsilon list
// is additionally pinned to strictly decreasing by the sweep itself.
void require_strictly_monotone(const std::string& key, const std::vector<double>& v) {
    if (v.empty()) throw ConfigError(key + ": empty sweep list");
    bool inc = true, dec = true;
    for (std::size_t k = 1; k < v.size(); ++k) {
        inc = inc && v[k] > v[k - 1];
        dec = dec && v[k] < v[k - 1];
    }
    if (!inc && !dec) throw ConfigError(key + ": sweep list is not strictly monotone");
}

// the config invariant: every referenced file exists before any work starts
void check_referenced_files(const RunContext& rc) {
    for (const auto& kv : rc.config.entries()) {
        const std::string& key = kv.first;
        bool is_file = key.size() > 5 && key.compare(key.size() - 5, 5, ".file") == 0;
        if (is_file) {
            fs::path p = rc.resolve(kv.second);
            if (!fs::exists(p))
                throw ConfigError(rc.config.origin() + ": key `" + key +
                                  "` references a missing file: " + p.string());
        } else if (key == "slice.bundle") {
            fs::path p = rc.resolve(kv.second);
            if (!fs::exists(p / "manifest.txt"))
                throw ConfigError(rc.config.origin() +
                                  ": slice.bundle has no manifest.txt: " + p.string());
        }
    }
}

// ---- input assembly --------------------------------------------------------

ComplexField load_field(const RunContext& rc, const std::string& name, const GridDomain& d) {
    const Config& cfg = rc.config;
    bool from_file = cfg.has(name + ".file");
    bool from_expr = cfg.has(name + ".expr");
    if (from_file && from_expr)
        throw ConfigError(cfg.origin() + ": field `" + name +
                          "` has both .file and .expr sources; choose one");
    if (from_file)
        return io::read_field_csv(rc.resolve(cfg.get_string(name + ".file")), d);
    if (from_expr)
        return cfg.get_expression(name + ".expr").sample(d);
    throw ConfigError(cfg.origin() + ": field `" + name + "` needs `" + name + ".expr` or `" +
                      name + ".file`");
}

struct SliceSource {
    BBSliceData slice;
    SliceSynthesisReport synthesis; // meaningful only when synthesized
    bool synthesized = false;
    double gate_floor = 1e-6; // the residual floor the slice was gated at
};

// Either re-load a make-slice bundle (re-gating it on the way in) or
// synthesize from a fixed point and a seed field.
SliceSource obtain_slice(const RunContext& rc) {
    const Config& cfg = rc.config;

    if (cfg.has("slice.bundle")) {
        fs::path dir = rc.resolve(cfg.get_string("slice.bundle"));
        io::Manifest m = io::read_manifest(dir / "manifest.txt");
        GridDomain d = io::get_domain(m);
        auto field = [&](const char* n) {
            return io::read_field_csv(dir / (std::string(n) + ".csv"), d);
        };
        const std::string* sign = io::manifest_find(m, "slice.dprime_sign");
        const std::string* gate = io::manifest_find(m, "slice.delta_gate");
        double floor = gate ? std::strtod(gate->c_str(), nullptr) : 1e-6;
        rc.note("loading slice bundle " + dir.string());
        FixedPointData base = make_fixed_point(field("phi1"), field("u"), floor);
        BBSliceData s = make_bb_slice(base, field("phi2"), field("phi3"), field("b"),
                                      (sign && *sign == "-1") ? -1 : +1, floor);
        return SliceSource{std::move(s), {}, false, floor};
    }

    GridDomain d = cfg.get_domain();
    ComplexField phi1 = load_field(rc, "phi1", d);
    ComplexField u = load_field(rc, "u", d);
    double base_floor = cfg.get_double("fixed_point.gate_floor", 1e-6);
    FixedPointData base = make_fixed_point(phi1, u, base_floor);

    ComplexField seed = load_field(rc, "seed", d);
    SliceSynthesisOptions opt;
    opt.dprime_sign = static_cast<int>(cfg.get_int("slice.dprime_sign", +1));
    opt.phi3_mode = cfg.get_string("slice.phi3_mode", "dbar");
    if (cfg.has("slice.phi3_addition"))
        opt.phi3_addition = cfg.get_expression("slice.phi3_addition");
    double delta_gate = cfg.get_double("slice.delta_gate", 1e-6);

    rc.note("synthesizing slice on " + std::to_string(d.nx) + "x" + std::to_string(d.ny));
    SliceSource out;
    out.slice = synthesize_slice(base, seed, delta_gate, opt, &out.synthesis);
    out.synthesized = true;
    out.gate_floor = delta_gate;
    return out;
}

void put_slice_results(io::Manifest& m, const SliceSource& src) {
    io::manifest_set(m, "slice.dprime_sign", std::to_string(src.slice.dprime_sign));
    if (!src.synthesized) return;
    set_float(m, "slice.r1", src.synthesis.r1);
    set_float(m, "slice.r2", src.synthesis.r2);
    set_float(m, "slice.r3", src.synthesis.r3);
    set_float(m, "slice.r4", src.synthesis.r4);
    io::manifest_set(m, "slice.u_clamped", src.synthesis.u_clamped ? "true" : "false");
}

// Loop selection: an explicit CSV, an analytic circle, or the WKB scan over
// the given Higgs field (only offered where one is in play).
Loop obtain_loop(const RunContext& rc, const GridDomain& d, const MatrixField* search_higgs,
                 double* found_margin) {
    const Config& cfg = rc.config;
    if (found_margin) *found_margin = -1.0;

    if (cfg.has("loop.file")) {
        if (cfg.has("loop.kind"))
            throw ConfigError(cfg.origin() + ": loop.file and loop.kind are exclusive");
        return read_loop_csv(rc.resolve(cfg.get_string("loop.file")).string());
    }

    std::string kind = cfg.get_string("loop.kind", search_higgs ? "find" : "horizontal");
    int nt = static_cast<int>(cfg.get_int("loop.nt", kind == "find" ? 128 : 256));

    if (kind == "find") {
        if (!search_higgs)
            throw ConfigError(cfg.origin() +
                              ": loop.kind = find needs a Higgs field (use wkb-sweep or "
                              "closedness, or give an explicit loop)");
        double mf = cfg.get_double("loop.margin_factor", 0.05);
        rc.note("scanning for a WKB loop");
        WkbLoopResult found = find_wkb_loop(*search_higgs, nt, mf);
        rc.note("loop found with margin " + sci(found.margin));
        if (found_margin) *found_margin = found.margin;
        return found.loop;
    }

    double y0 = cfg.has("loop.y0")
                    ? cfg.get_double("loop.y0")
                    : d.y_min + cfg.get_double("loop.y_fraction", 0.5) * (d.y_max - d.y_min);
    int orient = static_cast<int>(cfg.get_int("loop.orientation", +1));
    if (kind == "horizontal") return horizontal_loop(d, y0, nt, orient);
    if (kind == "sine") return sine_loop(d, y0, cfg.get_double("loop.amplitude"), nt, orient);
    throw ConfigError(cfg.origin() + ": unknown loop.kind `" + kind + "`");
}

// ---- commands ----------------------------------------------------------------

void cmd_solve_hitchin(const RunContext& rc) {
    const Config& cfg = rc.config;
    GridDomain d = cfg.get_domain();
    ComplexField phi1 = load_field(rc, "phi1", d);
    ComplexField boundary_u = load_field(rc, "boundary_u", d);
    double holo_gate = cfg.get_double("hitchin.holomorphy_gate", 1e-6);
    double tol = cfg.get_double("hitchin.tol", 1e-9);
    int max_iter = static_cast<int>(cfg.get_int("hitchin.max_iter", 40));
    rc.require_fully_consumed();

    HitchinProblem problem = make_hitchin_problem(phi1, boundary_u, holo_gate);
    rc.note("Newton solve on " + std::to_string(d.nx) + "x" + std::to_string(d.ny) +
            " to tol " + sci(tol));
    HitchinSolveReport report;
    ComplexField u = solve_hitchin(problem, tol, max_iter, &report);

    io::write_field_csv(rc.out / "u.csv", u);
    std::vector<std::string> lines;
    for (std::size_t k = 0; k < report.residual_history.size(); ++k)
        lines.push_back(io::record_line({{"iter", std::to_string(k + 1)},
                                         {"residual", io::format_float(report.residual_history[k])}}));
    io::write_records(rc.out / "residuals.txt", lines);

    io::Manifest m = base_manifest(rc);
    io::put_domain(m, d);
    io::manifest_set(m, "iterations", std::to_string(report.iterations));
    set_float(m, "final_residual", sup_norm_interior(hitchin_residual(u, phi1)));
    finish_manifest(rc, std::move(m));
}

void write_slice_bundle(const RunContext& rc, const SliceSource& src, io::Manifest m) {
    const BBSliceData& s = src.slice;
    io::write_field_csv(rc.out / "phi1.csv", s.base.phi1);
    io::write_field_csv(rc.out / "u.csv", s.base.u);
    io::write_field_csv(rc.out / "phi2.csv", s.phi2);
    io::write_field_csv(rc.out / "phi3.csv", s.phi3);
    io::write_field_csv(rc.out / "b.csv", s.b);
    finish_manifest(rc, std::move(m));
}

void cmd_make_slice(const RunContext& rc) {
    SliceSource src = obtain_slice(rc);
    rc.require_fully_consumed();

    io::Manifest m = base_manifest(rc);
    io::put_domain(m, src.slice.base.domain);
    put_slice_results(m, src);
    // the key a later slice.bundle load reads back to re-gate the fields
    set_float(m, "slice.delta_gate", src.gate_floor);
    write_slice_bundle(rc, src, std::move(m));
}

void cmd_family(const RunContext& rc) {
    const Config& cfg = rc.config;
    SliceSource src = obtain_slice(rc);
    double hbar = cfg.get_double("family.hbar", 1.0);
    std::vector<double> rs = cfg.has("family.r_values") ? cfg.get_double_list("family.r_values")
                                                        : std::vector<double>{1.0, 10.0};
    require_strictly_monotone("family.r_values", rs);
    rc.require_fully_consumed();

    LaurentConnectionFamily fam = build_family(src.slice, hbar);
    std::string table = "r,sup_curvature\n";
    for (double r : rs) {
        double sup = sup_norm_interior(curvature_residual(fam, r), 2);
        rc.note("curvature sup at r = " + sci(r) + ": " + sci(sup));
        table += io::format_float(r);
        table += ',';
        table += io::format_float(sup);
        table += '\n';
    }
    io::atomic_write_text(rc.out / "curvature.csv", table);

    io::Manifest m = base_manifest(rc);
    io::put_domain(m, fam.domain);
    put_slice_results(m, src);
    set_float(m, "family.hbar", hbar);
    io::manifest_set(m, "family.r_count", std::to_string(rs.size()));
    finish_manifest(rc, std::move(m));
}

void cmd_holonomy(const RunContext& rc) {
    const Config& cfg = rc.config;
    SliceSource src = obtain_slice(rc);
    double hbar = cfg.get_double("family.hbar", 1.0);
    double r = cfg.get_double("holonomy.r", 1.0);
    int substeps = static_cast<int>(cfg.get_int("holonomy.substeps", 0));

    LaurentConnectionFamily fam = build_family(src.slice, hbar);
    const MatrixField& higgs = fam.coefficients.at(1).Mz;
    double margin = -1.0;
    Loop loop = obtain_loop(rc, fam.domain, &higgs, &margin);
    rc.require_fully_consumed();

    LoopSamples samples = pullback_loop(fam, loop, r);
    HolonomyResult hol = path_ordered_exp(samples, substeps);

    write_loop_csv((rc.out / "loop.csv").string(), loop);
    std::string table = "r,re_trace,im_trace,log_abs_trace,sl2_defect,steps\n";
    double nan = std::numeric_limits<double>::quiet_NaN();
    cd tr = hol.rescaled ? cd(nan, nan) : hol.trace();
    table += io::format_float(r);
    table += ',';
    table += io::format_float(tr.real());
    table += ',';
    table += io::format_float(tr.imag());
    table += ',';
    table += io::format_float(hol.log_abs_trace());
    table += ',';
    table += io::format_float(hol.rescaled ? nan : sl2_defect(hol));
    table += ',';
    table += std::to_string(hol.steps);
    table += '\n';
    io::atomic_write_text(rc.out / "holonomy.csv", table);

    io::Manifest m = base_manifest(rc);
    io::put_domain(m, fam.domain);
    put_slice_results(m, src);
    set_float(m, "holonomy.r", r);
    io::manifest_set(m, "holonomy.steps", std::to_string(hol.steps));
    io::manifest_set(m, "holonomy.rescaled", hol.rescaled ? "true" : "false");
    set_float(m, "holonomy.log_abs_trace", hol.log_abs_trace());
    if (margin >= 0.0) set_float(m, "loop.margin", margin);
    // optional diagnostics; a loop without a usable eigenvalue branch still
    // has a perfectly good holonomy
    try {
        EigenBranch branch = higgs_eigen_branch(samples);
        cd Z = central_charge(branch);
        io::manifest_set(m, "wkb", is_wkb(branch) ? "true" : "false");
        set_float(m, "re_Z", Z.real());
        set_float(m, "im_Z", Z.imag());
    } catch (const Error& e) {
        io::manifest_set(m, "wkb", "false");
        io::manifest_set(m, "branch_note", one_line(e.what()));
    }
    finish_manifest(rc, std::move(m));
}

void put_sweep_results(io::Manifest& m, const WkbSweepReport& rep) {
    set_float(m, "re_Z", rep.Z.real());
    set_float(m, "im_Z", rep.Z.imag());
    set_float(m, "re_hol_aplus", rep.hol_aplus.real());
    set_float(m, "im_hol_aplus", rep.hol_aplus.imag());
    set_float(m, "frame_wrap", rep.frame_wrap);
    set_float(m, "min_re_mu", rep.min_re_mu);
    set_float(m, "re_q_extrapolated", rep.q_extrapolated.real());
    set_float(m, "im_q_extrapolated", rep.q_extrapolated.imag());
}

// growth table: eps * log|Tr| against Re Z, row per sweep point
std::string growth_table(const WkbSweepReport& rep, double& last_gap, bool& monotone) {
    double re_z = rep.Z.real();
    std::string table = "eps,growth,abs_gap\n";
    double prev = std::numeric_limits<double>::infinity();
    monotone = true;
    last_gap = 0.0;
    for (const WkbSweepRow& row : rep.rows) {
        double growth = row.eps * row.log_abs_trace;
        double gap = std::abs(growth - re_z);
        if (gap > prev) monotone = false;
        prev = gap;
        last_gap = gap;
        table += io::format_float(row.eps);
        table += ',';
        table += io::format_float(growth);
        table += ',';
        table += io::format_float(gap);
        table += '\n';
    }
    return table;
}

void cmd_wkb_sweep(const RunContext& rc) {
    const Config& cfg = rc.config;
    SliceSource src = obtain_slice(rc);
    double hbar = cfg.get_double("family.hbar", 1.0);
    std::vector<double> eps = cfg.get_double_list("wkb.eps");
    int substeps = static_cast<int>(cfg.get_int("wkb.substeps", 512));

    LaurentConnectionFamily fam = build_family(src.slice, hbar);
    const MatrixField& higgs = fam.coefficients.at(1).Mz;
    double margin = -1.0;
    Loop loop = obtain_loop(rc, fam.domain, &higgs, &margin);
    rc.require_fully_consumed();

    rc.note("sweeping " + std::to_string(eps.size()) + " epsilon values");
    WkbSweepReport rep = wkb_sweep(fam, loop, eps, substeps);

    write_loop_csv((rc.out / "loop.csv").string(), loop);
    write_sweep_csv((rc.out / "sweep.csv").string(), rep);
    double last_gap = 0.0;
    bool monotone = true;
    io::atomic_write_text(rc.out / "growth.csv", growth_table(rep, last_gap, monotone));

    io::Manifest m = base_manifest(rc);
    io::put_domain(m, fam.domain);
    put_slice_results(m, src);
    put_sweep_results(m, rep);
    if (margin >= 0.0) set_float(m, "loop.margin", margin);
    set_float(m, "growth_rate", eps.back() * rep.rows.back().log_abs_trace);
    set_float(m, "growth_gap", last_gap);
    io::manifest_set(m, "growth_monotone", monotone ? "true" : "false");
    finish_manifest(rc, std::move(m));
}

void cmd_secondary(const RunContext& rc) {
    const Config& cfg = rc.config;
    SliceSource src = obtain_slice(rc);
    double hbar = cfg.get_double("family.hbar", 1.0);
    double gate_floor = cfg.get_double("secondary.gate_floor", 1e-6);
    std::vector<double> rs = cfg.has("secondary.r_values")
                                 ? cfg.get_double_list("secondary.r_values")
                                 : std::vector<double>{10.0, 100.0, 1000.0};
    require_strictly_monotone("secondary.r_values", rs);
    rc.require_fully_consumed();

    LaurentConnectionFamily fam = build_family(src.slice, hbar);
    SecondaryHiggsData sec = secondary_expansion(fam, src.slice, gate_floor);

    std::string table = "r,tail_sup,tail_times_r\n";
    for (double r : rs) {
        double tail = expansion_tail_sup(sec.transformed, r);
        table += io::format_float(r);
        table += ',';
        table += io::format_float(tail);
        table += ',';
        table += io::format_float(tail * r);
        table += '\n';
    }
    io::atomic_write_text(rc.out / "tail.csv", table);
    io::write_field_csv(rc.out / "phi_tilde.csv", sec.phi_tilde);
    io::write_field_csv(rc.out / "a_minus1.csv", sec.a_minus1);
    io::write_field_csv(rc.out / "det.csv", sec.det_field);

    io::Manifest m = base_manifest(rc);
    io::put_domain(m, fam.domain);
    put_slice_results(m, src);
    set_float(m, "kernel_rotation_defect", sec.kernel_rotation_defect);
    set_float(m, "a_minus1_dzbar_defect", sec.a_minus1_dzbar_defect);
    set_float(m, "min_abs_det_interior", min_abs_interior(sec.det_field));
    set_float(m, "sup_abs_det", sup_norm(sec.det_field));
    finish_manifest(rc, std::move(m));
}

void cmd_contradiction(const RunContext& rc) {
    const Config& cfg = rc.config;
    SliceSource src = obtain_slice(rc);
    double mask_threshold = cfg.get_double("identity.mask_threshold", 1e-3);
    double perturb = cfg.get_double("contradiction.perturb_b", 0.0);
    rc.require_fully_consumed();

    IdentityReport rep = identity_chain(src.slice, mask_threshold);
    io::write_field_csv(rc.out / "f.csv", rep.f);
    io::write_field_csv(rc.out / "wedge.csv", rep.wedge);
    io::write_field_csv(rc.out / "f1.csv", rep.f1_value);

    io::Manifest m = base_manifest(rc);
    io::put_domain(m, src.slice.base.domain);
    put_slice_results(m, src);
    set_float(m, "gates.hitchin_res", rep.gates.hitchin_res);
    set_float(m, "gates.dprime_res", rep.gates.dprime_res);
    set_float(m, "gates.nilpotency", rep.gates.nilpotency);
    set_float(m, "contradiction_sup", rep.contradiction_sup);
    set_float(m, "ratio_scale", rep.ratio_scale);
    set_float(m, "contradiction_scaled", rep.contradiction_scaled);
    io::manifest_set(m, "degenerate", rep.degenerate ? "true" : "false");
    try {
        set_float(m, "kernel_probe", preserved_kernel_probe(src.slice));
    } catch (const DegeneracyError&) {
        io::manifest_set(m, "kernel_degenerate", "true");
    }
    if (perturb != 0.0) {
        BBSliceData bent = src.slice;
        bent.b = cd(1.0 + perturb, 0.0) * bent.b;
        IdentityReport pr = identity_chain(bent, mask_threshold);
        set_float(m, "perturbed_contradiction_sup", pr.contradiction_sup);
        if (rep.contradiction_sup > 0.0)
            set_float(m, "perturbation_amplification",
                      pr.contradiction_sup / rep.contradiction_sup);
    }
    finish_manifest(rc, std::move(m));
}

// synthesize -> family -> secondary expansion -> WKB loop -> sweep -> growth
void cmd_closedness(const RunContext& rc) {
    const Config& cfg = rc.config;
    SliceSource src = obtain_slice(rc);
    double hbar = cfg.get_double("family.hbar", 1.0);
    double gate_floor = cfg.get_double("secondary.gate_floor", 1e-6);
    std::vector<double> eps = cfg.get_double_list("wkb.eps");
    int substeps = static_cast<int>(cfg.get_int("wkb.substeps", 512));

    LaurentConnectionFamily fam = build_family(src.slice, hbar);
    rc.note("secondary expansion");
    SecondaryHiggsData sec = secondary_expansion(fam, src.slice, gate_floor);

    MatrixField reduced(fam.domain, FormType::dz);
    reduced.a12 = sec.phi_tilde;
    reduced.a21 = sec.a_minus1;
    double margin = -1.0;
    Loop loop = obtain_loop(rc, fam.domain, &reduced, &margin);
    rc.require_fully_consumed();

    rc.note("sweeping " + std::to_string(eps.size()) + " epsilon values");
    WkbSweepReport rep = wkb_sweep(sec.transformed, loop, eps, substeps);

    write_loop_csv((rc.out / "loop.csv").string(), loop);
    write_sweep_csv((rc.out / "sweep.csv").string(), rep);
    double last_gap = 0.0;
    bool monotone = true;
    io::atomic_write_text(rc.out / "growth.csv", growth_table(rep, last_gap, monotone));

    double growth = eps.back() * rep.rows.back().log_abs_trace;
    double re_z = rep.Z.real();
    rc.note("growth rate " + sci(growth) + " vs Re Z " + sci(re_z));

    io::Manifest m = base_manifest(rc);
    io::put_domain(m, fam.domain);
    put_slice_results(m, src);
    set_float(m, "min_abs_det_interior", min_abs_interior(sec.det_field));
    set_float(m, "kernel_rotation_defect", sec.kernel_rotation_defect);
    if (margin >= 0.0) set_float(m, "loop.margin", margin);
    put_sweep_results(m, rep);
    set_float(m, "growth_rate", growth);
    set_float(m, "growth_gap", last_gap);
    set_float(m, "rel_gap", last_gap / std::abs(re_z));
    io::manifest_set(m, "growth_monotone", monotone ? "true" : "false");
    finish_manifest(rc, std::move(m));
}

void run_command(const RunContext& rc) {
    if (rc.command == "solve-hitchin") return cmd_solve_hitchin(rc);
    if (rc.command == "make-slice") return cmd_make_slice(rc);
    if (rc.command == "family") return cmd_family(rc);
    if (rc.command == "holonomy") return cmd_holonomy(rc);
    if (rc.command == "wkb-sweep") return cmd_wkb_sweep(rc);
    if (rc.command == "secondary") return cmd_secondary(rc);
    if (rc.command == "contradiction") return cmd_contradiction(rc);
    if (rc.command == "closedness") return cmd_closedness(rc);
    throw ConfigError("unknown command: " + rc.command);
}

// ---- error reporting -----------------------------------------------------------

void report_failure(const fs::path& out, const std::string& cls, const std::string& msg,
                    int code, const std::vector<double>* history) {
    std::string text = "error.class = " + cls + "\n";
    text += "error.message = " + one_line(msg) + "\n";
    text += "error.exit = " + std::to_string(code) + "\n";
    if (history && !history->empty()) {
        std::string h;
        for (double v : *history) {
            if (!h.empty()) h += ' ';
            h += io::format_float(v);
        }
        text += "error.residual_history = " + h + "\n";
    }
    std::cerr << text;
    if (!out.empty()) {
        try {
            io::atomic_write_text(out / "error.txt", text);
        } catch (...) {
            // the diagnostic already went to stderr
        }
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"conformal-limit laboratory batch runner"};
    app.require_subcommand(1);

    std::string config_path, out_path;
    unsigned long long seed = 0;
    int threads = 0;
    bool verbose = false;

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"solve-hitchin", "Newton solve of the scalar metric equation"},
        {"make-slice", "synthesize a slice through a fixed point"},
        {"family", "build the connection family and tabulate its curvature"},
        {"holonomy", "path-ordered exponential along one loop"},
        {"wkb-sweep", "WKB comparison sweep along a loop"},
        {"secondary", "secondary expansion and its O(1/r) tail"},
        {"contradiction", "kernel-line identity chain report"},
        {"closedness", "end-to-end pipeline from seed to growth rate"},
    };
    for (const auto& [name, desc] : commands) {
        CLI::App* sub = app.add_subcommand(name, desc);
        sub->add_option("--config", config_path, "configuration file")->required();
        sub->add_option("--out", out_path, "report bundle directory")->required();
        sub->add_option("--seed", seed, "seed recorded in the manifest (overrides rng_seed)");
        sub->add_option("--threads", threads,
                        "worker threads; CLL_THREADS is the fallback (execution is "
                        "deterministic and currently sequential)");
        sub->add_flag("--verbose", verbose, "progress notes on stdout");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2; // command-line problems are configuration problems
    }

    CLI::App* sub = app.get_subcommands().front();
    RunContext rc;
    rc.command = sub->get_name();
    rc.verbose = verbose;
    rc.out = out_path;

    try {
        rc.config = Config::from_file(config_path);
        rc.config_dir = fs::path(config_path).parent_path();

        if (threads == 0)
            if (const char* env = std::getenv("CLL_THREADS")) threads = std::atoi(env);
        if (threads == 0) threads = 1;
        if (threads < 1) throw ConfigError("--threads must be >= 1");
        rc.threads = threads;

        rc.seed = rc.config.has("rng_seed")
                      ? static_cast<unsigned long long>(rc.config.get_int("rng_seed"))
                      : 0;
        if (sub->count("--seed") > 0) rc.seed = seed;

        fs::create_directories(rc.out);
        check_referenced_files(rc);
        run_command(rc);
        return 0;
    } catch (const DegeneracyError& e) {
        report_failure(rc.out, "degeneracy", e.what(), 3, nullptr);
        return 3;
    } catch (const GateError& e) {
        report_failure(rc.out, "gate", e.what(), 3, nullptr);
        return 3;
    } catch (const SynthesisError& e) {
        report_failure(rc.out, "synthesis", e.what(), 4, &e.residual_history);
        return 4;
    } catch (const DivergenceError& e) {
        report_failure(rc.out, "divergence", e.what(), 4, &e.residual_history);
        return 4;
    } catch (const ConfigError& e) {
        report_failure(rc.out, "config", e.what(), 2, nullptr);
        return 2;
    } catch (const Error& e) {
        report_failure(rc.out, "validation", e.what(), 2, nullptr);
        return 2;
    } catch (const std::exception& e) {
        report_failure(rc.out, "internal", e.what(), 1, nullptr);
        return 1;
    }
}
