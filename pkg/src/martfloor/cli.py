"""Command-line front end.

Every subcommand writes one JSON report to stdout and a short human summary
to stderr.  Exit codes: 0 all checks pass, 1 a check failed, 2 input error,
3 no-arbitrage violation, 4 solver failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from ._tolerances import Tolerances
from .estimators import check_p, check_tolerances, floor_at, parse_floor
from .exceptions import InputError, NAViolationError, SolverError, TreeValidationError
from .geometry import origin_in_relative_interior
from .market import (AdaptedValues, increments_distribution, load_tree, model_to_tree, node_increments,
                     one_period_view, save_tree, validate_tree_dict)
from .multi_period import backward_beta, construct_emm, primal_gain_lp, verify_certificate
from .one_period import conjugate, construct_density, criterion, min_norm_density, primal_value_lp
from .repro import (example_53_first_period, example_54_primal_value, gen_example_52, gen_example_53,
                    gen_example_54, validate_counterexample)

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_NA, EXIT_SOLVER = 0, 1, 2, 3, 4
DEFAULT_DEPTH = {"5.2": 10, "5.3": 6, "5.4": 8}


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    return x


class Report:
    def __init__(self, command, argv, tol: Tolerances):
        self.data = {"command": command, "argv": list(argv), "input": None,
                     "tolerances": tol.as_dict(), "results": {}, "checks": []}
        self.tol = tol

    def digest(self, path):
        raw = Path(path).read_bytes()
        self.data["input"] = {"path": str(path), "sha256": hashlib.sha256(raw).hexdigest()}

    def result(self, key, value, tol=None):
        self.data["results"][key] = value if tol is None else {"value": value, "tol": tol}

    def check(self, name, value, tol, passed):
        self.data["checks"].append({"name": name, "value": value, "tol": tol, "passed": bool(passed)})

    def check_le(self, name, value, tol):
        self.check(name, value, tol, value <= tol)

    @property
    def passed(self):
        return all(c["passed"] for c in self.data["checks"])


def _tree(path, tol):
    return load_tree(path, tol)


# -- subcommands ---------------------------------------------------------------------

def cmd_validate(args, rep):
    rep.digest(args.path)
    text = Path(args.path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TreeValidationError([f"parse error: {exc}"]) from None
    errs = validate_tree_dict(data, rep.tol)
    rep.result("violations", errs)
    if errs:
        raise TreeValidationError(errs)
    rep.result("nodes", len(data["nodes"]))
    rep.result("horizon", data["horizon"])
    rep.check("valid", len(errs), 0, True)


def cmd_na(args, rep):
    rep.digest(args.path)
    tree = _tree(args.path, rep.tol)
    per_node, failed = [], None
    for node in range(tree.n_nodes):
        if tree.is_leaf(node):
            continue
        r = origin_in_relative_interior(increments_distribution(tree, node, rep.tol), rep.tol)
        row = {"node": node, "holds": r.holds, "margin": {"value": r.margin, "tol": rep.tol.feas}}
        if not r.holds:
            row["separator"] = r.separator
            failed = failed or row
        per_node.append(row)
    rep.result("nodes", per_node)
    rep.check("na_all_nodes", min((row["margin"]["value"] for row in per_node), default=1.0),
              rep.tol.feas, failed is None)
    if failed is not None:
        raise NAViolationError(f"node {failed['node']}: no-arbitrage fails, separator h = "
                               f"{np.round(failed['separator'], 12).tolist()}",
                               location=failed["node"], separator=failed["separator"])


def _slice_report(model, p, tol, rep, label):
    cr = criterion(model, p, tol)
    mn = min_norm_density(model, conjugate(p), tol)
    gap_tol = 1e-5 if p == 2 else tol.dual
    gap = abs(cr.v - mn.value) / max(1.0, abs(cr.v))
    rep.check(f"{label}v_matches_min_norm", gap, gap_tol, gap <= gap_tol)
    return {"a": cr.a, "support": cr.support, "v": {"value": cr.v, "tol": gap_tol},
            "min_norm_value": mn.value}


def cmd_criterion(args, rep):
    rep.digest(args.path)
    tree = _tree(args.path, rep.tol)
    p = check_p(args.p)
    f = parse_floor(args.floor, tree)
    slices = []
    for n in range(tree.horizon):
        model = one_period_view(tree, n, floor_at(tree, f, n + 1), rep.tol)
        row = _slice_report(model, p, rep.tol, rep, f"slice{n}_" if tree.horizon > 1 else "")
        row["depth"] = n
        row["atoms"] = tree.nodes_at(n)
        slices.append(row)
    rep.result("p", "inf" if p == np.inf else p)
    rep.result("slices", slices)
    if tree.horizon == 1:
        rep.result("v", slices[0]["v"])
    if tree.horizon > 1 and p == np.inf:
        b = backward_beta(tree, f, rep.tol)
        Ef = float(tree.path_prob[f.nodes] @ f.values)
        rep.result("E_beta0_minus_Ef", b.expected_beta0 - Ef, rep.tol.dual)


def _write_density(path, payload):
    Path(path).write_text(json.dumps(_plain(payload), indent=1))


def cmd_density(args, rep):
    rep.digest(args.path)
    tol = rep.tol
    tree = _tree(args.path, tol)
    f = parse_floor(args.floor, tree)
    if args.multi:
        cert = construct_emm(tree, f, tol=tol)
        ver = verify_certificate(tree, cert, f, tol)
        dens = cert.density.as_dict()
        payload = {"kind": "multi-period", "c": cert.c, "Z": cert.Z.as_dict(), "density": dens}
        rep.result("verification", {
            "normalization_error": ver.normalization_error,
            "max_martingale_residual": ver.max_martingale_residual,
            "worst_node": ver.worst_node, "floor_margin": ver.floor_margin,
            "min_ratio": ver.min_ratio, "tower_residual": ver.tower_residual})
        rep.result("c", cert.c)
        rep.result("E_beta0", cert.expected_beta0, tol.dual)
        rep.check_le("martingale_residual", ver.max_martingale_residual, tol.feas)
        rep.check_le("normalization_error", ver.normalization_error, tol.feas)
        rep.check("min_Z_over_f", ver.min_ratio, 1e-12, ver.min_ratio >= 1 - 1e-12)
        rep.check("verify_certificate", ver.passed, 0, ver.passed)
    else:
        if tree.horizon != 1:
            raise InputError(f"horizon {tree.horizon} > 1: use --multi for the multi-period density")
        p = check_p(args.p)
        model = one_period_view(tree, 0, f, tol)
        d = construct_density(model, p, tol)
        fmap = f.as_dict()
        g = {}
        for k, node in enumerate(tree.nodes_at(0)):
            _, index = node_increments(tree, node, tol)
            for child, i in zip(tree.children(node), index):
                g[int(child)] = fmap[int(child)] + float(d.phi[k][i])
        Eg = sum(tree.path_prob[c] * v for c, v in g.items())
        payload = {"kind": "one-period", "p": "inf" if p == np.inf else p, "g": g,
                   "density": {c: v / Eg for c, v in g.items()}}
        rep.result("verification", {"residual": d.residual, "floor_margin": d.floor_margin,
                                    "excess": d.excess, "nu": d.nu})
        rep.check_le("martingale_residual", d.max_residual, tol.feas)
        rep.check("g_at_least_f", d.floor_margin, tol.feas, d.floor_margin >= -tol.feas)
        if p == np.inf:
            gap = float(np.abs(d.excess - d.nu).max())
            rep.check_le("excess_equals_nu", gap, tol.feas)
    rep.result("density", payload["density"])
    if args.out:
        _write_density(args.out, payload)
        rep.result("density_file", str(args.out))


def _compare(rep, name, engine, table, rtol):
    engine, table = np.asarray(engine, dtype=float), np.asarray(table, dtype=float)
    err = float(np.max(np.abs(engine - table) / np.maximum(1.0, np.abs(table))))
    rep.check_le(name, err, rtol)


def _repro_52(J, rep, tol):
    model, table = gen_example_52(J, *example_53_first_period(J))
    cr = criterion(model, np.inf, tol)
    dens = construct_density(model, np.inf, tol)
    j = np.arange(1, J + 1)
    _compare(rep, "E_rho_partial_vs_closed_form", table["E_rho_partial"],
             np.cumsum(2.0 ** (-3 * j) + 2.0 ** (1 - j)), 1e-12)
    _compare(rep, "support_T_inf_vs_table", cr.support[:J], table["s_T_inf"], tol.feas)
    _compare(rep, "nu_vs_table", dens.nu[:J], table["nu"], tol.feas)
    _compare(rep, "v_inf_vs_excess_norm", cr.v, table["excess_norm_1"][-1], tol.feas)
    rep.result("E_rho_partial", table["E_rho_partial"], 1e-12)
    rep.result("v_inf", cr.v, tol.feas)
    return model_to_tree(model), table


def _repro_53(J, rep, tol):
    tree, table = gen_example_53(J)
    b = backward_beta(tree, tol=tol)
    first = tree.nodes_at(1)[:2 * J]
    roots = tree.nodes_at(0)[:J]
    _compare(rep, "beta1_vs_table", b.beta[first], table["beta1"], tol.feas)
    _compare(rep, "a1_vs_table", b.a[first, 0], table["a1"], tol.feas)
    _compare(rep, "a0_vs_table", b.a[roots, 0], table["a0"], tol.feas)
    _compare(rep, "nu0_vs_table", b.nu[roots], table["nu0"], tol.feas)
    partial = np.cumsum(tree.prob[roots] * b.nu[roots])
    _compare(rep, "E_nu0_partial_vs_table", partial, table["E_nu0_partial"], tol.feas)
    s0 = criterion(one_period_view(tree, 0, tol=tol), np.inf, tol).support[:J]
    s1 = criterion(one_period_view(tree, 1, tol=tol), np.inf, tol).support[:2 * J]
    _, t52 = gen_example_52(J, *example_53_first_period(J))
    _compare(rep, "slice0_support_vs_table", s0, t52["nu"], tol.feas)
    _compare(rep, "slice1_support_vs_table", s1, table["nu1"], tol.feas)
    cert = construct_emm(tree, beta=b, tol=tol)
    ver = verify_certificate(tree, cert, tol=tol)
    rep.check("verify_certificate", ver.max_martingale_residual, tol.feas, ver.passed)
    gain = primal_gain_lp(tree, tol=tol).value
    gap = abs(gain - (b.expected_beta0 - 1.0)) / max(1.0, b.expected_beta0)
    rep.check_le("primal_gain_equals_E_beta0_minus_Ef", gap, tol.dual)
    rep.result("E_nu0_partial", partial, tol.feas)
    rep.result("E_beta0", b.expected_beta0, tol.dual)
    rep.result("slice_partial_sums", {"slice0": float(tree.prob[roots] @ s0),
                                      "slice1": float(tree.path_prob[first] @ s1)})
    return tree, table


def _repro_54(J, rep, tol):
    cx = validate_counterexample(range(1, J + 1), tol=tol)
    bound = 0.75 + 1e-7
    c = cx.c_star
    rep.check_le("v_inf_at_most_three_quarters", float(cx.v_inf.max()), bound)
    worst = float(np.max(np.diff(c))) if len(c) > 1 else 0.0
    rep.check_le("c_star_nonincreasing", worst, 1e-12)
    rep.check_le("z_moment_residual", max(r.z_residual for r in cx.rows), 1e-12)
    primal = example_54_primal_value(J, cx.M, tol)
    rep.check_le("criterion_equals_primal_lp", abs(primal - cx.v_inf[-1]), tol.dual)
    rep.result("M", cx.M)
    rep.result("v_inf", cx.v_inf, tol.dual)
    rep.result("c_star", c, tol.feas)
    rep.result("c_star_last_over_first", float(c[-1] / c[0]))
    model, table = gen_example_54(J, cx.M)
    table.entries.pop("raw")
    return model_to_tree(model), table


def cmd_repro(args, rep):
    J = DEFAULT_DEPTH[args.example] if args.depth is None else args.depth
    if J < 1:
        raise InputError("--depth must be >= 1")
    rep.result("example", args.example)
    rep.result("depth", J)
    run = {"5.2": _repro_52, "5.3": _repro_53, "5.4": _repro_54}[args.example]
    tree, table = run(J, rep, rep.tol)
    rep.result("table", table.to_dict())
    if args.out:
        save_tree(tree, args.out)
        rep.digest(args.out)
        rep.result("model_file", str(args.out))


# -- entry point ------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tol-feas", type=float, default=None, help="feasibility tolerance")
    common.add_argument("--tol-dual", type=float, default=None, help="duality-gap tolerance")
    floor = argparse.ArgumentParser(add_help=False)
    floor.add_argument("--floor", default="const:1", help="const:<x> or file:<path> (leaf id -> value)")

    parser = argparse.ArgumentParser(prog="martfloor", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("validate", parents=[common], help="validate a tree file")
    p.add_argument("path")
    p = sub.add_parser("na", parents=[common], help="per-node no-arbitrage test")
    p.add_argument("path")
    p = sub.add_parser("criterion", parents=[common, floor], help="support-function criterion v_p")
    p.add_argument("path")
    p.add_argument("--p", default="inf", choices=["1", "2", "inf"])
    p = sub.add_parser("density", parents=[common, floor], help="martingale density with floor")
    p.add_argument("path")
    p.add_argument("--p", default="inf", choices=["1", "2", "inf"])
    p.add_argument("--multi", action="store_true", help="multi-period density cZ")
    p.add_argument("--out", help="write the density to this JSON file")
    p = sub.add_parser("repro", parents=[common], help="reproduce a worked example")
    p.add_argument("--example", required=True, choices=sorted(DEFAULT_DEPTH))
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--out", help="write the generated model to this tree file")
    return parser


COMMANDS = {"validate": cmd_validate, "na": cmd_na, "criterion": cmd_criterion,
            "density": cmd_density, "repro": cmd_repro}


def main(argv=None, stdout=None, stderr=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    code = EXIT_OK
    try:
        tol = check_tolerances(args.tol_feas, args.tol_dual)
    except InputError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_INPUT
    rep = Report(args.command, argv, tol)
    try:
        COMMANDS[args.command](args, rep)
        code = EXIT_OK if rep.passed else EXIT_CHECK
    except TreeValidationError as exc:
        rep.data["error"] = {"kind": "input", "violations": exc.violations}
        code = EXIT_INPUT
    except (InputError, OSError) as exc:
        rep.data["error"] = {"kind": "input", "message": str(exc)}
        code = EXIT_INPUT
    except NAViolationError as exc:
        rep.data["error"] = {"kind": "no-arbitrage", "message": str(exc), "node": exc.location,
                             "separator": exc.separator}
        code = EXIT_NA
    except SolverError as exc:
        rep.data["error"] = {"kind": "solver", "message": str(exc)}
        code = EXIT_SOLVER
    rep.data["passed"] = code == EXIT_OK
    rep.data["exit_code"] = code
    rep.data["wall_time_s"] = time.perf_counter() - start
    print(json.dumps(_plain(rep.data), indent=1), file=stdout)
    for c in rep.data["checks"]:
        print(f"{'ok  ' if c['passed'] else 'FAIL'} {c['name']}: {c['value']} (tol {c['tol']})", file=stderr)
    if "error" in rep.data:
        print(f"error: {rep.data['error'].get('message') or '; '.join(rep.data['error']['violations'])}",
              file=stderr)
    print(f"{args.command}: {'pass' if code == EXIT_OK else f'exit {code}'}", file=stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
