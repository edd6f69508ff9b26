"""Command-line experiment runner.

Every subcommand builds the same config dict that ``treerate run CONFIG``
reads from a file, so a command line and a config file are interchangeable.
Output is CSV: one ``#`` comment line with version, seed and config hash,
then a header row.

Exit codes: 0 ok, 2 bad config or input, 3 size guard tripped,
4 a checked identity or inequality failed.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import compare_bound, entropy_length_bound, indisp_tree, section_variant_bound
from .calculus import lansit_both_sides
from .config import config_hash, load_json, validate
from .entropy import binary_entropy, entropy, half_l1_parts, kl, kl_decomposition, local_entropies, pinsker_check
from .errors import GuardError, InvariantViolation, TreeRateError
from .generators import random_lengths, random_leaf_law, random_tree
from .measures import ForwardKernel, LeafDistribution, expected_length, kernel_to_leaf, leaf_to_kernel
from .measures import unit_expected_length
from .perturbation import PerturbationSpec, bernoulli, constant, deterministic, randper_monte_carlo
from .process import RATE_COLUMNS, indisp_process, kakutani_experiment, rate_sequence, spec_from_json
from .tree import LengthFunction, path_lengths, tree_from_json, validate_cross_section

AGREE_TOL = 1e-10

EXIT_OK, EXIT_INPUT, EXIT_GUARD, EXIT_INVARIANT = 0, 2, 3, 4


class Result:
    """Tabular output plus anything that should land in the header comment."""

    def __init__(self, columns, rows, notes=None, report=None, failed=None):
        self.columns = list(columns)
        self.rows = rows
        self.notes = notes or {}
        self.report = report
        self.failed = failed


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def render_csv(result: Result, config: dict) -> str:
    buf = io.StringIO()
    head = f"# treerate {__version__} experiment={config['experiment']} seed={config['seed']} config_sha256={config_hash(config)}"
    for k, v in result.notes.items():
        head += f" {k}={v}"
    buf.write(head + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(result.columns)
    for row in result.rows:
        w.writerow([_fmt(row.get(c)) for c in result.columns])
    return buf.getvalue()


# -- input helpers -------------------------------------------------------


def _tree(ref, base):
    return tree_from_json(load_json(ref, base))


def _law(tree, ref, base) -> LeafDistribution:
    obj = load_json(ref, base)
    if not isinstance(obj, dict) or not obj:
        raise TreeRateError("a law must be a non-empty JSON object")
    if all(isinstance(v, dict) for v in obj.values()):
        return kernel_to_leaf(tree, ForwardKernel.from_rows(tree, obj))
    return LeafDistribution.from_leaf_masses(tree, obj)


def _length(tree, table_ell, kind, Q=None) -> LengthFunction:
    if kind == "unit":
        return LengthFunction.unit(tree)
    if kind == "table":
        return table_ell
    hq = local_entropies(tree, leaf_to_kernel(tree, Q))
    inner = tree.interior
    if not (hq[inner] > 0).all():
        raise TreeRateError("H_q vanishes at an interior node; cannot use it as a length")
    return LengthFunction.validated(tree, "entropy-derived", hq)


# -- experiments ---------------------------------------------------------


def run_lansit(cfg, base) -> Result:
    ins, p = cfg["inputs"], cfg["params"]
    tol = p.get("tolerance", AGREE_TOL)
    cols = ["instance", "n_nodes", "lhs", "rhs", "difference", "abs_laplacian_mean", "agrees"]
    rows = []
    if "tree" in ins:
        tree, ell = _tree(ins["tree"], base)
        P = _law(tree, ins["law"], base) if "law" in ins else None
        if P is None:
            raise TreeRateError("lansit-check on a given tree needs inputs.law")
        if "f" in ins:
            fobj = load_json(ins["f"], base)
            f = np.array([float(fobj[str(tree.labels[x])]) for x in range(tree.n_nodes)])
        else:
            f = path_lengths(tree, ell)
        cases = [(tree, P, ell, f)]
    else:
        rng = np.random.default_rng(cfg["seed"])
        cases = []
        for _ in range(p.get("trials", 100)):
            t = random_tree(rng, int(rng.integers(3, p.get("max_nodes", 1000) + 1)), p.get("max_degree", 5))
            cases.append((t, random_leaf_law(rng, t, zero_prob=0.2), random_lengths(rng, t),
                          rng.normal(size=t.n_nodes)))
    failed = None
    for i, (t, P, ell, f) in enumerate(cases):
        r = lansit_both_sides(t, P, ell, f)
        ok = r.agrees(tol)
        rows.append({"instance": i, "n_nodes": t.n_nodes, "lhs": r.lhs, "rhs": r.rhs,
                     "difference": r.difference, "abs_laplacian_mean": r.abs_expectation, "agrees": ok})
        if not ok and failed is None:
            failed = f"LANSIT sides differ by {r.difference!r} on instance {i}"
    return Result(cols, rows, failed=failed)


def run_divergence(cfg, base) -> Result:
    ins = cfg["inputs"]
    tree, table_ell = _tree(ins["tree"], base)
    P, Q = _law(tree, ins["p"], base), _law(tree, ins["q"], base)
    ell = _length(tree, table_ell, cfg["params"].get("length", "table"), Q)
    D = kl(P, Q)
    lhs, rhs = kl_decomposition(tree, P, Q, ell)
    pos, neg, half = half_l1_parts(P.leaf_mass, Q.leaf_mass)
    pin = pinsker_check(P.leaf_mass, Q.leaf_mass)
    ell_p, ell_q = expected_length(tree, P, ell), expected_length(tree, Q, ell)
    row = {
        "H_P": entropy(P), "H_Q": entropy(Q), "ell_P": ell_p, "ell_Q": ell_q,
        "ell_sharp_P": unit_expected_length(tree, P), "D": D, "D_over_ell_P": lhs,
        "D_local_average": rhs, "rate_P": entropy(P) / ell_p, "rate_Q": entropy(Q) / ell_q,
        "half_l1": half, "positive_part": pos, "negative_part": neg,
        "l1_squared": pin.l1_squared, "pinsker_bound": pin.bound,
    }
    failed = None
    if abs(lhs - rhs) > AGREE_TOL * (1 + abs(lhs)):
        failed = f"divergence decomposition differs by {lhs - rhs!r}"
    elif not pin.holds:
        failed = "Pinsker inequality fails"
    return Result(list(row), [row], failed=failed)


def run_compare(cfg, base) -> Result:
    ins, p = cfg["inputs"], cfg["params"]
    tree, table_ell = _tree(ins["tree"], base)
    P, Q = _law(tree, ins["p"], base), _law(tree, ins["q"], base)
    delta, eps = p.get("delta", 0.1), p.get("epsilon", 0.0)
    kind = p.get("length", "table")
    if kind == "hq":
        if p.get("section"):
            raise TreeRateError("section split and entropy length cannot be combined")
        rep = entropy_length_bound(tree, P, leaf_to_kernel(tree, Q), delta, eps)
    else:
        ell = _length(tree, table_ell, kind)
        if p.get("section"):
            S = validate_cross_section(tree, [tree.index(lab) for lab in p["section"]])
            rep = section_variant_bound(tree, P, Q, ell, S, eps, delta)
        else:
            rep = compare_bound(tree, P, Q, ell, eps, delta)
    cols = ["delta", "eps", "M_eps", "lhs", "term1", "term2", "term3", "rhs", "holds"]
    rows = [{**s, "lhs": rep.lhs} for s in rep.sweep]
    if not rows:
        rows = [{"delta": delta, "eps": eps, "M_eps": rep.M_eps, "lhs": rep.lhs, "term1": rep.term1,
                 "term2": rep.term2, "term3": rep.term3, "rhs": rep.rhs, "holds": rep.holds}]
    bad = [r for r in rows if not r["holds"]]
    failed = None
    if not rep.holds:
        failed = f"bound fails: lhs {rep.lhs!r} > rhs {rep.rhs!r}"
    elif bad:
        failed = f"bound fails at delta={bad[0]['delta']}, eps={bad[0]['eps']}"
    return Result(cols, rows, notes={"holds": "true" if failed is None else "false"}, report=rep.to_dict(),
                  failed=failed)


def _indisp_closed(theta, d1, d2, n):
    hb = binary_entropy(theta)
    l1, l2 = math.log2(d1), math.log2(d2)
    return hb + n * (theta * l1 + (1 - theta) * l2), 1.0 - hb, abs((theta - 0.5) * l1 + (0.5 - theta) * l2)


def run_indisp(cfg, base) -> Result:
    p = cfg["params"]
    th, d1, d2, N = p["theta"], p["d1"], p["d2"], p["levels"]
    explicit_max = p.get("explicit_max", 6)
    # branch height n is section level n + 1 of the process
    seq = rate_sequence(indisp_process(th, d1, d2), indisp_process(0.5, d1, d2), N + 1)
    cols = ["n", "mode", "H_P", "H_Q", "ell_P", "D", "D_over_n", "gap", "bound",
            "H_P_closed", "D_closed", "gap_limit"]
    rows, failed = [], None
    for n in range(1, N + 1):
        i = n  # index of section level n + 1
        hp_c, d_c, lim = _indisp_closed(th, d1, d2, n)
        row = {"n": n, "mode": "aggregated", "H_P": seq.H_P[i], "H_Q": seq.H_Q[i], "ell_P": seq.ell_P[i],
               "D": seq.D[i], "bound": seq.bound[i], "H_P_closed": hp_c, "D_closed": d_c, "gap_limit": lim}
        if n <= explicit_max:
            tree, P, Q = indisp_tree(th, d1, d2, n)
            ex = {"H_P": entropy(P), "H_Q": entropy(Q), "ell_P": unit_expected_length(tree, P), "D": kl(P, Q)}
            for k, v in ex.items():
                if abs(v - row[k]) > AGREE_TOL * (1 + abs(v)) and failed is None:
                    failed = f"explicit and aggregated {k} differ at n={n}"
            row.update(ex, mode="explicit")
        row["D_over_n"] = row["D"] / n
        row["gap"] = abs(row["H_P"] - row["H_Q"]) / row["ell_P"]
        rows.append(row)
    return Result(cols, rows, failed=failed)


def _process(ref, base, length=None):
    obj = dict(load_json(ref, base))
    if length is not None:
        obj["lengthRule"] = _length_rule_arg(length)
    return spec_from_json(obj)


def _length_rule_arg(length):
    if isinstance(length, (int, float)):
        return {"kind": "constant", "value": float(length)}
    if length in ("unit", "entropy"):
        return {"kind": length}
    try:
        return {"kind": "constant", "value": float(length)}
    except ValueError:
        raise TreeRateError(f"length must be unit, entropy or a number, got {length!r}") from None


def run_entropy_rate(cfg, base) -> Result:
    ins, p = cfg["inputs"], cfg["params"]
    seq = rate_sequence(_process(ins["p"], base), _process(ins["q"], base), p["levels"])
    failed = None
    if not seq.monotone_kl():
        i = int(np.nonzero(np.diff(seq.D) < 0)[0][0])
        failed = f"D(P_n||Q_n) decreases at n={i + 2}"
    notes = {"h": repr(seq.meta["h"]), "h_source": seq.meta["h_source"].replace(" ", "_")}
    return Result(RATE_COLUMNS, list(seq.rows(p.get("every", 1))), notes=notes, failed=failed)


def _float_list(ref, base):
    obj = load_json(ref, base) if isinstance(ref, str) else ref
    return np.asarray(obj, dtype=float)


def run_kakutani(cfg, base) -> Result:
    p = cfg["params"]
    if "alphas" in p:
        res = kakutani_experiment(p["M"], alphas=_float_list(p["alphas"], base), n=p["levels"])
    else:
        res = kakutani_experiment(p["M"], beta=p["beta"], n=p["levels"])
    failed = None
    if (np.diff(res.D) < 0).any():
        failed = "partial divergence sums decrease"
    cols = ["n", "alpha", "f_alpha", "D_row", "D", "D_over_n", "H_P", "rate_gap"]
    return Result(cols, list(res.rows(p.get("every", 1))), failed=failed)


def run_perturb(cfg, base) -> Result:
    ins, p = cfg["inputs"], cfg["params"]
    length = p.get("length")
    b = _process(ins.get("base", "bundled:markov2.json"), base, length)
    a = _process(ins.get("alt", "bundled:markov2_uniform.json"), base, length)
    if "beta" in p:
        law = bernoulli(p["beta"])
    elif "constant" in p:
        law = constant(p["constant"])
    else:
        law = deterministic(_float_list(p["deltas"], base))
    spec = PerturbationSpec(b, a, law, D=p.get("D"), h=p.get("h"))
    N = p["levels"]
    rep = randper_monte_carlo(spec, N, p.get("trials", 20), cfg["seed"], tolerance=p.get("tolerance", 0.05))
    every = p.get("every", 1)
    cols = ["trial", "seed", "n", "delta", "sum_delta", "H_P", "ell_P", "D", "rate", "error",
            "chain_lhs", "chain_rhs"]
    rows = []
    idx = list(range(every - 1, N, every))
    if idx[-1:] != [N - 1]:
        idx.append(N - 1)
    for t, tr in enumerate(rep.trials):
        cum = tr.realization.cumulative
        s = tr.sequence
        for i in idx:
            rows.append({
                "trial": t, "seed": f"{cfg['seed']}:{t}", "n": i + 1, "delta": tr.realization.deltas[i],
                "sum_delta": cum[i], "H_P": s.H_P[i], "ell_P": s.ell_P[i], "D": s.D[i],
                "rate": tr.rate[i], "error": tr.error[i], "chain_lhs": tr.chain_lhs[i], "chain_rhs": tr.chain_rhs[i],
            })
    summ = rep.summary()
    notes = {"hypothesis": rep.hypothesis_flag, "h": repr(rep.h),
             "fraction_within": repr(summ["fraction_within"]), "D_bound": repr(rep.trials[0].D_bound)}
    return Result(cols, rows, notes=notes, report=summ)


RUNNERS = {
    "lansit-check": run_lansit,
    "divergence": run_divergence,
    "compare-bound": run_compare,
    "indisp": run_indisp,
    "entropy-rate": run_entropy_rate,
    "kakutani": run_kakutani,
    "perturb-sim": run_perturb,
}


def execute(config, base_dir: Path | None = None, stdout=None, stderr=None) -> int:
    """Validate and run one config; write CSV; return the exit code."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        cfg = validate(config)
        result = RUNNERS[cfg["experiment"]](cfg, base_dir)
    except TreeRateError as e:
        print(f"error: {e}", file=stderr)
        return EXIT_INPUT
    except GuardError as e:
        print(f"guard: {e}", file=stderr)
        return EXIT_GUARD
    except InvariantViolation as e:
        print(f"invariant violated: {e}", file=stderr)
        return EXIT_INVARIANT
    text = render_csv(result, cfg)
    if cfg["output"]:
        out = Path(cfg["output"])
        if not out.is_absolute() and base_dir is not None:
            out = base_dir / out
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    else:
        stdout.write(text)
    if result.report is not None:
        blob = json.dumps(result.report, indent=2, sort_keys=True, default=float)
        target = cfg["params"].get("report") if cfg["experiment"] == "compare-bound" else None
        if target:
            Path(target).write_text(blob + "\n")
        else:
            print(blob, file=stderr)
    if result.failed:
        print(f"invariant violated: {result.failed}", file=stderr)
        return EXIT_INVARIANT
    return EXIT_OK


# -- argument parsing ------------------------------------------------------


def _common(sp):
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-o", "--output", help="CSV path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="treerate", description="Entropy-rate experiments on rooted trees.")
    ap.add_argument("--version", action="version", version=f"treerate {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sp = sub.add_parser("run", help="run an experiment config file")
    sp.add_argument("config")

    sp = sub.add_parser("lansit-check", help="leaf/node interchange on a tree or a random corpus")
    sp.add_argument("--tree")
    sp.add_argument("--law")
    sp.add_argument("--f", dest="f", help="node function as {label: value}")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--max-nodes", type=int)
    _common(sp)

    for name, helptext in (("divergence", "entropies, divergence and its local decomposition"),
                           ("compare-bound", "itemized entropy-rate comparison bound")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--tree", required=True)
        sp.add_argument("--p", required=True)
        sp.add_argument("--q", required=True)
        sp.add_argument("--length", choices=["unit", "table", "hq"])
        if name == "compare-bound":
            sp.add_argument("--delta", type=float)
            sp.add_argument("--epsilon", type=float)
            sp.add_argument("--section", help="comma-separated node labels")
            sp.add_argument("--report", help="write the JSON report here (default: stderr)")
        _common(sp)

    sp = sub.add_parser("indisp", help="two-branch example, explicit and aggregated")
    sp.add_argument("--theta", type=float, default=0.25)
    sp.add_argument("--d1", type=int, default=2)
    sp.add_argument("--d2", type=int, default=4)
    sp.add_argument("--levels", type=int, default=10)
    sp.add_argument("--explicit-max", type=int)
    _common(sp)

    sp = sub.add_parser("entropy-rate", help="rate sequences of two process specs")
    sp.add_argument("--p", required=True)
    sp.add_argument("--q", required=True)
    sp.add_argument("--levels", type=int, required=True)
    sp.add_argument("--every", type=int)
    _common(sp)

    sp = sub.add_parser("kakutani", help="tilted uniform products")
    sp.add_argument("--M", type=int, default=4)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--beta", type=float)
    g.add_argument("--alphas", help="JSON file with the alpha sequence")
    sp.add_argument("--levels", type=int, required=True)
    sp.add_argument("--every", type=int)
    _common(sp)

    sp = sub.add_parser("perturb-sim", help="random perturbations, Monte Carlo over delta sequences")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--beta", type=float)
    g.add_argument("--delta-file", help="JSON list with a deterministic delta sequence")
    g.add_argument("--constant", type=float)
    sp.add_argument("--base")
    sp.add_argument("--alt")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--levels", type=int, required=True)
    sp.add_argument("--length")
    sp.add_argument("--D", dest="D", type=float)
    sp.add_argument("--every", type=int)
    _common(sp)
    return ap


def _pick(ns, *names):
    return {k: v for k in names if (v := getattr(ns, k, None)) is not None}


def config_from_args(ns) -> dict:
    cmd = ns.command
    cfg = {"experiment": cmd, "seed": ns.seed, "output": ns.output}
    if cmd == "lansit-check":
        cfg["inputs"] = _pick(ns, "tree", "law", "f")
        cfg["params"] = _pick(ns, "trials", "max_nodes")
    elif cmd in ("divergence", "compare-bound"):
        cfg["inputs"] = _pick(ns, "p", "q", "tree")
        cfg["params"] = _pick(ns, "length", "delta", "epsilon", "report")
        if getattr(ns, "section", None):
            cfg["params"]["section"] = [s.strip() for s in ns.section.split(",")]
    elif cmd == "indisp":
        cfg["params"] = _pick(ns, "theta", "d1", "d2", "levels", "explicit_max")
    elif cmd == "entropy-rate":
        cfg["inputs"] = _pick(ns, "p", "q")
        cfg["params"] = _pick(ns, "levels", "every")
    elif cmd == "kakutani":
        cfg["params"] = _pick(ns, "M", "beta", "alphas", "levels", "every")
    elif cmd == "perturb-sim":
        cfg["inputs"] = _pick(ns, "base", "alt")
        cfg["params"] = _pick(ns, "beta", "constant", "trials", "levels", "length", "D", "every")
        if ns.delta_file:
            cfg["params"]["deltas"] = ns.delta_file
    return cfg


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    if ns.command == "run":
        path = Path(ns.config)
        try:
            config = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            print(f"error: cannot load {path}: {e}", file=sys.stderr)
            return EXIT_INPUT
        return execute(config, path.parent)
    return execute(config_from_args(ns), Path.cwd())


if __name__ == "__main__":
    sys.exit(main())
