"""``hodgeflow`` command line: decompose, train, diagnose, report.

Exit codes: 0 success, 1 a diagnostic check did not match its expected
outcome, 2 bad input or config, 3 numerical failure, 4 divergence during
training (metric files are still written).
"""
from __future__ import annotations

import argparse
import csv
import datetime
import logging
import sys
from pathlib import Path

import numpy as np

from . import diagnostics, harness
from .envs import RingSpec, make_ring
from .errors import ContractError, DivergenceError, NumericalError
from .hodge import DiffOperator, decompose, mean_defect, td_field
from .io import load_config, load_mdp, load_policy, load_value, mdp_from_dict, write_json
from .mdp import check_distribution, exact_occupancy, exact_value, uniform_distribution, uniform_policy

log = logging.getLogger("hodgeflow")

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_DIVERGED = 0, 1, 2, 3, 4


def _parse_seeds(text):
    if text is None:
        return None
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ContractError(f"--seeds must be a comma-separated integer list, got {text!r}") from None


def output_dir(base, overwrite: bool) -> Path:
    """``base`` itself with --overwrite, otherwise a fresh timestamped child."""
    base = Path(base)
    if overwrite:
        base.mkdir(parents=True, exist_ok=True)
        return base
    stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S")
    out, k = base / stamp, 1
    while out.exists():
        out, k = base / f"{stamp}-{k}", k + 1
    out.mkdir(parents=True)
    return out


def _resolve(path, root):
    path = Path(path)
    return path if path.is_absolute() else Path(root) / path


def _mdp_source(spec, root):
    if isinstance(spec, dict):
        spec = dict(spec)
        kind = spec.pop("kind", None)
        if kind == "ring":
            return make_ring(harness._construct(RingSpec, spec, "ring spec"))[1]
        if kind == "inline":
            return mdp_from_dict(spec)
        raise ContractError(f"unknown inline mdp kind {kind!r}")
    return load_mdp(_resolve(spec, root))


def cmd_decompose(args) -> int:
    root = Path(args.config).parent if args.config else Path.cwd()
    cfg = load_config(args.config) if args.config else {}
    mdp_spec = args.mdp or cfg.get("mdp")
    if mdp_spec is None:
        raise ContractError("decompose needs an MDP (--mdp or 'mdp' in the config)")
    mdp = _mdp_source(mdp_spec, root if not args.mdp else Path.cwd())
    policy_spec = args.policy or cfg.get("policy", "uniform")
    pi = uniform_policy(mdp) if policy_spec == "uniform" else load_policy(_resolve(policy_spec, root), mdp)
    value_spec = args.value or cfg.get("value", "exact")
    if value_spec == "exact":
        V = exact_value(mdp, pi)
    elif value_spec == "zero":
        V = np.zeros(mdp.n_states)
    else:
        V = load_value(_resolve(value_spec, root), mdp.n_states)
    d0 = cfg.get("d0")
    d0 = uniform_distribution(mdp.n_states) if d0 is None else check_distribution(d0, mdp.n_states)
    occ = exact_occupancy(mdp, pi, d0)
    h = decompose(DiffOperator(occ), td_field(mdp, occ, V))
    defect = mean_defect(mdp, pi, V)
    doc = h.report()
    doc["u_star"] = [float(x) for x in doc["u_star"]]
    doc["mean_defect"] = {"max_abs": float(np.max(np.abs(defect))), "values": defect.tolist()}
    out = output_dir(args.out, args.overwrite)
    write_json(doc, out / "decomposition.json")
    print(f"norm_input={h.norm_input:.6g} norm_exact={h.norm_exact:.6g} norm_residual={h.norm_residual:.6g}")
    print(f"wrote {out / 'decomposition.json'}")
    return EXIT_OK


def cmd_train(args) -> int:
    if not args.config:
        raise ContractError("train needs --config")
    doc = load_config(args.config)
    seeds = _parse_seeds(args.seeds)
    if seeds is not None:
        doc["seeds"] = seeds
    cfg = harness.RunConfig.from_dict(doc)
    cfg.hfps_config()  # validate before any work
    series = harness.run_experiment(cfg)
    out = output_dir(args.out, args.overwrite)
    path = out / harness.metrics_filename(series)
    harness.write_metrics(series, path)
    harness.write_summary([series], out / "summary.json")
    print(f"wrote {path}")
    if series.failed:
        for seed, step in sorted(series.failed.items()):
            print(f"seed {seed} diverged at step {step}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


SUITES = {"default": diagnostics.default_suite, "negative_control": diagnostics.negative_control_suite}


def cmd_diagnose(args) -> int:
    if not args.config:
        raise ContractError("diagnose needs --config")
    doc = load_config(args.config)
    seeds = _parse_seeds(args.seeds)
    seed = seeds[0] if seeds else int(doc.get("seed", 0))
    suites = doc.get("suites", ["default"])
    unknown = [s for s in suites if s not in SUITES]
    if unknown:
        raise ContractError(f"unknown suites {unknown}; known: {sorted(SUITES)}")
    params = {k: float(doc[k]) for k in ("gamma", "epsilon") if k in doc}
    reports = [r for name in suites for r in SUITES[name](seed, **params)]
    out = output_dir(args.out, args.overwrite)
    write_json({"seed": seed, "reports": [r.to_dict() for r in reports]}, out / "diagnostics.json")
    print(diagnostics.format_table(reports))
    return EXIT_OK if all(r.as_expected for r in reports) else EXIT_CHECK


SUMMARY_COLUMNS = ["env", "regime", "agent", "n_seeds", "n_failed", "auc_mean", "auc_std", "final_mean",
                   "final_std", "best_auc", "best_final"]


def summary_rows(series_list) -> list[dict]:
    """One row per series; the best AUC and Final within each (env, regime) are flagged."""
    rows = [harness.summarize(s) for s in series_list]
    for row in rows:
        row["best_auc"] = row["best_final"] = ""
    for col, flag in (("auc_mean", "best_auc"), ("final_mean", "best_final")):
        groups = {}
        for row in rows:
            if col in row:
                groups.setdefault((row["env"], row["regime"]), []).append(row)
        for group in groups.values():
            top = max(r[col] for r in group)
            for r in group:
                if r[col] == top:
                    r[flag] = "*"
    return rows


def cmd_report(args) -> int:
    metric_dir = Path(args.metric_dir or (load_config(args.config).get("metric_dir") if args.config else "."))
    files = sorted(metric_dir.glob("*.csv"))
    if not files:
        raise ContractError(f"no metric files in {metric_dir}")
    series = [harness.read_metrics(f) for f in files]
    out = output_dir(args.out, args.overwrite)
    rows = summary_rows(series)
    with open(out / "summary.tsv", "w", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_COLUMNS, delimiter="\t", lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    with open(out / "cauc.tsv", "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["env", "regime", "agent", "step", "cauc_mean", "cauc_std"])
        for s in series:
            if s.ok_returns.shape[0] == 0 or s.steps.shape[0] < 2:
                continue
            c = harness.cauc(s)
            for k, step in enumerate(s.steps[1:]):
                w.writerow([s.env, s.regime, s.agent, int(step), repr(float(c[:, k].mean())),
                            repr(float(c[:, k].std()))])
    for row in rows:
        print("\t".join(str(row.get(k, "")) for k in SUMMARY_COLUMNS))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--out", default="runs", help="output directory (default: runs)")
    common.add_argument("--seeds", help="comma-separated seed override")
    common.add_argument("--overwrite", action="store_true", help="write into --out instead of a fresh subdirectory")
    common.add_argument("--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="hodgeflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    d = sub.add_parser("decompose", parents=[common], help="split a TD field into exact and residual parts")
    d.add_argument("--mdp", help="MDP JSON file")
    d.add_argument("--policy", help="policy JSON file or 'uniform'")
    d.add_argument("--value", help="value JSON file, 'exact' or 'zero'")
    d.set_defaults(func=cmd_decompose)
    sub.add_parser("train", parents=[common], help="run a seeded experiment").set_defaults(func=cmd_train)
    sub.add_parser("diagnose", parents=[common], help="run the numerical checks").set_defaults(func=cmd_diagnose)
    r = sub.add_parser("report", parents=[common], help="summarise a directory of metric files")
    r.add_argument("metric_dir", nargs="?")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
