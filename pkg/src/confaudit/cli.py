"""Command-line entry point: ``confaudit <command> ...``.

Commands: ``simulate``, ``theorem1``, ``dsep``, ``audit`` and ``replay``.
Each command that writes files puts them, plus a ``manifest.json``, into its
``--out`` directory.  ``confaudit replay DIR/manifest.json`` reruns the
recorded command and checks every output byte for byte.

Exit codes: 0 success, 1 error, 2 audit ran but the observed pattern matches
no scenario.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import linear_scm
from .adjust import ADJUSTMENTS, AdjustmentSpec
from .audit import AuditConfig, run_audit
from .classify import CLASSIFIERS, SplitPlan
from .dataset import Dataset, read_csv, write_csv
from .dsep import HYPOTHESES, implied_ci_pattern, is_d_separated, match_pattern, parse_dag, parse_query
from .errors import ConfauditError, SpecificationError
from .restricted_perm import bias_decomposition, perm_null_covariance

EXIT_OK, EXIT_ERROR, EXIT_UNRECOGNIZED = 0, 1, 2
MANIFEST = "manifest.json"
_HIST_BINS = 50


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1 so that 2 stays reserved for unrecognized patterns."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# Shared helpers
# --------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write(out: Path, name: str, text: str, written: list) -> None:
    with (out / name).open("w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    written.append(name)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _spec_from(cfg: dict) -> linear_scm.ScmSpec:
    base = linear_scm.preset(cfg["preset"]).to_dict() if cfg.get("preset") else linear_scm.ScmSpec(0.0, 0.0, 0.0).to_dict()
    for key in base:
        if cfg.get(key) is not None:
            base[key] = cfg[key]
    return linear_scm.ScmSpec(**base)


def _load_data(cfg: dict, binary: bool) -> tuple[Dataset, dict]:
    """Dataset from ``--data`` or a simulated preset, plus its provenance record."""
    if cfg.get("data"):
        path = Path(cfg["data"])
        d = read_csv(path, require_binary=binary)
        return d, {"data": str(path), "sha256": _sha256(path)}
    spec = _spec_from(cfg)
    sim = linear_scm.simulate_binary if binary else linear_scm.simulate
    d = sim(spec, cfg["n"], cfg["seed"])
    return d, {"spec": spec.to_dict(), "n": cfg["n"], "seed": cfg["seed"], "response": "binary" if binary else "continuous"}


def _inputs(cfg: dict) -> dict:
    return {cfg[k]: _sha256(Path(cfg[k])) for k in ("data", "dag") if cfg.get(k)}


def _write_manifest(out: Path, command: str, cfg: dict, written: list) -> None:
    manifest = {
        "command": command,
        "config": cfg,
        "seed": cfg.get("seed"),
        "version": _version(),
        "inputs": _inputs(cfg),
        "artifacts": {name: _sha256(out / name) for name in written},
    }
    (out / MANIFEST).write_text(_dumps(manifest), encoding="utf-8")


# --------------------------------------------------------------------------
# Commands.  Each takes the resolved config and the output directory and
# returns (files written, exit code, message for stdout).
# --------------------------------------------------------------------------


def run_simulate(cfg: dict, out: Path):
    spec = _spec_from(cfg)
    sim = linear_scm.simulate if cfg["continuous"] else linear_scm.simulate_binary
    d = sim(spec, cfg["n"], cfg["seed"])
    written = []
    write_csv(d, out / "data.csv")
    written.append("data.csv")
    return written, EXIT_OK, f"wrote {d.n} rows to {out / 'data.csv'}"


def run_theorem1(cfg: dict, out: Path):
    d, source = _load_data(cfg, binary=False)
    if d.d != 1:
        raise SpecificationError(f"theorem1 needs exactly one feature column, data has {d.d}")
    if np.unique(d.a).size != 2:
        raise SpecificationError("theorem1 needs a confounder with exactly two levels")
    z = linear_scm.standardize(d, response=True)
    null = perm_null_covariance(z.x[:, 0], z.y.astype(float), z.a, B=cfg["B"], seed=cfg["seed"])
    counts, edges = np.histogram(null.stats, bins=_HIST_BINS)
    result = {
        "source": source,
        "standardized": True,
        "n": d.n,
        "B": null.B,
        "observed": null.observed,
        "analytic_mean": null.analytic_mean,
        "confounder_only": null.confounder_only,
        "bias": null.bias,
        "perm_mean": null.perm_mean,
        "perm_sd": null.perm_sd,
        "histogram": {"edges": edges.tolist(), "counts": counts.tolist()},
    }
    if "spec" in source:
        analytic, conf, bias = bias_decomposition(linear_scm.path_coefficients(_spec_from(cfg)))
        result["population"] = {"analytic_mean": analytic, "confounder_only": conf, "bias": bias}
    written = []
    _write(out, "theorem1.json", _dumps(result), written)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["b", "cov"])
    for b, v in enumerate(null.stats):
        w.writerow([b, repr(float(v))])
    _write(out, "theorem1_null.csv", buf.getvalue(), written)
    msg = (
        f"analytic mean {null.analytic_mean:.6f}  confounder-only {null.confounder_only:.6f}  "
        f"bias {null.bias:.6f}  permutation mean {null.perm_mean:.6f} (sd {null.perm_sd:.6f}, B={null.B})"
    )
    return written, EXIT_OK, msg


def run_dsep(cfg: dict, out: Path | None):
    path = Path(cfg["dag"])
    if not path.is_file():
        raise FileNotFoundError(f"no such DAG file: {path}")
    g = parse_dag(path.read_text(encoding="utf-8"))
    lines = []
    if cfg.get("query"):
        i, j, cond = parse_query(cfg["query"])
        sep = is_d_separated(g, i, j, set(cond))
        lines.append(f"{cfg['query'].strip()}: {'separated' if sep else 'connected'}")
    if cfg.get("pattern"):
        pat = implied_ci_pattern(g)
        for h, v in zip(HYPOTHESES, pat.as_tuple()):
            lines.append(f"{h}: {'independent' if v else 'dependent'}")
        lines.append(f"scenario: {match_pattern(pat).label}")
    if not lines:
        raise SpecificationError("dsep needs --query and/or --pattern")
    text = "\n".join(lines) + "\n"
    written = []
    if out is not None:
        _write(out, "dsep.txt", text, written)
    return written, EXIT_OK, text.rstrip("\n")


def _audit_config(cfg: dict) -> AuditConfig:
    return AuditConfig(
        adjustment=AdjustmentSpec(cfg["adjust"], strata=cfg["strata"], seed=cfg["seed"], ipw_mode=cfg["ipw_mode"]),
        classifier=cfg["clf"],
        splits=SplitPlan(cfg["splits"], cfg["train_frac"], cfg["seed"]),
        alpha=cfg["alpha"],
        B_dcor=cfg["B_dcor"],
        bonferroni=cfg["bonferroni"],
        trees=cfg["trees"],
        mtry=cfg["mtry"],
    )


def run_audit_cmd(cfg: dict, out: Path):
    d, source = _load_data(cfg, binary=True)
    report = run_audit(d, _audit_config(cfg), threads=cfg["threads"])
    written = []
    body = report.to_dict()
    body["source"] = source
    _write(out, "report.json", _dumps(body), written)
    _write(out, "pvalues.csv", report.pvalue_csv(1), written)
    _write(out, "pvalues_stage2.csv", report.pvalue_csv(2), written)
    _write(out, "balance.json", _dumps(report.balance), written)
    aucs = [s.auc for s in report.splits]
    msg = f"verdict: {report.label}  (median AUC {float(np.median(aucs)):.3f} over {len(aucs)} splits)"
    code = EXIT_OK if report.verdict.recognized else EXIT_UNRECOGNIZED
    return written, code, msg


_COMMANDS = {
    "simulate": run_simulate,
    "theorem1": run_theorem1,
    "dsep": run_dsep,
    "audit": run_audit_cmd,
}


def _execute(command: str, cfg: dict, out: Path | None):
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    written, code, msg = _COMMANDS[command](cfg, out)
    if out is not None:
        _write_manifest(out, command, cfg, written)
    return written, code, msg


def run_replay(manifest_path: Path, out: Path | None):
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no such manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    command, cfg = manifest["command"], manifest["config"]
    if command not in _COMMANDS:
        raise SpecificationError(f"manifest names unknown command {command!r}")
    for src, digest in manifest.get("inputs", {}).items():
        if not Path(src).is_file():
            raise FileNotFoundError(f"input file recorded in the manifest is missing: {src}")
        if _sha256(Path(src)) != digest:
            raise SpecificationError(f"input file {src} changed since the manifest was written")
    out = manifest_path.parent if out is None else out
    written, code, msg = _execute(command, cfg, out)
    mismatched = [n for n, h in manifest["artifacts"].items() if not (out / n).is_file() or _sha256(out / n) != h]
    extra = sorted(set(written) - set(manifest["artifacts"]))
    if mismatched or extra:
        raise SpecificationError(f"replay differs from manifest: {', '.join(mismatched + extra)}")
    return code, f"{msg}\nreplay identical: {len(manifest['artifacts'])} files"


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------


def _add_spec_args(p):
    p.add_argument("--preset", choices=sorted(linear_scm.PRESETS), help="SCM configuration a, b or c")
    p.add_argument("--beta-ya", type=float, dest="beta_ya")
    p.add_argument("--beta-xa", type=float, dest="beta_xa")
    p.add_argument("--beta-xy", type=float, dest="beta_xy")
    p.add_argument("--sigma2-y", type=float, dest="sigma2_y")
    p.add_argument("--sigma2-x", type=float, dest="sigma2_x")
    p.add_argument("-p", type=float, dest="p", help="P(A = 1)")


def _add_common(p, default_n):
    p.add_argument("-n", type=int, default=default_n, help=f"sample size when simulating (default {default_n})")
    p.add_argument("--seed", type=int, default=0, help="master seed; all randomness derives from it")
    p.add_argument("--out", type=Path, required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="confaudit", description="Confounding audits of classifiers via conditional independence tests.")
    parser.add_argument("--version", action="version", version=_version())
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate a dataset from the linear SCM")
    _add_spec_args(p)
    _add_common(p, 1000)
    p.add_argument("--continuous", action="store_true", help="keep the response continuous instead of median-splitting it")

    p = sub.add_parser("theorem1", help="restricted-permutation null of Cov(X, Y) and its closed-form mean")
    p.add_argument("--data", help="CSV dataset (id,y,a,x1)")
    _add_spec_args(p)
    p.add_argument("-B", type=int, default=5000, dest="B", help="number of restricted permutations")
    _add_common(p, 10000)

    p = sub.add_parser("dsep", help="d-separation queries on a DAG file")
    p.add_argument("dag", help="DAG file, one 'A -> B' or 'A <-> B' per line")
    p.add_argument("--query", help="e.g. 'R _||_ Y | A'")
    p.add_argument("--pattern", action="store_true", help="print the five-slot CI pattern over R, Y, A")
    p.add_argument("--out", type=Path, help="optional output directory")

    p = sub.add_parser("audit", help="full confounding audit")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", help="CSV dataset with binary y")
    src.add_argument("--preset", choices=sorted(linear_scm.PRESETS))
    p.add_argument("--adjust", choices=ADJUSTMENTS, default="none")
    p.add_argument("--clf", choices=CLASSIFIERS, default="logistic")
    p.add_argument("--splits", type=int, default=30)
    p.add_argument("--train-frac", type=float, default=0.7, dest="train_frac")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--B-dcor", type=int, default=1000, dest="B_dcor")
    p.add_argument("--strata", type=int, default=10, help="quantile strata for a continuous confounder")
    p.add_argument("--ipw-mode", choices=("resample", "weight"), default="resample", dest="ipw_mode")
    p.add_argument("--no-bonferroni", action="store_false", dest="bonferroni")
    p.add_argument("--trees", type=int, default=500)
    p.add_argument("--mtry", type=int, default=None)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    _add_common(p, 4000)

    p = sub.add_parser("replay", help="rerun a command from its manifest and verify outputs")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, help="directory for the rerun (default: the manifest's directory)")
    return parser


def _resolve(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("command", "out")}
    spec_keys = ("preset", "beta_ya", "beta_xa", "beta_xy", "sigma2_y", "sigma2_x", "p")
    if args.command in ("theorem1", "audit"):
        has_spec = any(cfg.get(k) is not None for k in spec_keys)
        if cfg.get("data") and has_spec:
            raise SpecificationError("--data cannot be combined with SCM parameters")
        if not cfg.get("data") and not has_spec:
            raise SpecificationError("give --data or --preset")
    if args.command in ("simulate", "theorem1") and not cfg.get("data"):
        _spec_from(cfg)
    if cfg.get("data"):
        cfg["data"] = str(Path(cfg["data"]).resolve())
    if args.command == "dsep":
        cfg["dag"] = str(Path(cfg["dag"]).resolve())
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_ERROR
    try:
        if args.command == "replay":
            code, msg = run_replay(args.manifest, args.out)
        else:
            cfg = _resolve(args)
            _, code, msg = _execute(args.command, cfg, args.out)
    except (ConfauditError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(msg)
    return code


if __name__ == "__main__":
    sys.exit(main())
