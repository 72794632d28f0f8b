"""Command-line front end: ``drdb estimate``, ``drdb simulate`` and ``drdb report``.

Exit codes: 0 on success, 2 for validation problems (bad flags, files or
configs), 3 when fitting or sampling fails. Errors print one line on stderr.
"""

import argparse
import json
import math
import sys

import numpy as np
from scipy.special import expit

from .bench import DgpConfig, MethodSpec, default_workers, read_metrics_csv, run_replications, write_metrics_csv
from .data import load_csv
from .errors import DRDBError, EstimationError, ValidationError
from .estimands import estimate_target, parse_estimand
from .nuisance import NuisanceConfig, OracleNuisance, _design
from .procedure import RunConfig

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_ESTIMATION = 3

SIMULATE_KEYS = {"n", "p", "s", "family", "dgps", "methods", "reps", "seed", "workers"}
ESTIMATE_KEYS = {"k", "folds", "m_draws", "draws", "alpha", "estimand", "seed", "nuisance", "oracle_file"}

REPORT_COLUMNS = [
    ("Method", "method"), ("Bias", "bias"), ("MSE", "mse"), ("Cov", "cov"), ("CI-Len", "ci_len"),
    ("family", "family"), ("p", "p"), ("s", "s"), ("n", "n"), ("reps", "reps"), ("failures", "failures"),
]


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors raised instead of exiting."""

    def error(self, message):
        raise ValidationError(f"usage: {message}")


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"FileNotFound: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"ConfigParseError: {path}: {exc}") from None


def load_oracle_file(path, data=None):
    """True nuisances from JSON ``{"m1": {"coef": [...]}, "m0": {...}, "e": {...}, "p1": ...}``.

    Coefficients are intercept-first over the ``features`` map (default
    linear). ``e`` is logistic in its coefficients. ``p1`` defaults to the
    treated fraction of ``data``.
    """
    spec = _read_json(path)
    if not isinstance(spec, dict):
        raise ValidationError(f"oracle file {path} must hold a JSON object")
    funcs = {}
    for key in ("m1", "m0", "e"):
        block = spec.get(key)
        if not isinstance(block, dict) or "coef" not in block:
            raise ValidationError(f"oracle file {path}: '{key}' needs a 'coef' list")
        coef = np.asarray(block["coef"], dtype=np.float64)
        features = block.get("features", "linear")
        if data is not None:
            q = _design(data.x[:1], features).shape[1]
            if coef.shape != (q,):
                raise ValidationError(f"oracle file {path}: '{key}' needs {q} coefficients, got {coef.size}")
        funcs[key] = (coef, features)

    def linear(key):
        coef, features = funcs[key]
        return lambda x: _design(x, features) @ coef

    coef_e, feat_e = funcs["e"]
    p1 = spec.get("p1")
    if p1 is None:
        p1 = float(np.mean(data.t)) if data is not None else 0.5
    return OracleNuisance(
        m1=linear("m1"), m0=linear("m0"), e=lambda x: expit(_design(x, feat_e) @ coef_e), p1=float(p1)
    )


def _estimate_config(args):
    file_cfg = _read_json(args.config) if args.config else {}
    if not isinstance(file_cfg, dict):
        raise ValidationError("estimate config must be a JSON object")
    unknown = set(file_cfg) - ESTIMATE_KEYS
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    nuisance = dict(file_cfg.get("nuisance") or {})
    oracle_path = None
    if args.nuisance is not None:
        if args.nuisance == "ridge":
            nuisance["method"] = "ridge"
        elif args.nuisance.startswith("oracle:"):
            nuisance["method"] = "oracle"
            oracle_path = args.nuisance[len("oracle:"):]
        else:
            raise ValidationError(f"--nuisance must be 'ridge' or 'oracle:<file>', got {args.nuisance!r}")
    oracle_path = oracle_path or file_cfg.get("oracle_file")
    if nuisance.get("method") == "oracle" and not oracle_path:
        raise ValidationError("oracle nuisances need a file: --nuisance oracle:<file>")

    def pick(flag, *keys, default):
        if flag is not None:
            return flag
        for key in keys:
            if key in file_cfg:
                return file_cfg[key]
        return default

    estimand = pick(args.estimand, "estimand", default="ate")
    parse_estimand(estimand)
    cfg = RunConfig(
        k=int(pick(args.folds, "k", "folds", default=5)),
        m_draws=int(pick(args.draws, "m_draws", "draws", default=1000)),
        alpha=float(pick(args.alpha, "alpha", default=0.05)),
        estimand=estimand,
        nuisance=NuisanceConfig.from_dict(nuisance),
        seed=int(pick(args.seed, "seed", default=0)),
        retain_draws=False,
    )
    return cfg, oracle_path


def cmd_estimate(args):
    cfg, oracle_path = _estimate_config(args)
    data = load_csv(args.data)
    oracle = load_oracle_file(oracle_path, data) if oracle_path else None
    summary = estimate_target(data, cfg, oracle)
    text = json.dumps(summary.to_dict(), indent=2) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _dgp_grid(cfg):
    keys = ("n", "p", "s", "family")
    if "dgps" in cfg:
        blocks = cfg["dgps"]
        if not isinstance(blocks, list) or not blocks:
            raise ValidationError("'dgps' must be a nonempty list")
    else:
        blocks = [{k: cfg[k] for k in keys if k in cfg}]
    out = []
    for block in blocks:
        unknown = set(block) - set(keys)
        if unknown:
            raise ValidationError(f"unknown DGP keys: {sorted(unknown)}")
        out.append(DgpConfig(**block))
    return out


def cmd_simulate(args):
    cfg = _read_json(args.config)
    if not isinstance(cfg, dict):
        raise ValidationError("simulate config must be a JSON object")
    unknown = set(cfg) - SIMULATE_KEYS
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    reps = args.reps if args.reps is not None else cfg.get("reps", 500)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    workers = args.workers if args.workers is not None else cfg.get("workers", default_workers())
    if not isinstance(reps, int) or reps < 2:
        raise ValidationError("reps >= 2 required")
    methods = [MethodSpec.from_dict(m) for m in cfg.get("methods", ["oracle"])]
    if not methods:
        raise ValidationError("'methods' must name at least one method")
    rows = []
    for dgp in _dgp_grid(cfg):
        rows.extend(run_replications(dgp, methods, reps, int(seed), int(workers)))
    write_metrics_csv(rows, args.out)
    for row in rows:
        if row.flagged:
            print(f"warning: {row.method} (p={row.p}, s={row.s}, n={row.n}) "
                  f"failed in {row.failures} replications", file=sys.stderr)
    return EXIT_OK


def _format_cell(value):
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.3f}"
    return str(value)


def format_table(rows, markdown=False):
    """Metrics rows as an aligned text table or a markdown table."""
    header = [name for name, _ in REPORT_COLUMNS]
    body = []
    for row in rows:
        rec = row.to_record()
        cells = [_format_cell(rec[key]) for _, key in REPORT_COLUMNS]
        if row.flagged:
            cells[0] += "*"
        body.append(cells)
    if markdown:
        lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
        lines += ["| " + " | ".join(cells) + " |" for cells in body]
        return "\n".join(lines) + "\n"
    widths = [max(len(c) for c in col) for col in zip(header, *body)]
    lines = []
    for cells in [header] + body:
        first = cells[0].ljust(widths[0])
        rest = [c.rjust(w) for c, w in zip(cells[1:], widths[1:])]
        lines.append("  ".join([first] + rest).rstrip())
    return "\n".join(lines) + "\n"


def cmd_report(args):
    try:
        rows = read_metrics_csv(args.metrics)
    except FileNotFoundError:
        raise ValidationError(f"FileNotFound: {args.metrics}") from None
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"malformed metrics file {args.metrics}: {exc}") from None
    sys.stdout.write(format_table(rows, args.markdown))
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="drdb", description="Doubly robust debiased Bayesian ATE inference.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    est = sub.add_parser("estimate", help="posterior summary for a CSV dataset")
    est.add_argument("--data", required=True, help="CSV with columns y, t, x1..xp")
    est.add_argument("--estimand", help="ate, att, atc, mu1, mu0 or subgroup:xJ>DELTA")
    est.add_argument("--folds", type=int, help="cross-fitting folds K (default 5)")
    est.add_argument("--draws", type=int, help="posterior draws per fold (default 1000)")
    est.add_argument("--alpha", type=float, help="credible level complement (default 0.05)")
    est.add_argument("--seed", type=int, help="master seed (default 0)")
    est.add_argument("--nuisance", help="'ridge' or 'oracle:<json file>'")
    est.add_argument("--config", help="JSON run config; flags override its values")
    est.add_argument("--out", help="summary JSON path (default stdout)")
    est.set_defaults(func=cmd_estimate)

    sim = sub.add_parser("simulate", help="Monte Carlo campaign to a metrics CSV")
    sim.add_argument("--config", required=True, help="JSON campaign config")
    sim.add_argument("--out", required=True, help="metrics CSV path")
    sim.add_argument("--reps", type=int, help="override the config's reps")
    sim.add_argument("--seed", type=int, help="override the config's seed")
    sim.add_argument("--workers", type=int, help="replication processes (default DRDB_THREADS or 1)")
    sim.set_defaults(func=cmd_simulate)

    rep = sub.add_parser("report", help="format a metrics CSV")
    rep.add_argument("metrics", help="metrics CSV written by simulate")
    rep.add_argument("--markdown", action="store_true", help="emit a markdown table")
    rep.set_defaults(func=cmd_report)
    return parser


def _one_line(exc):
    text = str(exc).splitlines()[0] if str(exc) else ""
    name = type(exc).__name__
    if text.startswith(name) or text.startswith("usage:") or ":" in text.split(" ", 1)[0]:
        return text
    return f"{name}: {text}"


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        print(_one_line(exc), file=sys.stderr)
        return EXIT_VALIDATION
    except (EstimationError, np.linalg.LinAlgError) as exc:
        print(_one_line(exc), file=sys.stderr)
        return EXIT_ESTIMATION
    except DRDBError as exc:
        print(_one_line(exc), file=sys.stderr)
        return EXIT_ESTIMATION
    except (OSError, ValueError, TypeError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
