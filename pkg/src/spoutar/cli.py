"""Command-line front end: simulate, fit, report, predict, benchmark.

Exit codes: 0 success, 2 parse errors (arguments, config, input files),
3 validation errors (inconsistent settings or data), 4 runtime failures.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import fields

import numpy as np

from . import __version__
from .drawio import export_csv, read_draws, write_draws
from .factorization import PairedDataset
from .ingest import IngestError, IngestSpec, ingest, write_matrix_csv
from .posterior import classify_edges, omega_diff_draws, partial_correlations, predict, top_k_edges
from .sampler import ChainConfig, run_chain
from .simgen import ScenarioSpec, run_benchmark, simulate_scenario, write_json

EXIT_OK, EXIT_PARSE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("spoutar")


class ConfigError(Exception):
    pass


class ValidationError(Exception):
    pass


# ---------------------------------------------------------------- config


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            if not k:
                raise ConfigError(f"{path}:{lineno}: empty key")
            out[k] = v
    return out


def _coerce(text: str, default):
    t = text.strip()
    if isinstance(default, bool):
        if t.lower() in ("1", "true", "yes", "on"):
            return True
        if t.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, int):
        return int(t)
    if isinstance(default, float):
        return float(t)
    if isinstance(default, tuple):
        kind = type(default[0]) if default else float
        return tuple(kind(x) for x in t.replace(" ", "").split(",") if x)
    if t.lower() in ("none", ""):
        return None
    return t


_OPTIONAL_TUPLE_INT = {"series_orders", "mixed"}
_OPTIONAL_INT = {"fit_order", "n2"}


def _build(cls, values: dict, section: str):
    defaults = cls()
    kwargs = {}
    known = {f.name for f in fields(cls) if f.init}
    for k, v in values.items():
        if k not in known:
            continue
        try:
            if k in _OPTIONAL_TUPLE_INT:
                kwargs[k] = None if v.lower() == "none" else tuple(int(x) for x in v.split(",") if x.strip())
            elif k in _OPTIONAL_INT:
                kwargs[k] = None if v.lower() == "none" else int(v)
            else:
                kwargs[k] = _coerce(v, getattr(defaults, k))
        except ValueError as exc:
            raise ConfigError(f"{section} key {k!r}: {exc}") from None
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"invalid {section} settings: {exc}") from None


CLI_DEFAULTS = {
    "level": "0.95", "top_k": "10", "horizon": "1", "innovations": "true", "keep_paths": "false",
    "orientation": "rows-are-time", "split": "none", "preprocess": "none", "header": "true",
    "date_column": "none", "standardize": "false", "replications": "5", "workers": "1",
    "export_csv": "false",
}


def gather_settings(args) -> dict[str, str]:
    vals = dict(CLI_DEFAULTS)
    if args.config:
        try:
            vals.update(read_config(args.config))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        vals[k.strip()] = v.strip()
    flag_map = {"seed": "seed", "order": "order", "split": "split", "preprocess": "preprocess",
                "level": "level", "top_k": "top_k", "workers": "workers", "horizon": "horizon"}
    for attr, key in flag_map.items():
        v = getattr(args, attr, None)
        if v is not None:
            vals[key] = str(v)
    return vals


def _get(vals, key, kind):
    try:
        if kind is bool:
            return _coerce(vals[key], False)
        return kind(vals[key])
    except (KeyError, ValueError):
        raise ConfigError(f"setting {key!r} must be {kind.__name__}, got {vals.get(key)!r}") from None


# ---------------------------------------------------------------- helpers


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_matrix(path, mat, names=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if names is not None:
            w.writerow([""] + list(names))
        for i, row in enumerate(np.atleast_2d(mat)):
            lead = [names[i]] if names is not None else []
            w.writerow(lead + [format(v, ".17g") for v in row])


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


class Manifest:
    def __init__(self, command, settings, outdir):
        self.outdir = outdir
        self.rec = {"command": command, "version": __version__, "settings": dict(sorted(settings.items())),
                    "inputs": {}, "outputs": [], "timing": {}, "diagnostics": None}
        self._t0 = time.perf_counter()

    def input(self, path):
        self.rec["inputs"][os.path.basename(path)] = sha256_file(path)

    def output(self, name):
        self.rec["outputs"].append(name)
        return os.path.join(self.outdir, name)

    def write(self):
        self.rec["timing"] = {"seconds": round(time.perf_counter() - self._t0, 3),
                              "python": platform.python_version()}
        _dump_json(self.rec, os.path.join(self.outdir, "manifest.json"))


# ---------------------------------------------------------------- commands


def cmd_simulate(args, vals):
    spec = _build(ScenarioSpec, vals, "scenario")
    out = args.output_dir
    man = Manifest("simulate", vals, out)
    scen = simulate_scenario(spec)
    names = [f"V{i}" for i in range(spec.p)]
    write_matrix_csv(man.output("y1.csv"), scen.data.y1, names)
    if scen.data.paired:
        write_matrix_csv(man.output("y2.csv"), scen.data.y2, names)
        _write_matrix(man.output("omega2.csv"), scen.omega2)
    _write_matrix(man.output("omega1.csv"), scen.omega1)
    _write_matrix(man.output("pacf.csv"), scen.pacf)
    _dump_json({"spec": spec.to_dict(), "achieved_sparsity": scen.achieved_sparsity,
                "orders": scen.orders.tolist(), "shifted_edges": scen.shifted,
                "wishart_df_recorded": spec.wishart_df}, man.output("scenario.json"))
    man.write()


def _load_fit_data(args, vals, order):
    spec = IngestSpec(args.input, orientation=vals["orientation"], split=vals["split"],
                      preprocess=vals["preprocess"], header=_get(vals, "header", bool),
                      date_column=None if vals["date_column"].lower() == "none" else vals["date_column"],
                      standardize=_get(vals, "standardize", bool))
    res = ingest(spec, min_length=order)
    if args.input2:
        if res.data.paired:
            raise ValidationError("--input2 given but the split rule already produced two periods")
        spec2 = IngestSpec(args.input2, orientation=spec.orientation, split="none", preprocess=spec.preprocess,
                           header=spec.header, date_column=spec.date_column, standardize=False)
        res2 = ingest(spec2, min_length=order)
        if res2.names != res.names:
            raise ValidationError("the two input files have different variables")
        y2 = res2.data.y1
        if spec.standardize:
            m = np.array(res.scaling["mean"])[:, None]
            s = np.array(res.scaling["sd"])[:, None]
            y2 = (y2 - m) / s
        res.data = PairedDataset(res.data.y1, y2)
    return res


def cmd_fit(args, vals):
    if not args.input:
        raise ConfigError("fit needs --input")
    cfg = _build(ChainConfig, vals, "chain")
    out = args.output_dir
    man = Manifest("fit", vals, out)
    man.input(args.input)
    if args.input2:
        man.input(args.input2)
    res = _load_fit_data(args, vals, cfg.order)
    cfg.log_path = man.output("diagnostics.ndjson")
    try:
        result = run_chain(res.data, cfg)
    except ValueError as exc:
        raise RuntimeError(f"chain initialisation failed: {exc}") from exc
    cfg.log_path = "diagnostics.ndjson"
    write_draws(result.draws, man.output("draws.bin"))
    if _get(vals, "export_csv", bool):
        export_csv(result.draws, man.output("draws.csv"))
    _dump_json({"names": res.names, "scaling": res.scaling, "paired": res.data.paired,
                "order": cfg.order, "chain_config": cfg.to_dict()}, man.output("fit.json"))
    last = res.data.periods()[-1]
    write_matrix_csv(man.output("history.csv"), last, res.names)
    man.rec["diagnostics"] = {"stored_draws": result.draws.n_draws,
                              "acceptance": result.diagnostics.summary(),
                              "final_log_posterior": float(result.diagnostics.logpost[-1])}
    man.write()


def _load_fit_dir(path):
    meta_path = os.path.join(path, "fit.json")
    draws_path = os.path.join(path, "draws.bin")
    if not os.path.exists(draws_path):
        raise FileNotFoundError(f"no draws found in {path!r} (expected draws.bin from a fit run)")
    with open(meta_path) as fh:
        meta = json.load(fh)
    return read_draws(draws_path), meta, draws_path


def cmd_report(args, vals):
    draws, meta, draws_path = _load_fit_dir(args.draws)
    level = _get(vals, "level", float)
    k = _get(vals, "top_k", int)
    if k < 1:
        raise ValidationError("--top-k must be at least 1")
    if not 0 < level < 1:
        raise ValidationError("--level must lie in (0, 1)")
    names = meta["names"]
    man = Manifest("report", vals, args.output_dir)
    man.input(draws_path)
    if draws.n_draws == 0:
        raise ValidationError("the fit stored zero draws; nothing to report")
    for period in ([1, 2] if draws.paired else [1]):
        om = draws.omega_mean(period)
        _write_matrix(man.output(f"omega{period}_mean.csv"), om, names)
        _write_matrix(man.output(f"partial_corr{period}.csv"), partial_correlations(om), names)
    if draws.paired:
        rep = classify_edges(omega_diff_draws(draws), level, names)
        _dump_json(rep.to_dict(), man.output("edge_shifts.json"))
        with open(man.output("edge_shifts.dot"), "w") as fh:
            fh.write(rep.to_dot())
        top = top_k_edges(rep, k)
        with open(man.output("top_edges.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "var_i", "var_j", "mean_diff", "shift"])
            for e in top:
                w.writerow([e["rank"], e["name_i"], e["name_j"], format(e["mean"], ".17g"), e["shift"]])
        man.rec["diagnostics"] = {"flagged_edges": int(rep.flagged().size)}
    man.write()


def cmd_predict(args, vals):
    draws, meta, draws_path = _load_fit_dir(args.draws)
    horizon = _get(vals, "horizon", int)
    if horizon < 1:
        raise ValidationError("horizon must be at least 1")
    hist_path = args.history or os.path.join(args.draws, "history.csv")
    man = Manifest("predict", vals, args.output_dir)
    man.input(draws_path)
    man.input(hist_path)
    hist = ingest(IngestSpec(hist_path, header=True), min_length=0)
    if hist.names != meta["names"]:
        raise ValidationError("history variables do not match the fitted variables")
    seed = int(vals.get("seed", 0))
    fc = predict(draws, hist.data.y1, horizon, rng=np.random.default_rng(seed),
                 innovations=_get(vals, "innovations", bool), keep_paths=_get(vals, "keep_paths", bool))
    with open(man.output("forecast.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + meta["names"])
        for h in range(fc.horizon):
            w.writerow([h + 1] + [format(v, ".17g") for v in fc.mean[h]])
    if fc.paths is not None:
        np.save(man.output("forecast_paths.npy"), fc.paths)
    man.write()


def _parse_grid(vals) -> list[ScenarioSpec]:
    """Cartesian grid over comma-separated ``p``, ``n``, ``q`` and ``sparsity`` values."""
    def lst(key, kind, default):
        return [kind(x) for x in vals.get(key, default).split(",") if x.strip()]
    base = {k: v for k, v in vals.items() if k not in ("p", "n", "q", "sparsity", "seed")}
    grid, c = [], 0
    seed = int(vals.get("seed", 0))
    for p in lst("p", int, "30"):
        for n in lst("n", int, "150"):
            for q in lst("q", int, "2"):
                for s in lst("sparsity", float, "0.9"):
                    spec = _build(ScenarioSpec, {**base, "p": str(p), "n": str(n), "q": str(q),
                                                 "sparsity": str(s), "seed": str(seed * 1000 + c)}, "scenario")
                    grid.append(spec)
                    c += 1
    return grid


def cmd_benchmark(args, vals):
    grid = _parse_grid(vals)
    reps = _get(vals, "replications", int)
    workers = _get(vals, "workers", int)
    if reps < 0 or workers < 1:
        raise ValidationError("replications must be >= 0 and workers >= 1")
    chain = {}
    defaults = ChainConfig()
    for f in fields(ChainConfig):
        if f.name in vals and f.name not in ("order", "seed", "single_period", "series_orders"):
            chain[f.name] = _coerce(vals[f.name], getattr(defaults, f.name))
    man = Manifest("benchmark", vals, args.output_dir)
    table = run_benchmark(grid, reps, chain, workers)
    write_json(table, man.output("benchmark.json"))
    with open(man.output("benchmark.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p", "n", "q", "sparsity", "rmse", "identity_rmse"])
        for row in table["rows"]:
            w.writerow([row["p"], row["n"], row["q"], row["sparsity"],
                        "" if row["rmse"] is None else format(row["rmse"], ".6g"),
                        "" if row["identity_rmse"] is None else format(row["identity_rmse"], ".6g")])
    man.write()


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "report": cmd_report,
            "predict": cmd_predict, "benchmark": cmd_benchmark}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_PARSE)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="spoutar", description="Paired-period sparse precision estimation with AR latents.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key = value settings file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--output-dir", default=".")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "fit":
            sp.add_argument("--input", help="CSV file with the observations")
            sp.add_argument("--input2", help="optional CSV with the second period")
            sp.add_argument("--order", type=int)
            sp.add_argument("--split")
            sp.add_argument("--preprocess", choices=["none", "log-diff"])
        if name in ("report", "predict"):
            sp.add_argument("--draws", required=True, help="output directory of a fit run")
        if name == "report":
            sp.add_argument("--level", type=float)
            sp.add_argument("--top-k", type=int, dest="top_k")
        if name == "predict":
            sp.add_argument("--history", help="CSV of recent observations (default: fit history)")
            sp.add_argument("--horizon", type=int)
        if name == "benchmark":
            sp.add_argument("--workers", type=int)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        vals = gather_settings(args)
        os.makedirs(args.output_dir, exist_ok=True)
        COMMANDS[args.command](args, vals)
    except (ConfigError, IngestError, json.JSONDecodeError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ValidationError, ValueError, FileNotFoundError, IndexError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - last-resort category
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
