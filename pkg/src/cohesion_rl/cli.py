"""Command line entry point: single runs, S1/S2/S3 sweeps, evaluation, graph dumps."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import EvalConfig, elrar, write_etas
from .graph import build_graph, wst_feature
from .runner import METHODS, ExperimentConfig, run_online
from .sim import ConfigurationError, Trajectory, UserModel, read_jsonl

logger = logging.getLogger("cohesion_rl")

DEFAULT_GAMMAS = (0.0, 0.2, 0.4, 0.6, 0.8, 0.95)
SWEEPS = {
    "s1": ("T", (50, 80, 110, 150)),
    "s2": ("T0", (5, 10, 15, 20)),
    "s3": ("mu1", (0.001, 0.01, 0.1, 1.0, 10.0)),
    "single": ("none", (None,)),
}
# fixed settings of each sweep besides the swept field
SWEEP_BASE = {"s1": {"T0": 10}, "s2": {"T": 80}, "s3": {}, "single": {}}

TABLE_NOTE = "# ElrAR: mean ± sample std across seeds; Avg. is the mean over gamma rows\n"

CSV_FIELDS = ["setting", "method", "gamma", "swept_name", "swept_value", "seed", "elrar",
              "std_across_users", "wall_time_s"]


@dataclass
class SweepSpec:
    setting: str = "single"
    gammas: tuple = DEFAULT_GAMMAS
    methods: tuple = METHODS
    seeds: int = 8
    values: tuple | None = None  # override the default swept values
    out: str | None = None
    workers: int = 1
    base: ExperimentConfig = field(default_factory=ExperimentConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.setting not in SWEEPS:
            raise ConfigurationError(f"setting must be one of {sorted(SWEEPS)}")
        if self.seeds < 1:
            raise ConfigurationError("seeds must be >= 1")
        if not self.gammas or not self.methods or (self.values is not None and not self.values):
            raise ConfigurationError("sweeps must be nonempty")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ConfigurationError(f"unknown methods {sorted(bad)}")

    @property
    def swept_name(self) -> str:
        return SWEEPS[self.setting][0]

    @property
    def swept_values(self) -> tuple:
        return tuple(self.values) if self.values is not None else SWEEPS[self.setting][1]

    def cells(self):
        for value in self.swept_values:
            for gamma in self.gammas:
                for method in self.methods:
                    for k in range(self.seeds):
                        yield method, float(gamma), value, self.base.seed + k

    def cell_config(self, method, gamma, value, seed) -> ExperimentConfig:
        kw = dict(SWEEP_BASE[self.setting], method=method, gamma=gamma, seed=seed)
        if self.swept_name != "none":
            kw[self.swept_name] = value
        return dataclasses.replace(self.base, **kw)


def _run_cell(spec: SweepSpec, cell):
    method, gamma, value, seed = cell
    cfg = spec.cell_config(*cell)
    try:
        res = run_online(cfg)
        mean, etas = elrar(res.users, res.Theta, spec.eval, seed=seed, sigma0=res.config.sigma0)
    except Exception as exc:  # recorded, sweep continues
        return None, f"{spec.setting} {method} gamma={gamma} {spec.swept_name}={value} seed={seed}: " \
                     f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"
    row = {
        "setting": spec.setting, "method": method, "gamma": gamma,
        "swept_name": spec.swept_name, "swept_value": "" if value is None else value,
        "seed": seed, "elrar": mean, "std_across_users": float(np.std(etas, ddof=1)),
        "wall_time_s": res.wall_time_s,
    }
    if spec.out:
        _write_cell(Path(spec.out) / "cells", row)
    return row, None


def _write_cell(cell_dir: Path, row: dict) -> None:
    cell_dir.mkdir(parents=True, exist_ok=True)
    name = f"{row['method']}_g{row['gamma']}_{row['swept_name']}{row['swept_value']}_s{row['seed']}.json"
    tmp = cell_dir / (name + ".tmp")
    tmp.write_text(json.dumps(row))
    os.replace(tmp, cell_dir / name)


def run_sweep(spec: SweepSpec) -> tuple[list[dict], list[str]]:
    """Run every (method, gamma, swept value, seed) cell; returns (rows, errors).

    With ``spec.out`` set, writes results.csv, plot_data.csv, table.txt,
    errors.txt and the base config echo.
    """
    cells = list(spec.cells())
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            outs = list(pool.map(_run_cell, [spec] * len(cells), cells))
    else:
        outs = [_run_cell(spec, c) for c in cells]
    rows = [r for r, _ in outs if r is not None]
    errors = [e for _, e in outs if e is not None]
    if spec.out:
        out = Path(spec.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(spec.base.to_json())
        (out / "sweep.json").write_text(json.dumps({
            "setting": spec.setting, "gammas": list(spec.gammas), "methods": list(spec.methods),
            "seeds": spec.seeds, "swept_values": list(spec.swept_values),
            "T_eval": spec.eval.T_eval, "burn_in": spec.eval.burn_in,
        }, indent=2))
        write_results_csv(out / "results.csv", rows)
        write_plot_data(out / "plot_data.csv", rows)
        (out / "table.txt").write_text(render_table(rows))
        (out / "errors.txt").write_text("\n".join(errors))
    return rows, errors


def write_results_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def read_results_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            r["gamma"] = float(r["gamma"])
            r["seed"] = int(r["seed"])
            for k in ("elrar", "std_across_users", "wall_time_s"):
                r[k] = float(r[k])
            r["swept_value"] = _parse_value(r["swept_value"])
            rows.append(r)
    return rows


def _parse_value(v):
    if v in ("", None):
        return ""
    try:
        f = float(v)
    except ValueError:
        return v
    return int(f) if f.is_integer() and "." not in str(v) else f


def aggregate(rows) -> dict:
    """(method, gamma, swept_value) -> (mean, std across seeds, n)."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["method"], float(r["gamma"]), r["swept_value"]), []).append(r["elrar"])
    out = {}
    for k, v in groups.items():
        v = np.asarray(v)
        out[k] = (float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0, len(v))
    return out


def write_plot_data(path, rows) -> None:
    """Long format: one line per (method, gamma, swept value)."""
    agg = aggregate(rows)
    meta = {(r["method"], float(r["gamma"]), r["swept_value"]): (r["setting"], r["swept_name"]) for r in rows}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["setting", "method", "gamma", "swept_name", "swept_value", "mean_elrar", "std_elrar", "n_seeds"])
        for key in sorted(agg, key=lambda k: (k[1], str(k[2]), k[0])):
            setting, name = meta[key]
            m, s, n = agg[key]
            w.writerow([setting, key[0], key[1], name, key[2], repr(m), repr(s), n])


def render_table(rows) -> str:
    """Rows are gammas plus an Avg. row; columns are (swept value, method).

    Cells read mean±std, the std taken across seeds.
    """
    agg = aggregate(rows)
    methods = [m for m in METHODS if any(k[0] == m for k in agg)]
    values = list(dict.fromkeys(r["swept_value"] for r in rows))
    gammas = sorted({k[1] for k in agg})
    name = rows[0]["swept_name"] if rows else ""
    cols = [(v, m) for v in values for m in methods]
    head = ["gamma"] + [f"{m}" if name in ("", "none") else f"{name}={v} {m}" for v, m in cols]
    lines = [head]
    for g in gammas:
        line = [f"{g:g}"]
        for v, m in cols:
            cell = agg.get((m, g, v))
            line.append("-" if cell is None else f"{cell[0]:.1f}±{cell[1]:.1f}")
        lines.append(line)
    if gammas:
        avg = ["Avg."]
        for v, m in cols:
            means = [agg[(m, g, v)][0] for g in gammas if (m, g, v) in agg]
            avg.append(f"{np.mean(means):.1f}" if means else "-")
        lines.append(avg)
    widths = [max(len(l[i]) for l in lines) for i in range(len(head))]
    body = "\n".join("  ".join(c.rjust(w) for c, w in zip(l, widths)) for l in lines)
    return TABLE_NOTE + body + "\n"


# ----------------------------------------------------------------------------
# argument handling

_JSON_FIELDS = {"beta_basic", "sigma0"}


def _field_type(f: dataclasses.Field):
    if f.name in _JSON_FIELDS:
        return json.loads
    default = f.default
    if isinstance(default, bool):
        return lambda s: s.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int
    if isinstance(default, str):
        return str
    return float


def _add_config_overrides(p: argparse.ArgumentParser, skip=()) -> None:
    g = p.add_argument_group("experiment config overrides")
    g.add_argument("--config", type=Path, help="JSON config (e.g. a config.json echo) used as the base")
    for f in dataclasses.fields(ExperimentConfig):
        if f.name in skip:
            continue
        flag = "--" + f.name.replace("_", "-")
        g.add_argument(flag, dest=f"cfg_{f.name}", type=_field_type(f), default=None, metavar=f.name.upper())


def _base_config(args) -> ExperimentConfig:
    d = json.loads(args.config.read_text()) if getattr(args, "config", None) else {}
    cfg = ExperimentConfig.from_dict(d)
    over = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return dataclasses.replace(cfg, **over)


def _floats(s: str) -> tuple:
    return tuple(float(x) for x in s.split(",") if x.strip())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cohesion-rl", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="one online run, then evaluation")
    run.add_argument("--out", type=Path, help="directory for config echo, data and parameters")
    run.add_argument("--no-eval", action="store_true")
    _add_eval_args(run)
    _add_config_overrides(run)

    sw = sub.add_parser("sweep", help="S1/S2/S3 experiment sweeps")
    sw.add_argument("--setting", choices=sorted(SWEEPS), default="single")
    sw.add_argument("--gamma", type=_floats, default=DEFAULT_GAMMAS, help="comma separated list")
    sw.add_argument("--methods", "--method", dest="methods", default=",".join(METHODS),
                    help="comma separated subset of " + ",".join(METHODS))
    sw.add_argument("--seeds", type=int, default=8, help="seeds per cell, starting at --seed")
    sw.add_argument("--values", type=_floats, default=None, help="override the swept values")
    sw.add_argument("--workers", type=int, default=1)
    sw.add_argument("--out", type=Path, required=True)
    _add_eval_args(sw)
    _add_config_overrides(sw, skip=("method", "gamma"))

    ev = sub.add_parser("eval", help="ElrAR of a saved run directory")
    ev.add_argument("run_dir", type=Path)
    ev.add_argument("--seed", type=int, default=None, help="evaluation seed (default: the run's seed)")
    ev.add_argument("--out", type=Path, help="per-user eta CSV")
    _add_eval_args(ev)

    gd = sub.add_parser("graph-dump", help="rebuild the cohesion graph of a saved run as an edge list")
    gd.add_argument("run_dir", type=Path)
    gd.add_argument("--K", type=int, default=None)
    gd.add_argument("--T0", type=int, default=None)
    gd.add_argument("--out", type=Path, help="edge list path (default stdout)")
    return p


def _add_eval_args(p):
    p.add_argument("--T-eval", dest="T_eval", type=int, default=EvalConfig.T_eval)
    p.add_argument("--burn-in", dest="burn_in", type=int, default=EvalConfig.burn_in)


def _cmd_run(args) -> int:
    cfg = _base_config(args)
    res = run_online(cfg)
    if args.out:
        res.save(args.out)
    print(f"method={res.config.method} seed={res.config.seed} updates={res.n_updates} "
          f"wall_time_s={res.wall_time_s:.2f}")
    if not args.no_eval:
        mean, etas = elrar(res.users, res.Theta, EvalConfig(args.T_eval, args.burn_in),
                           seed=res.config.seed, sigma0=res.config.sigma0)
        print(f"elrar={mean:.3f} std_across_users={np.std(etas, ddof=1):.3f}")
        if args.out:
            write_etas(Path(args.out) / "etas.csv", res.config.seed, res.users, etas)
    return 0


def _cmd_sweep(args) -> int:
    base = _base_config(args)
    spec = SweepSpec(
        setting=args.setting, gammas=tuple(args.gamma), methods=tuple(args.methods.split(",")),
        seeds=args.seeds, values=args.values, out=str(args.out), workers=args.workers,
        base=base, eval=EvalConfig(args.T_eval, args.burn_in),
    )
    rows, errors = run_sweep(spec)
    sys.stdout.write(render_table(rows))
    for e in errors:
        logger.error("cell failed: %s", e.splitlines()[0])
    return 0 if not errors else 1


def _load_run(run_dir: Path):
    cfg = ExperimentConfig.from_dict(json.loads((run_dir / "config.json").read_text()))
    users = read_jsonl(run_dir / "population.jsonl", UserModel)
    Theta = np.atleast_2d(np.loadtxt(run_dir / "theta.csv", delimiter=","))
    if Theta.shape[1] != len(users):
        Theta = Theta.reshape(-1, len(users))
    return cfg, users, Theta


def _cmd_eval(args) -> int:
    cfg, users, Theta = _load_run(args.run_dir)
    seed = cfg.seed if args.seed is None else args.seed
    mean, etas = elrar(users, Theta, EvalConfig(args.T_eval, args.burn_in), seed=seed, sigma0=cfg.sigma0)
    print(f"elrar={mean:.3f} std_across_users={np.std(etas, ddof=1):.3f}")
    if args.out:
        write_etas(args.out, seed, users, etas)
    return 0


def _cmd_graph_dump(args) -> int:
    cfg = ExperimentConfig.from_dict(json.loads((args.run_dir / "config.json").read_text()))
    trajs = read_jsonl(args.run_dir / "trajectories.jsonl", Trajectory)
    T0 = cfg.T0 if args.T0 is None else args.T0
    K = cfg.K if args.K is None else args.K
    prefix = [Trajectory(tr.user_id, tr.states[:T0], tr.actions[:T0], tr.rewards[:T0], tr.next_states[:T0])
              for tr in trajs]
    g = build_graph([wst_feature(tr, T0) for tr in prefix], K)
    if args.out:
        g.to_edge_list(args.out)
    else:
        sys.stdout.write(f"# nodes={g.n_nodes} K={g.K}\n")
        for i, j in g.edges():
            sys.stdout.write(f"{i} {j}\n")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "sweep": _cmd_sweep, "eval": _cmd_eval, "graph-dump": _cmd_graph_dump}
    try:
        return handlers[args.command](args)
    except ConfigurationError as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
