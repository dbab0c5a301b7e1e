"""``gsp-lab`` command-line front end.

Experiments are described by a JSON config (see ``docs/config.md``); flags
only override the seed, trial count and output directory.  Every run writes
its CSVs plus ``manifest.json`` with the config hash, seed, library versions
and a SHA-256 per output file.

Exit status: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np
import scipy

from gsp_lab import __version__
from gsp_lab.equilibrium import order_preserving_sne_feasible, verify_sne
from gsp_lab.errors import ConfigError, GspLabError, InvalidInputError
from gsp_lab.model import DEFAULT_SLOT_DECAY, RankingSpec, Realisation, SlotCurve
from gsp_lab.montecarlo import (
    ExperimentConfig,
    FamilyGrid,
    OperatingPoint,
    compare_frontiers,
    dominance_experiment,
    frontier,
    run_sweep,
    run_sweep_detailed,
)
from gsp_lab.replay import (
    LogSpec,
    generate_log,
    read_log_csv,
    replay_sweep,
    smoothness_report,
    write_replay_csv,
)
from gsp_lab.valuedist import PopulationModel, condition_holds, maincond_threshold, reserve_root

COMMANDS = ("sweep", "frontier", "dominance", "replay", "verify", "condcheck")
POINT_FIELDS = tuple(f.name for f in fields(OperatingPoint))


@dataclass
class RunConfig:
    command: str
    config_path: Path
    output_dir: Path
    seed: int | None = None
    trials: int | None = None


# -- tables ------------------------------------------------------------------


def write_points_csv(points, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(POINT_FIELDS)
        for p in points:
            out.writerow([v if isinstance(v, (str, int)) else repr(v) for v in astuple(p)])
    return path


def read_points_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != POINT_FIELDS:
            raise InvalidInputError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            OperatingPoint(row["family"], *(float(row[k]) for k in POINT_FIELDS[1:-1]),
                           int(row["trials"]))
            for row in reader
        ]


def emit_plotdata(points, path, x_metric: str = "welfare", y_metric: str = "revenue") -> list:
    """Write ``x y y_err`` columns, one file per family, rows ascending in x.

    ``path`` is a file prefix; family ``f`` goes to ``<path>_<f>.dat``.
    Returns the written paths.
    """
    points = list(points)
    if not points:
        raise InvalidInputError("no points to write")
    prefix = Path(path)
    by_family: dict = {}
    for p in points:
        by_family.setdefault(p.family, []).append(p)
    written = []
    for family, pts in by_family.items():
        pts.sort(key=lambda p: (p.metric(x_metric), p.metric(y_metric)))
        target = prefix.with_name(f"{prefix.name}_{family}.dat")
        try:
            with open(target, "w", encoding="utf-8") as fh:
                fh.write(f"# family={family} x={x_metric} y={y_metric} y_err={y_metric}_se\n")
                for p in pts:
                    fh.write(f"{p.metric(x_metric)!r} {p.metric(y_metric)!r} "
                             f"{p.metric_se(y_metric)!r}\n")
        except OSError as exc:
            raise OSError(f"cannot write {target}: {exc.strerror}") from exc
        written.append(target)
    return written


# -- config parsing ------------------------------------------------------------


def load_config(path) -> tuple:
    """Parsed JSON and the SHA-256 of the raw file."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return cfg, hashlib.sha256(raw).hexdigest()


def _section(cfg: dict, name: str, default=None):
    if name not in cfg:
        if default is None:
            raise ConfigError(f"missing config section {name!r}")
        return default
    return cfg[name]


def parse_slots(cfg: dict) -> SlotCurve:
    slots = _section(cfg, "slots")
    if "effects" in slots:
        return SlotCurve(tuple(slots["effects"]))
    if "count" not in slots:
        raise ConfigError("slots needs 'effects' or 'count'")
    return SlotCurve.geometric(int(slots["count"]), float(slots.get("decay", DEFAULT_SLOT_DECAY)))


def parse_population(cfg: dict) -> tuple:
    pop = _section(cfg, "population")
    if "bidders" not in pop:
        raise ConfigError("population needs 'bidders'")
    return PopulationModel.from_config(pop), int(pop["bidders"])


def parse_spec_grid(cfg: dict) -> list:
    specs = _section(cfg, "specs")
    grids = cfg.get("grids", {})
    if not isinstance(specs, list) or not specs:
        raise ConfigError("'specs' must be a non-empty list")
    out = []
    for entry in specs:
        if isinstance(entry, str):
            entry = {"family": entry}
        if not isinstance(entry, dict) or "family" not in entry:
            raise ConfigError(f"bad spec entry {entry!r}")
        family = entry["family"]
        grid = {k: v for k, v in grids.get(family, {}).items() if k in ("r", "alpha", "rho")}
        unknown = set(grids.get(family, {})) - {"r", "alpha", "rho", "_comment"}
        if unknown:
            raise ConfigError(f"{family}: unknown grid parameters {sorted(unknown)}")
        out.append(FamilyGrid(family, mode=entry.get("mode"), **grid))
    return out


def experiment_config(cfg: dict, seed: int, trials: int) -> ExperimentConfig:
    population, n = parse_population(cfg)
    return ExperimentConfig(population, n, parse_slots(cfg), parse_spec_grid(cfg), trials, seed,
                            cfg.get("mode", "lowest_sne"))


def _grid(spec, what: str) -> list:
    if isinstance(spec, dict):
        try:
            return [float(v) for v in np.linspace(float(spec["start"]), float(spec["stop"]),
                                                  int(spec["num"]))]
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"{what}: range needs numeric start, stop and num") from None
    if isinstance(spec, (int, float)):
        return [float(spec)]
    if isinstance(spec, list) and spec:
        return [float(v) for v in spec]
    raise ConfigError(f"{what}: expected a number, list or range")


# -- commands ------------------------------------------------------------------


def _point_line(p: OperatingPoint) -> str:
    return (f"{p.family:<13} r={p.r:.4f} alpha={p.alpha:.2f} rho={p.rho:.4f}  "
            f"revenue={p.revenue:.5f}±{p.revenue_se:.5f}  welfare={p.welfare:.5f}  "
            f"clicks={p.clicks:.5f}")


def cmd_sweep(cfg, seed, trials, out: Path) -> list:
    points = run_sweep(experiment_config(cfg, seed, trials))
    for p in points:
        print(_point_line(p))
    return [write_points_csv(points, out / "sweep.csv")]


def cmd_frontier(cfg, seed, trials, out: Path) -> list:
    detailed = run_sweep_detailed(experiment_config(cfg, seed, trials))
    points = [p for p, _ in detailed]
    samples = {p: tm.revenue for p, tm in detailed}
    section = cfg.get("frontier", {})
    x_metrics = section.get("x_metrics", ["welfare"])
    reference = section.get("reference", "proposed")
    written = [write_points_csv(points, out / "points.csv")]
    plot_dir = out / "plotdata"
    plot_dir.mkdir(parents=True, exist_ok=True)
    for x in x_metrics:
        if x not in ("welfare", "click_yield"):
            raise ConfigError(f"frontier x metric must be welfare or click_yield, got {x!r}")
        fronts: dict = {}
        for p in points:
            fronts.setdefault(p.family, []).append(p)
        fronts = {f: frontier(pts, x) for f, pts in fronts.items()}
        rows = [p for f in fronts.values() for p in f]
        for p in rows:
            print(f"[{x}] " + _point_line(p))
        written.append(write_points_csv(rows, out / f"frontier_{x}.csv"))
        written += emit_plotdata(rows, plot_dir / x, x_metric=x)
        if reference in fronts:
            cmp_path = out / f"frontier_compare_{x}.csv"
            with open(cmp_path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["reference", "family", "x_metric", "levels", "fraction_better",
                            "fraction_not_worse"])
                for family, front in fronts.items():
                    if family == reference:
                        continue
                    c = compare_frontiers(fronts[reference], front, x, samples=samples)
                    w.writerow([reference, family, x, len(c.levels), repr(c.fraction_better),
                                repr(c.fraction_not_worse)])
                    print(f"[{x}] {reference} vs {family}: ahead beyond 2 SE at "
                          f"{c.fraction_better:.0%} of {len(c.levels)} levels")
            written.append(cmp_path)
    return written


def cmd_dominance(cfg, seed, trials, out: Path) -> list:
    population, n = parse_population(cfg)
    slots = parse_slots(cfg)
    if population.correlation != 0:
        raise ConfigError("dominance needs independent value and relevance")
    r_values = _grid(_section(cfg, "dominance").get("r"), "dominance.r")
    path = out / "dominance.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "r1", "r1_se", "r2", "r2_se", "diff", "diff_se", "condition_holds"])
        for r in r_values:
            res = dominance_experiment(population.value_dist, r, n, slots.m, trials, seed,
                                       relevance=population.relevance_dist, slots=slots)
            w.writerow([repr(res.r), repr(res.r1), repr(res.r1_se), repr(res.r2),
                        repr(res.r2_se), repr(res.diff), repr(res.diff_se),
                        int(res.condition_holds)])
            print(f"r={r:.4f}  R1={res.r1:.5f}±{res.r1_se:.5f}  R2={res.r2:.5f}±{res.r2_se:.5f}  "
                  f"diff={res.diff:.5f}±{res.diff_se:.5f}  condition={res.condition_holds}")
    return [path]


def cmd_replay(cfg, seed, trials, out: Path, config_dir: Path) -> list:
    section = _section(cfg, "replay")
    if "log" in section:
        records, rejected = read_log_csv(config_dir / section["log"])
        if rejected:
            print(f"rejected {rejected} malformed log records")
    elif "generate" in section:
        gen = dict(section["generate"])
        gen.setdefault("seed", seed)
        records = generate_log(LogSpec.from_config(gen))
    else:
        raise ConfigError("replay needs 'log' or 'generate'")
    if not records:
        raise ConfigError("replay log is empty")
    r_spec = section.get("r_grid", {"start": 0.0, "stop": "bid_q90", "num": 21})
    if isinstance(r_spec, dict) and r_spec.get("stop") == "bid_q90":
        q90 = float(np.quantile([rec.bid for rec in records], 0.9))
        # 21 points strictly below the quantile
        r_values = [float(v) for v in np.linspace(float(r_spec.get("start", 0.0)), q90,
                                                  int(r_spec["num"]), endpoint=False)]
    else:
        r_values = _grid(r_spec, "replay.r_grid")
    specs = _section(cfg, "specs")
    points = replay_sweep(records, specs, r_values,
                          decay=float(section.get("decay", DEFAULT_SLOT_DECAY)),
                          min_bid=section.get("min_bid"))
    for p in points:
        print(f"{p.spec:<13} r={p.r:.4f}  revenue={p.revenue:.5f}  clicks={p.click_yield:.5f}")
    for name, jag in smoothness_report(points).items():
        print(f"jaggedness {name}: {jag:.6f}")
    path = out / "replay.csv"
    write_replay_csv(points, path)
    return [path]


def cmd_verify(cfg, seed, trials, out: Path) -> list:
    inst = _section(cfg, "instance")
    try:
        realisation = Realisation.from_arrays(inst["values"], inst["relevances"],
                                              SlotCurve(tuple(inst["slots"])))
        r = float(inst["r"])
    except KeyError as exc:
        raise ConfigError(f"instance needs {exc.args[0]!r}") from None
    probe = order_preserving_sne_feasible(realisation, r)
    verdict = "feasible" if probe.feasible else "infeasible"
    print(f"order-preserving SNE for bidder 2: {verdict} interval "
          f"({probe.lower:.6g}, {probe.upper:.6g})")
    spec = RankingSpec.standard(reserve_price=r)
    bid_grid = _grid(inst.get("bid_grid", {"start": r, "stop": float(realisation.values[0]),
                                           "num": 11}), "instance.bid_grid")
    checks = []
    for b2 in bid_grid:
        bids = [float(realisation.values[0]), b2]
        v = verify_sne(spec, bids, realisation)
        checks.append({"bids": bids, "ok": v.ok,
                       "violations": [[int(i), int(j), float(s)] for i, j, s in v.violations]})
        print(f"bids={bids}: {'SNE' if v.ok else f'{len(v.violations)} violation(s)'}")
    path = out / "verify.json"
    path.write_text(json.dumps({"feasible": probe.feasible, "lower": probe.lower,
                                "upper": probe.upper, "checks": checks}, indent=2) + "\n",
                    encoding="utf-8")
    return [path]


def cmd_condcheck(cfg, seed, trials, out: Path) -> list:
    dist = PopulationModel.from_config(_section(cfg, "population")).value_dist
    theta_bar = reserve_root(dist)
    r_spec = cfg.get("condcheck", {}).get("r")
    r_values = [] if r_spec is None else _grid(r_spec, "condcheck.r")
    r_values = [r for r in r_values if r != theta_bar] + [theta_bar]
    print(f"theta_bar={theta_bar:.6f}")
    path = out / "condcheck.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "theta_bar", "threshold", "condition_holds"])
        for r in r_values:
            thr = maincond_threshold(dist, r)
            holds = condition_holds(dist, r)
            w.writerow([repr(r), repr(theta_bar), repr(thr), int(holds)])
            print(f"r={r:.6f} threshold={thr:.6f} condition_holds={holds}")
    return [path]


# -- orchestration ---------------------------------------------------------------


def _origin(exc: BaseException) -> str:
    """Innermost gsp_lab module in the traceback, for error messages."""
    name = "gsp_lab"
    tb = exc.__traceback__
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("gsp_lab.") and mod != "gsp_lab.errors":
            name = mod
        tb = tb.tb_next
    return name


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, config_hash: str, seed, trials, files) -> Path:
    manifest = {
        "command": command,
        "config_sha256": config_hash,
        "seed": seed,
        "trials": trials,
        "versions": {
            "gsp_lab": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "files": {str(Path(f).relative_to(out)): _sha256(Path(f)) for f in files},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def run(rc: RunConfig) -> int:
    """Execute one command; returns the process exit status."""
    try:
        if rc.command not in COMMANDS:
            raise ConfigError(f"unknown command {rc.command!r}")
        cfg, cfg_hash = load_config(rc.config_path)
        seed = rc.seed if rc.seed is not None else int(cfg.get("seed", 0))
        trials = rc.trials if rc.trials is not None else int(cfg.get("trials", 1000))
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if trials < 1:
            raise ConfigError("trials must be >= 1")
        try:
            rc.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {rc.output_dir}: "
                              f"{exc.strerror}") from None
    except (ConfigError, InvalidInputError, ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out = rc.output_dir
    try:
        if rc.command == "replay":
            files = cmd_replay(cfg, seed, trials, out, Path(rc.config_path).parent)
        else:
            handler = globals()[f"cmd_{rc.command}"]
            files = handler(cfg, seed, trials, out)
        write_manifest(out, rc.command, cfg_hash, seed, trials, files)
    except (ConfigError, InvalidInputError) as exc:
        print(f"config error ({_origin(exc)}): {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except GspLabError as exc:
        print(f"runtime error ({_origin(exc)}): {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except (KeyError, TypeError, ValueError) as exc:
        # malformed sections surface as lookup / conversion failures
        print(f"config error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gsp-lab", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, type=Path, help="JSON experiment config")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--trials", type=int, help="override the config trial count")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(RunConfig(args.command, args.config, args.out, args.seed, args.trials))


if __name__ == "__main__":
    sys.exit(main())
