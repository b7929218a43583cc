"""Command-line front end.

Each subcommand builds an :class:`~optoent.config.ExperimentConfig` (from
``--config`` or from flags), resolves it, runs the matching pipeline and
writes one CSV per table plus ``manifest.json`` into ``--out``.  Without
``--out`` the tables are printed as CSV on stdout.

A manifest is itself a valid ``--config``: rerunning from it reproduces
every CSV byte for byte.  Exit status is 0 on success, 2 for configuration
errors and 3 for solver or trajectory failures.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .config import MANIFEST_SCHEMA, ExperimentConfig, load_config, parse_config, resolve
from .errors import ConfigurationError, SolverError, TrajectoryError
from .experiments import RunResult, run
from .params import load_presets

COMMANDS = ("rates", "eliminate", "simulate", "postselect", "analytic",
            "figure3", "figure5", "figure6", "sweep")
FIGURES = ("figure3", "figure5", "figure6")


def shipped_config(name: str) -> dict:
    """One of the versioned figure configs bundled with the package."""
    path = resources.files("optoent").joinpath(f"configs/{name}.json")
    return json.loads(path.read_text())


def format_cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def table_csv(table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for row in table.rows:
        w.writerow([format_cell(c) for c in row])
    return buf.getvalue()


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _clean(o):
    """Replace non-finite floats so the manifest is strict JSON."""
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)) and not math.isfinite(o):
        return format_cell(o)
    return o


def write_outputs(out: Path, cfg: ExperimentConfig, result: RunResult) -> dict:
    """Write tables and the manifest; returns the manifest."""
    out.mkdir(parents=True, exist_ok=True)
    outputs = {}
    for t in result.tables:
        text = table_csv(t)
        name = f"{t.name}.csv"
        (out / name).write_text(text)
        outputs[name] = {"sha256": hashlib.sha256(text.encode()).hexdigest(),
                         "columns": list(t.columns), "rows": len(t.rows)}
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "package_version": __version__,
        "command": cfg.command,
        "seed": cfg.seed,
        "config_sha256": cfg.sha256(),
        "config": cfg.to_json_dict(),
        "streams": result.streams,
        "outputs": outputs,
        "report": _clean(result.report),
        # wall-clock metadata lives only here, never in the data files
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, default=_json_default, allow_nan=False) + "\n")
    return manifest


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="optoent", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config or manifest to run")
        sp.add_argument("--preset", action="append", help="parameter preset (repeatable for rates)")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--n-traj", type=int, dest="n_traj", help="trajectories per ensemble")
        sp.add_argument("--workers", type=int, help="worker processes per ensemble")
        sp.add_argument("--out", help="output directory")
        if name == "rates":
            sp.add_argument("--all", action="store_true", help="every shipped preset")
    return ap


def config_from_args(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    elif args.command in FIGURES:
        cfg = parse_config(shipped_config(args.command))
    else:
        doc = {"command": args.command}
        presets = args.preset or []
        if args.command == "rates":
            doc["presets"] = sorted(load_presets()) if args.all else presets
            if not doc["presets"]:
                raise ConfigurationError("rates needs --preset NAME or --all")
        elif presets:
            if len(presets) > 1:
                raise ConfigurationError(f"{args.command} takes a single --preset")
            doc["node"] = {"preset": presets[0]}
        else:
            raise ConfigurationError(f"{args.command} needs --preset or --config")
        cfg = parse_config(doc)
    if cfg.command != args.command:
        raise ConfigurationError(f"config is for {cfg.command!r}, not {args.command!r}")
    if args.config and args.preset:
        raise ConfigurationError("--preset cannot be combined with --config")
    upd = {}
    if args.seed is not None:
        upd["seed"] = args.seed
    sim = {}
    if args.n_traj is not None:
        sim["n_traj"] = args.n_traj
    if args.workers is not None:
        sim["workers"] = args.workers
    if sim:
        upd["simulation"] = cfg.simulation.model_copy(update=sim)
    if upd:
        # revalidate so overrides obey the schema
        doc = cfg.model_copy(update=upd).to_json_dict()
        cfg = parse_config(doc)
    return resolve(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        result = run(cfg)
        if args.out:
            m = write_outputs(Path(args.out), cfg, result)
            print(f"wrote {len(m['outputs'])} table(s) to {args.out} "
                  f"(config {m['config_sha256'][:12]})")
        else:
            for t in result.tables:
                if len(result.tables) > 1:
                    print(f"# {t.name}")
                sys.stdout.write(table_csv(t))
    except ConfigurationError as exc:
        print(f"optoent: configuration error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, TrajectoryError) as exc:
        print(f"optoent: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"optoent: I/O error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
