"""Configuration-driven experiment runner.

``bimatch run CONFIG`` builds the network, loads or builds the index
cache, runs the replications for every (policy, zeta) cell and writes
tab-separated result files plus a manifest. ``bimatch boundaries SERVICE``
writes the boundary curves of the two-type fixture.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__
from ._backend import COMPILED
from .errors import BimatchError, ConfigError, InvariantError, NumericError, UsageError
from .indices import (
    IndexTable,
    boundary_sweep,
    build_index_table,
    rates_key,
    two_type_fixture,
    whittle_index_self_shared,
)
from .network import (
    EconParams,
    HexLayout,
    build_services,
    default_data_files,
    export_catalog,
    generate_uniform_network,
    load_real_network,
)
from .policies import POLICIES
from .simulator import CompiledSystem, SimulationJob, arrival_segments, replicate, t_halfwidth

__all__ = [
    "CONFIG_SCHEMA",
    "ExperimentConfig",
    "load_config",
    "run_experiment",
    "relative_differences",
    "emit_boundaries",
    "main",
]

log = logging.getLogger("bimatch")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["name", "network", "econ", "zeta", "policies", "simulation", "index"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "network": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["uniform", "real"]},
                "lam": _POS,
                "layout": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "cell_size": _POS,
                        "offset": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                        "rings": {"type": "integer", "minimum": 1},
                    },
                },
                "demand_table": {"type": "string"},
                "centroid_table": {"type": "string"},
                "profile_table": {"type": "string"},
                "km_per_unit": _POS,
                "source_index": {"type": "integer", "minimum": 0},
            },
        },
        "econ": {
            "type": "object",
            "required": ["b", "gamma", "Q", "upsilon", "beta", "N"],
            "additionalProperties": False,
            "properties": {
                "b": _POS, "gamma": _POS, "Q": _POS, "upsilon": _POS, "beta": _POS,
                "N": {"type": "integer", "minimum": 1},
            },
        },
        "zeta": {"type": "array", "items": _POS, "minItems": 1},
        "policies": {"type": "array", "items": {"enum": sorted(POLICIES)}, "minItems": 1,
                     "uniqueItems": True},
        "simulation": {
            "type": "object",
            "required": ["horizon", "n_reps", "base_seed"],
            "additionalProperties": False,
            "properties": {
                "horizon": _POS,
                "warmup": {"type": "number", "minimum": 0},
                "n_reps": {"type": "integer", "minimum": 2},
                "base_seed": {"type": "integer", "minimum": 0},
                "include_reneged": {"type": "boolean"},
                "workers": {"type": "integer", "minimum": 1},
                "bin_width": _POS,
                "rel_target": _POS,
            },
        },
        "index": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["exact", "vi", "terminal"]},
                "beta": {"type": "number", "minimum": 0, "maximum": 1},
                "sigma": _POS,
                "workers": {"type": "integer", "minimum": 1},
            },
        },
        "output": {"type": "string"},
    },
}

METRIC_COLUMNS = ["policy", "zeta", "metric", "mean", "ci_halfwidth", "flagged"]


@dataclass
class ExperimentConfig:
    raw: dict
    source: str = ""
    base: Path = field(default_factory=Path.cwd)

    @property
    def sha256(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()

    def econ(self, zeta: float) -> EconParams:
        e = self.raw["econ"]
        return EconParams(e["b"], e["gamma"], e["Q"], e["upsilon"], e["beta"], float(zeta), e["N"])

    @property
    def sim(self) -> dict:
        s = {"warmup": None, "include_reneged": True, "workers": 1, "bin_width": 60.0,
             "rel_target": 0.03}
        s.update(self.raw["simulation"])
        return s

    @property
    def index(self) -> dict:
        s = {"method": "exact", "beta": 0.999, "sigma": 1e-6, "workers": 1}
        s.update(self.raw["index"])
        return s

    def path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base / q


def _packaged_config(name: str) -> Path | None:
    p = resources.files("bimatch") / "configs" / f"{name}.yaml"
    return Path(str(p)) if p.is_file() else None


def load_config(path) -> ExperimentConfig:
    """Read and validate a YAML config. ``path`` may name a packaged config."""
    p = Path(path)
    if not p.exists() and _packaged_config(str(path)) is not None:
        p = _packaged_config(str(path))
    try:
        raw = yaml.safe_load(p.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    validate_config(raw)
    cfg = ExperimentConfig(raw, str(p), p.resolve().parent)
    net = raw["network"]
    if net["kind"] == "uniform" and "lam" not in net:
        raise ConfigError("uniform network needs network.lam")
    for key in ("demand_table", "centroid_table", "profile_table"):
        if key in net and not cfg.path(net[key]).exists():
            raise ConfigError(f"network.{key} file {net[key]} does not exist")
    return cfg


def validate_config(raw) -> None:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None


def _network(cfg: ExperimentConfig, econ: EconParams):
    net = cfg.raw["network"]
    if net["kind"] == "uniform":
        lay = net.get("layout", {})
        layout = HexLayout(lay.get("cell_size", 1.0), tuple(lay.get("offset", (11.5, 0.0))),
                           lay.get("rings", 12))
        return generate_uniform_network(layout, econ, net["lam"])
    files = default_data_files()
    for key in files:
        if key in net:
            files[key] = cfg.path(net[key])
    return load_real_network(files["demand_table"], files["centroid_table"], files["profile_table"],
                             econ, km_per_unit=net.get("km_per_unit", 2.0),
                             source_index=net.get("source_index", 0))


def _parse_only(only: str | None) -> dict:
    sel: dict = {}
    if not only:
        return sel
    for tok in only.split(","):
        k, sep, v = tok.partition("=")
        k = k.strip()
        if not sep or k not in ("policy", "zeta"):
            raise ConfigError(f"--only expects policy=...,zeta=... entries, got {tok!r}")
        sel.setdefault(k, set()).add(v.strip() if k == "policy" else float(v))
    return sel


def _index_tables(cfg, catalog, spec, econ, zeta, out: Path, rebuild: bool) -> dict:
    """One table per distinct set of interval arrival rates, cached on disk."""
    ix = cfg.index
    horizon = cfg.sim["horizon"]
    _, rates = arrival_segments([t.profile for t in spec.types], horizon)
    tables = {}
    cache = out / "index"
    cache.mkdir(parents=True, exist_ok=True)
    for row in rates:
        r = {ell: float(row[ell - 1]) for ell in range(1, spec.L + 1)}
        key = rates_key(r)
        if key in tables:
            continue
        path = cache / f"zeta{zeta:g}_{key}.tsv"
        if path.exists() and not rebuild:
            tables[key] = IndexTable.load(path, catalog, r, ix["beta"], ix["sigma"], ix["method"])
            continue
        log.info("building index table %s", path.name)
        tab = build_index_table(catalog, r, econ.N, ix["beta"], ix["sigma"], ix["method"], ix["workers"])
        tab.save(path, catalog)
        tables[key] = tab
    return tables


def relative_differences(metrics: list) -> list:
    """Relative differences ``(rho1 - rho2) / rho2`` for every ordered policy pair.

    ``metrics`` holds rows of :data:`METRIC_COLUMNS`. Returns rows
    ``(zeta, metric, policy, versus, value)`` for the average reward and the
    mean delay.
    """
    means = {}
    for row in metrics:
        means[(float(row["zeta"]), row["metric"], row["policy"])] = float(row["mean"])
    zetas = sorted({k[0] for k in means})
    pols = sorted({k[2] for k in means}, key=lambda p: POLICIES[p])
    out = []
    for z in zetas:
        for metric in ("average_reward", "mean_delay"):
            for p1 in pols:
                for p2 in pols:
                    if p1 == p2 or (z, metric, p1) not in means or (z, metric, p2) not in means:
                        continue
                    a, b = means[(z, metric, p1)], means[(z, metric, p2)]
                    val = (a - b) / b if b != 0 else math.nan
                    out.append((z, metric, p1, p2, val))
    return out


def _write_tsv(path: Path, header: list, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, dialect="excel-tab", lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def read_metrics(path) -> list:
    with open(path, newline="") as f:
        return list(csv.DictReader(f, dialect="excel-tab"))


def run_experiment(cfg: ExperimentConfig, out: Path | None = None, seed: int | None = None,
                   rebuild_index: bool = False, only: str | None = None) -> int:
    """Run every selected (policy, zeta) cell and write the result files.

    Returns the exit status: 0 when every cell succeeded, otherwise the
    status of the most severe failure. Failing cells are skipped and listed
    in the manifest.
    """
    out = Path(out) if out is not None else cfg.path(cfg.raw.get("output", f"results/{cfg.raw['name']}"))
    out.mkdir(parents=True, exist_ok=True)
    sim = cfg.sim
    base_seed = cfg.raw["simulation"]["base_seed"] if seed is None else seed
    sel = _parse_only(only)
    zetas = [float(z) for z in cfg.raw["zeta"] if "zeta" not in sel or float(z) in sel["zeta"]]
    policies = [p for p in cfg.raw["policies"] if "policy" not in sel or p in sel["policy"]]
    if not zetas or not policies:
        raise ConfigError("--only selects no (policy, zeta) cell")
    metric_rows, hourly_rows, failures, catalogs = [], [], [], {}
    status = 0
    for z in zetas:
        econ = cfg.econ(z)
        spec = _network(cfg, econ)
        catalog = build_services(spec, econ)
        catalog.check()
        catalogs[repr(z)] = {"hash": catalog.hash(), "J": catalog.J, "L": spec.L}
        export_catalog(catalog, out / f"catalog_zeta{z:g}.tsv")
        system = CompiledSystem.build(catalog, econ.N)
        profiles = tuple(t.profile for t in spec.types)
        tables = None
        if "bi" in policies:
            try:
                tables = _index_tables(cfg, catalog, spec, econ, z, out, rebuild_index)
            except NumericError as exc:
                failures.append({"policy": "bi", "zeta": z, "error": str(exc)})
                status = max(status, exc.exit_code)
        for pol in policies:
            if pol == "bi" and tables is None:
                continue
            index = None
            if pol == "bi":
                index = next(iter(tables.values())) if len(tables) == 1 else tables
            job = SimulationJob(system, pol, profiles, sim["horizon"], sim["warmup"], index,
                                sim["include_reneged"], sim["bin_width"])
            try:
                summ = replicate(job, sim["n_reps"], base_seed, sim["workers"], sim["rel_target"])
            except (NumericError, InvariantError) as exc:
                failures.append({"policy": pol, "zeta": z, "error": str(exc)})
                status = max(status, exc.exit_code)
                continue
            for name in summ.means:
                metric_rows.append((pol, z, name, summ.means[name], summ.halfwidths[name],
                                    int(summ.flags[name])))
            hourly = np.array([m.hourly_reward_rate for m in summ.metrics])
            for h in range(hourly.shape[1]):
                hourly_rows.append((h, pol, z, float(hourly[:, h].mean()), t_halfwidth(hourly[:, h])))
            log.info("zeta=%g %s: reward %.4f +- %.4f", z, pol, *summ.row("average_reward"))
    _write_tsv(out / "metrics.tsv", METRIC_COLUMNS, metric_rows)
    rel = relative_differences(read_metrics(out / "metrics.tsv"))
    _write_tsv(out / "relative_differences.tsv", ["zeta", "metric", "policy", "versus", "value"], rel)
    _write_tsv(out / "hourly.tsv", ["hour", "policy", "zeta", "reward_rate", "ci_halfwidth"], hourly_rows)
    manifest = {
        "package_version": __version__,
        "compiled_kernels": COMPILED,
        "config_source": cfg.source,
        "config_sha256": cfg.sha256,
        "config": cfg.raw,
        "base_seed": base_seed,
        "seeds": [base_seed + i for i in range(sim["n_reps"])],
        "only": only,
        "catalogs": catalogs,
        "failures": failures,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return status


def emit_boundaries(service_id: int, out: Path, grid=(-100.0, -80.0, -60.0, -40.0, -20.0),
                    slots=(1, 2), method: str = "vi") -> Path:
    """Boundary curves of a fixture service as ``(n1, n2, slot, eta_other, eta_crossing)`` rows.

    Self-shared services get their closed-form vertical lines, one row per
    state and grid value, with a notice on stderr.
    """
    cat = two_type_fixture()
    if not 1 <= service_id <= cat.J:
        raise UsageError(f"fixture has services 1..{cat.J}, got {service_id}")
    svc = cat.service(service_id)
    lam, N = 5.0, 5
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"boundaries_service{service_id}.tsv"
    rows = []
    if svc.self_shared:
        print(f"service {service_id} is self-shared: its boundaries are vertical lines at the "
              "closed-form indices", file=sys.stderr)
        for s, eta in sorted(whittle_index_self_shared(svc, lam).items()):
            for g in grid:
                rows.append((s.n1, s.n2, 1, float(g), eta))
    else:
        for slot in slots:
            for c in boundary_sweep(svc, (lam, lam), N, list(grid), slot=slot, method=method):
                for g, x in c.samples:
                    rows.append((c.state.n1, c.state.n2, slot, float(g), "" if x is None else x))
    _write_tsv(path, ["n1", "n2", "slot", "eta_other", "eta_crossing"], rows)
    return path


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bimatch", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config", help="YAML config path, or a packaged name (uniform, melbourne)")
    r.add_argument("--out", type=Path, help="output directory (overrides the config)")
    r.add_argument("--seed", type=int, help="base seed (overrides the config)")
    r.add_argument("--rebuild-index", action="store_true", help="ignore and replace cached index tables")
    r.add_argument("--only", help="restrict cells, e.g. policy=bi,policy=jlq,zeta=5")
    b = sub.add_parser("boundaries", help="boundary curves of a two-type fixture service")
    b.add_argument("service", type=int)
    b.add_argument("--out", type=Path, default=Path("."))
    b.add_argument("--grid", type=float, nargs="+", default=[-100.0, -80.0, -60.0, -40.0, -20.0])
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.cmd == "run":
            cfg = load_config(args.config)
            return run_experiment(cfg, args.out, args.seed, args.rebuild_index, args.only)
        path = emit_boundaries(args.service, args.out, tuple(args.grid))
        print(path)
        return 0
    except BimatchError as exc:
        print(f"bimatch: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
