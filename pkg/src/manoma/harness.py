"""Experiment harness: config files, seeded Monte Carlo sweeps, CSV output.

File contracts
--------------
* config files: flat ``key=value`` lines, keys exactly the ``SystemConfig``
  field names; the two power fields are given in dBm.  Unknown keys and
  invariant violations are rejected with the offending line/field.
* ``results.csv``: header
  ``sweep_param,value,scheme,realization,throughput_bpshz,runtime_s,outer_iters``,
  one row per successful run, 12 significant digits, rows sorted by
  (value, scheme, realization).
* ``manifest.json``: resolved base config, sweep description, tool version,
  per-cell geometry digests and any failed cells.  Everything in the manifest
  and the trace CSVs is reproducible bit-for-bit from the seed; the
  ``runtime_s`` column is measured wall time and is the single
  non-reproducible field in the output set.
* ``traces/trace_v<value>_r<realization>.csv``: per-outer-iteration objective
  of the joint-optimizer scheme, header ``outer_iter,objective_bpshz``.

Sweep cells (one value, one realization) are independent work items and may
be dispatched to a process pool; set ``MANOMA_WORKERS`` to bound it.  Output
ordering never depends on completion order.
"""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .channel import geometry_digest, sample_geometry
from .config import CONFIG_FIELD_NAMES, ConfigError, SystemConfig, coerce_field
from .schemes import SCHEME_IDS, run_scheme

SWEEP_PARAMS = (
    "power_budget_dBm",
    "num_bs_antennas",
    "num_users",
    "num_paths",
    "bs_region_wavelengths",
    "user_region_wavelengths",
    "mrt_coefficient",
)

RESULTS_HEADER = (
    "sweep_param,value,scheme,realization,throughput_bpshz,runtime_s,outer_iters"
)
TRACE_HEADER = "outer_iter,objective_bpshz"

_INT_VALUED = {"num_bs_antennas", "num_users", "num_paths"}


@dataclass
class SweepSpec:
    sweep_param: str
    values: list
    schemes: list
    num_realizations: int
    base: SystemConfig
    out_dir: str = "results"

    def __post_init__(self):
        if self.sweep_param not in SWEEP_PARAMS:
            raise ConfigError(
                f"sweep_param: '{self.sweep_param}' not one of {SWEEP_PARAMS}"
            )
        if not self.values:
            raise ConfigError("values: sweep value list must be non-empty")
        if self.num_realizations < 1:
            raise ConfigError("realizations: must be >= 1")
        for s in self.schemes:
            if s not in SCHEME_IDS:
                raise ConfigError(f"schemes: unknown scheme '{s}'")


@dataclass
class RunRecord:
    sweep_param: str
    value: float
    scheme: str
    realization: int
    throughput_bpshz: float = np.nan
    runtime_s: float = np.nan
    outer_iters: int = 0
    trace: list = field(default_factory=list)
    per_user_rates: tuple = ()
    digest: str = ""
    error: str | None = None


def _parse_flat_file(path: str) -> dict:
    pairs = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got '{line}'")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key in pairs:
                raise ConfigError(f"{path}:{lineno}: duplicate key '{key}'")
            pairs[key] = (value, lineno)
    return pairs


def load_config(path: str) -> SystemConfig:
    """Parse a flat key=value config file; missing keys take the defaults."""
    pairs = _parse_flat_file(path)
    kwargs = {}
    for key, (value, lineno) in pairs.items():
        if key not in CONFIG_FIELD_NAMES:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
        try:
            kwargs[key] = coerce_field(key, value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return SystemConfig(**kwargs)


def load_sweep_spec(path: str, base: SystemConfig | None = None) -> SweepSpec:
    """Parse a sweep spec file: reserved keys plus base-config overrides."""
    pairs = _parse_flat_file(path)
    reserved = {"sweep_param", "values", "schemes", "realizations", "out"}
    cfg_kwargs = {}
    spec_kwargs = {}
    for key, (value, lineno) in pairs.items():
        if key in reserved:
            spec_kwargs[key] = value
        elif key in CONFIG_FIELD_NAMES:
            try:
                cfg_kwargs[key] = coerce_field(key, value)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
        else:
            raise ConfigError(f"{path}:{lineno}: unknown sweep key '{key}'")
    if "sweep_param" not in spec_kwargs:
        raise ConfigError(f"{path}: missing required key 'sweep_param'")
    if "values" not in spec_kwargs:
        raise ConfigError(f"{path}: missing required key 'values'")
    if base is None:
        base = SystemConfig(**cfg_kwargs)
    elif cfg_kwargs:
        base = base.with_updates(**cfg_kwargs)
    param = spec_kwargs["sweep_param"]
    caster = int if param in _INT_VALUED else float
    values = [caster(v) for v in spec_kwargs["values"].split(",") if v.strip()]
    schemes = [
        s.strip()
        for s in spec_kwargs.get("schemes", ",".join(SCHEME_IDS)).split(",")
        if s.strip()
    ]
    return SweepSpec(
        sweep_param=param,
        values=values,
        schemes=schemes,
        num_realizations=int(spec_kwargs.get("realizations", "20")),
        base=base,
        out_dir=spec_kwargs.get("out", "results"),
    )


def apply_sweep_value(base: SystemConfig, param: str, value) -> SystemConfig:
    if param == "power_budget_dBm":
        return base.with_updates(power_budget_dbm=float(value))
    if param == "num_bs_antennas":
        return base.with_updates(num_bs_antennas=int(value))
    if param == "num_users":
        return base.with_updates(num_users=int(value))
    if param == "num_paths":
        return base.with_updates(num_paths=int(value))
    if param == "bs_region_wavelengths":
        return base.with_updates(bs_region_m=float(value) * base.wavelength_m)
    if param == "user_region_wavelengths":
        return base.with_updates(user_region_m=float(value) * base.wavelength_m)
    if param == "mrt_coefficient":
        return base.with_updates(mrt_coefficient=float(value))
    raise ConfigError(f"sweep_param: unsupported '{param}'")


def _run_cell(args) -> list:
    """One sweep cell: a single (value, realization) on shared channels."""
    base, param, value, realization, schemes, base_seed = args
    cfg = apply_sweep_value(base, param, value)
    seed = base_seed + realization
    geoms = sample_geometry(cfg, np.random.default_rng(seed))
    digest = geometry_digest(geoms)
    records = []
    for scheme in schemes:
        rec = RunRecord(param, float(value), scheme, realization, digest=digest)
        try:
            res = run_scheme(scheme, cfg, geoms)
            rec.throughput_bpshz = res.throughput_bpshz
            rec.runtime_s = res.wall_time_s
            rec.outer_iters = res.outer_iters
            rec.per_user_rates = tuple(float(r) for r in res.per_user_rates)
            if scheme == "NOMA-MA" and res.objective_trace:
                rec.trace = list(res.objective_trace)
        except Exception as exc:  # cell marked failed, sweep continues
            rec.error = f"{type(exc).__name__}: {exc}"
        records.append(rec)
    return records


def worker_count() -> int:
    env = os.environ.get("MANOMA_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_sweep(spec: SweepSpec, base_seed: int | None = None, workers: int | None = None) -> list:
    """Run every (value, realization, scheme) run of the sweep.

    Within a cell all schemes see identical channel realizations; the seed of
    a cell is ``base_seed + realization`` so matched comparisons across sweep
    values reuse the same draws wherever the geometry parameters agree.
    """
    if base_seed is None:
        base_seed = spec.base.rng_seed
    if workers is None:
        workers = worker_count()
    cells = [
        (spec.base, spec.sweep_param, value, real, spec.schemes, base_seed)
        for value in spec.values
        for real in range(spec.num_realizations)
    ]
    if workers <= 1 or len(cells) <= 1:
        nested = [_run_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            nested = list(pool.map(_run_cell, cells))
    records = [rec for group in nested for rec in group]
    records.sort(key=lambda r: (r.value, r.scheme, r.realization))
    return records


def _fmt(x) -> str:
    return f"{x:.12g}"


def write_results(records: list, out_dir: str, spec: SweepSpec | None = None) -> dict:
    """Write results.csv, manifest.json and per-run trace CSVs.

    Returns a mapping of logical name to written path.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    results_path = os.path.join(out_dir, "results.csv")
    with open(results_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_HEADER.split(","))
        for rec in sorted(records, key=lambda r: (r.value, r.scheme, r.realization)):
            if rec.error is not None:
                continue
            writer.writerow(
                [
                    rec.sweep_param,
                    _fmt(rec.value),
                    rec.scheme,
                    str(rec.realization),
                    _fmt(rec.throughput_bpshz),
                    _fmt(rec.runtime_s),
                    str(rec.outer_iters),
                ]
            )
    paths["results"] = results_path

    trace_dir = os.path.join(out_dir, "traces")
    for rec in records:
        if rec.trace and rec.error is None:
            os.makedirs(trace_dir, exist_ok=True)
            name = f"trace_v{_fmt(rec.value)}_r{rec.realization}.csv"
            tpath = os.path.join(trace_dir, name)
            with open(tpath, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(TRACE_HEADER.split(","))
                for i, obj in enumerate(rec.trace):
                    writer.writerow([str(i), _fmt(obj)])
            paths[f"trace:{rec.value}:{rec.realization}"] = tpath

    manifest = {
        "tool": "manoma",
        "version": __version__,
        "results_header": RESULTS_HEADER,
        "digests": {
            f"{_fmt(rec.value)}/{rec.realization}": rec.digest for rec in records
        },
        "failures": [
            {
                "value": rec.value,
                "scheme": rec.scheme,
                "realization": rec.realization,
                "error": rec.error,
            }
            for rec in records
            if rec.error is not None
        ],
    }
    if spec is not None:
        manifest["sweep"] = {
            "sweep_param": spec.sweep_param,
            "values": list(spec.values),
            "schemes": list(spec.schemes),
            "realizations": spec.num_realizations,
        }
        manifest["base_config"] = spec.base.as_dict()
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths["manifest"] = manifest_path
    return paths
