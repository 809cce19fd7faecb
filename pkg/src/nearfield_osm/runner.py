"""Command-line interface: simulate, image, validate, sweep.

Configuration is one JSON document (schema version 1)::

    {
      "version": 1,
      "name": "fig1-analog",
      "scenarios": [{"preset": "kite-ellipse-2d"}, {"preset": "rectangle-2d"}],
      "wavenumbers": [8, 16],
      "n_waves": [32],
      "noise": {"delta": [0.02], "seed": 0},
      "powers": [2],
      "probe_sets": {"standard": [[1, 0, 0], [0, 1, 0], [0, 0, 1]]},
      "quadrature": {"cells_per_wavelength": 8, "model": "born", "iterations": 1},
      "sweep_axis": "k",
      "validation": {"kernel_limits": {}, "stability": {"bounds": [0.8, 1.3]}},
      "output": "out/fig1"
    }

``scenarios`` entries are inline scenario documents (optionally starting
from a ``"preset"``) or ``{"file": "scene.json"}`` references resolved
relative to the config file. ``scenario`` (singular) is accepted for one
scene. ``wavenumbers`` and ``n_waves`` default to the scene's own values.
``probe_sets`` only applies to Maxwell scenes.

Exit codes: 0 success, 1 validation failure, 2 configuration error,
3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import inspect
import io
import itertools
import json
import logging
import os
import platform
import sys
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import scipy
from PIL import Image
from PIL.PngImagePlugin import PngInfo

from . import __version__, imaging, noise, scene, synth, validation
from ._parallel import THREADS_ENV
from .scene import ConfigurationError, Scenario

logger = logging.getLogger("nearfield_osm")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
MAX_K = 64.0
MAX_WAVES = 1024
MAX_GRID = {2: 128, 3: 64}
SWEEP_AXES = ("delta", "N", "k", "p", "probes")
PRESET_DIR = Path(__file__).with_name("presets")
MASK_ISOVALUE = 0.4


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    scenarios: tuple[Scenario, ...]
    wavenumbers: tuple[float, ...] | None
    n_waves: tuple[int, ...] | None
    deltas: tuple[float, ...]
    seed: int
    powers: tuple[int, ...]
    probe_sets: dict[str, np.ndarray]
    quadrature: dict[str, Any]
    sweep_axis: str | None
    validation: dict[str, dict]
    output: str | None
    source: dict[str, Any] = field(repr=False, default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict[str, Any], base_dir: Path | None = None) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigurationError("config must be a JSON object")
        version = doc.get("version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported config version {version!r}")
        base_dir = Path(".") if base_dir is None else base_dir
        entries = doc.get("scenarios")
        if entries is None:
            entries = [doc["scenario"]] if "scenario" in doc else []
        if not entries:
            raise ConfigurationError("config needs at least one scenario")
        scenarios = tuple(_load_scenario(e, base_dir) for e in entries)

        ks = _opt_list(doc, "wavenumbers", float)
        ns = _opt_list(doc, "n_waves", int)
        noise_doc = doc.get("noise", {})
        deltas = noise_doc.get("delta", 0.0)
        deltas = tuple(float(d) for d in (deltas if isinstance(deltas, list) else [deltas]))
        seed = int(noise_doc.get("seed", 0))
        powers = tuple(int(p) for p in doc.get("powers", [2]))
        probes = {
            str(name): np.asarray(v, dtype=float)
            for name, v in doc.get("probe_sets", {"standard": np.eye(3).tolist()}).items()
        }
        quad = {"cells_per_wavelength": 8.0, "model": "born", "iterations": 1}
        quad.update(doc.get("quadrature", {}))
        axis = doc.get("sweep_axis")
        checks = doc.get("validation", {})
        if isinstance(checks, list):
            checks = {c: {} for c in checks}
        cfg = cls(
            name=str(doc.get("name", "experiment")),
            scenarios=scenarios,
            wavenumbers=ks,
            n_waves=ns,
            deltas=deltas,
            seed=seed,
            powers=powers,
            probe_sets=probes,
            quadrature=quad,
            sweep_axis=axis,
            validation={str(k): dict(v or {}) for k, v in checks.items()},
            output=doc.get("output"),
            source=doc,
        )
        cfg.check()
        return cfg

    def check(self):
        for k in self.all_wavenumbers():
            if not 0 < k <= MAX_K:
                raise ConfigurationError(f"wavenumber {k} outside (0, {MAX_K}]")
        for n in self.all_wave_counts():
            if not 1 <= n <= MAX_WAVES:
                raise ConfigurationError(f"incident-wave count {n} outside [1, {MAX_WAVES}]")
        for sc in self.scenarios:
            if max(sc.grid.resolution) > MAX_GRID[sc.dim]:
                raise ConfigurationError(
                    f"grid of {sc.name!r} exceeds {MAX_GRID[sc.dim]} points per axis"
                )
        if any(d < 0 for d in self.deltas):
            raise ConfigurationError("noise levels must be >= 0")
        if any(p < 1 for p in self.powers):
            raise ConfigurationError("powers must be positive integers")
        for name, ps in self.probe_sets.items():
            if ps.ndim != 2 or ps.shape[1] != 3 or len(ps) == 0:
                raise ConfigurationError(f"probe set {name!r} must be a nonempty list of 3-vectors")
            if not np.allclose(np.linalg.norm(ps, axis=1), 1.0, atol=1e-9):
                raise ConfigurationError(f"probe set {name!r} has non-unit vectors")
        if self.sweep_axis is not None and self.sweep_axis not in SWEEP_AXES:
            raise ConfigurationError(f"sweep axis must be one of {SWEEP_AXES}")
        cpw = float(self.quadrature["cells_per_wavelength"])
        if cpw < synth.MIN_CELLS_PER_WAVELENGTH:
            raise ConfigurationError("cells_per_wavelength too small")
        for name in self.validation:
            if name not in validation.CHECKS:
                raise ConfigurationError(f"unknown validation check {name!r}")

    def all_wavenumbers(self):
        return self.wavenumbers or tuple(sc.k for sc in self.scenarios)

    def all_wave_counts(self):
        return self.n_waves or tuple(sc.n_waves for sc in self.scenarios)

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        if seed is None:
            return self
        src = json.loads(json.dumps(self.source))
        src.setdefault("noise", {})["seed"] = int(seed)
        return replace(self, seed=int(seed), source=src)

    def digest(self) -> str:
        """sha256 of the config document plus the resolved scenarios."""
        doc = {"config": self.source, "scenarios": [sc.to_dict() for sc in self.scenarios]}
        canon = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=_jsonable)
        return hashlib.sha256(canon.encode()).hexdigest()


def _opt_list(doc, key, cast):
    if key not in doc or doc[key] is None:
        return None
    v = doc[key]
    return tuple(cast(x) for x in (v if isinstance(v, list) else [v]))


def _load_scenario(entry, base_dir: Path) -> Scenario:
    if isinstance(entry, str):
        entry = {"file": entry}
    if "file" in entry:
        path = (base_dir / entry["file"]).resolve()
        if not path.exists():
            raise ConfigurationError(f"scenario file {path} does not exist")
        entry = json.loads(path.read_text())
    return Scenario.from_dict(entry)


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    """Read a config file, or a shipped preset by name (e.g. ``fig1-analog``)."""
    p = Path(path)
    if not p.exists() and (PRESET_DIR / f"{path}.json").exists():
        p = PRESET_DIR / f"{path}.json"
    try:
        doc = json.loads(p.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{p}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(doc, p.parent)


def preset_names() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.json"))


# ---------------------------------------------------------------------------
# Provenance and atomic output
# ---------------------------------------------------------------------------


def provenance(cfg: ExperimentConfig, command: str, **run) -> dict[str, Any]:
    return {
        "command": command,
        "config_name": cfg.name,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "versions": {
            "nearfield_osm": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "run": run,
    }


def atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n").encode()


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def png_bytes(image: np.ndarray, prov: dict) -> bytes:
    info = PngInfo()
    info.add_text("provenance", json.dumps(prov, sort_keys=True, default=_jsonable))
    buf = io.BytesIO()
    Image.fromarray(image, mode="L").save(buf, format="PNG", pnginfo=info)
    return buf.getvalue()


def csv_bytes(field_: imaging.IndicatorField, prov: dict) -> bytes:
    head = "# provenance: " + json.dumps(prov, sort_keys=True, default=_jsonable) + "\n"
    return (head + imaging.to_csv(field_)).encode()


def mask_bytes(mask: np.ndarray, prov: dict) -> bytes:
    buf = io.BytesIO()
    np.savez(buf, mask=mask, provenance=np.array(json.dumps(prov, sort_keys=True)))
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DataKey:
    scene_index: int
    k: float
    n_waves: int

    def stem(self, cfg: ExperimentConfig) -> str:
        name = cfg.scenarios[self.scene_index].name
        return f"{name}_k{_num(self.k)}_N{self.n_waves}"


def _num(x) -> str:
    return f"{x:g}"


def data_keys(cfg: ExperimentConfig) -> list[DataKey]:
    keys = []
    for i, sc in enumerate(cfg.scenarios):
        ks = cfg.wavenumbers or (sc.k,)
        ns = cfg.n_waves or (sc.n_waves,)
        keys += [DataKey(i, float(k), int(n)) for k, n in itertools.product(ks, ns)]
    return keys


def scenario_for(cfg: ExperimentConfig, key: DataKey) -> Scenario:
    return cfg.scenarios[key.scene_index].with_(k=key.k, n_waves=key.n_waves)


def clean_data(cfg: ExperimentConfig, key: DataKey, threads=None) -> synth.CauchyDataSet:
    sc = scenario_for(cfg, key)
    q = cfg.quadrature
    quad = synth.build_quadrature(
        sc, float(q["cells_per_wavelength"]), q.get("model", "born"), int(q.get("iterations", 1))
    )
    return synth.cauchy_data(sc, quad, threads=threads)


def noisy_data(cfg, data, delta) -> synth.CauchyDataSet:
    return noise.add_noise(data, noise.NoiseSpec(delta, cfg.seed))


def data_files(cfg, key, delta, data_dir: Path):
    stem = key.stem(cfg)
    clean = data_dir / f"{stem}_clean.nfcd"
    noisy = None if delta == 0 else data_dir / f"{stem}_d{_num(delta)}_s{cfg.seed}.nfcd"
    return clean, noisy


def _check_loaded(data: synth.CauchyDataSet, sc: Scenario, path: Path):
    if (
        data.dim != sc.dim
        or data.physics != sc.physics
        or data.n_waves != sc.n_waves
        or data.n_points != sc.surface_points
        or not np.isclose(data.k, sc.k)
    ):
        raise imaging.ShapeMismatchError(f"{path} does not match the configured scenario")


class DataSource:
    """Clean and noisy data per run, computed once or read from files."""

    def __init__(self, cfg: ExperimentConfig, data_dir: Path | None = None, threads=None):
        self.cfg = cfg
        self.data_dir = data_dir
        self.threads = threads
        self._clean: dict[DataKey, synth.CauchyDataSet] = {}

    def clean(self, key: DataKey) -> synth.CauchyDataSet:
        if key not in self._clean:
            if self.data_dir is not None:
                path = data_files(self.cfg, key, 0.0, self.data_dir)[0]
                data = synth.load(path)
                _check_loaded(data, scenario_for(self.cfg, key), path)
            else:
                t = time.perf_counter()
                data = clean_data(self.cfg, key, self.threads)
                logger.info("data %s in %.1fs", key.stem(self.cfg), time.perf_counter() - t)
            self._clean[key] = data
        return self._clean[key]

    def get(self, key: DataKey, delta: float) -> synth.CauchyDataSet:
        if delta == 0:
            return self.clean(key)
        if self.data_dir is not None:
            path = data_files(self.cfg, key, delta, self.data_dir)[1]
            data = synth.load(path)
            _check_loaded(data, scenario_for(self.cfg, key), path)
            return data
        return noisy_data(self.cfg, self.clean(key), delta)


def image_stem(data_stem, delta, p, probe_name):
    s = f"{data_stem}_d{_num(delta)}_p{p}"
    return s if probe_name is None else f"{s}_{probe_name}"


def contrast_margin(cfg: ExperimentConfig) -> float:
    """One wavelength at the smallest configured wavenumber."""
    return 2 * np.pi / min(cfg.all_wavenumbers())


def image_runs(cfg: ExperimentConfig, source: DataSource, threads=None):
    """Yield (key, delta, p, probe_name, normalized field) over the config product."""
    for key in data_keys(cfg):
        sc = scenario_for(cfg, key)
        for delta in cfg.deltas:
            data = source.get(key, delta)
            for p in cfg.powers:
                if sc.physics == "maxwell":
                    names = list(cfg.probe_sets)
                    fields = imaging.maxwell_indicators(
                        data, sc.surface(), sc.grid, sc.k, p,
                        [cfg.probe_sets[n] for n in names], threads=threads,
                    )
                    for name, f in zip(names, fields):
                        yield key, delta, p, name, imaging.normalize(f)
                else:
                    f = imaging.helmholtz_indicator(data, sc.surface(), sc.grid, sc.k, p, threads)
                    yield key, delta, p, None, imaging.normalize(f)


def write_field(out: Path, stem: str, f: imaging.IndicatorField, prov: dict) -> list[Path]:
    written = []

    def put(name, payload):
        path = out / name
        atomic_write(path, payload)
        written.append(path)

    put(f"{stem}.csv", csv_bytes(f, prov))
    if f.grid.dim == 2:
        put(f"{stem}.png", png_bytes(imaging.heatmap_array(f.as_grid()), prov))
    else:
        # slices are in the (x1, x3) plane at x2 = 0
        put(f"{stem}_x2slice.png", png_bytes(imaging.heatmap_array(imaging.grid_slice(f, 1)), prov))
        put(f"{stem}_mask.npz", mask_bytes(imaging.voxel_mask(f, MASK_ISOVALUE), prov))
    return written


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: ExperimentConfig, out: Path, threads=None) -> int:
    data_dir = out / "data"
    source = DataSource(cfg, threads=threads)
    for key in data_keys(cfg):
        for delta in sorted(set(cfg.deltas) | {0.0}):
            data = source.get(key, delta)
            prov = provenance(
                cfg, "simulate", data=key.stem(cfg), delta=delta, quadrature=cfg.quadrature
            )
            data = data.with_traces(data.field, data.deriv, provenance=prov)
            clean_path, noisy_path = data_files(cfg, key, delta, data_dir)
            path = clean_path if delta == 0 else noisy_path
            atomic_write(path, synth.to_bytes(data))
            logger.info("wrote %s", path)
    return EXIT_OK


def cmd_image(cfg: ExperimentConfig, out: Path, data_dir: Path | None = None, threads=None) -> int:
    source = DataSource(cfg, data_dir, threads)
    margin = contrast_margin(cfg)
    rows = []
    for key, delta, p, probe, f in image_runs(cfg, source, threads):
        sc = scenario_for(cfg, key)
        stem = image_stem(key.stem(cfg), delta, p, probe)
        ratio = imaging.contrast_ratio(f, sc.shape, margin)
        prov = provenance(cfg, "image", field=stem, k=key.k, n_waves=key.n_waves, delta=delta, p=p, probes=probe)
        write_field(out / "images", stem, f, prov)
        rows.append(_summary_row(cfg, key, delta, p, probe, None, None, f, ratio))
        logger.info("%s contrast %.3f", stem, ratio)
    _write_summary(out / "images" / "summary.csv", rows)
    return EXIT_OK


def _summary_row(cfg, key, delta, p, probe, axis, value, f, ratio):
    return {
        "scenario": cfg.scenarios[key.scene_index].name,
        "axis": axis or "",
        "value": "" if value is None else value,
        "k": _num(key.k),
        "N": key.n_waves,
        "delta": _num(delta),
        "p": p,
        "probes": probe or "",
        "contrast_ratio": f"{ratio:.6f}",
        "max_raw": f"{float(np.max(f.raw)):.6e}",
    }


def _write_summary(path: Path, rows):
    buf = io.StringIO()
    fields = ["scenario", "axis", "value", "k", "N", "delta", "p", "probes", "contrast_ratio", "max_raw"]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    atomic_write(path, buf.getvalue().encode())


def sweep_values(cfg: ExperimentConfig, axis: str) -> list:
    lists = {
        "k": list(cfg.wavenumbers or []),
        "N": list(cfg.n_waves or []),
        "delta": list(cfg.deltas),
        "p": list(cfg.powers),
        "probes": list(cfg.probe_sets),
    }
    if axis not in lists:
        raise ConfigurationError(f"sweep axis must be one of {SWEEP_AXES}")
    if not lists[axis]:
        raise ConfigurationError(f"sweep axis {axis!r} has no values in the config")
    for other, vals in lists.items():
        if other != axis and len(vals) > 1 and not (other == "probes" and not _has_maxwell(cfg)):
            raise ConfigurationError(f"sweep over {axis!r} needs a single value for {other!r}")
    return lists[axis]


def _has_maxwell(cfg):
    return any(sc.physics == "maxwell" for sc in cfg.scenarios)


def run_sweep(cfg: ExperimentConfig, axis: str, threads=None, source: DataSource | None = None):
    """Contrast-ratio rows and normalized fields along one axis."""
    sweep_values(cfg, axis)
    source = source or DataSource(cfg, threads=threads)
    margin = contrast_margin(cfg)
    out = []
    for key, delta, p, probe, f in image_runs(cfg, source, threads):
        sc = scenario_for(cfg, key)
        value = {
            "k": key.k, "N": key.n_waves, "delta": delta, "p": p, "probes": probe,
        }[axis]
        ratio = imaging.contrast_ratio(f, sc.shape, margin)
        out.append((_summary_row(cfg, key, delta, p, probe, axis, value, f, ratio), f))
    return out


def cmd_sweep(cfg: ExperimentConfig, out: Path, axis: str | None, threads=None) -> int:
    axis = axis or cfg.sweep_axis
    if axis is None:
        raise ConfigurationError("no sweep axis given (use --axis or sweep_axis in the config)")
    rows = []
    for row, f in run_sweep(cfg, axis, threads):
        key_stem = f"{row['scenario']}_k{row['k']}_N{row['N']}"
        stem = image_stem(key_stem, float(row["delta"]), row["p"], row["probes"] or None)
        prov = provenance(cfg, "sweep", axis=axis, value=row["value"], field=stem)
        write_field(out / f"sweep_{axis}", stem, f, prov)
        rows.append(row)
        logger.info("%s=%s %s contrast %s", axis, row["value"], row["scenario"], row["contrast_ratio"])
    _write_summary(out / f"sweep_{axis}" / "summary.csv", rows)
    return EXIT_OK


def cmd_validate(cfg: ExperimentConfig, out: Path, threads=None) -> int:
    checks = cfg.validation or {name: {} for name in validation.CHECKS}
    results = []
    for name, params in checks.items():
        fn = validation.CHECKS[name]
        params = dict(params)
        if "threads" in _params_of(fn):
            params.setdefault("threads", threads)
        if "seed" in _params_of(fn):
            params.setdefault("seed", cfg.seed)
        t = time.perf_counter()
        try:
            res = fn(**params)
        except TypeError as exc:
            raise ConfigurationError(f"bad parameters for check {name!r}: {exc}") from exc
        res.elapsed = round(time.perf_counter() - t, 3)
        results.append(res)
        print(res.line(), flush=True)
    ok = all(r.passed for r in results)
    report = {
        "provenance": provenance(cfg, "validate"),
        "passed": ok,
        "checks": [{k: v for k, v in r.to_dict().items() if k != "elapsed"} for r in results],
        "timings": {r.name: r.elapsed for r in results},
    }
    atomic_write(out / "validation_report.json", _json_bytes(report))
    return EXIT_OK if ok else EXIT_VALIDATION


def _params_of(fn):
    try:
        return inspect.signature(fn).parameters
    except (TypeError, ValueError):
        return {}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="nearfield-osm",
        description="Sampling-type imaging from near-field Cauchy data.",
    )
    ap.add_argument("-v", "--verbose", action="count", default=0)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", required=True, help="config JSON path or preset name (" + ", ".join(preset_names()) + ")"
    )
    common.add_argument("--out", help="output directory (default: config 'output' or ./out)")
    common.add_argument("--seed", type=int, help="noise seed; overrides the config")
    common.add_argument(
        "--threads", type=int, help=f"worker threads, 0 = auto (fallback: ${THREADS_ENV}, then 1)"
    )
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write clean and noisy Cauchy data")
    img = sub.add_parser("image", parents=[common], help="evaluate the imaging functional")
    img.add_argument("--data", help="directory with data files from 'simulate'")
    sub.add_parser("validate", parents=[common], help="run the numerical check suite")
    sw = sub.add_parser("sweep", parents=[common], help="contrast ratios along one parameter axis")
    sw.add_argument("--axis", choices=SWEEP_AXES)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config).with_seed(args.seed)
        out = Path(args.out or cfg.output or "out")
        if args.command == "simulate":
            return cmd_simulate(cfg, out, args.threads)
        if args.command == "image":
            data_dir = Path(args.data) if args.data else None
            return cmd_image(cfg, out, data_dir, args.threads)
        if args.command == "validate":
            return cmd_validate(cfg, out, args.threads)
        return cmd_sweep(cfg, out, args.axis, args.threads)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # ConfigurationError, ShapeMismatchError and GeometryError are ValueErrors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
