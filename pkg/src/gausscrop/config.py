"""Run configuration: one JSON document validated as a whole before any work starts.

Every problem found is reported, each prefixed with the dotted path of the
offending field, so a single run of the validator is enough to fix a file.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from gausscrop.augment import AugmentConfig
from gausscrop.crops import CropperConfig, ImageDims, Method
from gausscrop.dataio import SyntheticSceneSpec
from gausscrop.training import EvalConfig, TrainConfig

U64_MAX = 2**64 - 1


class ConfigError(ValueError):
    """Raised with the complete list of problems in a run configuration."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  {p}" for p in self.problems))


@dataclass(frozen=True)
class DatasetConfig:
    source: str = "synthetic"  # or "cifar10-bin"
    path: str | None = None
    n: int = 2000
    synthetic: SyntheticSceneSpec = SyntheticSceneSpec()


@dataclass(frozen=True)
class SweepConfig:
    methods: tuple[str, ...] = ("GCC", "MGCC")
    alphas: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 4.0)
    crop_sizes: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8)
    seeds: tuple[int, ...] = (0, 1, 2, 3)
    fp_tau: float = 0.2
    n_samples: int = 10_000
    grid: int = 16
    object_fraction: float = 0.5
    with_lep: bool = False


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "out"
    image: str | None = None  # PPM used by demo-crops; a synthetic image when absent
    encoder: str | None = None  # encoder.npz used by linear-eval; untrained when absent
    n_samples: int = 10_000  # Monte Carlo draws for the stats command
    fp_tau: float = 0.2
    cropper: CropperConfig = CropperConfig()
    augment: AugmentConfig = AugmentConfig()
    train: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()
    dataset: DatasetConfig = DatasetConfig()
    sweep: SweepConfig = SweepConfig()


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v) -> bool:
    return (_is_int(v) or isinstance(v, float)) and math.isfinite(v)


def _check_scalar(path: str, value, kind: str, problems: list[str]) -> bool:
    ok = {
        "int": _is_int,
        "real": _is_real,
        "str": lambda v: isinstance(v, str),
        "bool": lambda v: isinstance(v, bool),
        "path": lambda v: v is None or isinstance(v, str),
    }[kind](value)
    if not ok:
        problems.append(f"{path}: expected {kind}, got {json.dumps(value)}")
    return ok


def _check_list(path: str, value, kind: str, problems: list[str], length: int | None = None) -> bool:
    if not isinstance(value, list) or (length is not None and len(value) != length):
        want = f"list of {length} {kind}s" if length else f"list of {kind}"
        problems.append(f"{path}: expected {want}, got {json.dumps(value)}")
        return False
    return all(_check_scalar(f"{path}[{i}]", v, kind, problems) for i, v in enumerate(value))


def _section(path: str, doc, schema: dict[str, tuple], problems: list[str]) -> dict[str, Any] | None:
    """Type-check one JSON object against ``{key: (kind, length)}``; returns the typed values."""
    if not isinstance(doc, dict):
        problems.append(f"{path}: expected object, got {json.dumps(doc)}")
        return None
    out = {}
    for key in sorted(set(doc) - set(schema)):
        problems.append(f"{path}.{key}: unknown field")
    for key, (kind, length) in schema.items():
        if key not in doc:
            continue
        value = doc[key]
        sub = f"{path}.{key}"
        if kind.startswith("list:"):
            if _check_list(sub, value, kind[5:], problems, length):
                out[key] = tuple(value)
        elif _check_scalar(sub, value, kind, problems):
            out[key] = value
    return out


def _build(path: str, cls, kwargs: dict, problems: list[str], **extra):
    try:
        return cls(**kwargs, **extra)
    except ValueError as exc:
        problems.append(f"{path}: {exc}")
        return None


CROPPER = {
    "method": ("str", None),
    "alpha": ("real", None),
    "crop_size": ("real", None),
    "uniform_bounds": ("list:real", 2),
    "n_views": ("int", None),
    "pad_policy": ("str", None),
}
AUGMENT = {"flip_probability": ("real", None), "blur_sigma": ("real", None)}
TRAIN = {
    "tau": ("real", None),
    "lr": ("real", None),
    "epochs": ("int", None),
    "batch_size": ("int", None),
    "embed_dim": ("int", None),
    "hidden": ("list:int", None),
    "activation": ("str", None),
}
EVAL = {
    "epochs": ("int", None),
    "lr": ("real", None),
    "test_fraction": ("real", None),
    "features": ("str", None),
    "views": ("str", None),
}
SYNTHETIC = {
    "width": ("int", None),
    "height": ("int", None),
    "class_count": ("int", None),
    "objects_per_image": ("list:int", 2),
    "object_size_range": ("list:real", 2),
    "placement": ("str", None),
    "noise_level": ("real", None),
    "color_jitter": ("real", None),
    "background_jitter": ("real", None),
    "channels": ("int", None),
}
DATASET = {"source": ("str", None), "path": ("path", None), "n": ("int", None)}
SWEEP = {
    "methods": ("list:str", None),
    "alphas": ("list:real", None),
    "crop_sizes": ("list:real", None),
    "seeds": ("list:int", None),
    "fp_tau": ("real", None),
    "n_samples": ("int", None),
    "grid": ("int", None),
    "object_fraction": ("real", None),
    "with_lep": ("bool", None),
}
TOP = {
    "seed": ("int", None),
    "out": ("str", None),
    "image": ("path", None),
    "encoder": ("path", None),
    "n_samples": ("int", None),
    "fp_tau": ("real", None),
}
SECTIONS = ("cropper", "augment", "train", "eval", "dataset", "sweep")


def _parse_synthetic(doc, problems: list[str]) -> SyntheticSceneSpec | None:
    vals = _section("dataset.synthetic", doc, SYNTHETIC, problems)
    if vals is None:
        return None
    width, height = vals.pop("width", 32), vals.pop("height", 32)
    try:
        dims = ImageDims(width, height)
    except ValueError as exc:
        problems.append(f"dataset.synthetic: {exc}")
        return None
    return _build("dataset.synthetic", SyntheticSceneSpec, vals, problems, dims=dims)


def _parse_dataset(doc, problems: list[str]) -> DatasetConfig | None:
    doc = dict(doc) if isinstance(doc, dict) else doc
    synthetic = doc.pop("synthetic", {}) if isinstance(doc, dict) else {}
    vals = _section("dataset", doc, DATASET, problems)
    spec = _parse_synthetic(synthetic, problems)
    if vals is None:
        return None
    ok = spec is not None
    source = vals.get("source", "synthetic")
    if source not in ("synthetic", "cifar10-bin"):
        problems.append(f"dataset.source: must be 'synthetic' or 'cifar10-bin', got {source!r}")
        ok = False
    elif source == "cifar10-bin" and not vals.get("path"):
        problems.append("dataset.path: required when dataset.source is 'cifar10-bin'")
        ok = False
    if vals.get("n", 2) < 2:
        problems.append(f"dataset.n: must be >= 2, got {vals['n']}")
        ok = False
    return DatasetConfig(synthetic=spec, **vals) if ok else None


def _parse_sweep(doc, problems: list[str]) -> SweepConfig | None:
    vals = _section("sweep", doc, SWEEP, problems)
    if vals is None:
        return None
    n_before = len(problems)
    for i, m in enumerate(vals.get("methods", ())):
        try:
            Method.parse(m)
        except ValueError as exc:
            problems.append(f"sweep.methods[{i}]: {exc}")
    for key in ("methods", "alphas", "crop_sizes", "seeds"):
        if key in vals and not vals[key]:
            problems.append(f"sweep.{key}: must not be empty")
    for i, a in enumerate(vals.get("alphas", ())):
        if a < 0:
            problems.append(f"sweep.alphas[{i}]: must be nonnegative, got {a}")
    for i, c in enumerate(vals.get("crop_sizes", ())):
        if not 0 < c <= 1:
            problems.append(f"sweep.crop_sizes[{i}]: must lie in (0, 1], got {c}")
    for i, s in enumerate(vals.get("seeds", ())):
        if not 0 <= s <= U64_MAX:
            problems.append(f"sweep.seeds[{i}]: must be an unsigned 64-bit integer, got {s}")
    if not 0 < vals.get("fp_tau", 0.2) < 1:
        problems.append(f"sweep.fp_tau: must lie in (0, 1), got {vals['fp_tau']}")
    if vals.get("n_samples", 1) < 1:
        problems.append(f"sweep.n_samples: must be >= 1, got {vals['n_samples']}")
    if vals.get("grid", 1) < 1:
        problems.append(f"sweep.grid: must be >= 1, got {vals['grid']}")
    if not 0 < vals.get("object_fraction", 0.5) <= 1:
        problems.append(f"sweep.object_fraction: must lie in (0, 1], got {vals['object_fraction']}")
    return SweepConfig(**vals) if len(problems) == n_before else None


def parse_run_config(doc, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Validate a decoded JSON document plus CLI overrides and build a :class:`RunConfig`.

    ``overrides`` maps dotted field paths (``"cropper.alpha"``) to values and
    takes precedence over the document. Raises :class:`ConfigError` listing
    every problem.
    """
    problems: list[str] = []
    if not isinstance(doc, dict):
        raise ConfigError([f"<root>: expected object, got {json.dumps(doc)}"])
    doc = json.loads(json.dumps(doc))
    for path, value in (overrides or {}).items():
        *parents, leaf = path.split(".")
        node = doc
        for p in parents:
            if not isinstance(node.get(p, {}), dict):
                break
            node = node.setdefault(p, {})
        else:
            node[leaf] = value

    top = _section("<root>", {k: v for k, v in doc.items() if k not in SECTIONS}, TOP, problems) or {}
    problems[:] = [p.replace("<root>.", "") for p in problems]
    if not 0 <= top.get("seed", 0) <= U64_MAX:
        problems.append(f"seed: must be an unsigned 64-bit integer, got {top['seed']}")
    if top.get("n_samples", 1) < 1:
        problems.append(f"n_samples: must be >= 1, got {top['n_samples']}")
    if not 0 < top.get("fp_tau", 0.2) < 1:
        problems.append(f"fp_tau: must lie in (0, 1), got {top['fp_tau']}")

    built: dict[str, Any] = {}
    for name, schema, cls in (
        ("cropper", CROPPER, CropperConfig),
        ("augment", AUGMENT, AugmentConfig),
        ("train", TRAIN, TrainConfig),
        ("eval", EVAL, EvalConfig),
    ):
        vals = _section(name, doc.get(name, {}), schema, problems)
        if vals is not None:
            built[name] = _build(name, cls, vals, problems)
    built["dataset"] = _parse_dataset(doc.get("dataset", {}), problems)
    built["sweep"] = _parse_sweep(doc.get("sweep", {}), problems)

    for key in ("image", "encoder"):
        if top.get(key) and not Path(top[key]).is_file():
            problems.append(f"{key}: no such file {top[key]!r}")
    ds = built["dataset"]
    if ds is not None and ds.source == "cifar10-bin" and not Path(ds.path).is_file():
        problems.append(f"dataset.path: no such file {ds.path!r}")

    if problems:
        raise ConfigError(problems)
    return RunConfig(**top, **built)


def load_run_config(path: str | Path | None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Read and validate a config file; ``None`` means an empty document (all defaults)."""
    if path is None:
        return parse_run_config({}, overrides)
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError([f"config: cannot read {str(path)!r}: {exc.strerror}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config: not valid JSON ({exc})"]) from None
    return parse_run_config(doc, overrides)

