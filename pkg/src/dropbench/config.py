"""Pipeline configuration: TOML parsing, validation, canonical hashing.

One structured config file drives every stage.  The config hash (sha256 of
the canonicalized settings, including CLI overrides) names the artifact
directory and is embedded in every artifact so stages refuse mixed inputs.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from .attribution import ALL_METHODS, GRADIENT_METHODS, AttributionParams
from .classifier import ArchConfig, TrainConfig
from .corruption import DEFAULT_K_GRID
from .errors import ConfigurationError
from .synthetic import SyntheticConfig

OUTPUT_ROOT_ENV = "DROPBENCH_OUT"

# Methods whose maps change across repetitions even with a fixed model.
STOCHASTIC_METHODS = ("gradient_shap", "shapley_value_sampling", "kernel_shap",
                      "random_control")

_METHOD_PARAM_KEYS = ("baseline", "ig_steps", "gs_baseline_count", "gs_noise_std",
                      "svs_permutations", "ks_coalitions", "ks_player_grouping",
                      "segment_length", "occlusion_window")


@dataclass
class MethodSpec:
    name: str
    params: dict[str, Any] = field(default_factory=dict)

    def attribution_params(self, seed: int) -> AttributionParams:
        return AttributionParams(seed=seed, **self.params)

    @property
    def stochastic(self) -> bool:
        return (self.name in STOCHASTIC_METHODS
                or self.params.get("baseline") == "gaussian_noise")


@dataclass
class PipelineConfig:
    seed: int
    dataset: dict[str, Any]
    model: dict[str, Any]
    corruption: dict[str, Any]
    repetitions: int
    methods: list[MethodSpec]
    output_root: Path
    jobs: int = 1

    # -- derived views -------------------------------------------------------

    def synthetic_config(self) -> SyntheticConfig:
        d = self.dataset
        return SyntheticConfig(
            n_samples=d["n_samples"], T=d["series_length"], M=d["features"],
            base_freq_range=tuple(d["base_freq"]), block_freq_range=tuple(d["block_freq"]),
            block_length=d["block_length"], threshold=d["threshold"],
            seed=self.seed)

    def train_config(self, seed: int) -> TrainConfig:
        m = self.model
        arch = ArchConfig(
            conv_units=m["conv_units"], kernel_size=m["kernel_size"],
            conv_strides=tuple(m["conv_strides"]), dropout_rate=m["dropout_rate"],
            dense_units=m["dense_units"])
        return TrainConfig(
            epochs=m["epochs"], batch_size=m["batch_size"],
            learning_rate=m["learning_rate"], weight_decay=m["weight_decay"],
            momentum=m["momentum"], augmentation_fraction=m["augmentation_fraction"],
            calibration=m["calibration"], patience=m["patience"], seed=seed, arch=arch)

    @property
    def k_grid(self) -> tuple[float, ...]:
        return tuple(self.corruption["k_grid"])

    def canonical_dict(self) -> dict:
        return {
            "seed": self.seed,
            "dataset": _sorted_dict(self.dataset),
            "model": _sorted_dict(self.model),
            "corruption": _sorted_dict(self.corruption),
            "repetitions": self.repetitions,
            "methods": [{"name": m.name, "params": _sorted_dict(m.params)}
                        for m in self.methods],
        }

    @property
    def config_hash(self) -> str:
        payload = json.dumps(self.canonical_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]

    @property
    def run_dir(self) -> Path:
        return self.output_root / self.config_hash


def _sorted_dict(d: dict) -> dict:
    return {k: d[k] for k in sorted(d)}


_DATASET_DEFAULTS = {
    "kind": "synthetic",
    "n_samples": 1000,
    "series_length": 128,
    "features": 4,
    "block_length": 32,
    "base_freq": [2.0, 5.0],
    "block_freq": [10.0, 50.0],
    "threshold": 60.0,
    "snr_db": None,
    "path": None,
    "label_column": "label",
    "split": [0.7, 0.1, 0.2],
}

_MODEL_DEFAULTS = {
    "kind": "builtin",
    "epochs": 25,
    "batch_size": 64,
    "learning_rate": 0.05,
    "weight_decay": 0.0,
    "momentum": 0.9,
    "augmentation_fraction": 0.5,
    "calibration": "off",
    "patience": 10,
    "conv_units": 64,
    "kernel_size": 11,
    "conv_strides": [2, 2, 1],
    "dropout_rate": 0.2,
    "dense_units": 64,
    "command": None,
    "timeout": 60.0,
}

_CORRUPTION_DEFAULTS = {
    "k_grid": list(DEFAULT_K_GRID),
    "include_k_1": False,
    "eval_samples": 150,
    "restrict_correct": False,
}


def _merge_section(defaults: dict, given: dict, section: str) -> dict:
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigurationError(f"unknown keys in [{section}]: {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(given)
    return merged


def load_config(path: str | Path, overrides: Optional[dict] = None) -> PipelineConfig:
    """Parse, apply CLI overrides, validate.  Overrides participate in the hash."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        raw = _toml.load(fh)
    return build_config(raw, overrides or {}, base_dir=path.parent)


def build_config(raw: dict, overrides: Optional[dict] = None,
                 base_dir: Optional[Path] = None) -> PipelineConfig:
    overrides = overrides or {}
    known_top = {"seed", "dataset", "model", "corruption", "evaluation",
                 "methods", "output"}
    unknown = set(raw) - known_top
    if unknown:
        raise ConfigurationError(f"unknown top-level config keys: {sorted(unknown)}")

    seed = int(overrides.get("seed", raw.get("seed", 0)))
    dataset = _merge_section(_DATASET_DEFAULTS, raw.get("dataset", {}), "dataset")
    model = _merge_section(_MODEL_DEFAULTS, raw.get("model", {}), "model")
    corruption = _merge_section(_CORRUPTION_DEFAULTS, raw.get("corruption", {}),
                                "corruption")
    evaluation = _merge_section({"repetitions": 5}, raw.get("evaluation", {}),
                                "evaluation")

    if "k_grid" in overrides:
        corruption["k_grid"] = [float(k) for k in overrides["k_grid"]]
    if overrides.get("include_k_1"):
        corruption["include_k_1"] = True
    if overrides.get("restrict_correct"):
        corruption["restrict_correct"] = True
    if corruption["include_k_1"] and corruption["k_grid"][-1] < 1.0:
        corruption["k_grid"] = list(corruption["k_grid"]) + [1.0]

    methods_raw = raw.get("methods", [])
    if not methods_raw:
        raise ConfigurationError("config must declare at least one [[methods]] entry")
    methods = []
    for entry in methods_raw:
        name = entry.get("name")
        if name not in ALL_METHODS:
            raise ConfigurationError(
                f"unknown method {name!r}; known: {list(ALL_METHODS)}")
        params = {k: v for k, v in entry.items() if k != "name"}
        bad = set(params) - set(_METHOD_PARAM_KEYS)
        if bad:
            raise ConfigurationError(f"unknown params for method {name}: {sorted(bad)}")
        methods.append(MethodSpec(name=name, params=params))
    names = [m.name for m in methods]
    if len(names) != len(set(names)):
        raise ConfigurationError(f"duplicate method entries: {names}")

    # -- semantic validation -------------------------------------------------
    if dataset["kind"] not in ("synthetic", "csv"):
        raise ConfigurationError(f"dataset.kind must be synthetic|csv, got {dataset['kind']!r}")
    if dataset["kind"] == "csv":
        if not dataset["path"]:
            raise ConfigurationError("dataset.kind=csv requires dataset.path")
        csv_path = Path(dataset["path"])
        if base_dir is not None and not csv_path.is_absolute():
            csv_path = base_dir / csv_path
            dataset["path"] = str(csv_path)
        if not csv_path.exists():
            raise ConfigurationError(f"dataset.path does not exist: {csv_path}")
        if any(m.name == "oracle" for m in methods):
            raise ConfigurationError("the oracle method needs the synthetic dataset")
    if model["kind"] not in ("builtin", "external"):
        raise ConfigurationError(f"model.kind must be builtin|external, got {model['kind']!r}")
    if model["kind"] == "external":
        if not model["command"]:
            raise ConfigurationError("model.kind=external requires model.command")
        gradient_requested = [m.name for m in methods if m.name in GRADIENT_METHODS]
        if gradient_requested:
            raise ConfigurationError(
                f"external scorers only support model-agnostic methods; "
                f"remove {gradient_requested}")

    out_root = overrides.get("output_root") or os.environ.get(OUTPUT_ROOT_ENV) \
        or raw.get("output", {}).get("root", "out")
    out_root = Path(out_root)
    if base_dir is not None and not out_root.is_absolute():
        out_root = base_dir / out_root

    jobs = int(overrides.get("jobs", 0)) or (os.cpu_count() or 1)

    cfg = PipelineConfig(
        seed=seed, dataset=dataset, model=model, corruption=corruption,
        repetitions=int(evaluation["repetitions"]), methods=methods,
        output_root=out_root, jobs=jobs)
    # exercise derived views so bad values fail at load time, not mid-pipeline
    if dataset["kind"] == "synthetic":
        cfg.synthetic_config()
    if model["kind"] == "builtin":
        cfg.train_config(seed)
    return cfg
