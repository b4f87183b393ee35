"""Experiment configuration: line-oriented `key = value` text.

`[training]` and `[test]` sections list one `path<TAB>label` entry per
line; relative cloud paths resolve against the config file's directory.
Unknown keys are rejected so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError

__all__ = ["ExperimentConfig", "read_configuration", "write_configuration"]

DETECTORS = ("uniform_sampling", "harris3d")
FEATURES = ("pfh", "pfhrgb", "fpfh", "shot", "cshot", "esf")
CLASSIFIERS = ("svm", "knn")

# Per-feature support radii applied when feature_radius is omitted.
_FEATURE_RADIUS_DEFAULTS = {"pfh": 0.06, "pfhrgb": 0.06, "fpfh": 0.06, "shot": 0.10, "cshot": 0.10}


@dataclass
class ExperimentConfig:
    """Every knob of one train/test experiment, with defaults filled in."""

    training: list[tuple[str, str]] = field(default_factory=list)  # (path, label)
    test: list[tuple[str, str]] = field(default_factory=list)

    detector: str = "uniform_sampling"
    feature: str = "fpfh"
    classifier: str = "svm"
    dictionary_size: int = 50
    seed: int = 0

    normal_radius: float = 0.05
    us_radius: float = 0.03
    harris_support_radius: float = 0.05
    harris_nms_radius: Optional[float] = None  # defaults to support radius
    harris_threshold: float = 0.01
    harris_response_constant: float = 0.04
    feature_radius: Optional[float] = None  # per-feature default
    esf_samples: int = 20000
    esf_voxel_resolution: int = 64

    knn_k: int = 7
    knn_distance: str = "euclidean"
    svm_c: float = 1.0
    svm_gamma: Optional[float] = None  # None = 1/dimension
    svm_tol: float = 1e-3

    cache_dir: Optional[str] = None

    def validate(self) -> "ExperimentConfig":
        if self.detector not in DETECTORS:
            raise ConfigError(f"unknown detector {self.detector!r}; supported: {', '.join(DETECTORS)}")
        if self.feature not in FEATURES:
            raise ConfigError(f"unknown feature {self.feature!r}; supported: {', '.join(FEATURES)}")
        if self.classifier not in CLASSIFIERS:
            raise ConfigError(f"unknown classifier {self.classifier!r}; supported: {', '.join(CLASSIFIERS)}")
        if self.dictionary_size <= 0:
            raise ConfigError(f"dictionary_size must be positive, got {self.dictionary_size}")
        if self.knn_distance not in ("euclidean", "chi_square"):
            raise ConfigError(f"unknown knn_distance {self.knn_distance!r}")
        for name in ("normal_radius", "us_radius", "harris_support_radius", "svm_c", "svm_tol"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("harris_threshold", "harris_response_constant"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.harris_nms_radius is None:
            self.harris_nms_radius = self.harris_support_radius
        if self.feature_radius is None and self.feature != "esf":
            self.feature_radius = _FEATURE_RADIUS_DEFAULTS[self.feature]
        if self.knn_k < 1:
            raise ConfigError(f"knn_k must be >= 1, got {self.knn_k}")
        if self.esf_samples < 1 or self.esf_voxel_resolution < 2:
            raise ConfigError("esf_samples must be >= 1 and esf_voxel_resolution >= 2")
        return self

    def stage_params(self) -> str:
        """Canonical string of every parameter that shapes per-cloud
        descriptors; the cache key and config fingerprint derive from it."""
        parts = [f"normal_radius={self.normal_radius!r}", f"feature={self.feature}"]
        if self.feature == "esf":
            parts += [f"esf_samples={self.esf_samples}", f"esf_voxel_resolution={self.esf_voxel_resolution}",
                      f"seed={self.seed}"]
            return ";".join(parts)
        parts.append(f"feature_radius={self.feature_radius!r}")
        parts.append(f"detector={self.detector}")
        if self.detector == "uniform_sampling":
            parts.append(f"us_radius={self.us_radius!r}")
        else:
            parts += [f"harris_support_radius={self.harris_support_radius!r}",
                      f"harris_nms_radius={self.harris_nms_radius!r}",
                      f"harris_threshold={self.harris_threshold!r}",
                      f"harris_response_constant={self.harris_response_constant!r}"]
        return ";".join(parts)

    def fingerprint(self) -> str:
        """Digest of the per-cloud stage parameters plus the BoW size."""
        text = self.stage_params() + f";k={self.dictionary_size};seed={self.seed}"
        return hashlib.sha256(text.encode()).hexdigest()


_LIST_FIELDS = {"training", "test"}

_INT_KEYS = {"dictionary_size", "seed", "esf_samples", "esf_voxel_resolution", "knn_k"}
_FLOAT_KEYS = {"normal_radius", "us_radius", "harris_support_radius", "harris_nms_radius",
               "harris_threshold", "harris_response_constant", "feature_radius",
               "svm_c", "svm_gamma", "svm_tol"}
_STR_KEYS = {"detector", "feature", "classifier", "knn_distance", "cache_dir"}


def read_configuration(path, check_files: bool = True) -> ExperimentConfig:
    """Parse and validate a config file; raises ConfigError on unknown
    keys, unknown choices, bad values, or (by default) missing cloud
    files. `check_files=False` skips the existence check, e.g. for the
    provenance copy stored inside a trained-system bundle."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ConfigError(f"no such config file: {path}")
    base = os.path.dirname(os.path.abspath(path))
    cfg = ExperimentConfig()
    section = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip().lower()
                if section not in _LIST_FIELDS:
                    raise ConfigError(f"{path}:{lineno}: unknown section [{section}]")
                continue
            if section is not None:
                if "\t" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected path<TAB>label in [{section}]")
                cloud_path, label = line.split("\t", 1)
                cloud_path = cloud_path.strip()
                if not os.path.isabs(cloud_path):
                    cloud_path = os.path.normpath(os.path.join(base, cloud_path))
                getattr(cfg, section).append((cloud_path, label.strip()))
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in _INT_KEYS:
                try:
                    setattr(cfg, key, int(value))
                except ValueError:
                    raise ConfigError(f"{path}:{lineno}: {key} must be an integer, got {value!r}") from None
            elif key in _FLOAT_KEYS:
                if value.lower() in ("auto", "none") and key in ("svm_gamma", "feature_radius", "harris_nms_radius"):
                    setattr(cfg, key, None)
                    continue
                try:
                    setattr(cfg, key, float(value))
                except ValueError:
                    raise ConfigError(f"{path}:{lineno}: {key} must be a number, got {value!r}") from None
            elif key in _STR_KEYS:
                if key == "cache_dir" and not os.path.isabs(value):
                    value = os.path.normpath(os.path.join(base, value))
                setattr(cfg, key, value)
            else:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")

    cfg.validate()
    if check_files:
        missing = [p for p, _ in cfg.training + cfg.test if not os.path.isfile(p)]
        if missing:
            raise ConfigError(f"missing cloud files: {missing[:5]}{' ...' if len(missing) > 5 else ''}")
    return cfg


def write_configuration(cfg: ExperimentConfig, path) -> None:
    """Write a config in the same `key = value` format read_configuration
    accepts; cloud paths are written as given."""
    lines = []
    for key in sorted(_INT_KEYS | _FLOAT_KEYS | _STR_KEYS):
        value = getattr(cfg, key)
        if value is None:
            continue
        lines.append(f"{key} = {value}")
    for section in ("training", "test"):
        entries = getattr(cfg, section)
        if entries:
            lines.append(f"[{section}]")
            lines += [f"{p}\t{l}" for p, l in entries]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
