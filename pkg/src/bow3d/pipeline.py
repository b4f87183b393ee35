"""Train/test/validate orchestration over configured experiments.

The chain for bag-of-words features is
load -> normals -> detect -> extract -> merge -> dictionary -> histograms
-> classifier; the esf feature routes straight from the cloud to the
classifier since it is already global and dimensionality-fixed. Every
stage is deterministic given the config seed, and classification applies
byte-identical stage parameters to the ones recorded at training time
(enforced through a config fingerprint).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import time
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bow import BoWDescriptor, Dictionary, build_dictionary, compute_bow_descriptor, load_dictionary, save_dictionary
from .classify import (
    EvaluationReport,
    KernelConfig,
    KnnModel,
    LabeledDataset,
    SvmModel,
    evaluate,
    knn_classify,
    load_svm_model,
    save_svm_model,
    svm_classify,
    svm_train,
)
from .cloud import PointCloud, estimate_normals
from .config import ExperimentConfig, read_configuration, write_configuration
from .errors import ConfigError, DataError
from .features import (
    FeatureSet,
    compute_cshot,
    compute_esf,
    compute_fpfh,
    compute_pfh,
    compute_pfhrgb,
    compute_shot,
    load_feature_set,
    save_feature_set,
)
from .keypoints import HarrisConfig, harris3d, uniform_sampling
from .pcd_io import load_pcd

__all__ = [
    "TrainedSystem",
    "train",
    "classify_frame",
    "test",
    "validate",
    "show_results",
    "extract_features",
    "save_system",
    "load_system",
]

log = logging.getLogger("bow3d")


def _parallel_map(fn, items, threads: Optional[int]):
    """Order-preserving map, threaded when threads > 1."""
    items = list(items)
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass
class TrainedSystem:
    """Everything needed to classify new frames exactly like training did."""

    config: ExperimentConfig
    categories: tuple[str, ...]
    classifier_kind: str  # svm | knn
    dictionary: Optional[Dictionary] = None
    svm: Optional[SvmModel] = None
    knn: Optional[KnnModel] = None
    fingerprint: str = ""
    stats: dict = field(default_factory=dict)

    @property
    def input_dimension(self) -> int:
        return 640 if self.config.feature == "esf" else self.config.dictionary_size


def _esf_seed(cfg: ExperimentConfig, cloud: PointCloud) -> int:
    digest = hashlib.sha256(f"{cloud.content_digest()}:{cfg.seed}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _detect(cfg: ExperimentConfig, cloud: PointCloud):
    if cfg.detector == "uniform_sampling":
        return uniform_sampling(cloud, cfg.us_radius)
    return harris3d(
        cloud,
        HarrisConfig(
            support_radius=cfg.harris_support_radius,
            response_constant=cfg.harris_response_constant,
            threshold=cfg.harris_threshold,
            nms_radius=cfg.harris_nms_radius,
        ),
    )


def _extract(cfg: ExperimentConfig, cloud: PointCloud, keypoints) -> FeatureSet:
    radius = cfg.feature_radius
    if cfg.feature == "pfh":
        return compute_pfh(cloud, keypoints, radius)
    if cfg.feature == "pfhrgb":
        return compute_pfhrgb(cloud, keypoints, radius)
    if cfg.feature == "fpfh":
        return compute_fpfh(cloud, keypoints, radius)
    if cfg.feature == "shot":
        return compute_shot(cloud, keypoints, radius)
    if cfg.feature == "cshot":
        return compute_cshot(cloud, keypoints, radius)
    raise ConfigError(f"unknown feature {cfg.feature!r}")


def _cache_path(cfg: ExperimentConfig, cloud: PointCloud) -> Optional[str]:
    if not cfg.cache_dir:
        return None
    key = hashlib.sha256(f"{cloud.content_digest()}|{cfg.stage_params()}".encode()).hexdigest()
    return os.path.join(cfg.cache_dir, f"{key}.fset")


def extract_features(cfg: ExperimentConfig, cloud: PointCloud, source: str = "",
                     stats: Optional[dict] = None) -> FeatureSet:
    """Normals + detector + descriptor for one cloud, disk-cached when the
    config names a cache directory. For esf, the single global descriptor
    is wrapped in a one-row FeatureSet seeded from the cloud content."""
    cache = _cache_path(cfg, cloud)
    if cache and os.path.isfile(cache):
        fset = load_feature_set(cache)
        if stats is not None:
            stats["cache_hits"] = stats.get("cache_hits", 0) + 1
        return fset

    t0 = time.perf_counter()
    if cfg.feature == "esf":
        vec = compute_esf(cloud, cfg.esf_samples, cfg.esf_voxel_resolution, seed=_esf_seed(cfg, cloud))
        fset = FeatureSet(vec.values[None, :], kind="esf", source=source, kept=1, dropped=0)
    else:
        with_normals = estimate_normals(cloud, cfg.normal_radius)
        t1 = time.perf_counter()
        keypoints = _detect(cfg, with_normals)
        t2 = time.perf_counter()
        fset = _extract(cfg, with_normals, keypoints)
        fset.source = source
        if stats is not None:
            stats["normals_seconds"] = stats.get("normals_seconds", 0.0) + (t1 - t0)
            stats["detect_seconds"] = stats.get("detect_seconds", 0.0) + (t2 - t1)
            stats["extract_seconds"] = stats.get("extract_seconds", 0.0) + (time.perf_counter() - t2)
            stats["keypoints"] = stats.get("keypoints", 0) + len(keypoints)
    if stats is not None:
        stats["cache_misses"] = stats.get("cache_misses", 0) + 1
        stats["dropped_keypoints"] = stats.get("dropped_keypoints", 0) + fset.dropped
    if cache:
        os.makedirs(cfg.cache_dir, exist_ok=True)
        save_feature_set(fset, cache)
    return fset


def _load_cloud(path: str, label: Optional[str], stage: str) -> PointCloud:
    try:
        cloud = load_pcd(path)
    except DataError as exc:
        raise DataError(f"{stage}: {path}: {exc}") from exc
    cloud.label = label
    return cloud


def _descriptor_matrix(cfg, dictionary, feature_sets) -> tuple[np.ndarray, list[bool]]:
    """Stack per-cloud descriptors; returns the matrix and empty flags."""
    rows, flags = [], []
    for fset in feature_sets:
        if cfg.feature == "esf":
            rows.append(fset.vectors[0])
            flags.append(False)
        else:
            bow = compute_bow_descriptor(dictionary, fset)
            rows.append(bow.histogram)
            flags.append(bow.empty)
    return np.vstack(rows), flags


def train(cfg: ExperimentConfig, threads: Optional[int] = None) -> TrainedSystem:
    """Run the full training chain and return the trained system."""
    cfg.validate()
    if not cfg.training:
        raise ConfigError("training list is empty")
    labels = [label for _, label in cfg.training]
    categories = tuple(sorted(set(labels)))
    if len(categories) < 2:
        raise ConfigError(f"training needs >= 2 distinct labels, got {categories}")

    stats: dict = {}
    t0 = time.perf_counter()

    def _one(entry):
        path, label = entry
        cloud = _load_cloud(path, label, "train/load")
        try:
            return extract_features(cfg, cloud, source=path, stats=stats)
        except DataError as exc:
            raise DataError(f"train/extract: {path}: {exc}") from exc

    feature_sets = _parallel_map(_one, cfg.training, threads)
    stats["features_total"] = int(sum(len(fs) for fs in feature_sets))
    t1 = time.perf_counter()

    dictionary = None
    if cfg.feature != "esf":
        dictionary = build_dictionary(feature_sets, k=cfg.dictionary_size, seed=cfg.seed)
        stats["dictionary_inertia"] = dictionary.inertia
        stats["dictionary_iterations"] = dictionary.iterations
    t2 = time.perf_counter()

    matrix, empty_flags = _descriptor_matrix(cfg, dictionary, feature_sets)
    if any(empty_flags):
        log.warning("train: %d clouds produced zero features", sum(empty_flags))
    expected_dim = 640 if cfg.feature == "esf" else cfg.dictionary_size
    assert matrix.shape[1] == expected_dim, f"descriptor dim {matrix.shape[1]} != {expected_dim}"
    dataset = LabeledDataset(matrix, labels, categories)

    system = TrainedSystem(
        config=cfg,
        categories=categories,
        classifier_kind=cfg.classifier,
        dictionary=dictionary,
        fingerprint=cfg.fingerprint(),
        stats=stats,
    )
    if cfg.classifier == "svm":
        kernel = KernelConfig(kind="chi2", gamma=cfg.svm_gamma)
        system.svm = svm_train(dataset, kernel, c=cfg.svm_c, tol=cfg.svm_tol)
    else:
        k = min(cfg.knn_k, len(dataset))
        if k < cfg.knn_k:
            log.warning("train: knn_k clamped from %d to dataset size %d", cfg.knn_k, k)
        system.knn = KnnModel(dataset, k=k, distance=cfg.knn_distance)
    stats["extract_total_seconds"] = t1 - t0
    stats["dictionary_seconds"] = t2 - t1
    stats["classifier_seconds"] = time.perf_counter() - t2
    return system


def classify_frame(system: TrainedSystem, cloud: PointCloud) -> tuple[str, dict[str, float]]:
    """Classify one cloud with the training-time stage parameters."""
    cfg = system.config
    if system.fingerprint and cfg.fingerprint() != system.fingerprint:
        raise DataError("config fingerprint mismatch: system was trained with different stage parameters")
    fset = extract_features(cfg, cloud, source="frame")
    if cfg.feature == "esf":
        descriptor = fset.vectors[0]
    else:
        bow = compute_bow_descriptor(system.dictionary, fset)
        if bow.empty:
            log.warning("classify_frame: cloud produced zero features; classifying the empty histogram")
        descriptor = bow.histogram
    if system.classifier_kind == "svm":
        return svm_classify(system.svm, descriptor)
    return knn_classify(system.knn, descriptor)


def test(system: TrainedSystem, test_list: Sequence[tuple[str, str]],
         threads: Optional[int] = None) -> EvaluationReport:
    """Classify every labeled test cloud and aggregate the confusion
    matrix. Unreadable clouds are skipped, counted, and logged."""
    if not test_list:
        raise DataError("test list is empty")
    skipped = 0
    loaded = []
    for path, label in test_list:
        try:
            loaded.append((_load_cloud(path, label, "test/load"), label))
        except DataError as exc:
            skipped += 1
            log.warning("test: skipping unreadable cloud: %s", exc)
    if not loaded:
        raise DataError("all test clouds were unreadable")

    results = _parallel_map(lambda item: classify_frame(system, item[0]), loaded, threads)
    predictions = [label for label, _ in results]
    truth = [label for _, label in loaded]
    system.stats["test_skipped"] = skipped
    categories = tuple(sorted(set(system.categories) | set(truth)))
    return evaluate(predictions, truth, categories)


def validate(cfg: ExperimentConfig, folds: int, threads: Optional[int] = None) -> tuple[float, float]:
    """Stratified k-fold cross-validation over the training list.

    The dictionary is rebuilt per fold from that fold's training portion
    only. Returns (mean accuracy, standard deviation).
    """
    if folds < 2:
        raise ConfigError(f"folds must be >= 2, got {folds}")
    cfg.validate()
    by_label: dict[str, list[int]] = {}
    for pos, (_, label) in enumerate(cfg.training):
        by_label.setdefault(label, []).append(pos)
    for label, positions in sorted(by_label.items()):
        if len(positions) < folds:
            raise ConfigError(f"category {label!r} has {len(positions)} clouds; needs >= {folds} for {folds}-fold")

    fold_of = np.zeros(len(cfg.training), dtype=int)
    for label in sorted(by_label):
        for i, pos in enumerate(by_label[label]):
            fold_of[pos] = i % folds

    accuracies = []
    for fold in range(folds):
        train_list = [e for pos, e in enumerate(cfg.training) if fold_of[pos] != fold]
        held_out = [e for pos, e in enumerate(cfg.training) if fold_of[pos] == fold]
        fold_cfg = ExperimentConfig(**{**cfg.__dict__, "training": train_list, "test": held_out})
        system = train(fold_cfg, threads=threads)
        report = test(system, held_out, threads=threads)
        accuracies.append(report.accuracy)
    acc = np.asarray(accuracies)
    return float(acc.mean()), float(acc.std())


def show_results(report: EvaluationReport, fmt: str = "text") -> str:
    """Render an evaluation report as text, csv, or json."""
    if fmt == "json":
        return report.to_json()
    cats = report.categories
    if fmt == "csv":
        lines = ["category," + ",".join(cats)]
        for i, c in enumerate(cats):
            lines.append(c + "," + ",".join(str(int(v)) for v in report.confusion[i]))
        return "\n".join(lines) + "\n"
    if fmt != "text":
        raise DataError(f"unknown format {fmt!r}")
    width = max(len(c) for c in cats)
    lines = [f"accuracy: {report.accuracy:.4f}", ""]
    lines.append("confusion matrix (rows = truth, columns = predicted):")
    header = " " * (width + 1) + " ".join(f"{c:>{width}}" for c in cats)
    lines.append(header)
    for i, c in enumerate(cats):
        row = " ".join(f"{int(v):>{width}}" for v in report.confusion[i])
        lines.append(f"{c:<{width}} {row}")
    lines.append("")
    for c in cats:
        lines.append(f"{c:<{width}} precision {report.precision(c):.4f} recall {report.recall(c):.4f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# System serialization: a zip bundle of the existing binary containers


def save_system(system: TrainedSystem, path) -> None:
    meta = {
        "classifier": system.classifier_kind,
        "categories": list(system.categories),
        "fingerprint": system.fingerprint,
        "feature": system.config.feature,
    }
    with zipfile.ZipFile(path, "w") as zf:
        with tempfile.TemporaryDirectory() as tmp:
            cfg_path = os.path.join(tmp, "config.cfg")
            write_configuration(system.config, cfg_path)
            zf.write(cfg_path, "config.cfg")
            if system.dictionary is not None:
                dict_path = os.path.join(tmp, "dictionary.bin")
                save_dictionary(system.dictionary, dict_path)
                zf.write(dict_path, "dictionary.bin")
            if system.svm is not None:
                svm_path = os.path.join(tmp, "svm.bin")
                save_svm_model(system.svm, svm_path)
                zf.write(svm_path, "svm.bin")
            if system.knn is not None:
                knn_path = os.path.join(tmp, "knn.npz")
                np.savez(
                    knn_path,
                    vectors=system.knn.dataset.vectors,
                    labels=np.asarray(system.knn.dataset.labels),
                    categories=np.asarray(system.knn.dataset.categories),
                    k=system.knn.k,
                    distance=system.knn.distance,
                )
                zf.write(knn_path, "knn.npz")
        zf.writestr("meta.json", json.dumps(meta))


def load_system(path) -> TrainedSystem:
    if not os.path.isfile(path):
        raise DataError(f"no such system file: {path}")
    with zipfile.ZipFile(path) as zf, tempfile.TemporaryDirectory() as tmp:
        names = set(zf.namelist())
        if "meta.json" not in names or "config.cfg" not in names:
            raise DataError(f"not a trained-system bundle: {path}")
        meta = json.loads(zf.read("meta.json"))
        zf.extractall(tmp)
        cfg = read_configuration(os.path.join(tmp, "config.cfg"))
        system = TrainedSystem(
            config=cfg,
            categories=tuple(meta["categories"]),
            classifier_kind=meta["classifier"],
            fingerprint=meta["fingerprint"],
        )
        if "dictionary.bin" in names:
            system.dictionary = load_dictionary(os.path.join(tmp, "dictionary.bin"))
        if "svm.bin" in names:
            system.svm = load_svm_model(os.path.join(tmp, "svm.bin"))
        if "knn.npz" in names:
            data = np.load(os.path.join(tmp, "knn.npz"))
            dataset = LabeledDataset(
                data["vectors"],
                [str(l) for l in data["labels"]],
                tuple(str(c) for c in data["categories"]),
            )
            system.knn = KnnModel(dataset, k=int(data["k"]), distance=str(data["distance"]))
    return system
