"""Dataset splitting, multi-view prediction aggregation and metrics.

The probability CSV contract (also produced by external trainers):
header ``tree_id,scan_id,angle,slice,<species...>``, one row per image,
``slice`` being ``full`` or ``slice``, probabilities summing to 1 within
1e-6 per row.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .cloud import SPECIES_LABELS
from .io import DatasetManifest, segments_with_multiple_scans
from .projection import ProjectionImage, bilinear_resize

_PROB_SUM_TOL = 1e-6


@dataclass(frozen=True)
class ProbabilityRecord:
    """Per-image class probabilities for one rendered view."""

    tree_id: str
    scan_id: str
    angle_deg: float
    sliced: bool
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1:
            raise ValueError("probs must be a vector")
        if probs.min() < 0.0 or abs(probs.sum() - 1.0) > _PROB_SUM_TOL:
            raise ValueError("probabilities must be >= 0 and sum to 1 within 1e-6")
        object.__setattr__(self, "probs", probs)


@dataclass(frozen=True)
class ProbabilityTable:
    species: tuple[str, ...]
    records: tuple[ProbabilityRecord, ...]

    def __post_init__(self):
        records = tuple(self.records)
        for record in records:
            if len(record.probs) != len(self.species):
                raise ValueError("record probability length must match species")
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "records", records)


def write_probability_csv(table: ProbabilityTable, path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["tree_id", "scan_id", "angle", "slice", *table.species])
        for r in table.records:
            writer.writerow([
                r.tree_id, r.scan_id, f"{r.angle_deg:g}",
                "slice" if r.sliced else "full",
                *[f"{p:.9g}" for p in r.probs],
            ])


def read_probability_csv(path) -> ProbabilityTable:
    with open(path, "r", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or header[:4] != ["tree_id", "scan_id", "angle", "slice"]:
            raise ValueError(
                f"{path}: expected header tree_id,scan_id,angle,slice,<species...>"
            )
        species = tuple(header[4:])
        if not species:
            raise ValueError(f"{path}: no species columns")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}: line {lineno}: wrong field count")
            if row[3] not in ("full", "slice"):
                raise ValueError(
                    f"{path}: line {lineno}: slice field must be full|slice"
                )
            try:
                records.append(ProbabilityRecord(
                    tree_id=row[0], scan_id=row[1],
                    angle_deg=float(row[2]), sliced=row[3] == "slice",
                    probs=np.asarray([float(v) for v in row[4:]]),
                ))
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
    return ProbabilityTable(species=species, records=tuple(records))


# --- train/test splitting ------------------------------------------------------


def grouped_split(manifest: DatasetManifest, test_fraction: float,
                  seed: int) -> DatasetManifest:
    """Species-stratified split; multi-scan trees always go to train.

    Trees captured by several scans must not leak into the test set, so all
    their records are tagged train. The remaining trees are shuffled per
    species (seeded) and assigned so the test share approaches
    `test_fraction` of that species' trees.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    forced_train = segments_with_multiple_scans(manifest)

    by_species: dict[str, list[str]] = {}
    seen = set()
    for entry in manifest.entries:
        if entry.tree_id not in seen:
            seen.add(entry.tree_id)
            by_species.setdefault(entry.species, []).append(entry.tree_id)

    rng = np.random.default_rng(seed)
    test_ids: set[str] = set()
    for species in sorted(by_species):
        tree_ids = sorted(by_species[species])
        eligible = [t for t in tree_ids if t not in forced_train]
        n_test = int(test_fraction * len(tree_ids) + 0.5)
        if len(eligible) < 2:
            if tree_ids:
                warnings.warn(
                    f"species {species!r} has fewer than 2 unconstrained "
                    f"trees; all placed in train"
                )
            continue
        order = rng.permutation(len(eligible))
        for i in order[:min(n_test, len(eligible))]:
            test_ids.add(eligible[i])

    entries = tuple(
        e.with_split("test" if e.tree_id in test_ids else "train")
        for e in manifest.entries
    )
    return DatasetManifest(entries=entries)


# --- aggregation ----------------------------------------------------------------


@dataclass(frozen=True)
class TreePrediction:
    tree_id: str
    scan_id: str
    species: str
    probs: np.ndarray  # aggregated (summed) probability vector


def aggregate_predictions(table: ProbabilityTable) -> list[TreePrediction]:
    """Sum each tree's per-image probability vectors; argmax wins.

    Trees are keyed by (tree_id, scan_id). Argmax ties resolve to the
    earliest species in the table's species order.
    """
    sums: dict[tuple[str, str], np.ndarray] = {}
    for record in table.records:
        key = (record.tree_id, record.scan_id)
        if key in sums:
            sums[key] = sums[key] + record.probs
        else:
            sums[key] = record.probs.copy()
    predictions = []
    for key in sorted(sums):
        total = sums[key]
        predictions.append(TreePrediction(
            tree_id=key[0], scan_id=key[1],
            species=table.species[int(np.argmax(total))],
            probs=total,
        ))
    return predictions


# --- metrics --------------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    species: tuple[str, ...]
    confusion: np.ndarray       # rows = truth, columns = prediction
    oa: float
    maa: float
    ma_f1: float
    kappa: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    included: np.ndarray        # species entering the macro means

    def confusion_normalized(self) -> np.ndarray:
        rows = self.confusion.sum(axis=1, keepdims=True).astype(np.float64)
        safe = np.where(rows == 0, 1.0, rows)
        return self.confusion / safe

    def to_json_dict(self) -> dict:
        per_species = {
            s: {"precision": float(self.precision[i]),
                "recall": float(self.recall[i]),
                "f1": float(self.f1[i]),
                "in_macro_means": bool(self.included[i])}
            for i, s in enumerate(self.species)
        }
        return {
            "oa": self.oa, "maa": self.maa, "ma_f1": self.ma_f1,
            "kappa": self.kappa,
            "species": list(self.species),
            "per_species": per_species,
            "confusion": self.confusion.tolist(),
            "confusion_normalized": self.confusion_normalized().tolist(),
        }

    def format_table(self) -> str:
        lines = [
            f"{'OA (%)':>8} {'MAA (%)':>8} {'MAF1 (%)':>9} {'Kappa (%)':>10}",
            f"{self.oa * 100:>8.1f} {self.maa * 100:>8.1f} "
            f"{self.ma_f1 * 100:>9.1f} {self.kappa * 100:>10.1f}",
            "",
            f"{'species':<10} {'P (%)':>7} {'R (%)':>7} {'F1 (%)':>7}",
        ]
        for i, s in enumerate(self.species):
            lines.append(
                f"{s:<10} {self.precision[i] * 100:>7.1f} "
                f"{self.recall[i] * 100:>7.1f} {self.f1[i] * 100:>7.1f}"
            )
        return "\n".join(lines)


def compute_metrics(truth, predicted, species) -> EvalReport:
    """Confusion matrix plus OA, macro means, per-species P/R/F1 and kappa.

    Species with neither true nor predicted samples are excluded from the
    macro means; precision or recall with a zero denominator count as 0.
    """
    species = tuple(species)
    truth = list(truth)
    predicted = list(predicted)
    if not truth:
        raise ValueError("empty label lists")
    if len(truth) != len(predicted):
        raise ValueError("label lists must have equal length")
    index = {s: i for i, s in enumerate(species)}
    k = len(species)
    confusion = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(truth, predicted):
        if t not in index:
            raise ValueError(f"truth label {t!r} outside the species set")
        if p not in index:
            raise ValueError(f"predicted label {p!r} outside the species set")
        confusion[index[t], index[p]] += 1

    n = confusion.sum()
    tp = np.diag(confusion).astype(np.float64)
    row = confusion.sum(axis=1).astype(np.float64)
    col = confusion.sum(axis=0).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(col > 0, tp / np.where(col > 0, col, 1.0), 0.0)
        recall = np.where(row > 0, tp / np.where(row > 0, row, 1.0), 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2.0 * precision * recall / np.where(pr > 0, pr, 1.0),
                      0.0)

    included = (row > 0) | (col > 0)
    oa = float(tp.sum() / n)
    maa = float(recall[included].mean())
    ma_f1 = float(f1[included].mean())
    p_e = float(((row / n) * (col / n)).sum())
    if 1.0 - p_e < 1e-15:
        kappa = 1.0 if oa >= 1.0 - 1e-15 else 0.0
    else:
        kappa = (oa - p_e) / (1.0 - p_e)

    return EvalReport(species=species, confusion=confusion, oa=oa, maa=maa,
                      ma_f1=ma_f1, kappa=float(kappa), precision=precision,
                      recall=recall, f1=f1, included=included)


# --- truth CSV ------------------------------------------------------------------


def write_truth_csv(rows, path) -> None:
    """rows: iterable of (tree_id, scan_id, species)."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["tree_id", "scan_id", "species"])
        for tree_id, scan_id, species in rows:
            writer.writerow([tree_id, scan_id, species])


def read_truth_csv(path) -> dict[tuple[str, str], str]:
    truth = {}
    with open(path, "r", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ["tree_id", "scan_id", "species"]:
            raise ValueError(f"{path}: expected header tree_id,scan_id,species")
        for row in reader:
            if len(row) != 3:
                raise ValueError(f"{path}: malformed row {row}")
            if row[2] not in SPECIES_LABELS:
                raise ValueError(f"{path}: unknown species {row[2]!r}")
            truth[(row[0], row[1])] = row[2]
    return truth


# --- nearest-centroid baseline ---------------------------------------------------


def _features(image: ProjectionImage, downsample: int) -> np.ndarray:
    values = bilinear_resize(image.pixels.astype(np.float64), downsample,
                             downsample)
    return values.ravel() / 255.0


def baseline_classify(train: list[tuple[ProjectionImage, str]],
                      test: list[ProjectionImage],
                      downsample: int = 32,
                      species: tuple[str, ...] | None = None) -> ProbabilityTable:
    """Nearest-centroid classifier over downsampled, flattened images.

    Per-class probabilities are a softmin of the Euclidean distances to the
    class centroids, with the temperature set to the mean pairwise centroid
    distance. A deliberately simple stand-in for an image classifier so the
    full pipeline can run end to end without one.
    """
    if not train:
        raise ValueError("baseline_classify needs training images")
    labels = sorted({label for _, label in train})
    if species is None:
        species = tuple(labels)
    elif set(labels) - set(species):
        raise ValueError("training labels outside the species list")

    centroids = {}
    for label in labels:
        feats = [_features(img, downsample) for img, lab in train if lab == label]
        centroids[label] = np.mean(feats, axis=0)
    matrix = np.stack([centroids[s] if s in centroids else
                       np.full_like(next(iter(centroids.values())), np.inf)
                       for s in species])

    finite = [centroids[s] for s in species if s in centroids]
    if len(finite) > 1:
        pairwise = [np.linalg.norm(a - b)
                    for i, a in enumerate(finite) for b in finite[i + 1:]]
        temperature = float(np.mean(pairwise))
        if temperature <= 0:
            temperature = 1.0
    else:
        temperature = 1.0

    records = []
    for image in test:
        feats = _features(image, downsample)
        dist = np.linalg.norm(matrix - feats, axis=1)
        logits = -(dist - dist.min()) / temperature
        weights = np.exp(logits)
        probs = weights / weights.sum()
        records.append(ProbabilityRecord(
            tree_id=image.meta.tree_id, scan_id=image.meta.scan_id,
            angle_deg=image.meta.angle_deg, sliced=image.meta.sliced,
            probs=probs,
        ))
    return ProbabilityTable(species=tuple(species), records=tuple(records))


def report_to_json(report: EvalReport, path) -> None:
    with open(path, "w") as handle:
        json.dump(report.to_json_dict(), handle, indent=2)
        handle.write("\n")
