"""Scoring of predicted insult fields against ground truth.

The primary metric is the per-sample relative L2 error
``||pred - true||_2 / ||true||_2`` evaluated on the unpadded (n_z, n_theta)
grid (the duplicated seam column is dropped so it is not double counted),
aggregated as the mean over test samples.  A "stacked" variant — the norm
ratio over all samples concatenated — is co-reported, as is the
region-filtered error restricted to nodes with normalized insult >= 0.5.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import maps, store

INSULTS = ("theta_ce", "theta_delta")
REGION_THRESHOLD = 0.5


@dataclass
class EvalReport:
    model_id: str
    dataset_hash: str
    metrics: dict            # insult -> {rel_l2_mean, rel_l2_stacked, filtered...}
    per_sample: dict         # sample_id -> insult -> error (and _filtered)
    excluded: list = field(default_factory=list)

    def to_json(self) -> str:
        payload = {
            "model_id": self.model_id,
            "dataset_hash": self.dataset_hash,
            "metrics": self.metrics,
            "per_sample": self.per_sample,
            "excluded": self.excluded,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "EvalReport":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**data)


def _unpad(arr):
    return np.asarray(arr, dtype=float)[:, :-1]


def _norm(x):
    return float(np.sqrt(np.sum(np.asarray(x, dtype=np.float64) ** 2)))


def relative_l2(predicted: dict, truth: dict):
    """Mean-over-samples relative L2 per insult channel.

    ``predicted`` and ``truth`` map sample ids to (theta_ce, theta_delta)
    padded arrays.  Samples whose ground-truth norm is zero cannot be
    normalized and are excluded with a warning.

    Returns (per-insult mean dict, per-insult stacked dict, per-sample dict,
    excluded list).
    """
    missing = sorted(set(truth) - set(predicted))
    if missing:
        raise store.PredictionIdError(
            f"predictions missing {len(missing)} sample id(s): {missing}")

    per_sample = {}
    excluded = []
    sums = {k: [] for k in INSULTS}
    stacked_num = {k: 0.0 for k in INSULTS}
    stacked_den = {k: 0.0 for k in INSULTS}
    for sid in sorted(truth):
        entry = {}
        for k, pred, true in zip(INSULTS, predicted[sid], truth[sid]):
            p, t = _unpad(pred), _unpad(true)
            if p.shape != t.shape:
                raise ValueError(f"{sid}: prediction shape {p.shape} != {t.shape}")
            den = _norm(t)
            if den == 0.0:
                warnings.warn(f"{sid}/{k}: zero-norm ground truth, excluded")
                excluded.append([sid, k, "zero-norm ground truth"])
                continue
            num = _norm(p - t)
            entry[k] = num / den
            sums[k].append(num / den)
            stacked_num[k] += num ** 2
            stacked_den[k] += den ** 2
        per_sample[sid] = entry

    mean = {k: float(np.mean(v)) if v else float("nan") for k, v in sums.items()}
    stacked = {k: float(np.sqrt(stacked_num[k] / stacked_den[k]))
               if stacked_den[k] > 0 else float("nan") for k in INSULTS}
    return mean, stacked, per_sample, excluded


def filtered_relative_l2(predicted: dict, truth: dict, masks: dict):
    """Relative L2 restricted to the masked (high-insult) nodes."""
    per_sample = {}
    excluded = []
    sums = {k: [] for k in INSULTS}
    stacked_num = {k: 0.0 for k in INSULTS}
    stacked_den = {k: 0.0 for k in INSULTS}
    for sid in sorted(truth):
        mask = np.asarray(masks[sid], dtype=bool)
        if not mask.any():
            warnings.warn(f"{sid}: empty insult region, excluded from filtering")
            excluded.append([sid, "mask", "empty insult region"])
            continue
        entry = {}
        for k, pred, true in zip(INSULTS, predicted[sid], truth[sid]):
            p, t = _unpad(pred)[mask], _unpad(true)[mask]
            den = _norm(t)
            if den == 0.0:
                excluded.append([sid, k, "zero-norm ground truth in region"])
                continue
            num = _norm(p - t)
            entry[k] = num / den
            sums[k].append(num / den)
            stacked_num[k] += num ** 2
            stacked_den[k] += den ** 2
        per_sample[sid] = entry
    mean = {k: float(np.mean(v)) if v else float("nan") for k, v in sums.items()}
    stacked = {k: float(np.sqrt(stacked_num[k] / stacked_den[k]))
               if stacked_den[k] > 0 else float("nan") for k in INSULTS}
    return mean, stacked, per_sample, excluded


def abs_error_maps(predicted: dict, truth: dict):
    """Signed pointwise error maps (padded grid), per sample and insult."""
    out = {}
    for sid in sorted(truth):
        out[sid] = tuple(
            maps.FieldMap(np.asarray(p, dtype=float) - np.asarray(t, dtype=float),
                          kind=f"error_{k}")
            for k, p, t in zip(INSULTS, predicted[sid], truth[sid]))
    return out


def dataset_hash(manifest: store.DatasetManifest) -> str:
    payload = json.dumps(
        {"master_seed": manifest.master_seed, "sample_count": manifest.sample_count,
         "generator_hash": manifest.generator_hash,
         "test_ids": manifest.test_ids},
        sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def evaluate_predictions(dataset_dir, predictions_path) -> EvalReport:
    """Score a predictions file against its dataset's test split."""
    manifest = store.DatasetManifest.load(dataset_dir)
    model_id, predicted = store.read_predictions(predictions_path)
    truth = {}
    masks = {}
    for sid in manifest.test_ids:
        rec = store.read_sample(store.sample_path(dataset_dir, sid))
        truth[sid] = (rec.maps["theta_ce"], rec.maps["theta_delta"])
        masks[sid] = _unpad(rec.maps["theta_star"]) >= REGION_THRESHOLD
    missing = sorted(set(truth) - set(predicted))
    if missing:
        raise store.PredictionIdError(
            f"predictions for {model_id!r} missing ids: {missing}")

    mean, stacked, per_sample, excluded = relative_l2(predicted, truth)
    fmean, fstacked, fper, fexcluded = filtered_relative_l2(predicted, truth, masks)
    metrics = {}
    for k in INSULTS:
        metrics[k] = {
            "rel_l2_mean": mean[k],
            "rel_l2_stacked": stacked[k],
            "rel_l2_mean_filtered": fmean[k],
            "rel_l2_stacked_filtered": fstacked[k],
        }
    for sid, entry in fper.items():
        for k, v in entry.items():
            per_sample[sid][f"{k}_filtered"] = v
    return EvalReport(model_id=model_id, dataset_hash=dataset_hash(manifest),
                      metrics=metrics, per_sample=per_sample,
                      excluded=excluded + fexcluded)


INSULT_LABELS = {"theta_ce": "Eln Fiber Integrity", "theta_delta": "Mechanosensing"}


def render_report_table(reports) -> str:
    """Aligned-text table over one or more model runs (rows mirror the
    insult-by-model layout of the reference results table)."""
    lines = []
    header = f"{'':38s} {'rel L2 (mean)':>14s} {'(stacked)':>10s} " \
             f"{'>=50% region':>13s} {'(stacked)':>10s}"
    for k in INSULTS:
        lines.append(INSULT_LABELS[k])
        lines.append(header)
        for rep in reports:
            m = rep.metrics[k]
            lines.append(
                f"  {rep.model_id:36s} {m['rel_l2_mean']:>14.4f} "
                f"{m['rel_l2_stacked']:>10.4f} "
                f"{m['rel_l2_mean_filtered']:>13.4f} "
                f"{m['rel_l2_stacked_filtered']:>10.4f}")
        lines.append("")
    return "\n".join(lines)
