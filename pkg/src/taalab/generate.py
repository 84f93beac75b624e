"""End-to-end synthetic dataset generation.

For each of ``n_profiles`` insult profiles (independent RNG streams derived
from the master seed) and each of the five contributor combos, the insult
amplitude is calibrated so the maximum diastolic dilatation hits the target,
the vessel is solved, and the resulting maps are persisted in the binary
store together with a manifest and a per-sample calibration report.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import maps, solver, store
from .grf import N_COMBOS, GrfConfig, GrfSampler, InsultField, mix_seed
from .params import WallParameters


@dataclass(frozen=True)
class GenerationConfig:
    n_profiles: int = 100
    n_combos: int = N_COMBOS
    master_seed: int = 20250809
    split_seed: int | None = None       # defaults to master_seed
    grf: GrfConfig = field(default_factory=GrfConfig)
    smoothing_sigma: float = solver.DEFAULT_SMOOTHING
    calibration_target: float = solver.CALIBRATION_TARGET
    calibration_tol: float = solver.CALIBRATION_TOL
    dilatation_range: tuple = maps.DILATATION_RANGE
    distensibility_range: tuple = maps.DISTENSIBILITY_RANGE
    wall_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_profiles < 1 or not 1 <= self.n_combos <= N_COMBOS:
            raise ValueError("need at least one profile and 1..5 combos")

    def wall_parameters(self) -> WallParameters:
        return WallParameters().with_overrides(dict(self.wall_overrides))


def build_sample(field_: InsultField, combo_index: int, cfg: GenerationConfig):
    """Calibrate one (profile, combo) pair and assemble its sample record."""
    params = cfg.wall_parameters()
    result = solver.calibrate_amplitude(
        field_, combo_index, params,
        target=cfg.calibration_target, tol=cfg.calibration_tol,
        smoothing_sigma=cfg.smoothing_sigma)
    vessel = result.vessel
    pair = vessel.pair

    d_map = maps.dilatation_map(vessel)
    dist_map = maps.distensibility_map(vessel)
    tt, zz, shear = solver.stress_maps(vessel)

    record = store.SampleRecord(
        sample_id=store.sample_id_for(field_.profile_id, combo_index),
        profile_id=field_.profile_id,
        combo_index=combo_index,
        amplitude_scale=result.amplitude_scale,
        maps={
            "theta_star": maps.pad_circular(field_.theta_star).astype("<f4"),
            "theta_ce": maps.pad_circular(pair.theta_ce).astype("<f4"),
            "theta_delta": maps.pad_circular(pair.theta_delta).astype("<f4"),
            "dilatation": d_map.values.astype("<f4"),
            "distensibility": dist_map.values.astype("<f4"),
            "stress_tt": tt.values.astype("<f4"),
            "stress_zz": zz.values.astype("<f4"),
            "shear": shear.values.astype("<f4"),
            "dilatation_gray": maps.quantize(d_map.values, cfg.dilatation_range),
            "distensibility_gray": maps.quantize(dist_map.values,
                                                 cfg.distensibility_range),
        })
    meta = {"amplitude_scale": result.amplitude_scale,
            "d_max": result.d_max,
            "reached": result.reached,
            "evaluations": result.evaluations}
    return record, meta


def _profile_task(args):
    profile_id, theta_star, cfg, out_dir = args
    field_ = InsultField(theta_star=theta_star, profile_id=profile_id)
    written = []
    metas = {}
    for k in range(cfg.n_combos):
        record, meta = build_sample(field_, k, cfg)
        store.write_sample(record, store.sample_path(out_dir, record.sample_id))
        written.append(record.sample_id)
        metas[record.sample_id] = meta
    return written, metas


def generate_dataset(out_dir, cfg: GenerationConfig, workers: int = 1):
    """Generate the full dataset; returns the manifest.

    Deterministic for a fixed config regardless of worker count: every
    profile draws from its own seed stream and nodes never interact.
    """
    out_dir = os.fspath(out_dir)
    os.makedirs(store.sample_dir(out_dir), exist_ok=True)
    os.makedirs(store.predictions_dir(out_dir), exist_ok=True)
    os.makedirs(store.exports_dir(out_dir), exist_ok=True)

    t0 = time.perf_counter()
    sampler = GrfSampler(cfg.grf)
    fields = [sampler.sample(mix_seed(cfg.master_seed, pid), profile_id=pid)
              for pid in range(cfg.n_profiles)]

    tasks = [(f.profile_id, f.theta_star, cfg, out_dir) for f in fields]
    sample_ids = []
    calibration = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for written, metas in pool.map(_profile_task, tasks, chunksize=1):
                sample_ids.extend(written)
                calibration.update(metas)
    else:
        for task in tasks:
            written, metas = _profile_task(task)
            sample_ids.extend(written)
            calibration.update(metas)

    split_seed = cfg.master_seed if cfg.split_seed is None else cfg.split_seed
    n_total = len(sample_ids)
    if n_total == 500:
        train_ids, test_ids = store.split_dataset(sample_ids, split_seed)
    else:
        n_test = max(1, round(0.1 * n_total))
        train_ids, test_ids = store.split_ids(sample_ids, split_seed,
                                              n_total - n_test, n_test)

    manifest = store.DatasetManifest(
        n_z=cfg.grf.n_z, n_theta=cfg.grf.n_theta,
        padded_cols=cfg.grf.n_theta + 1,
        sample_count=n_total,
        master_seed=cfg.master_seed, split_seed=split_seed,
        grf_surface_fraction=cfg.grf.surface_fraction,
        grf_boundary_softness=cfg.grf.boundary_softness,
        grf_length_circ=cfg.grf.length_circ,
        grf_length_axial=cfg.grf.length_axial,
        grf_boundary_value=cfg.grf.boundary_value,
        smoothing_sigma=cfg.smoothing_sigma,
        calibration_target=cfg.calibration_target,
        calibration_tol=cfg.calibration_tol,
        dilatation_range_lo=cfg.dilatation_range[0],
        dilatation_range_hi=cfg.dilatation_range[1],
        distensibility_range_lo=cfg.distensibility_range[0],
        distensibility_range_hi=cfg.distensibility_range[1],
        train_ids=train_ids, test_ids=test_ids,
        wall_overrides=dict(cfg.wall_overrides),
        generator_hash=store.generator_hash(),
    )
    manifest.save(out_dir)

    report = {
        "wall_seconds": time.perf_counter() - t0,
        "workers": workers,
        "samples": calibration,
    }
    with open(os.path.join(out_dir, "calibration_report.json"), "w",
              encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
