"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The dataset- and training-backed criteria work against a cached artifacts
directory (default ``<repo>/.cache/acceptance``, override with
``TAALAB_ACCEPT_CACHE``).  On a cold cache the dataset (100 profiles x 5
combos, 8 workers) and the four 20k-update DeepONet variants are produced on
the spot and their wall times recorded; warm runs re-verify the recorded
timings and all value-level assertions against the stored artifacts.

Criterion 6's strict-decrease clause is expected to fail for the pure
mechanosensing combo (k=4): in this reduced per-node model the diastolic
stiffness gain (~rho) marginally lags the load gain (~lam^2) when no elastic
fiber damage is present, leaving apex distensibility about 1.8% ABOVE
baseline instead of below it.  The clause is asserted as specified and left
honestly red; see the analysis in the repository notes.
"""

import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from taalab import deeponet, evaluate, maps, solver, store, wall
from taalab.cli import default_model_id, main, train_deeponet
from taalab.grf import GrfConfig, GrfSampler, grf_moments
from taalab.params import WallParameters

REPO_ROOT = Path(__file__).resolve().parent.parent
CACHE = Path(os.environ.get("TAALAB_ACCEPT_CACHE",
                            REPO_ROOT / ".cache" / "acceptance"))
DATASET_DIR = CACHE / "dataset"
MASTER_SEED = 20250809
TRAIN_BUDGET = 20000
TRAIN_SEED = 0

PAPER_D_MAX_MEAN = 1.496
PAPER_D_MAX_STD = 0.0476
PAPER_BASELINE_DISTENSIBILITY = 0.05442


def report(num, name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"[criterion {num:>2}] {status}  {name}  {detail}")


@pytest.fixture(scope="session")
def dataset_dir():
    if not (DATASET_DIR / "manifest.json").exists():
        CACHE.mkdir(parents=True, exist_ok=True)
        code = main(["generate", "--out", str(DATASET_DIR),
                     "--profiles", "100", "--combos", "5",
                     "--seed", str(MASTER_SEED), "--workers", "8"])
        assert code == 0, "dataset generation failed"
    return DATASET_DIR


@pytest.fixture(scope="session")
def records(dataset_dir):
    manifest, recs = store.load_dataset(dataset_dir)
    return manifest, recs


def test_criterion_01_grf_moment_oracle():
    from mpmath import erfinv as mp_erfinv, exp as mp_exp, mp, mpf, pi, sqrt
    mp.dps = 20  # ten orders beyond the 1e-10 tolerance
    rng = np.random.default_rng(123)
    phis = rng.uniform(0.02, 0.98, size=1000)
    epss = rng.uniform(0.05, 5.0, size=1000)
    t0 = time.perf_counter()
    half = mpf(1) / 2
    sqrt_pi = sqrt(pi)
    worst = 0.0
    for phi, eps in zip(phis, epss):
        mu, var = grf_moments(float(phi), float(eps))
        q = mp_erfinv(1 - 2 * mpf(repr(float(phi))))
        e = mpf(repr(float(eps)))
        decay = mp_exp(-q ** 2)
        mu_ref = half - q * decay / (e * sqrt_pi)
        var_ref = decay ** 2 / (2 * pi * e ** 2)
        worst = max(worst,
                    abs(mu - float(mu_ref)) / max(abs(float(mu_ref)), 1e-300),
                    abs(var - float(var_ref)) / float(var_ref))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-10 and elapsed < 1.0
    report(1, "GRF moments vs high-precision oracle", ok,
           f"worst rel err {worst:.2e}, {elapsed:.2f} s")
    assert worst < 1e-10
    assert elapsed < 1.0


def test_criterion_02_conditioned_sampling():
    t0 = time.perf_counter()
    cfg = GrfConfig(surface_fraction=0.23, boundary_softness=0.2)
    sampler = GrfSampler(cfg)
    worst_boundary = 0.0
    fractions = []
    for seed in range(200):
        f = sampler.sample(seed).theta_star
        worst_boundary = max(worst_boundary,
                             float(np.abs(f[[0, -1], :]).max()))
        fractions.append((f > 0.5).mean())
    elapsed = time.perf_counter() - t0
    frac = float(np.mean(fractions))
    ok = worst_boundary <= 1e-10 and abs(frac - 0.23) <= 0.05 and elapsed < 60
    report(2, "conditioned sampling: boundary + insult fraction", ok,
           f"boundary {worst_boundary:.1e}, fraction {frac:.4f}, {elapsed:.1f} s")
    assert worst_boundary <= 1e-10
    assert abs(frac - 0.23) <= 0.05
    assert elapsed < 60


def test_criterion_03_stress_energy_consistency():
    from test_wall import scalar_stored_energy
    params = WallParameters()
    rng = np.random.default_rng(42)
    h = 1e-6
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        lam_t = rng.uniform(0.8, 1.8)
        lam_z = rng.uniform(0.8, 1.8)
        rho = rng.uniform(0.5, 3.0)
        s_tt, s_zz = wall.stress_components(lam_t, lam_z, rho, params.c_e, params)
        fd_tt = (scalar_stored_energy(lam_t, lam_z, rho, params.c_e, params, 1 + h, 1.0)
                 - scalar_stored_energy(lam_t, lam_z, rho, params.c_e, params, 1 - h, 1.0)
                 ) / (2 * h)
        fd_zz = (scalar_stored_energy(lam_t, lam_z, rho, params.c_e, params, 1.0, 1 + h)
                 - scalar_stored_energy(lam_t, lam_z, rho, params.c_e, params, 1.0, 1 - h)
                 ) / (2 * h)
        worst = max(worst, abs(fd_tt - s_tt) / abs(s_tt),
                    abs(fd_zz - s_zz) / abs(s_zz))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and elapsed < 1.0
    report(3, "stress vs finite-difference energy", ok,
           f"worst rel err {worst:.2e}, {elapsed:.2f} s")
    assert worst < 1e-6
    assert elapsed < 1.0


def test_criterion_04_baseline_fixed_point():
    params = WallParameters()
    t0 = time.perf_counter()
    zeros = np.zeros((41, 40))
    lam, rho, conv, _ = solver.solve_equilibrium_grid(zeros, zeros, params)
    eps, conv_unload = solver.solve_unload_grid(lam, rho, zeros, params)
    r_dia = params.r_o * lam * eps
    d = maps.dilatation_values(r_dia)
    elapsed = time.perf_counter() - t0
    lam_err = float(np.abs(lam - 1).max())
    rho_err = float(np.abs(rho - 1).max())
    d_err = float(np.abs(d - 1).max())
    ok = (conv.all() and conv_unload.all() and lam_err < 1e-10
          and rho_err < 1e-10 and d_err < 1e-12 and elapsed < 5)
    report(4, "baseline fixed point on all 1640 nodes", ok,
           f"|lam-1| {lam_err:.1e}, |rho-1| {rho_err:.1e}, d-1 {d_err:.1e}, "
           f"{elapsed:.2f} s")
    assert conv.all() and conv_unload.all()
    assert lam_err < 1e-10 and rho_err < 1e-10
    assert d_err < 1e-12
    assert elapsed < 5


def test_criterion_05_calibration_population(dataset_dir):
    with open(dataset_dir / "calibration_report.json", encoding="utf-8") as fh:
        rep = json.load(fh)
    d_max = np.array([m["d_max"] for m in rep["samples"].values()])
    reached = all(m["reached"] for m in rep["samples"].values())
    in_band = bool(np.all((d_max >= 1.45) & (d_max <= 1.55)))
    ok = reached and in_band and len(d_max) == 500 and \
        rep["wall_seconds"] < 600 and rep["workers"] == 8
    report(5, "calibration: 500 samples at d_max ~ 1.5", ok,
           f"mean {d_max.mean():.4f} +- {d_max.std():.4f} "
           f"(paper {PAPER_D_MAX_MEAN} +- {PAPER_D_MAX_STD}), "
           f"range [{d_max.min():.4f}, {d_max.max():.4f}], "
           f"{rep['wall_seconds']:.0f} s on {rep['workers']} workers")
    assert len(d_max) == 500
    assert reached and in_band
    assert rep["wall_seconds"] < 600


def baseline_distensibility(params):
    node = solver.solve_node(0.0, 0.0, params)
    return (node.r_sys - node.r_dia) / node.r_dia


def test_criterion_06_distensibility_baseline_and_decrease(records):
    manifest, recs = records
    params = WallParameters().with_overrides(manifest.wall_overrides)
    base = baseline_distensibility(params)
    band_ok = 0.03 <= base <= 0.08

    violations = {}
    for sid, rec in recs.items():
        d = rec.maps["dilatation"][:, :-1]
        dist = rec.maps["distensibility"][:, :-1]
        apex = np.unravel_index(np.argmax(d), d.shape)
        if not dist[apex] < base:
            violations[sid] = float(dist[apex])
    by_combo = {}
    for sid in violations:
        k = int(sid[-1])
        by_combo[k] = by_combo.get(k, 0) + 1
    decrease_ok = not violations
    report(6, "distensibility: baseline band + strict decrease",
           band_ok and decrease_ok,
           f"baseline {base:.5f} (paper {PAPER_BASELINE_DISTENSIBILITY}), "
           f"violations {len(violations)}/500 by combo {by_combo} "
           "(k=4 expected: reduced-model limitation, see notes)")
    assert band_ok
    # honest red for the pure mechanosensing combo; see module docstring
    assert decrease_ok, (
        f"{len(violations)} samples (combos {sorted(set(by_combo))}) have apex "
        f"distensibility >= baseline {base:.5f}; reduced per-node model cannot "
        "reproduce the decrease for pure mechanosensing insults")


def test_criterion_07_dominance_ordering(records):
    manifest, recs = records
    checked = 0
    failures = []
    for pid in range(100):
        k0 = recs.get(store.sample_id_for(pid, 0))
        k4 = recs.get(store.sample_id_for(pid, 4))
        if k0 is None or k4 is None:
            continue
        d0 = k0.maps["dilatation"][:, :-1]
        d4 = k4.maps["dilatation"][:, :-1]
        if abs(float(d0.max()) - float(d4.max())) > 0.02:
            continue  # not dilatation-matched
        a0 = np.unravel_index(np.argmax(d0), d0.shape)
        a4 = np.unravel_index(np.argmax(d4), d4.shape)
        dist0 = float(k0.maps["distensibility"][:, :-1][a0])
        dist4 = float(k4.maps["distensibility"][:, :-1][a4])
        checked += 1
        if not dist0 < dist4:
            failures.append(pid)
    ok = checked >= 20 and not failures
    report(7, "elastin-dominated insults are stiffer (k=0 vs k=4)", ok,
           f"{checked} matched profiles, {len(failures)} violations")
    assert checked >= 20
    assert not failures


def test_criterion_08_deeponet_gradient_check():
    from test_deeponet import tiny_model
    t0 = time.perf_counter()
    model = tiny_model(seed=6)
    n_params = model.parameter_count()
    rng = np.random.default_rng(3)
    model.branch[-1][0][:] = rng.normal(0, 0.4, model.branch[-1][0].shape)
    inputs = rng.normal(size=(2, 6))
    coords = rng.uniform(0, 1, size=(9, 2))
    targets = rng.normal(size=(2, 2, 9)) * 0.2
    _, grads = model.loss_and_grads(inputs, targets, coords)
    h = 1e-6
    worst = 0.0
    for param, grad in zip(model.parameters(), grads):
        flat, gflat = param.ravel(), grad.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = model.loss(inputs, targets, coords)
            flat[i] = keep - h
            down = model.loss(inputs, targets, coords)
            flat[i] = keep
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1e-8))
    elapsed = time.perf_counter() - t0
    ok = n_params <= 500 and worst < 1e-5 and elapsed < 10
    report(8, "DeepONet analytic gradients vs central differences", ok,
           f"{n_params} parameters, worst rel err {worst:.2e}, {elapsed:.1f} s")
    assert n_params <= 500
    assert worst < 1e-5
    assert elapsed < 10


def _trained_variant(dataset_dir, variant, fmt):
    """Train one variant at the acceptance budget, or reuse a cached run."""
    model_id = default_model_id(variant, fmt)
    meta_path = store.predictions_dir(dataset_dir) / f"{model_id}.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if meta["budget"] == TRAIN_BUDGET and meta["seed"] == TRAIN_SEED:
            return meta
    train_cfg = dict(variant=variant, format=fmt, budget=TRAIN_BUDGET,
                     batch_size=64, learning_rate=1e-3, seed=TRAIN_SEED,
                     dtype="float32", latent_p=deeponet.LATENT_P,
                     branch_hidden=list(deeponet.BRANCH_HIDDEN),
                     trunk_hidden=list(deeponet.TRUNK_HIDDEN),
                     trunk_encoding="fourier", pixelwise_norm=True,
                     model_id=model_id)
    _, _, meta = train_deeponet(dataset_dir, train_cfg)
    return meta


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_criterion_09_input_information_ordering(dataset_dir):
    total_wall = 0.0
    errors = {}
    for fmt in ("gray", "heat"):
        for variant in ("d", "dD"):
            meta = _trained_variant(dataset_dir, variant, fmt)
            total_wall += meta["wall_seconds"]
            rep = evaluate.evaluate_predictions(
                dataset_dir,
                store.predictions_dir(dataset_dir) / f"{meta['model_id']}.bin")
            errors[(variant, fmt)] = {
                k: rep.metrics[k]["rel_l2_mean"] for k in evaluate.INSULTS}
    ratios = {}
    ordering_ok = True
    for fmt in ("gray", "heat"):
        for k in evaluate.INSULTS:
            ratio = errors[("dD", fmt)][k] / errors[("d", fmt)][k]
            ratios[(fmt, k)] = ratio
            ordering_ok &= ratio < 0.8
    time_ok = total_wall < 1800
    detail = ", ".join(f"{fmt}/{k.split('_')[1]} {r:.2f}"
                       for (fmt, k), r in ratios.items())
    report(9, "d&D beats d-only at matched budget (ratio < 0.8)",
           ordering_ok and time_ok,
           f"ratios [{detail}], training wall {total_wall:.0f} s")
    assert time_ok, f"4-variant training took {total_wall:.0f} s (budget 1800)"
    assert ordering_ok, f"error ratios {ratios}"


def test_criterion_10_metric_exactness(tmp_path):
    rng = np.random.default_rng(0)
    truth = {}
    for i in range(3):
        t_ce = rng.uniform(0.05, 0.4, size=(41, 40))
        t_d = rng.uniform(0.05, 0.25, size=(41, 40))
        truth[f"p{i:03d}k2"] = (maps.pad_circular(t_ce), maps.pad_circular(t_d))
    doubled = {sid: (2 * a, 2 * b) for sid, (a, b) in truth.items()}
    mean, stacked, _, _ = evaluate.relative_l2(doubled, truth)
    exact_one = all(mean[k] == 1.0 and stacked[k] == 1.0
                    for k in evaluate.INSULTS)

    masks = {sid: np.ones((41, 40), dtype=bool) for sid in truth}
    mean_f, stacked_f, _, _ = evaluate.filtered_relative_l2(doubled, truth, masks)
    full_mask_equal = all(mean_f[k] == mean[k] and stacked_f[k] == stacked[k]
                          for k in evaluate.INSULTS)

    from test_store import make_record
    rec = make_record(profile_id=1, combo=3, seed=5)
    p = tmp_path / "roundtrip.bin"
    store.write_sample(rec, p)
    back = store.read_sample(p)
    p2 = tmp_path / "again.bin"
    store.write_sample(back, p2)
    roundtrip = p.read_bytes() == p2.read_bytes() and all(
        np.array_equal(rec.maps[k], back.maps[k]) for k in rec.maps)

    ok = exact_one and full_mask_equal and roundtrip
    report(10, "metric exactness + bit-exact I/O", ok,
           f"rel_l2(2x)=1 {exact_one}, full-mask== {full_mask_equal}, "
           f"roundtrip {roundtrip}")
    assert exact_one and full_mask_equal and roundtrip
