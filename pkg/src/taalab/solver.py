"""Per-node mechanobiologically equilibrated growth under systolic load,
elastic unloading to diastole, and insult-amplitude calibration.

Each node of the (n_z, n_theta) grid solves a 2x2 nonlinear system in the
circumferential stretch ``lam`` and the muscle/collagen mass fold ``rho``:

    (i)  thin-wall equilibrium   sigma_tt = P r / h,
         r = r_o lam,  h = h_o M_tot / lam  (lam_z = 1)
    (ii) mechanobiological equilibrium  (1 - delta) sigma_mean = sigma_o.

The zero-insult state (lam = rho = 1) is kept as an exact root by using the
model-consistent transmural load: the baseline parameter set was fit with a
thick-wall 3D model whose hoop stress differs from P_sys r_o / h_o by a few
percent, so the solver loads the membrane with the baseline hoop stress and
scales diastole by the physiological pressure ratio P_dia / P_sys.

Diastole is a superposed elastic deformation at frozen composition: all
constituents deform affinely from their systolic states and the thickness
follows elastic incompressibility, h_dia = h_sys / lam_el.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.ndimage import gaussian_filter

from . import maps, wall
from .grf import InsultField, InsultPair, combo_weights, make_insult_pair
from .params import WallParameters

LAM_BOUNDS = (0.5, 3.0)
RHO_BOUNDS = (0.1, 10.0)
MAX_NEWTON_ITER = 200
MAX_DAMPING_HALVINGS = 8
RESIDUAL_TOL = 1e-12       # iteration target (kPa)
CERTIFY_TOL = 1e-10        # spec tolerance re-checked on converged states
DEFAULT_SMOOTHING = 0.5    # grid cells
CALIBRATION_TARGET = 1.5
CALIBRATION_TOL = 0.01
AMPLITUDE_BRACKET_HI = 1.2


class VesselSolveError(RuntimeError):
    """A node failed to converge; carries per-node diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CalibrationError(RuntimeError):
    """Amplitude bisection could not bracket the dilatation target."""

    def __init__(self, message, curve=None):
        super().__init__(message)
        self.curve = curve or []


class Homeostasis(NamedTuple):
    sigma_o: float
    sigma_tt_base: float
    load_sys: float     # P_sys_model * r_o / h_o == baseline hoop stress
    load_dia: float


@functools.lru_cache(maxsize=32)
def homeostasis(params: WallParameters) -> Homeostasis:
    base = wall.baseline_stress(params)
    sigma_o = wall.set_point(params)
    load_sys = base.sigma_tt
    return Homeostasis(sigma_o, base.sigma_tt, load_sys,
                       load_sys * params.p_dia / params.p_sys)


@dataclass(frozen=True)
class NodeEquilibrium:
    lam_theta_sys: float
    rho: float
    r_sys: float
    r_dia: float
    h_sys: float
    h_dia: float
    stress_sys: wall.StressState
    converged: bool
    iterations: int
    # local insult, kept so the frozen composition can be re-derived
    theta_ce: float = 0.0
    theta_delta: float = 0.0


@dataclass(frozen=True)
class EvolvedVessel:
    """Per-node equilibrium fields of one simulated vessel (arrays (n_z, n_theta))."""

    lam_theta: np.ndarray
    rho: np.ndarray
    r_sys: np.ndarray
    r_dia: np.ndarray
    h_sys: np.ndarray
    h_dia: np.ndarray
    stress_tt: np.ndarray
    stress_zz: np.ndarray
    pair: InsultPair | None
    smoothing_sigma: float

    def __post_init__(self):
        if self.r_sys.shape != self.rho.shape:
            raise ValueError("field shapes disagree")


def equilibrium_residuals(lam, rho, theta_ce, theta_delta, params: WallParameters):
    """Residuals of (i) and (ii) in kPa, vectorized over nodes."""
    h = homeostasis(params)
    ce_loc = params.c_e * (1.0 - np.asarray(theta_ce, dtype=float))
    s_tt, s_zz = wall.stress_components(lam, 1.0, rho, ce_loc, params)
    _, _, _, m_tot = wall.mass_fractions(rho, params)
    r1 = s_tt - h.load_sys * np.asarray(lam, dtype=float) ** 2 / m_tot
    r2 = (1.0 - np.asarray(theta_delta, dtype=float)) * (s_tt + s_zz) / 3.0 - h.sigma_o
    return r1, r2


def _jacobian(lam, rho, theta_ce, theta_delta, params: WallParameters):
    """Analytic Jacobian of the residuals; fibers sit at deposition stretch,
    so only elastin and the mass fractions carry lam/rho dependence."""
    h = homeostasis(params)
    lam = np.asarray(lam, dtype=float)
    rho = np.asarray(rho, dtype=float)
    ce_loc = params.c_e * (1.0 - np.asarray(theta_ce, dtype=float))
    one_minus_delta = 1.0 - np.asarray(theta_delta, dtype=float)

    gt2 = params.G_theta_e ** 2
    gr2 = params.G_r_e ** 2
    dse_tt = ce_loc * (2.0 * gt2 * lam + 2.0 * gr2 / lam ** 3)
    dse_zz = ce_loc * (2.0 * gr2 / lam ** 3)

    sm = wall.fiber_stress(params.G_m ** 2, params.c1_m, params.c2_m)
    sc = wall.fiber_stress(params.G_c ** 2, params.c1_c, params.c2_c)
    s2 = np.sin(params.alpha0_rad) ** 2
    w_t = params.beta_theta + params.beta_diag * s2
    c_theta = params.phi_m * sm + params.phi_c * sc * w_t
    c_total = params.phi_m * sm + params.phi_c * sc

    phi_mc = params.phi_m + params.phi_c
    m_tot = params.phi_e + phi_mc * rho
    s_tt, s_zz = wall.stress_components(lam, 1.0, rho, ce_loc, params)
    n_tt = s_tt * m_tot
    n_total = (s_tt + s_zz) * m_tot

    j11 = (params.phi_e * dse_tt - 2.0 * h.load_sys * lam) / m_tot
    j12 = (c_theta - (n_tt - h.load_sys * lam ** 2) * phi_mc / m_tot) / m_tot
    j21 = one_minus_delta * params.phi_e * (dse_tt + dse_zz) / (3.0 * m_tot)
    j22 = one_minus_delta * (c_total - n_total * phi_mc / m_tot) / (3.0 * m_tot)
    return j11, j12, j21, j22


def solve_equilibrium_grid(theta_ce, theta_delta, params: WallParameters,
                           tol: float = RESIDUAL_TOL,
                           max_iter: int = MAX_NEWTON_ITER):
    """Damped Newton on (lam, rho) for every node at once.

    Returns (lam, rho, converged mask, iterations).  Steps are clipped to the
    physical boxes and halved (up to 8 times) whenever the residual norm
    would increase.
    """
    t_ce = np.asarray(theta_ce, dtype=float).ravel()
    t_d = np.asarray(theta_delta, dtype=float).ravel()
    lam = 1.0 + 0.5 * t_d + 0.3 * t_ce
    rho = np.ones_like(lam)

    iterations = np.zeros(lam.shape, dtype=int)
    active = np.ones(lam.shape, dtype=bool)

    def norm(r1, r2):
        return np.maximum(np.abs(r1), np.abs(r2))

    r1, r2 = equilibrium_residuals(lam, rho, t_ce, t_d, params)
    res = norm(r1, r2)
    active &= res > tol

    for _ in range(max_iter):
        if not active.any():
            break
        j11, j12, j21, j22 = _jacobian(lam, rho, t_ce, t_d, params)
        det = j11 * j22 - j12 * j21
        det = np.where(np.abs(det) < 1e-300, np.nan, det)
        dlam = np.where(active, -(j22 * r1 - j12 * r2) / det, 0.0)
        drho = np.where(active, -(-j21 * r1 + j11 * r2) / det, 0.0)

        # accept the first step length (1, 1/2, ..., 1/2^8) that strictly
        # reduces the node's residual norm; nodes that never improve stall
        remaining = active.copy()
        step = np.ones_like(lam)
        for _ in range(MAX_DAMPING_HALVINGS + 1):
            if not remaining.any():
                break
            lam_try = np.clip(lam + step * dlam, *LAM_BOUNDS)
            rho_try = np.clip(rho + step * drho, *RHO_BOUNDS)
            r1_try, r2_try = equilibrium_residuals(lam_try, rho_try, t_ce, t_d, params)
            res_try = norm(r1_try, r2_try)
            accept = remaining & np.isfinite(res_try) & (res_try < res)
            lam = np.where(accept, lam_try, lam)
            rho = np.where(accept, rho_try, rho)
            remaining &= ~accept
            step = np.where(remaining, 0.5 * step, step)

        stalled = remaining
        r1, r2 = equilibrium_residuals(lam, rho, t_ce, t_d, params)
        res = norm(r1, r2)
        iterations += active.astype(int)
        active = active & (res > tol) & ~stalled

    converged = res <= tol
    shape = np.asarray(theta_ce, dtype=float).shape
    return (lam.reshape(shape), rho.reshape(shape),
            converged.reshape(shape), iterations.reshape(shape))


def unload_residual(eps, lam, rho, theta_ce, params: WallParameters):
    """Diastolic force balance at frozen composition (kPa)."""
    h = homeostasis(params)
    ce_loc = params.c_e * (1.0 - np.asarray(theta_ce, dtype=float))
    s_tt, _ = wall.stress_components(lam, 1.0, rho, ce_loc, params, eps_theta=eps)
    _, _, _, m_tot = wall.mass_fractions(rho, params)
    return s_tt - h.load_dia * np.asarray(lam, dtype=float) ** 2 * \
        np.asarray(eps, dtype=float) ** 2 / m_tot


def solve_unload_grid(lam, rho, theta_ce, params: WallParameters,
                      lo: float = 0.3, hi: float = 1.05, bisect_iter: int = 50):
    """Elastic circumferential stretch at diastole for every node.

    Safeguarded bisection followed by Newton polish; the root is stable
    (d sigma_tt / d eps > 0 there), which the bracket [lo, hi] guarantees.
    """
    h = homeostasis(params)
    lam = np.asarray(lam, dtype=float)
    rho = np.asarray(rho, dtype=float)
    t_ce = np.asarray(theta_ce, dtype=float)

    lo_v = np.full(lam.shape, lo)
    hi_v = np.full(lam.shape, hi)
    f_lo = unload_residual(lo_v, lam, rho, t_ce, params)
    f_hi = unload_residual(hi_v, lam, rho, t_ce, params)
    bracketed = (f_lo < 0) & (f_hi > 0)

    for _ in range(bisect_iter):
        mid = 0.5 * (lo_v + hi_v)
        f_mid = unload_residual(mid, lam, rho, t_ce, params)
        below = f_mid < 0
        lo_v = np.where(below, mid, lo_v)
        hi_v = np.where(below, hi_v, mid)

    eps = 0.5 * (lo_v + hi_v)
    ce_loc = params.c_e * (1.0 - t_ce)
    for _ in range(4):
        f = unload_residual(eps, lam, rho, t_ce, params)
        df = wall.stress_tt_deps_theta(lam, 1.0, rho, ce_loc, params, eps) \
            - 2.0 * h.load_dia * lam ** 2 * eps / (params.phi_e
                                                   + (params.phi_m + params.phi_c) * rho)
        eps = np.clip(eps - f / df, lo, hi)

    residual = unload_residual(eps, lam, rho, t_ce, params)
    converged = bracketed & (np.abs(residual) <= CERTIFY_TOL)
    return eps, converged


def solve_node(theta_ce: float, theta_delta: float,
               params: WallParameters) -> NodeEquilibrium:
    """Equilibrated state of a single node, including the diastolic unload."""
    if not 0.0 <= theta_ce <= 0.48 or not 0.0 <= theta_delta <= 0.28:
        raise ValueError("insult contributions outside their admissible ranges")
    t_ce = np.array([theta_ce])
    t_d = np.array([theta_delta])
    lam, rho, conv, iters = solve_equilibrium_grid(t_ce, t_d, params)
    ce_loc = params.c_e * (1.0 - t_ce)
    s_tt, s_zz = wall.stress_components(lam, 1.0, rho, ce_loc, params)
    m_tot = params.phi_e + (params.phi_m + params.phi_c) * rho
    r_sys = params.r_o * lam
    h_sys = params.h_o * m_tot / lam

    eps, conv_unload = solve_unload_grid(lam, rho, t_ce, params)
    return NodeEquilibrium(
        lam_theta_sys=float(lam[0]), rho=float(rho[0]),
        r_sys=float(r_sys[0]), r_dia=float(r_sys[0] * eps[0]),
        h_sys=float(h_sys[0]), h_dia=float(h_sys[0] / eps[0]),
        stress_sys=wall.StressState(float(s_tt[0]), float(s_zz[0])),
        converged=bool(conv[0] and conv_unload[0]),
        iterations=int(iters[0]),
        theta_ce=theta_ce, theta_delta=theta_delta,
    )


def elastic_unload(node: NodeEquilibrium, params: WallParameters,
                   p_dia: float | None = None) -> float:
    """Diastolic inner radius of a converged node (frozen composition).

    ``p_dia`` overrides the diastolic pressure; with ``p_dia == p_sys`` the
    unload is the identity and ``r_dia == r_sys``.
    """
    if not node.converged:
        raise VesselSolveError("elastic unload requires a converged node")
    lam = np.array([node.lam_theta_sys])
    rho = np.array([node.rho])
    t_ce = np.array([node.theta_ce])
    if p_dia is None:
        eps, ok = solve_unload_grid(lam, rho, t_ce, params)
    else:
        local = params.with_overrides({"p_dia": p_dia})
        eps, ok = solve_unload_grid(lam, rho, t_ce, local)
    if not ok[0]:
        raise VesselSolveError("diastolic unload failed to converge")
    return float(node.r_sys * eps[0])


def smooth_field(field: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian smoothing, periodic in theta (axis 1), reflecting in z."""
    if sigma <= 0:
        return np.asarray(field, dtype=float).copy()
    return gaussian_filter(np.asarray(field, dtype=float), sigma=sigma,
                           mode=["reflect", "wrap"])


def solve_vessel(pair: InsultPair, params: WallParameters,
                 smoothing_sigma: float = DEFAULT_SMOOTHING) -> EvolvedVessel:
    """Solve every node of the grid and unload to diastole.

    Raises :class:`VesselSolveError` (with the failing node indices and last
    residuals) if any node does not converge.
    """
    t_ce = np.asarray(pair.theta_ce, dtype=float)
    t_d = np.asarray(pair.theta_delta, dtype=float)
    lam, rho, conv, iters = solve_equilibrium_grid(t_ce, t_d, params)
    eps, conv_unload = solve_unload_grid(lam, rho, t_ce, params)
    ok = conv & conv_unload
    if not ok.all():
        bad = np.argwhere(~ok)
        r1, r2 = equilibrium_residuals(lam, rho, t_ce, t_d, params)
        raise VesselSolveError(
            f"{bad.shape[0]} node(s) failed to converge (first at z,theta="
            f"{tuple(bad[0])})",
            diagnostics={
                "nodes": bad,
                "residual_mech": r1[tuple(bad.T)],
                "residual_bio": r2[tuple(bad.T)],
                "lam": lam[tuple(bad.T)],
                "rho": rho[tuple(bad.T)],
                "iterations": int(iters.max()),
            })

    ce_loc = params.c_e * (1.0 - t_ce)
    s_tt, s_zz = wall.stress_components(lam, 1.0, rho, ce_loc, params)
    m_tot = params.phi_e + (params.phi_m + params.phi_c) * rho
    r_sys = params.r_o * lam
    h_sys = params.h_o * m_tot / lam
    r_dia = r_sys * eps
    h_dia = h_sys / eps

    return EvolvedVessel(
        lam_theta=lam, rho=rho,
        r_sys=smooth_field(r_sys, smoothing_sigma),
        r_dia=smooth_field(r_dia, smoothing_sigma),
        h_sys=h_sys, h_dia=h_dia,
        stress_tt=s_tt, stress_zz=s_zz,
        pair=pair, smoothing_sigma=smoothing_sigma,
    )


def stress_maps(vessel: EvolvedVessel):
    """Padded systolic stress maps and the intramural shear analog."""
    tt = maps.FieldMap(maps.pad_circular(vessel.stress_tt), "stress_tt")
    zz = maps.FieldMap(maps.pad_circular(vessel.stress_zz), "stress_zz")
    shear = maps.FieldMap(maps.pad_circular(
        (vessel.stress_tt - vessel.stress_zz) / 2.0), "shear")
    return tt, zz, shear


@dataclass(frozen=True)
class CalibrationResult:
    amplitude_scale: float
    d_max: float
    reached: bool
    evaluations: int
    vessel: EvolvedVessel
    message: str = ""


def calibrate_amplitude(field: InsultField, combo_index: int,
                        params: WallParameters,
                        target: float = CALIBRATION_TARGET,
                        tol: float = CALIBRATION_TOL,
                        smoothing_sigma: float = DEFAULT_SMOOTHING,
                        bracket_hi: float = AMPLITUDE_BRACKET_HI,
                        max_evals: int = 60) -> CalibrationResult:
    """Bisection on the amplitude scale until max dilatation hits the target.

    The upper bracket is reduced so the scaled contributions cannot exceed
    their admissible ranges at the profile apex.  A vessel solve that fails
    (equilibrium lost beyond the growth blow-up) counts as overshooting the
    target.  If even the clamped maximum amplitude cannot reach the target,
    the clamped result is returned flagged.
    """
    if target <= 1.0:
        raise ValueError("dilatation target must exceed 1")
    s_ce, s_d = combo_weights(combo_index)
    apex = float(np.max(field.theta_star))
    s_hi = bracket_hi
    if apex > 0:
        if s_ce > 0:
            s_hi = min(s_hi, 0.48 / (s_ce * apex))
        if s_d > 0:
            s_hi = min(s_hi, 0.28 / (s_d * apex))

    evaluations = 0
    curve = []

    def evaluate(scale):
        nonlocal evaluations
        evaluations += 1
        pair = make_insult_pair(field, combo_index, scale)
        try:
            vessel = solve_vessel(pair, params, smoothing_sigma)
        except VesselSolveError:
            curve.append((scale, np.inf))
            return None, np.inf
        d_max = float(maps.dilatation_values(vessel.r_dia).max())
        curve.append((scale, d_max))
        return vessel, d_max

    vessel_hi, d_hi = evaluate(s_hi)
    if np.isfinite(d_hi) and d_hi < target - tol:
        return CalibrationResult(s_hi, d_hi, False, evaluations, vessel_hi,
                                 "target unreachable within insult range clamps")
    if np.isfinite(d_hi) and abs(d_hi - target) <= tol:
        return CalibrationResult(s_hi, d_hi, True, evaluations, vessel_hi)

    lo, hi = 0.0, s_hi
    best = None
    while evaluations < max_evals:
        mid = 0.5 * (lo + hi)
        vessel, d = evaluate(mid)
        if np.isfinite(d):
            best = (mid, d, vessel)
            if abs(d - target) <= tol:
                return CalibrationResult(mid, d, True, evaluations, vessel)
            if d > target:
                hi = mid
            else:
                lo = mid
        else:
            hi = mid
        if hi - lo < 1e-10:
            break

    raise CalibrationError(
        f"amplitude bisection failed for combo {combo_index} "
        f"(last d_max={best[1] if best else 'n/a'})", curve=curve)
