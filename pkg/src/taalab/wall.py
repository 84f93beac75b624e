"""Constrained-mixture constitutive model of the aortic wall.

The wall is a thin membrane (plane stress) made of elastin-dominated matrix,
smooth muscle, and collagen-dominated matrix that share the deformation but
carry individual deposition stretches.  Stored energies per unit constituent
mass are

    W_e(I1)  = (c_e / 2) * (I1 - 3)                       (neo-Hookean)
    W_f(I4)  = c1 / (4 c2) * (exp(c2 (I4 - 1)^2) - 1)     (muscle, collagen)

so the uniaxial fiber Cauchy stress is ``2 I4 dW/dI4``:

    sigma_f(I4) = c1 * I4 * (I4 - 1) * exp(c2 (I4 - 1)^2).

Kinematics carry two deformations: the grown (turned-over) state
``(lam_theta, lam_z)`` relative to the original in vivo configuration, under
which remodeled muscle and collagen sit at their deposition stretches while
elastin deforms affinely, and an optional superposed elastic deformation
``(eps_theta, eps_z)`` under which every constituent deforms affinely at
frozen composition.  ``eps = 1`` recovers the mechanobiologically
equilibrated stress used by the growth solver; ``eps != 1`` is the elastic
response used for diastolic unloading and for the stress-energy
finite-difference check.

Mass turnover enters through the common referential mass fold-change ``rho``
of muscle and collagen; current mass fractions follow the rule of mixtures,
``M_tot = phi_e + (phi_m + phi_c) * rho``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .params import WallParameters

ENERGY_EXPONENT_LIMIT = 700.0


class EnergyOverflowError(FloatingPointError):
    """Raised when the exponential fiber energy would overflow."""


@dataclass(frozen=True)
class MixtureState:
    """Evolved per-node state: stretches relative to the original in vivo
    configuration, the muscle/collagen mass fold-change, and local insults."""

    lam_theta: float
    lam_z: float
    mass_fold: float
    c_e_local: float
    delta_local: float = 0.0

    def __post_init__(self):
        if self.lam_theta <= 0 or self.lam_z <= 0 or self.mass_fold <= 0:
            raise ValueError("stretches and mass fold-change must be positive")
        if not 0.0 <= self.delta_local < 1.0:
            raise ValueError("delta_local must lie in [0, 1)")


@dataclass(frozen=True)
class StressState:
    """Wall-averaged Cauchy stress components (kPa)."""

    sigma_tt: float
    sigma_zz: float
    sigma_mean: float = field(init=False)
    tau_intramural: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "sigma_mean", (self.sigma_tt + self.sigma_zz) / 3.0)
        object.__setattr__(self, "tau_intramural", (self.sigma_tt - self.sigma_zz) / 2.0)


def _check_exponent(c2, x):
    # x = (I4 - 1)^2; guard against silent inf from the exponential
    arg = c2 * x
    if np.any(arg > ENERGY_EXPONENT_LIMIT):
        bad = float(np.max(arg))
        raise EnergyOverflowError(
            f"fiber energy exponent {bad:.3g} exceeds {ENERGY_EXPONENT_LIMIT:g}; "
            "state is far outside the physical range"
        )
    return arg


def fiber_stress(I4, c1, c2):
    """Uniaxial fiber Cauchy stress ``c1 I4 (I4-1) exp(c2 (I4-1)^2)``."""
    d = np.asarray(I4, dtype=float) - 1.0
    arg = _check_exponent(c2, d * d)
    return c1 * np.asarray(I4, dtype=float) * d * np.exp(arg)


def fiber_energy(I4, c1, c2):
    d = np.asarray(I4, dtype=float) - 1.0
    arg = _check_exponent(c2, d * d)
    return c1 / (4.0 * c2) * (np.exp(arg) - 1.0)


def constituent_energy(constituent: str, invariant, params: WallParameters,
                       c_e_local=None):
    """Stored energy density (kPa) of one constituent.

    ``invariant`` is I1 for elastin (``'e'``) and I4 for smooth muscle
    (``'m'``) or collagen (``'c'``).  The reference state (I1 = 3, I4 = 1)
    stores zero energy.
    """
    if constituent == "e":
        ce = params.c_e if c_e_local is None else c_e_local
        return 0.5 * ce * (np.asarray(invariant, dtype=float) - 3.0)
    if constituent == "m":
        return fiber_energy(invariant, params.c1_m, params.c2_m)
    if constituent == "c":
        return fiber_energy(invariant, params.c1_c, params.c2_c)
    raise ValueError(f"unknown constituent {constituent!r}")


def _kinematics(params, lam_theta, lam_z, eps_theta, eps_z):
    """Constituent invariants for grown state (lam) + elastic superposition (eps)."""
    a_t = np.asarray(lam_theta, dtype=float) * eps_theta
    a_z = np.asarray(lam_z, dtype=float) * eps_z
    le_t = params.G_theta_e * a_t
    le_z = params.G_z_e * a_z
    le_r = params.G_r_e / (a_t * a_z)
    s2 = math.sin(params.alpha0_rad) ** 2
    c2 = math.cos(params.alpha0_rad) ** 2
    et2 = np.asarray(eps_theta, dtype=float) ** 2
    ez2 = np.asarray(eps_z, dtype=float) ** 2
    lf2 = s2 * et2 + c2 * ez2
    return {
        "le_t": le_t, "le_z": le_z, "le_r": le_r,
        "I4_m": params.G_m ** 2 * et2,
        "I4_ct": params.G_c ** 2 * et2,
        "I4_cz": params.G_c ** 2 * ez2,
        "I4_cd": params.G_c ** 2 * lf2,
        "proj_d_t": s2 * et2 / lf2,
        "proj_d_z": c2 * ez2 / lf2,
    }


def mass_fractions(rho, params: WallParameters):
    """Current mass fractions (w_e, w_m, w_c) and total fold-change M_tot."""
    rho = np.asarray(rho, dtype=float)
    m_tot = params.phi_e + (params.phi_m + params.phi_c) * rho
    return params.phi_e / m_tot, params.phi_m * rho / m_tot, params.phi_c * rho / m_tot, m_tot


def stress_components(lam_theta, lam_z, rho, c_e_local, params: WallParameters,
                      eps_theta=1.0, eps_z=1.0):
    """Circumferential and axial Cauchy stress (kPa) of the mixture.

    Vectorized over any broadcastable combination of the state arguments.
    Elastin contributes plane-stress neo-Hookean terms
    ``c_e (le_i^2 - le_r^2)``; each fiber family contributes its uniaxial
    stress projected onto theta/z through its current orientation;
    constituents are weighted by current mass fractions.
    """
    k = _kinematics(params, lam_theta, lam_z, eps_theta, eps_z)
    w_e, w_m, w_c, _ = mass_fractions(rho, params)
    ce = np.asarray(c_e_local, dtype=float)

    se_tt = ce * (k["le_t"] ** 2 - k["le_r"] ** 2)
    se_zz = ce * (k["le_z"] ** 2 - k["le_r"] ** 2)
    sm = fiber_stress(k["I4_m"], params.c1_m, params.c2_m)
    sc_t = fiber_stress(k["I4_ct"], params.c1_c, params.c2_c)
    sc_z = fiber_stress(k["I4_cz"], params.c1_c, params.c2_c)
    sc_d = fiber_stress(k["I4_cd"], params.c1_c, params.c2_c)

    s_tt = w_e * se_tt + w_m * sm + w_c * (
        params.beta_theta * sc_t + params.beta_diag * sc_d * k["proj_d_t"])
    s_zz = w_e * se_zz + w_c * (
        params.beta_z * sc_z + params.beta_diag * sc_d * k["proj_d_z"])
    return s_tt, s_zz


def stored_energy(lam_theta, lam_z, rho, c_e_local, params: WallParameters,
                  eps_theta=1.0, eps_z=1.0):
    """Mass-fraction-weighted stored energy (kPa) of the elastically
    perturbed state; differentiating in ``eps`` at frozen composition
    reproduces :func:`stress_components`."""
    k = _kinematics(params, lam_theta, lam_z, eps_theta, eps_z)
    w_e, w_m, w_c, _ = mass_fractions(rho, params)
    I1 = k["le_t"] ** 2 + k["le_z"] ** 2 + k["le_r"] ** 2
    ce = np.asarray(c_e_local, dtype=float)
    W_e = 0.5 * ce * (I1 - 3.0)
    W_m = fiber_energy(k["I4_m"], params.c1_m, params.c2_m)
    W_c = (params.beta_theta * fiber_energy(k["I4_ct"], params.c1_c, params.c2_c)
           + params.beta_z * fiber_energy(k["I4_cz"], params.c1_c, params.c2_c)
           + params.beta_diag * fiber_energy(k["I4_cd"], params.c1_c, params.c2_c))
    return w_e * W_e + w_m * W_m + w_c * W_c


def fiber_stress_dI4(I4, c1, c2):
    """Derivative of :func:`fiber_stress` with respect to I4."""
    I4 = np.asarray(I4, dtype=float)
    d = I4 - 1.0
    arg = _check_exponent(c2, d * d)
    return c1 * np.exp(arg) * (2.0 * I4 - 1.0 + 2.0 * c2 * I4 * d * d)


def stress_tt_deps_theta(lam_theta, lam_z, rho, c_e_local, params: WallParameters,
                         eps_theta, eps_z=1.0):
    """Analytic ``d sigma_tt / d eps_theta`` at fixed composition."""
    k = _kinematics(params, lam_theta, lam_z, eps_theta, eps_z)
    w_e, w_m, w_c, _ = mass_fractions(rho, params)
    ce = np.asarray(c_e_local, dtype=float)
    et = np.asarray(eps_theta, dtype=float)

    a_t = np.asarray(lam_theta, dtype=float)
    a_z = np.asarray(lam_z, dtype=float) * eps_z
    d_el = ce * (2.0 * params.G_theta_e ** 2 * a_t ** 2 * et
                 + 2.0 * params.G_r_e ** 2 / (a_t ** 2 * a_z ** 2) / et ** 3)
    d_m = fiber_stress_dI4(k["I4_m"], params.c1_m, params.c2_m) * 2.0 * params.G_m ** 2 * et
    d_ct = fiber_stress_dI4(k["I4_ct"], params.c1_c, params.c2_c) * 2.0 * params.G_c ** 2 * et

    s2 = math.sin(params.alpha0_rad) ** 2
    lf2 = k["I4_cd"] / params.G_c ** 2
    u = s2 * et ** 2
    sc_d = fiber_stress(k["I4_cd"], params.c1_c, params.c2_c)
    dsc_d = fiber_stress_dI4(k["I4_cd"], params.c1_c, params.c2_c)
    d_cd = 2.0 * s2 * et * (dsc_d * params.G_c ** 2 * u / lf2
                            + sc_d * (lf2 - u) / lf2 ** 2)

    return (w_e * d_el + w_m * d_m
            + w_c * (params.beta_theta * d_ct + params.beta_diag * d_cd))


def mixture_stress(state: MixtureState, params: WallParameters) -> StressState:
    """Equilibrated mixture stress at a grown state (fibers at deposition)."""
    s_tt, s_zz = stress_components(state.lam_theta, state.lam_z,
                                   state.mass_fold, state.c_e_local, params)
    return StressState(float(s_tt), float(s_zz))


def baseline_stress(params: WallParameters) -> StressState:
    """Stress of the original homeostatic state (lam = 1, rho = 1, no insult)."""
    return mixture_stress(MixtureState(1.0, 1.0, 1.0, params.c_e, 0.0), params)


@functools.lru_cache(maxsize=32)
def set_point(params: WallParameters) -> float:
    """Homeostatic stress set-point: mean stress of the baseline state.

    By construction the baseline is a mechanobiological equilibrium
    (``stimulus == 0`` there).
    """
    return baseline_stress(params).sigma_mean


def stimulus(sigma_mean, sigma_o, delta_local):
    """Turnover stimulus ``(1 - delta) sigma / sigma_o - 1``."""
    if sigma_o <= 0:
        raise ValueError("sigma_o must be positive")
    return (1.0 - delta_local) * np.asarray(sigma_mean, dtype=float) / sigma_o - 1.0
