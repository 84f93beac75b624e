"""Boundary-conditioned Gaussian random insult fields on the vessel surface.

A latent Gaussian field on the (z, theta) grid controls where the wall is
insulted.  Its constant mean and variance are chosen so that a target
surface fraction ``phi`` of the field exceeds 0.5 with boundary softness
``eps``:

    q   = erfinv(1 - 2 phi)
    mu  = 1/2 - q exp(-q^2) / (eps sqrt(pi))
    var = exp(-2 q^2) / (2 pi eps^2)

The covariance is a squared-exponential in the geodesic surface distances,
periodic in theta:

    k = var * exp(-[ (D_theta/L_theta)^2 + (D_z/L_z)^2 ] / 2)
    D_theta = 2 r_o sin(|theta - theta'| / 2),   D_z = |z - z'|.

The field is conditioned to a fixed value on both end rows of the grid
(Gaussian conditioning on the boundary block), sampled, histogram-matched
back to N(mu, var) via a CDF/inverse-CDF rank transform over the interior
nodes, and finally censored to [0, 1].
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
from scipy.special import erfinv
from scipy.stats import rankdata

TWO_PI = 2.0 * math.pi
_M64 = (1 << 64) - 1

# fraction of the jitter added to the boundary block diagonal, relative to var
JITTER_REL = 1e-10

# insult-severity scale factors (s_ce, s_delta) for the five contributor combos:
# a linear trade-off from pure elastic-fiber damage (k=0) to pure
# mechanosensing dysfunction (k=4), spanning the admissible ranges.
THETA_CE_MAX = 0.48
THETA_DELTA_MAX = 0.28
N_COMBOS = 5


class GrfConditioningError(np.linalg.LinAlgError):
    """Boundary covariance block is singular beyond the regularization floor."""


@dataclass(frozen=True)
class GrfConfig:
    """Parameters of the insult random field.

    ``surface_fraction`` must lie strictly inside (0, 1) because the moment
    formulas involve erfinv; the grid must be at least 4x4.
    """

    surface_fraction: float = 0.23
    boundary_softness: float = 0.2
    length_circ: float = 4.5
    length_axial: float = 4.5
    reference_radius: float = 0.808
    vessel_length: float = 10.0
    n_z: int = 41
    n_theta: int = 40
    boundary_value: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.surface_fraction < 1.0:
            raise ValueError("surface_fraction must lie strictly in (0, 1)")
        if self.boundary_softness <= 0:
            raise ValueError("boundary_softness must be positive")
        if self.length_circ <= 0 or self.length_axial <= 0:
            raise ValueError("length scales must be positive")
        if self.n_theta < 4 or self.n_z < 4:
            raise ValueError("grid must be at least 4 x 4")
        if not 0.0 <= self.boundary_value <= 1.0:
            raise ValueError("boundary_value must lie in [0, 1]")


@dataclass(frozen=True)
class InsultField:
    """Normalized insult severity on the (n_z, n_theta) grid, values in [0, 1]."""

    theta_star: np.ndarray
    profile_id: int = 0


@dataclass(frozen=True)
class InsultPair:
    """Split of a profile into elastic-fiber and mechanosensing contributions."""

    theta_ce: np.ndarray
    theta_delta: np.ndarray
    combo_index: int
    amplitude_scale: float


def grf_moments(surface_fraction: float, boundary_softness: float):
    """Mean and variance of the latent field for a target insult fraction."""
    if not 0.0 < surface_fraction < 1.0:
        raise ValueError("surface_fraction must lie strictly in (0, 1)")
    if boundary_softness <= 0:
        raise ValueError("boundary_softness must be positive")
    q = float(erfinv(1.0 - 2.0 * surface_fraction))
    mu = 0.5 - q * math.exp(-q * q) / (boundary_softness * math.sqrt(math.pi))
    var = math.exp(-2.0 * q * q) / (2.0 * math.pi * boundary_softness ** 2)
    return mu, var


def covariance(pt_a, pt_b, cfg: GrfConfig, var: float) -> float:
    """Covariance between two points given as (z, theta) with theta in radians."""
    z_a, t_a = pt_a
    z_b, t_b = pt_b
    dtheta = abs(math.remainder(t_a - t_b, TWO_PI))
    d_circ = 2.0 * cfg.reference_radius * math.sin(0.5 * dtheta)
    d_ax = abs(z_a - z_b)
    return var * math.exp(-0.5 * ((d_circ / cfg.length_circ) ** 2
                                  + (d_ax / cfg.length_axial) ** 2))


def grid_coordinates(cfg: GrfConfig):
    """Axial positions (mm) and circumferential angles (rad) of the grid."""
    z = np.linspace(0.0, cfg.vessel_length, cfg.n_z)
    theta = TWO_PI * np.arange(cfg.n_theta) / cfg.n_theta
    return z, theta


def covariance_matrix(cfg: GrfConfig, var: float) -> np.ndarray:
    """Dense covariance over the flattened grid (z-major node ordering).

    Circumferential distances are computed from index differences wrapped
    around the seam, so the matrix is exactly circulant in theta.
    """
    z, _ = grid_coordinates(cfg)
    dz = np.abs(z[:, None] - z[None, :])
    k_ax = np.exp(-0.5 * (dz / cfg.length_axial) ** 2)

    j = np.arange(cfg.n_theta)
    dj = np.abs(j[:, None] - j[None, :])
    dj = np.minimum(dj, cfg.n_theta - dj)
    d_circ = 2.0 * cfg.reference_radius * np.sin(math.pi * dj / cfg.n_theta)
    k_circ = np.exp(-0.5 * (d_circ / cfg.length_circ) ** 2)

    return var * np.kron(k_ax, k_circ)


def boundary_indices(cfg: GrfConfig):
    """Flattened indices of the two end rows, then of the interior."""
    n = cfg.n_z * cfg.n_theta
    first = np.arange(cfg.n_theta)
    last = np.arange((cfg.n_z - 1) * cfg.n_theta, n)
    b_idx = np.concatenate([first, last])
    mask = np.ones(n, dtype=bool)
    mask[b_idx] = False
    return b_idx, np.flatnonzero(mask)


def condition_on_boundary(mu_vec, sigma, boundary_nodes, boundary_value,
                          jitter_rel: float = JITTER_REL):
    """Condition a Gaussian on a fixed value at the boundary node set.

    Returns the full-size conditioned mean and covariance: boundary entries
    of the mean equal ``boundary_value``; all covariance blocks touching the
    boundary are zero; the interior block is symmetrized.
    """
    mu_vec = np.asarray(mu_vec, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    n = mu_vec.size
    b_idx = np.asarray(boundary_nodes, dtype=int)
    if b_idx.size == 0:
        raise ValueError("boundary node set must be non-empty")
    mask = np.ones(n, dtype=bool)
    mask[b_idx] = False
    a_idx = np.flatnonzero(mask)

    mu_c = np.empty(n)
    mu_c[b_idx] = boundary_value
    sigma_c = np.zeros((n, n))
    if a_idx.size == 0:
        return mu_c, sigma_c

    s_bb = sigma[np.ix_(b_idx, b_idx)].copy()
    jitter = jitter_rel * float(np.max(np.diag(s_bb)))
    s_bb[np.diag_indices_from(s_bb)] += jitter
    try:
        factor = scipy.linalg.cho_factor(s_bb, lower=True)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
        raise GrfConditioningError(
            "boundary covariance block is singular despite jitter") from exc

    s_ab = sigma[np.ix_(a_idx, b_idx)]
    gain = scipy.linalg.cho_solve(factor, s_ab.T)          # Sigma_bb^-1 Sigma_ba
    mu_c[a_idx] = mu_vec[a_idx] + s_ab @ scipy.linalg.cho_solve(
        factor, boundary_value - mu_vec[b_idx])
    s_aa = sigma[np.ix_(a_idx, a_idx)] - s_ab @ gain
    s_aa = 0.5 * (s_aa + s_aa.T)
    sigma_c[np.ix_(a_idx, a_idx)] = s_aa
    return mu_c, sigma_c


def censor(values):
    """Clamp insult values into [0, 1]; idempotent."""
    return np.clip(values, 0.0, 1.0)


def histogram_match(values, mu: float, var: float):
    """Map values through their empirical CDF onto N(mu, var).

    Mid-rank tie handling; the probability argument is clamped to
    [1/(2N), 1 - 1/(2N)] so the normal quantile stays finite.
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    p = (rankdata(values, method="average") - 0.5) / n
    p = np.clip(p, 0.5 / n, 1.0 - 0.5 / n)
    return mu + math.sqrt(2.0 * var) * erfinv(2.0 * p - 1.0)


class GrfSampler:
    """Reusable sampler: the conditioned covariance factorization is computed
    once per configuration and shared across profile draws."""

    def __init__(self, cfg: GrfConfig):
        self.cfg = cfg
        self.mu, self.var = grf_moments(cfg.surface_fraction, cfg.boundary_softness)
        sigma = covariance_matrix(cfg, self.var)
        self.b_idx, self.a_idx = boundary_indices(cfg)
        mu_vec = np.full(cfg.n_z * cfg.n_theta, self.mu)
        mu_c, sigma_c = condition_on_boundary(mu_vec, sigma, self.b_idx,
                                              cfg.boundary_value)
        self.mu_interior = mu_c[self.a_idx]
        s_aa = sigma_c[np.ix_(self.a_idx, self.a_idx)]
        w, v = np.linalg.eigh(s_aa)
        w = np.maximum(w, 0.0)  # clamp tiny negative eigenvalues from roundoff
        self._transform = v * np.sqrt(w)[None, :]

    def sample(self, seed: int, profile_id: int = 0) -> InsultField:
        """Draw one censored, histogram-matched insult field."""
        rng = np.random.default_rng(np.random.PCG64(seed))
        latent = self.mu_interior + self._transform @ rng.standard_normal(
            self.a_idx.size)
        matched = histogram_match(latent, self.mu, self.var)

        cfg = self.cfg
        flat = np.empty(cfg.n_z * cfg.n_theta)
        flat[self.a_idx] = matched
        flat[self.b_idx] = cfg.boundary_value
        field = censor(flat).reshape(cfg.n_z, cfg.n_theta)
        return InsultField(theta_star=field, profile_id=profile_id)


@functools.lru_cache(maxsize=4)
def _cached_sampler(cfg_without_seed: GrfConfig) -> GrfSampler:
    return GrfSampler(cfg_without_seed)


def sample_field(cfg: GrfConfig) -> InsultField:
    """One-shot draw using ``cfg.seed``; the heavy factorization is cached
    per configuration (seed excluded from the cache key)."""
    sampler = _cached_sampler(replace(cfg, seed=0))
    return sampler.sample(cfg.seed)


def mix_seed(master_seed: int, stream: int) -> int:
    """Derive an independent 64-bit stream seed.

    One splitmix64 scramble of ``master + (stream + 1) * golden_gamma``;
    the +1 keeps stream 0 distinct from the master itself.
    """
    x = (master_seed + (stream + 1) * 0x9E3779B97F4A7C15) & _M64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _M64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _M64
    x ^= x >> 31
    return x


def combo_weights(combo_index: int):
    """Severity scale factors (s_ce, s_delta) of contributor combo k."""
    if combo_index not in range(N_COMBOS):
        raise ValueError(f"combo_index must be in 0..{N_COMBOS - 1}")
    frac = combo_index / (N_COMBOS - 1)
    return (1.0 - frac) * THETA_CE_MAX, frac * THETA_DELTA_MAX


def make_insult_pair(field: InsultField, combo_index: int,
                     amplitude_scale: float) -> InsultPair:
    """Scale a normalized profile into the two insult contributions."""
    if amplitude_scale <= 0:
        raise ValueError("amplitude_scale must be positive")
    s_ce, s_delta = combo_weights(combo_index)
    theta_ce = np.clip(s_ce * amplitude_scale * field.theta_star, 0.0, THETA_CE_MAX)
    theta_delta = np.clip(s_delta * amplitude_scale * field.theta_star, 0.0,
                          THETA_DELTA_MAX)
    return InsultPair(theta_ce=theta_ce, theta_delta=theta_delta,
                      combo_index=combo_index, amplitude_scale=amplitude_scale)
