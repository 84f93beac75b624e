"""Baseline geometric, material, and turnover parameters of the vessel wall.

Units are kPa and mm throughout; pressures given in mmHg are converted with
1 mmHg = 0.1333 kPa.  The default values describe a murine ascending aorta
in its homeostatic in vivo state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields, replace

KPA_PER_MMHG = 0.1333


@dataclass(frozen=True)
class WallParameters:
    """Constrained-mixture wall constants.

    The three constituents are elastin-dominated matrix (``e``), smooth
    muscle (``m``), and collagen-dominated matrix (``c``).  Deposition
    stretches ``G`` are the pre-stretches at which constituents are
    incorporated; the radial elastin value is fixed by isochoric deposition,
    ``G_r_e = 1/(G_theta_e * G_z_e)``.
    """

    # geometry (mm)
    r_o: float = 0.808
    h_o: float = 0.041
    l_o: float = 10.0
    # mass fractions
    phi_e: float = 0.354
    phi_m: float = 0.298
    phi_c: float = 0.348
    # collagen orientation fractions (circumferential / axial / symmetric diagonal)
    beta_theta: float = 0.077
    beta_z: float = 0.035
    beta_diag: float = 0.888
    alpha0_deg: float = 50.3
    # material constants (kPa where dimensional)
    c_e: float = 92.6
    c1_m: float = 0.32
    c2_m: float = 31.1
    c1_c: float = 4446.5
    c2_c: float = 2.45
    # deposition stretches
    G_theta_e: float = 2.11
    G_z_e: float = 2.03
    G_m: float = 1.20
    G_c: float = 1.06
    # mechanosensing and turnover constants
    delta: float = 0.0
    eta: float = 1.0
    gain_ratio: float = 0.2  # K_tauw / K_sigma; unused at equilibrium, kept for completeness
    # loading (kPa)
    p_sys: float = 16.0          # 120 mmHg
    p_dia: float = 16.0 * 2 / 3  # 80 mmHg

    def __post_init__(self):
        if abs(self.phi_e + self.phi_m + self.phi_c - 1.0) > 1e-6:
            raise ValueError("constituent mass fractions must sum to 1")
        if abs(self.beta_theta + self.beta_z + self.beta_diag - 1.0) > 1e-6:
            raise ValueError("collagen orientation fractions must sum to 1")
        if min(self.r_o, self.h_o, self.l_o, self.p_sys, self.p_dia) <= 0:
            raise ValueError("geometry and pressures must be positive")

    @property
    def G_r_e(self) -> float:
        return 1.0 / (self.G_theta_e * self.G_z_e)

    @property
    def alpha0_rad(self) -> float:
        return math.radians(self.alpha0_deg)

    def with_overrides(self, overrides: dict) -> "WallParameters":
        """Return a copy with the given field values replaced."""
        known = {f.name for f in fields(self)}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise KeyError(f"unknown wall parameters: {unknown}")
        return replace(self, **overrides)

    @classmethod
    def from_json(cls, path) -> "WallParameters":
        """Load overrides of the defaults from a flat JSON key-value file."""
        with open(path, "r", encoding="utf-8") as fh:
            overrides = json.load(fh)
        return cls().with_overrides(overrides)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}
