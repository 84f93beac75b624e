"""Field maps on the vessel surface: dilatation, distensibility, insults,
stresses; circular padding and 8-bit quantization.

Raw per-node fields live on the (n_z, n_theta) grid.  Map products append
one column repeating column 0 (circular padding in theta) to give square
(n_z, n_theta + 1) inputs.  "Heat" maps keep physical units; "grayscale"
maps quantize onto [0, 255] with a shared preset range per map kind.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

# shared quantization ranges; bracket the produced extremes with headroom
DILATATION_RANGE = (0.90, 1.70)
DISTENSIBILITY_RANGE = (0.0, 0.08)

MAP_KINDS = ("theta_star", "insult_ce", "insult_delta", "dilatation",
             "distensibility", "stress_tt", "stress_zz", "shear")


@dataclass(frozen=True)
class FieldMap:
    """A padded scalar map with its kind, format, and quantization range."""

    values: np.ndarray
    kind: str
    fmt: str = "heat"          # "heat" (physical) or "grayscale" (uint8 codes)
    vrange: tuple | None = None

    def __post_init__(self):
        if self.fmt not in ("heat", "grayscale"):
            raise ValueError(f"unknown map format {self.fmt!r}")
        if self.fmt == "grayscale":
            v = np.asarray(self.values)
            if v.dtype != np.uint8:
                raise ValueError("grayscale maps must hold uint8 codes")
            if self.vrange is None:
                raise ValueError("grayscale maps must record their range")


def pad_circular(raw: np.ndarray) -> np.ndarray:
    """Append one column repeating column 0."""
    raw = np.asarray(raw)
    if raw.ndim != 2:
        raise ValueError("expected a 2-d grid")
    return np.concatenate([raw, raw[:, :1]], axis=1)


def unpad_circular(padded: np.ndarray) -> np.ndarray:
    """Drop the duplicated last column."""
    padded = np.asarray(padded)
    if padded.ndim != 2 or padded.shape[1] < 2:
        raise ValueError("expected a padded 2-d grid")
    if not np.array_equal(padded[:, -1], padded[:, 0]):
        raise ValueError("last column does not repeat column 0")
    return padded[:, :-1]


def dilatation_values(r_dia: np.ndarray) -> np.ndarray:
    """Diastolic radius normalized by the mean radius over both end rows."""
    r_dia = np.asarray(r_dia, dtype=float)
    ends = 0.5 * (r_dia[0].mean() + r_dia[-1].mean())
    return r_dia / ends


def distensibility_values(r_sys, r_dia) -> np.ndarray:
    """Normalized radial excursion (r_S - r_D) / r_D per node."""
    r_sys = np.asarray(r_sys, dtype=float)
    r_dia = np.asarray(r_dia, dtype=float)
    return (r_sys - r_dia) / r_dia


def dilatation_map(vessel) -> FieldMap:
    return FieldMap(pad_circular(dilatation_values(vessel.r_dia)), "dilatation")


def distensibility_map(vessel) -> FieldMap:
    return FieldMap(pad_circular(distensibility_values(vessel.r_sys, vessel.r_dia)),
                    "distensibility")


def quantize(values, vrange) -> np.ndarray:
    """Map physical values onto uint8 codes.

    ``g = round(255 * clamp((v - lo)/(hi - lo), 0, 1))`` with round half away
    from zero, so the mid-range value maps to 128 on every platform.
    """
    lo, hi = vrange
    if not hi > lo:
        raise ValueError("quantization range must have hi > lo")
    scaled = 255.0 * np.clip((np.asarray(values, dtype=float) - lo) / (hi - lo),
                             0.0, 1.0)
    return np.floor(scaled + 0.5).astype(np.uint8)


def dequantize(codes, vrange) -> np.ndarray:
    lo, hi = vrange
    return lo + np.asarray(codes, dtype=float) / 255.0 * (hi - lo)


def to_grayscale(heat_map: FieldMap, vrange) -> FieldMap:
    """Quantized variant of a heat map with the shared preset range recorded."""
    if heat_map.fmt != "heat":
        raise ValueError("to_grayscale expects a heat map")
    return FieldMap(quantize(heat_map.values, vrange), heat_map.kind,
                    fmt="grayscale", vrange=tuple(vrange))


# ---------------------------------------------------------------------------
# PNG export
# ---------------------------------------------------------------------------

def _blend(anchors, n=256):
    """Piecewise-linear RGB table through the given (position, rgb) anchors."""
    pos = np.array([a[0] for a in anchors])
    rgb = np.array([a[1] for a in anchors], dtype=float)
    x = np.linspace(0.0, 1.0, n)
    table = np.stack([np.interp(x, pos, rgb[:, c]) for c in range(3)], axis=1)
    return np.clip(table + 0.5, 0, 255).astype(np.uint8)


# dark blue -> cyan -> yellow -> dark red, perceptually ordered in luminance
HEAT_COLORMAP = _blend([
    (0.00, (13, 8, 135)),
    (0.25, (84, 39, 212)),
    (0.50, (35, 168, 224)),
    (0.75, (245, 219, 76)),
    (1.00, (158, 1, 66)),
])


def write_grayscale_png(map_or_codes, path):
    """8-bit single-channel PNG, no interlacing."""
    codes = map_or_codes.values if isinstance(map_or_codes, FieldMap) else map_or_codes
    codes = np.asarray(codes)
    if codes.dtype != np.uint8:
        raise ValueError("grayscale export expects uint8 codes")
    Image.fromarray(codes, mode="L").save(path, format="PNG")


def write_heat_png(field_map: FieldMap, path, scale: int = 8, vrange=None,
                   n_ticks: int = 5):
    """Render a heat map through the built-in colormap with a value bar."""
    values = np.asarray(field_map.values, dtype=float)
    if vrange is None:
        vrange = (float(values.min()), float(values.max()))
    lo, hi = vrange
    span = hi - lo if hi > lo else 1.0
    codes = np.clip((values - lo) / span, 0.0, 1.0)
    idx = np.floor(codes * 255.0 + 0.5).astype(np.uint8)
    rgb = HEAT_COLORMAP[idx]

    img = Image.fromarray(rgb, mode="RGB").resize(
        (values.shape[1] * scale, values.shape[0] * scale), Image.NEAREST)

    bar_w, pad, label_w = 18, 10, 64
    out = Image.new("RGB", (img.width + pad + bar_w + label_w, img.height),
                    (255, 255, 255))
    out.paste(img, (0, 0))
    bar = HEAT_COLORMAP[np.linspace(255, 0, img.height).astype(np.uint8)]
    bar_img = Image.fromarray(np.repeat(bar[:, None, :], bar_w, axis=1), "RGB")
    out.paste(bar_img, (img.width + pad, 0))

    draw = ImageDraw.Draw(out)
    for i in range(n_ticks):
        frac = i / (n_ticks - 1)
        y = int(round((1.0 - frac) * (img.height - 1)))
        value = lo + frac * span
        draw.line([(img.width + pad, y), (img.width + pad + bar_w + 3, y)],
                  fill=(0, 0, 0))
        draw.text((img.width + pad + bar_w + 6, max(0, y - 5)),
                  f"{value:.4g}", fill=(0, 0, 0))
    out.save(path, format="PNG")
