"""Reader/writer for the shared TAA dataset interchange format.

Implemented directly against the documented byte layout (little-endian
throughout) so this package depends only on the on-disk contract:

    map block:   u16 kind | u16 dtype (0=f32, 1=u8) | u32 rows | u32 cols |
                 u32 crc32(payload) | payload row-major
    sample:      b"TAAS" | u16 version | u16 n_maps | u32 profile |
                 u32 combo | f64 amplitude | map blocks
    predictions: b"TAAP" | u16 version | u16 len | model_id | u32 n |
                 per sample: u16 len | sample_id | map(pred_theta_ce) |
                 map(pred_theta_delta)

plus a flat ``manifest.json`` carrying the split id lists and quantization
ranges.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAP_KINDS = {
    0: "theta_star", 1: "theta_ce", 2: "theta_delta", 3: "dilatation",
    4: "distensibility", 5: "stress_tt", 6: "stress_zz", 7: "shear",
    8: "dilatation_gray", 9: "distensibility_gray",
    10: "pred_theta_ce", 11: "pred_theta_delta",
}
KIND_TAGS = {v: k for k, v in MAP_KINDS.items()}
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}


class FormatError(ValueError):
    pass


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated while reading {what}")
    return data


def _read_map(fh):
    tag, dtag, rows, cols, crc = struct.unpack("<HHIII",
                                               _read_exact(fh, 16, "map header"))
    dtype = DTYPES[dtag]
    payload = _read_exact(fh, rows * cols * dtype.itemsize, MAP_KINDS[tag])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise FormatError(f"bad checksum in map {MAP_KINDS[tag]!r}")
    return MAP_KINDS[tag], np.frombuffer(payload, dtype=dtype).reshape(rows, cols).copy()


def _write_map(fh, kind, values):
    arr = np.ascontiguousarray(values)
    if arr.dtype == np.uint8:
        dtag = 1
    else:
        arr = arr.astype("<f4", copy=False)
        dtag = 0
    payload = arr.tobytes(order="C")
    fh.write(struct.pack("<HHIII", KIND_TAGS[kind], dtag, arr.shape[0],
                         arr.shape[1], zlib.crc32(payload) & 0xFFFFFFFF))
    fh.write(payload)


@dataclass
class Sample:
    sample_id: str
    profile_id: int
    combo_index: int
    amplitude_scale: float
    maps: dict


def read_sample(path) -> Sample:
    path = Path(path)
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != b"TAAS":
            raise FormatError(f"{path.name}: bad magic")
        version, n_maps, profile, combo, amplitude = struct.unpack(
            "<HHIId", _read_exact(fh, 20, "header"))
        if version != 1:
            raise FormatError(f"{path.name}: unsupported version {version}")
        maps = dict(_read_map(fh) for _ in range(n_maps))
    return Sample(sample_id=f"p{profile:03d}k{combo}", profile_id=profile,
                  combo_index=combo, amplitude_scale=amplitude, maps=maps)


def write_predictions(model_id: str, sample_ids, pred_ce, pred_delta, path):
    mid = model_id.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(b"TAAP")
        fh.write(struct.pack("<HH", 1, len(mid)))
        fh.write(mid)
        fh.write(struct.pack("<I", len(sample_ids)))
        for sid, ce, de in zip(sample_ids, pred_ce, pred_delta):
            sid_b = sid.encode("utf-8")
            fh.write(struct.pack("<H", len(sid_b)))
            fh.write(sid_b)
            _write_map(fh, "pred_theta_ce", ce)
            _write_map(fh, "pred_theta_delta", de)


def read_predictions(path):
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != b"TAAP":
            raise FormatError("bad predictions magic")
        version, mid_len = struct.unpack("<HH", _read_exact(fh, 4, "header"))
        model_id = _read_exact(fh, mid_len, "model id").decode("utf-8")
        (n,) = struct.unpack("<I", _read_exact(fh, 4, "count"))
        preds = {}
        for _ in range(n):
            (sl,) = struct.unpack("<H", _read_exact(fh, 2, "id len"))
            sid = _read_exact(fh, sl, "id").decode("utf-8")
            _, ce = _read_map(fh)
            _, de = _read_map(fh)
            preds[sid] = (ce, de)
    return model_id, preds


class Dataset:
    """Manifest plus lazily loaded sample records."""

    def __init__(self, directory):
        self.directory = Path(directory)
        with open(self.directory / "manifest.json", encoding="utf-8") as fh:
            self.manifest = json.load(fh)
        self.train_ids = list(self.manifest["train_ids"])
        self.test_ids = list(self.manifest["test_ids"])
        self._cache = {}

    def sample(self, sid) -> Sample:
        if sid not in self._cache:
            self._cache[sid] = read_sample(self.directory / "samples" / f"{sid}.bin")
        return self._cache[sid]

    def arrays(self, ids, kinds):
        """Stacked float arrays (n, rows, cols) for the requested map kinds."""
        out = []
        for kind in kinds:
            out.append(np.stack([
                np.asarray(self.sample(sid).maps[kind], dtype=np.float32)
                for sid in ids]))
        return out

    def input_kinds(self, variant: str, fmt: str):
        kinds = {"heat": ("dilatation", "distensibility"),
                 "gray": ("dilatation_gray", "distensibility_gray")}[fmt]
        return kinds[:1] if variant == "d" else kinds

    def predictions_path(self, model_id: str) -> Path:
        pred_dir = self.directory / "predictions"
        pred_dir.mkdir(exist_ok=True)
        return pred_dir / f"{model_id}.bin"
