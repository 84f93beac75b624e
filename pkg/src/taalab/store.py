"""Bit-exact binary persistence of samples, splits, and predictions.

All integers are little-endian.  Every array is stored as a self-describing
map block:

    u16 kind_tag | u16 dtype_tag | u32 rows | u32 cols | u32 crc32 | payload

with dtype tag 0 = float32 and 1 = uint8, payload row-major, and crc32 taken
over the payload bytes.  Sample files are

    b"TAAS" | u16 version | u16 n_maps | u32 profile_id | u32 combo_index |
    f64 amplitude_scale | map blocks

and prediction files are

    b"TAAP" | u16 version | u16 len | model_id utf8 | u32 n_samples |
    per sample: u16 len | sample_id utf8 | map(pred_theta_ce) |
                map(pred_theta_delta)

The JSON manifest is a single flat object (documented in DatasetManifest);
regenerating a dataset from the manifest's master seed reproduces every map
bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
SAMPLE_MAGIC = b"TAAS"
PREDICTIONS_MAGIC = b"TAAP"

MAP_KIND_TAGS = {
    "theta_star": 0,
    "theta_ce": 1,
    "theta_delta": 2,
    "dilatation": 3,
    "distensibility": 4,
    "stress_tt": 5,
    "stress_zz": 6,
    "shear": 7,
    "dilatation_gray": 8,
    "distensibility_gray": 9,
    "pred_theta_ce": 10,
    "pred_theta_delta": 11,
}
TAG_TO_KIND = {v: k for k, v in MAP_KIND_TAGS.items()}

SAMPLE_MAP_KINDS = ("theta_star", "theta_ce", "theta_delta", "dilatation",
                    "distensibility", "stress_tt", "stress_zz", "shear",
                    "dilatation_gray", "distensibility_gray")

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("u1"): 1}


class StoreFormatError(ValueError):
    """Bad magic, version, or truncated payload."""


class ChecksumError(StoreFormatError):
    """CRC mismatch; names the offending map kind."""


class PredictionIdError(KeyError):
    """Prediction ids do not match the requested sample ids."""


def sample_id_for(profile_id: int, combo_index: int) -> str:
    return f"p{profile_id:03d}k{combo_index}"


@dataclass
class SampleRecord:
    sample_id: str
    profile_id: int
    combo_index: int
    amplitude_scale: float
    maps: dict  # kind -> array; float32 physical maps plus uint8 gray variants

    def __post_init__(self):
        shapes = {m.shape for m in self.maps.values()}
        if len(shapes) > 1:
            raise ValueError(f"maps disagree on grid shape: {shapes}")


def _write_map_block(fh, kind: str, values: np.ndarray):
    tag = MAP_KIND_TAGS[kind]
    arr = np.ascontiguousarray(values)
    if arr.dtype == np.uint8:
        dtype_tag = 1
    else:
        arr = arr.astype("<f4", copy=False)
        dtype_tag = 0
    payload = arr.tobytes(order="C")
    fh.write(struct.pack("<HHIII", tag, dtype_tag, arr.shape[0], arr.shape[1],
                         zlib.crc32(payload) & 0xFFFFFFFF))
    fh.write(payload)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise StoreFormatError(f"truncated file while reading {what}")
    return data


def _read_map_block(fh):
    tag, dtype_tag, rows, cols, crc = struct.unpack(
        "<HHIII", _read_exact(fh, 16, "map header"))
    if tag not in TAG_TO_KIND:
        raise StoreFormatError(f"unknown map kind tag {tag}")
    if dtype_tag not in _DTYPES:
        raise StoreFormatError(f"unknown dtype tag {dtype_tag}")
    kind = TAG_TO_KIND[tag]
    dtype = _DTYPES[dtype_tag]
    payload = _read_exact(fh, rows * cols * dtype.itemsize, f"map {kind!r}")
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumError(f"checksum failure in map {kind!r}")
    return kind, np.frombuffer(payload, dtype=dtype).reshape(rows, cols).copy()


def write_sample(record: SampleRecord, path):
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(SAMPLE_MAGIC)
        fh.write(struct.pack("<HHIId", FORMAT_VERSION, len(record.maps),
                             record.profile_id, record.combo_index,
                             record.amplitude_scale))
        for kind in sorted(record.maps, key=lambda k: MAP_KIND_TAGS[k]):
            _write_map_block(fh, kind, record.maps[kind])


def read_sample(path) -> SampleRecord:
    path = Path(path)
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != SAMPLE_MAGIC:
            raise StoreFormatError(f"{path.name}: not a sample file")
        version, n_maps, profile_id, combo_index, amplitude = struct.unpack(
            "<HHIId", _read_exact(fh, 20, "sample header"))
        if version != FORMAT_VERSION:
            raise StoreFormatError(f"{path.name}: format version {version} "
                                   f"(expected {FORMAT_VERSION})")
        maps = {}
        for _ in range(n_maps):
            kind, values = _read_map_block(fh)
            maps[kind] = values
    return SampleRecord(sample_id=sample_id_for(profile_id, combo_index),
                        profile_id=profile_id, combo_index=combo_index,
                        amplitude_scale=amplitude, maps=maps)


def write_predictions(model_id: str, sample_ids, pred_ce, pred_delta, path):
    """Write per-sample predicted insult maps (physical units, float32)."""
    if not (len(sample_ids) == len(pred_ce) == len(pred_delta)):
        raise ValueError("ids and prediction arrays must align")
    path = Path(path)
    mid = model_id.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(PREDICTIONS_MAGIC)
        fh.write(struct.pack("<HH", FORMAT_VERSION, len(mid)))
        fh.write(mid)
        fh.write(struct.pack("<I", len(sample_ids)))
        for sid, ce, de in zip(sample_ids, pred_ce, pred_delta):
            sid_b = sid.encode("utf-8")
            fh.write(struct.pack("<H", len(sid_b)))
            fh.write(sid_b)
            _write_map_block(fh, "pred_theta_ce", ce)
            _write_map_block(fh, "pred_theta_delta", de)


def read_predictions(path):
    """Returns (model_id, {sample_id: (theta_ce_hat, theta_delta_hat)})."""
    path = Path(path)
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != PREDICTIONS_MAGIC:
            raise StoreFormatError(f"{path.name}: not a predictions file")
        version, mid_len = struct.unpack("<HH", _read_exact(fh, 4, "header"))
        if version != FORMAT_VERSION:
            raise StoreFormatError(f"{path.name}: format version {version}")
        model_id = _read_exact(fh, mid_len, "model id").decode("utf-8")
        (n_samples,) = struct.unpack("<I", _read_exact(fh, 4, "sample count"))
        out = {}
        for _ in range(n_samples):
            (sid_len,) = struct.unpack("<H", _read_exact(fh, 2, "id length"))
            sid = _read_exact(fh, sid_len, "sample id").decode("utf-8")
            kind_a, ce = _read_map_block(fh)
            kind_b, delta = _read_map_block(fh)
            if (kind_a, kind_b) != ("pred_theta_ce", "pred_theta_delta"):
                raise StoreFormatError(f"unexpected map kinds {kind_a}, {kind_b}")
            out[sid] = (ce, delta)
    return model_id, out


@dataclass
class DatasetManifest:
    """Flat, documented manifest; every key is always present."""

    format_version: int = FORMAT_VERSION
    n_z: int = 41
    n_theta: int = 40
    padded_cols: int = 41
    sample_count: int = 0
    master_seed: int = 0
    split_seed: int = 0
    grf_surface_fraction: float = 0.23
    grf_boundary_softness: float = 0.2
    grf_length_circ: float = 4.5
    grf_length_axial: float = 4.5
    grf_boundary_value: float = 0.0
    smoothing_sigma: float = 0.5
    calibration_target: float = 1.5
    calibration_tol: float = 0.01
    dilatation_range_lo: float = 0.90
    dilatation_range_hi: float = 1.70
    distensibility_range_lo: float = 0.0
    distensibility_range_hi: float = 0.08
    train_ids: list = field(default_factory=list)
    test_ids: list = field(default_factory=list)
    wall_overrides: dict = field(default_factory=dict)
    generator_hash: str = ""

    def __post_init__(self):
        overlap = set(self.train_ids) & set(self.test_ids)
        if overlap:
            raise ValueError(f"train/test overlap: {sorted(overlap)[:5]}")
        if self.train_ids or self.test_ids:
            if len(self.train_ids) + len(self.test_ids) != self.sample_count:
                raise ValueError("split does not partition the sample set")

    @property
    def dilatation_range(self):
        return (self.dilatation_range_lo, self.dilatation_range_hi)

    @property
    def distensibility_range(self):
        return (self.distensibility_range_lo, self.distensibility_range_hi)

    def save(self, directory):
        path = Path(directory) / "manifest.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, directory) -> "DatasetManifest":
        path = Path(directory) / "manifest.json"
        if not path.exists():
            raise FileNotFoundError(f"no manifest.json under {directory}")
        with open(path, "r", encoding="utf-8") as fh:
            return cls(**json.load(fh))


def split_ids(sample_ids, seed: int, n_train: int, n_test: int):
    """Deterministic seeded shuffle into disjoint train/test id lists."""
    ids = sorted(sample_ids)
    if n_train + n_test != len(ids):
        raise ValueError(f"split sizes {n_train}+{n_test} != {len(ids)} samples")
    rng = np.random.default_rng(np.random.PCG64(seed))
    perm = rng.permutation(len(ids))
    shuffled = [ids[i] for i in perm]
    return shuffled[:n_train], shuffled[n_train:]


def split_dataset(sample_ids, seed: int):
    """The 500-sample split contract: 450 train / 50 test."""
    ids = list(sample_ids)
    if len(ids) != 500:
        raise ValueError(f"expected 500 samples, got {len(ids)}")
    return split_ids(ids, seed, 450, 50)


def sample_dir(dataset_dir) -> Path:
    return Path(dataset_dir) / "samples"


def predictions_dir(dataset_dir) -> Path:
    return Path(dataset_dir) / "predictions"


def exports_dir(dataset_dir) -> Path:
    return Path(dataset_dir) / "exports"


def sample_path(dataset_dir, sample_id: str) -> Path:
    return sample_dir(dataset_dir) / f"{sample_id}.bin"


def scan_sample_ids(dataset_dir):
    return sorted(p.stem for p in sample_dir(dataset_dir).glob("*.bin"))


def load_dataset(dataset_dir):
    """Manifest plus all sample records, keyed by id."""
    manifest = DatasetManifest.load(dataset_dir)
    records = {}
    for sid in manifest.train_ids + manifest.test_ids:
        records[sid] = read_sample(sample_path(dataset_dir, sid))
    return manifest, records


def generator_hash() -> str:
    """SHA-256 over this package's source files (build provenance)."""
    root = Path(__file__).parent
    digest = hashlib.sha256()
    for path in sorted(root.glob("*.py")):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()[:16]
