"""Feed-forward DeepONet with hand-written reverse-mode gradients.

A branch network embeds the flattened input maps into 2p coefficients, a
trunk network embeds each output coordinate (theta_hat, z_hat) in [0, 1]^2
into p features, and the two insult estimates are the block-wise dot
products

    pred_i(x, c) = sum_k branch_i(x)[k] * trunk(c)[k] + bias_i,  i in {ce, delta}

trained with the combined mean-squared error over batch, grid points, and
both channels under one parameter set (Adam, fixed seeded batch order, so
runs are bit-reproducible on one platform).
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

CHECKPOINT_MAGIC = b"TAAC"

# architecture defaults: parameter count comparable to the reference
# feed-forward DeepONet (~0.3e6); hidden layers SiLU, output layers linear
BRANCH_HIDDEN = (128, 128)
TRUNK_HIDDEN = (64, 64)
LATENT_P = 64


class TrainingDivergence(RuntimeError):
    pass


def silu(x):
    return x * expit(x)


def silu_grad(x):
    s = expit(x)
    return s * (1.0 + x * (1.0 - s))


@dataclass(frozen=True)
class DenseNetSpec:
    """Widths include input and output; hidden activations are SiLU."""

    widths: tuple
    init_seed: int = 0

    def __post_init__(self):
        if len(self.widths) < 3:
            raise ValueError("need at least one hidden layer")
        if min(self.widths) < 1:
            raise ValueError("layer widths must be >= 1")


def init_dense(spec: DenseNetSpec, dtype) -> list:
    """Glorot-uniform weights, zero biases; one (W, b) pair per layer."""
    rng = np.random.default_rng(np.random.PCG64(spec.init_seed))
    layers = []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
        b = np.zeros(fan_out, dtype=dtype)
        layers.append([w, b])
    return layers


def dense_forward(layers, x):
    """Returns the output and the per-layer cache for backprop."""
    h = x
    cache = []
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        z = h @ w + b
        a = z if i == last else silu(z)
        cache.append((h, z))
        h = a
    return h, cache


def dense_backward(layers, cache, d_out):
    """Exact reverse-mode gradients; returns (d_input, grads per layer)."""
    grads = [None] * len(layers)
    last = len(layers) - 1
    delta = d_out
    for i in range(last, -1, -1):
        h, z = cache[i]
        if i != last:
            delta = delta * silu_grad(z)
        grads[i] = [h.T @ delta, delta.sum(axis=0)]
        delta = delta @ layers[i][0].T
    return delta, grads


@dataclass(frozen=True)
class DeepOnetConfig:
    input_size: int
    branch_hidden: tuple = BRANCH_HIDDEN
    trunk_hidden: tuple = TRUNK_HIDDEN
    latent_p: int = LATENT_P
    # coordinate encoding feeding the trunk: random Fourier features let the
    # coordinate network resolve localized insults within a desk-scale
    # budget; "periodic" keeps a plain (cos, sin, z) embedding, "none" the
    # raw coordinates
    trunk_encoding: str = "fourier"
    n_fourier: int = 32
    fourier_scale: float = 2.0
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.trunk_encoding not in ("none", "periodic", "fourier"):
            raise ValueError(f"unknown trunk encoding {self.trunk_encoding!r}")

    @property
    def trunk_input_size(self) -> int:
        if self.trunk_encoding == "periodic":
            return 3
        if self.trunk_encoding == "fourier":
            return 2 * self.n_fourier + 2
        return 2

    def branch_spec(self) -> DenseNetSpec:
        widths = (self.input_size, *self.branch_hidden, 2 * self.latent_p)
        return DenseNetSpec(widths, init_seed=self.seed * 2 + 1)

    def trunk_spec(self) -> DenseNetSpec:
        widths = (self.trunk_input_size, *self.trunk_hidden, self.latent_p)
        return DenseNetSpec(widths, init_seed=self.seed * 2 + 2)


class DeepOnetModel:
    """Two-operator DeepONet: split-branch coefficients over a shared trunk.

    The last branch layer starts at zero so the initial prediction is the
    bias field; starting from large random outputs makes the combined head
    collapse toward predicting zero before the trunk has differentiated
    (the insult targets are small and mostly zero)."""

    def __init__(self, config: DeepOnetConfig):
        self.config = config
        dtype = np.dtype(config.dtype)
        self.branch = init_dense(config.branch_spec(), dtype)
        self.branch[-1][0][:] = 0.0
        self.trunk = init_dense(config.trunk_spec(), dtype)
        self.bias = np.zeros(2, dtype=dtype)
        if config.trunk_encoding == "fourier":
            rng = np.random.default_rng(np.random.PCG64(config.seed * 2 + 3))
            self.fourier_freqs = rng.normal(
                0.0, config.fourier_scale, size=(2, config.n_fourier)).astype(dtype)
        else:
            self.fourier_freqs = None

    # -- parameter plumbing ------------------------------------------------
    def parameters(self) -> list:
        params = []
        for layer in self.branch + self.trunk:
            params.extend(layer)
        params.append(self.bias)
        return params

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    # -- forward / loss / gradients ----------------------------------------
    def encode_coords(self, coords):
        coords = np.asarray(coords, dtype=self.config.dtype)
        if self.config.trunk_encoding == "none":
            return coords
        two_pi = 2.0 * np.pi
        if self.config.trunk_encoding == "periodic":
            return np.stack([np.cos(two_pi * coords[:, 0]),
                             np.sin(two_pi * coords[:, 0]),
                             coords[:, 1]], axis=1)
        z = two_pi * (coords @ self.fourier_freqs)
        return np.concatenate([np.cos(z), np.sin(z), coords], axis=1)

    def forward(self, inputs, coords):
        """Predicted (theta_ce_hat, theta_delta_hat), shape (batch, n_points)."""
        inputs = np.asarray(inputs, dtype=self.config.dtype)
        coeffs, _ = dense_forward(self.branch, inputs)
        feats, _ = dense_forward(self.trunk, self.encode_coords(coords))
        p = self.config.latent_p
        batch = inputs.shape[0]
        # one large GEMM over the stacked (batch, channel) coefficient blocks
        pred = (coeffs.reshape(batch * 2, p) @ feats.T).reshape(batch, 2, -1) \
            + self.bias[None, :, None]
        return pred[:, 0, :], pred[:, 1, :]

    def loss(self, inputs, targets, coords) -> float:
        pred_ce, pred_d = self.forward(inputs, coords)
        r = np.stack([pred_ce, pred_d], axis=1) - np.asarray(
            targets, dtype=self.config.dtype)
        return float(np.mean(r * r))

    def loss_and_grads(self, inputs, targets, coords):
        """MSE over (batch, channel, point) and exact gradients."""
        inputs = np.asarray(inputs, dtype=self.config.dtype)
        targets = np.asarray(targets, dtype=self.config.dtype)
        batch = inputs.shape[0]
        p = self.config.latent_p

        coeffs, bcache = dense_forward(self.branch, inputs)
        enc = self.encode_coords(coords)
        feats, tcache = dense_forward(self.trunk, enc)
        stacked = coeffs.reshape(batch * 2, p)           # (B*2, p)
        pred = (stacked @ feats.T).reshape(batch, 2, -1) \
            + self.bias[None, :, None]

        resid = pred - targets
        n = resid.size
        loss = float(np.mean(resid * resid))

        d_pred = (2.0 / n) * resid                       # (B, 2, M)
        d_bias = d_pred.sum(axis=(0, 2))
        d_flat = d_pred.reshape(batch * 2, -1)           # (B*2, M)
        d_coeffs = (d_flat @ feats).reshape(batch, 2 * p)
        d_feats = d_flat.T @ stacked                     # (M, p)

        _, branch_grads = dense_backward(self.branch, bcache, d_coeffs)
        _, trunk_grads = dense_backward(self.trunk, tcache, d_feats)

        grads = []
        for layer in branch_grads + trunk_grads:
            grads.extend(layer)
        grads.append(d_bias)
        return loss, grads

    # -- serialization -------------------------------------------------------
    def tensor_dict(self) -> dict:
        out = {}
        for i, (w, b) in enumerate(self.branch):
            out[f"branch.{i}.w"] = w
            out[f"branch.{i}.b"] = b
        for i, (w, b) in enumerate(self.trunk):
            out[f"trunk.{i}.w"] = w
            out[f"trunk.{i}.b"] = b
        out["bias"] = self.bias
        if self.fourier_freqs is not None:
            out["fourier_freqs"] = self.fourier_freqs
        return out

    def save(self, path, extra_descriptor: dict | None = None,
             extra_tensors: dict | None = None):
        path = Path(path)
        tensors = self.tensor_dict()
        if extra_tensors:
            tensors.update(extra_tensors)
        write_tensor_blob(path, tensors)
        descriptor = {"config": asdict(self.config)}
        if extra_descriptor:
            descriptor.update(extra_descriptor)
        path.with_suffix(path.suffix + ".json").write_text(
            json.dumps(descriptor, indent=2, sort_keys=True) + "\n",
            encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DeepOnetModel":
        path = Path(path)
        descriptor = json.loads(
            path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
        cfg_fields = dict(descriptor["config"])
        for key in ("branch_hidden", "trunk_hidden"):
            cfg_fields[key] = tuple(cfg_fields[key])
        model = cls(DeepOnetConfig(**cfg_fields))
        tensors = read_tensor_blob(path)
        for i in range(len(model.branch)):
            model.branch[i][0] = tensors[f"branch.{i}.w"]
            model.branch[i][1] = tensors[f"branch.{i}.b"]
        for i in range(len(model.trunk)):
            model.trunk[i][0] = tensors[f"trunk.{i}.w"]
            model.trunk[i][1] = tensors[f"trunk.{i}.b"]
        model.bias = tensors["bias"]
        if "fourier_freqs" in tensors:
            model.fourier_freqs = tensors["fourier_freqs"]
        return model


# ---------------------------------------------------------------------------
# tensor blob: same little-endian header + crc32 convention as the map store
# ---------------------------------------------------------------------------

_BLOB_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_BLOB_TAGS = {np.dtype("float64"): 0, np.dtype("float32"): 1}


def write_tensor_blob(path, tensors: dict):
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HH", 1, len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name])
            tag = _BLOB_TAGS[arr.dtype]
            payload = arr.tobytes(order="C")
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<HH", tag, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
            fh.write(payload)


def read_tensor_blob(path) -> dict:
    out = {}
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint blob")
        _, count = struct.unpack("<HH", fh.read(4))
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            tag, ndim = struct.unpack("<HH", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            (crc,) = struct.unpack("<I", fh.read(4))
            dtype = _BLOB_DTYPES[tag]
            payload = fh.read(int(np.prod(shape)) * dtype.itemsize)
            if zlib.crc32(payload) & 0xFFFFFFFF != crc:
                raise ValueError(f"checksum failure in tensor {name!r}")
            out[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    return out


# ---------------------------------------------------------------------------
# optimizer and training loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    budget: int = 20000          # weight updates (desk scale; 200k full scale)
    batch_size: int = 64
    seed: int = 0
    log_every: int = 500

    def __post_init__(self):
        if self.budget < 0 or self.batch_size < 1:
            raise ValueError("budget must be >= 0 and batch_size >= 1")


class Adam:
    def __init__(self, params, config: TrainConfig):
        self.cfg = config
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self._scratch = [np.empty_like(p) for p in params]

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for p, g, m, v, s in zip(params, grads, self.m, self.v, self._scratch):
            m *= c.beta1
            np.multiply(g, 1.0 - c.beta1, out=s)
            m += s
            v *= c.beta2
            np.multiply(g, g, out=s)
            s *= 1.0 - c.beta2
            v += s
            np.divide(v, bc2, out=s)
            np.sqrt(s, out=s)
            s += c.eps
            np.divide(m, s, out=s)
            s *= c.learning_rate / bc1
            p -= s


def grid_coordinates(n_rows: int = 41, n_cols: int = 41):
    """Normalized (theta_hat, z_hat) in [0, 1]^2 for the padded grid."""
    rows, cols = np.meshgrid(np.arange(n_rows), np.arange(n_cols), indexing="ij")
    theta_hat = cols.ravel() / (n_cols - 1)
    z_hat = rows.ravel() / (n_rows - 1)
    return np.stack([theta_hat, z_hat], axis=1)


def batch_order(n_samples: int, budget: int, batch_size: int, seed: int):
    """Deterministic batch index stream; each batch is sorted by sample index
    so within-update summation order is fixed."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    order = []
    while len(order) < budget:
        perm = rng.permutation(n_samples)
        for start in range(0, n_samples, batch_size):
            order.append(np.sort(perm[start:start + batch_size]))
            if len(order) == budget:
                break
    return order


def train(model: DeepOnetModel, inputs, targets, config: TrainConfig,
          coords=None):
    """Run the Adam loop; returns the loss history [(update, loss), ...].

    Deterministic for a fixed config: fixed initialization (model seed),
    fixed batch order, fixed summation order.  Aborts on non-finite loss.
    """
    inputs = np.asarray(inputs, dtype=model.config.dtype)
    targets = np.asarray(targets, dtype=model.config.dtype)
    if coords is None:
        coords = grid_coordinates()
    params = model.parameters()
    opt = Adam(params, config)
    history = []
    for update, idx in enumerate(
            batch_order(inputs.shape[0], config.budget, config.batch_size,
                        config.seed)):
        loss, grads = model.loss_and_grads(inputs[idx], targets[idx], coords)
        if not np.isfinite(loss):
            raise TrainingDivergence(f"non-finite loss at update {update}")
        opt.step(params, grads)
        if update % config.log_every == 0 or update == config.budget - 1:
            history.append((update, loss))
    return history


# ---------------------------------------------------------------------------
# dataset assembly and input normalization
# ---------------------------------------------------------------------------

VARIANTS = ("d", "dD")
FORMATS = ("heat", "gray")


def assemble_inputs(records: dict, ids, variant: str, fmt: str):
    """Flattened input matrix (n_samples, channels * 1681) for one variant."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    kinds = {"heat": ("dilatation", "distensibility"),
             "gray": ("dilatation_gray", "distensibility_gray")}[fmt]
    if variant == "d":
        kinds = kinds[:1]
    rows = []
    for sid in ids:
        rec = records[sid]
        rows.append(np.concatenate(
            [np.asarray(rec.maps[k], dtype=np.float64).ravel() for k in kinds]))
    return np.array(rows), len(kinds)


def assemble_targets(records: dict, ids):
    """(n_samples, 2, 1681) physical-unit insult targets."""
    out = []
    for sid in ids:
        rec = records[sid]
        out.append(np.stack([
            np.asarray(rec.maps["theta_ce"], dtype=np.float64).ravel(),
            np.asarray(rec.maps["theta_delta"], dtype=np.float64).ravel()]))
    return np.array(out)


@dataclass(frozen=True, eq=False)
class Normalizer:
    """Branch-input normalization.

    First stage is the documented per-channel affine map, (x - shift) /
    scale: heat maps standardize with the train split's mean/std, grayscale
    code maps scale to [0, 1] with shift 0, scale 255.  An optional second
    stage standardizes every pixel against its train-split statistics,
    which amplifies the inter-sample differences the branch has to encode
    (without it the calibrated maps all look alike and the operator sits
    on its predict-the-mean plateau for most of a desk-scale budget).
    """

    shift: tuple
    scale: tuple
    pixel_shift: np.ndarray | None = None
    pixel_scale: np.ndarray | None = None

    @classmethod
    def fit(cls, train_inputs, n_channels: int, fmt: str,
            pixelwise: bool = False) -> "Normalizer":
        if fmt == "gray":
            shift = (0.0,) * n_channels
            scale = (255.0,) * n_channels
        else:
            per = train_inputs.shape[1] // n_channels
            shift, scale = [], []
            for c in range(n_channels):
                block = train_inputs[:, c * per:(c + 1) * per]
                shift.append(float(block.mean()))
                scale.append(float(block.std() or 1.0))
            shift, scale = tuple(shift), tuple(scale)
        norm = cls(shift=shift, scale=scale)
        if not pixelwise:
            return norm
        staged = norm.apply(train_inputs)
        pixel_shift = staged.mean(axis=0)
        pixel_scale = staged.std(axis=0)
        pixel_scale[pixel_scale == 0] = 1.0
        return cls(shift=shift, scale=scale, pixel_shift=pixel_shift,
                   pixel_scale=pixel_scale)

    def apply(self, inputs):
        inputs = np.asarray(inputs, dtype=np.float64)
        n_channels = len(self.shift)
        per = inputs.shape[1] // n_channels
        out = np.empty_like(inputs)
        for c in range(n_channels):
            sl = slice(c * per, (c + 1) * per)
            out[:, sl] = (inputs[:, sl] - self.shift[c]) / self.scale[c]
        if self.pixel_shift is not None:
            out = (out - self.pixel_shift) / self.pixel_scale
        return out
