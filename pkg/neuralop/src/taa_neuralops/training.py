"""Training regimes for the three families against the shared dataset format.

* cnn_deeponet: Adam 1e-3 (constant), combined MSE over both insult
  channels, SiLU activations.
* unet: Adam 1e-4 with cosine annealing over the budget, GELU, MSE.
* lno: Adam 1e-3 with exponential decay (one decade over the budget),
  sine activations; inputs and outputs min-max normalized over the train
  split and the loss is the per-sample relative L2 over both insult
  channels jointly.

Inputs: grayscale code maps scale to [0, 1] by /255; heat maps standardize
per channel with train-split mean/std.  Targets stay in physical units
except inside the LNO's normalized loss.  Every run writes the shared
binary predictions file plus a JSON sidecar recording seed, budget, and the
architecture settings.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import torch

from .dataio import Dataset, write_predictions
from .models import build_model, parameter_count

FAMILIES = ("cnn_deeponet", "unet", "lno")
DEFAULT_BUDGET = 20000
DEFAULT_BATCH = {"cnn_deeponet": 32, "unet": 8, "lno": 20}
LEARNING_RATE = {"cnn_deeponet": 1e-3, "unet": 1e-4, "lno": 1e-3}


class TrainingDivergence(RuntimeError):
    pass


def model_id_for(family: str, variant: str, fmt: str) -> str:
    return f"{family}-{variant}-{fmt}"


def grid_coords(n_rows: int, n_cols: int) -> torch.Tensor:
    rows, cols = torch.meshgrid(torch.arange(n_rows), torch.arange(n_cols),
                                indexing="ij")
    theta_hat = cols.reshape(-1).float() / (n_cols - 1)
    z_hat = rows.reshape(-1).float() / (n_rows - 1)
    return torch.stack([theta_hat, z_hat], dim=1)


def input_stack(ds: Dataset, ids, variant: str, fmt: str) -> np.ndarray:
    kinds = ds.input_kinds(variant, fmt)
    return np.stack(ds.arrays(ids, kinds), axis=1)  # (n, C, 41, 41)


def target_stack(ds: Dataset, ids) -> np.ndarray:
    ce, de = ds.arrays(ids, ("theta_ce", "theta_delta"))
    return np.stack([ce, de], axis=1)               # (n, 2, 41, 41)


def normalize_inputs(train_x: np.ndarray, fmt: str):
    """Returns (shift, scale) with shape (1, C, 1, 1)."""
    c = train_x.shape[1]
    if fmt == "gray":
        return (np.zeros((1, c, 1, 1), dtype=np.float32),
                np.full((1, c, 1, 1), 255.0, dtype=np.float32))
    mean = train_x.mean(axis=(0, 2, 3), keepdims=True)
    std = train_x.std(axis=(0, 2, 3), keepdims=True)
    std[std == 0] = 1.0
    return mean.astype(np.float32), std.astype(np.float32)


def minmax_stats(arr: np.ndarray):
    """Per-channel (min, span) over the train split for the LNO."""
    lo = arr.min(axis=(0, 2, 3), keepdims=True).astype(np.float32)
    hi = arr.max(axis=(0, 2, 3), keepdims=True).astype(np.float32)
    span = hi - lo
    span[span == 0] = 1.0
    return lo, span


def relative_l2_loss(pred, true, eps=1e-8):
    """Mean over the batch of ||err|| / ||true|| over both channels jointly."""
    num = torch.linalg.vector_norm(pred - true, dim=(1, 2, 3))
    den = torch.linalg.vector_norm(true, dim=(1, 2, 3))
    return (num / (den + eps)).mean()


def batch_stream(n: int, budget: int, batch_size: int, generator):
    order = []
    while len(order) < budget:
        perm = torch.randperm(n, generator=generator)
        for start in range(0, n, batch_size):
            order.append(perm[start:start + batch_size].sort().values)
            if len(order) == budget:
                break
    return order


def train_family(dataset_dir, family: str, variant: str, fmt: str,
                 budget: int = DEFAULT_BUDGET, seed: int = 0,
                 batch_size: int | None = None, log_every: int = 1000,
                 progress=None):
    """Train one family/variant/format combination; writes predictions for
    the test split and a metadata sidecar.  Returns the metadata dict."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    ds = Dataset(dataset_dir)
    batch_size = batch_size or DEFAULT_BATCH[family]
    torch.manual_seed(seed)
    generator = torch.Generator().manual_seed(seed + 1)

    x_train = input_stack(ds, ds.train_ids, variant, fmt)
    x_test = input_stack(ds, ds.test_ids, variant, fmt)
    y_train = target_stack(ds, ds.train_ids)

    shift, scale = normalize_inputs(x_train, fmt)
    x_train = (x_train - shift) / scale
    x_test = (x_test - shift) / scale

    out_stats = None
    if family == "lno":
        in_lo, in_span = minmax_stats(x_train)
        x_train = (x_train - in_lo) / in_span
        x_test = (x_test - in_lo) / in_span
        out_lo, out_span = minmax_stats(y_train)
        y_train = (y_train - out_lo) / out_span
        out_stats = (out_lo, out_span)

    xt = torch.from_numpy(np.ascontiguousarray(x_train))
    yt = torch.from_numpy(np.ascontiguousarray(y_train))
    n_rows, n_cols = xt.shape[-2], xt.shape[-1]
    coords = grid_coords(n_rows, n_cols)

    model = build_model(family, in_channels=xt.shape[1])
    lr = LEARNING_RATE[family]
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    if family == "unet":
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(budget, 1))
    elif family == "lno":
        gamma = 0.1 ** (1.0 / max(budget, 1))
        sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=gamma)
    else:
        sched = None

    def forward(batch_x):
        if family == "cnn_deeponet":
            out = model(batch_x, coords)
            return out.reshape(batch_x.shape[0], 2, n_rows, n_cols)
        if family == "unet":
            return model(batch_x)
        return model(batch_x.permute(0, 2, 3, 1))

    model.train()
    t0 = time.perf_counter()
    history = []
    for update, idx in enumerate(batch_stream(xt.shape[0], budget, batch_size,
                                              generator)):
        opt.zero_grad()
        pred = forward(xt[idx])
        if family == "lno":
            loss = relative_l2_loss(pred, yt[idx])
        else:
            loss = torch.mean((pred - yt[idx]) ** 2)
        if not torch.isfinite(loss):
            raise TrainingDivergence(f"non-finite loss at update {update}")
        loss.backward()
        opt.step()
        if sched is not None:
            sched.step()
        if update % log_every == 0 or update == budget - 1:
            value = float(loss.detach())
            history.append((update, value))
            if progress:
                progress(update, value)
    wall = time.perf_counter() - t0

    model.eval()
    preds = []
    with torch.no_grad():
        xe = torch.from_numpy(np.ascontiguousarray(x_test))
        for start in range(0, xe.shape[0], 25):
            preds.append(forward(xe[start:start + 25]))
    pred = torch.cat(preds).numpy()
    if family == "lno":
        out_lo, out_span = out_stats
        pred = pred * out_span + out_lo

    model_id = model_id_for(family, variant, fmt)
    pred_path = ds.predictions_path(model_id)
    write_predictions(model_id, ds.test_ids,
                      [p[0].astype("<f4") for p in pred],
                      [p[1].astype("<f4") for p in pred], pred_path)
    metadata = {
        "model_id": model_id, "family": family, "variant": variant,
        "format": fmt, "budget": budget, "batch_size": batch_size,
        "learning_rate": lr, "seed": seed,
        "parameter_count": parameter_count(model),
        "final_train_loss": history[-1][1] if history else None,
        "wall_seconds": wall,
        "lno_axes": "2-d pole-residue, 8 poles per grid axis" if family == "lno"
                    else None,
    }
    with open(pred_path.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(metadata, fh, indent=2, sort_keys=True)
        fh.write("\n")
    torch.save(model.state_dict(), pred_path.with_suffix(".pt"))
    return metadata
