"""Post-hoc interpretation: per-image, per-row soft-binary mask optimization.

For each image b and latent row i a mask sigmoid(phi[b, i]) multiplies the
image before encoding; phi minimizes the squared distance between row i of
the masked encoding and target rows drawn from the batch's captured latent
pool (the product-measure pairing, reshuffled every iteration).  The encoder
is frozen throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import tensor as tt
from .models import Model
from .optim import AdamState, adam_step
from .tensor import ShapeError, Tape, Tensor, backward


class InterpretationError(RuntimeError):
    """Raised when mask optimization hits a non-finite loss."""


@dataclass
class MaskParams:
    """Mask logits phi of shape (num_images, S, H, W)."""

    phi: Tensor

    @property
    def masks(self) -> np.ndarray:
        return _sigmoid_np(self.phi.data)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def mask_loss(model: Model, x: np.ndarray, target: np.ndarray, phi_i: Tensor,
              row: int) -> Tensor:
    """Squared distance between a captured row latent and row `row` of the
    encoding of the masked image; differentiable w.r.t. phi_i only."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"expected one (H,W,C) image, got {x.shape}")
    if phi_i.shape != x.shape[:2]:
        raise ShapeError(f"mask logits {phi_i.shape} do not match image plane {x.shape[:2]}")
    if not 0 <= row < model.s:
        raise ShapeError(f"row {row} outside [0, {model.s})")
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (model.d,):
        raise ShapeError(f"target must be a ({model.d},) row, got {target.shape}")
    mask = tt.reshape(tt.sigmoid(phi_i), x.shape[:2] + (1,))
    z = model.encode(tt.mul(mask, tt.constant(x)))
    onehot = np.zeros((model.s, 1))
    onehot[row, 0] = 1.0
    picked = tt.sum(tt.mul(z, tt.constant(onehot)), axis=0)
    diff = tt.sub(picked, tt.constant(target))
    return tt.sum(tt.mul(diff, diff))


def learn_masks(model: Model, images: np.ndarray, iters: int, lr: float = 0.05,
                seed: int = 0, pairs_per_iter: int = 0) -> tuple[MaskParams, list[float]]:
    """Optimize all masks jointly for `iters` Adam steps.

    Per iteration the loss is S * mean over (image, row) pairs of the squared
    distance to a pool target, with the image-target pairing reshuffled each
    iteration.  pairs_per_iter > 0 subsamples that many (image, row) pairs
    per step (0 = all of them).  Returns the mask logits and the loss trace.
    """
    if iters < 1:
        raise InterpretationError(f"need iters >= 1, got {iters}")
    images = np.asarray(images, dtype=np.float64)
    b, h, w, _ = images.shape
    s = model.s
    rng = np.random.default_rng([seed, 8])

    z_pool = model.encode(images).data.copy()
    phi = tt.parameter(np.zeros((b, s, h, w)))
    state = AdamState(lr=lr)
    x_rep = np.repeat(images, s, axis=0)
    row_hot = np.tile(np.eye(s), (b, 1)).reshape(b * s, s, 1)

    frozen = {name: t.requires_grad for name, t in model.params.items()}
    for t in model.params.values():
        t.requires_grad = False
    trace: list[float] = []
    try:
        for it in range(iters):
            targets = z_pool[rng.permutation(b)].reshape(b * s, -1)
            pick = None
            if 0 < pairs_per_iter < b * s:
                pick = rng.choice(b * s, size=pairs_per_iter, replace=False)
            with Tape() as tape:
                logits = tt.reshape(phi, (b * s, h, w))
                if pick is not None:
                    logits = tt.index_rows(logits, pick)
                    x_sub, hot, tgt = x_rep[pick], row_hot[pick], targets[pick]
                else:
                    x_sub, hot, tgt = x_rep, row_hot, targets
                mask = tt.reshape(tt.sigmoid(logits), logits.shape + (1,))
                z = model.encode(tt.mul(mask, tt.constant(x_sub)))
                picked = tt.sum(tt.mul(z, tt.constant(hot)), axis=1)
                diff = tt.sub(picked, tt.constant(tgt))
                loss = tt.mul(tt.mean(tt.sum(tt.mul(diff, diff), axis=1)),
                              tt.constant(float(s)))
            value = loss.item()
            if not np.isfinite(value):
                raise InterpretationError(
                    f"non-finite mask loss at iteration {it}: {value!r}, "
                    f"|phi| max {np.abs(phi.data).max():.4g}")
            trace.append(value)
            backward(loss, tape)
            adam_step(phi, phi.grad, state)
            phi.grad = None
    finally:
        for name, t in model.params.items():
            t.requires_grad = frozen[name]
    return MaskParams(phi=phi), trace


def render_mask_grid(masks: MaskParams, images: np.ndarray, out_path) -> Path:
    """Write a lossless PNG grid: one row per image, columns are the original
    followed by each row's mask over the grayscale image."""
    images = np.asarray(images, dtype=np.float64)
    m = masks.masks
    b, s, h, w = m.shape
    if images.shape[:1] + images.shape[1:3] != (b, h, w):
        raise ShapeError(f"masks {m.shape} do not align with images {images.shape}")
    gray = images.mean(axis=3)
    grid = np.zeros((b * h, (1 + s) * w, 3))
    for i in range(b):
        grid[i * h:(i + 1) * h, 0:w] = images[i]
        for j in range(s):
            tile = gray[i] * m[i, j]
            grid[i * h:(i + 1) * h, (1 + j) * w:(2 + j) * w] = tile[:, :, None]
    out_path = Path(out_path)
    Image.fromarray(np.clip(np.round(grid * 255.0), 0, 255).astype(np.uint8)).save(
        out_path, format="PNG")
    return out_path
