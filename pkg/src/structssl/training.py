"""Pair construction, the NWJ training objective, and the optimization loop.

One training step: draw a batch of anchors, augment each into a positive
view, encode both under the tape, run the MPNN on both latent sets, score
positives directly and negatives through a batch derangement, and take an
Adam step on the negated bound.  Three objective variants: Z (latent critic
only), A (structure critic only), ZA (both; the bound is the exact sum of
the two parts).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as tt
from .config import TrainConfig, VARIANTS
from .data import Dataset
from .models import Model, build_model, gumbel_sample
from .optim import Adam
from .serialize import save_weights
from .tensor import Tape, Tensor, backward

EXP_CLAMP = 40.0


class TrainingError(RuntimeError):
    """Raised when training hits a non-finite loss or an invalid setup."""


@dataclass(frozen=True)
class AugmentParams:
    """Crop/flip/jitter strengths; the all-off setting is a bit-exact no-op."""

    crop_scale: tuple[float, float] = (0.4, 1.0)
    flip_p: float = 0.5
    jitter: float = 0.35


IDENTITY_AUGMENT = AugmentParams(crop_scale=(1.0, 1.0), flip_p=0.0, jitter=0.0)


def augment(x: np.ndarray, rng: np.random.Generator,
            params: AugmentParams = AugmentParams()) -> np.ndarray:
    """Random crop-and-resize, horizontal flip, per-channel jitter.

    Output has the input's shape with values clamped to [0, 1].
    """
    h, w, c = x.shape
    scale = rng.uniform(params.crop_scale[0], params.crop_scale[1])
    ch = max(1, int(round(h * scale)))
    cw = max(1, int(round(w * scale)))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    crop = x[top:top + ch, left:left + cw]
    rows = np.floor(np.arange(h) * (ch / h)).astype(np.intp)
    cols = np.floor(np.arange(w) * (cw / w)).astype(np.intp)
    out = crop[np.ix_(rows, cols)]
    if rng.random() < params.flip_p:
        out = out[:, ::-1]
    contrast = rng.uniform(1.0 - params.jitter, 1.0 + params.jitter, size=c)
    brightness = rng.uniform(-params.jitter, params.jitter, size=c)
    out = out * contrast + brightness
    return np.clip(out, 0.0, 1.0)


def augment_batch(xs: np.ndarray, rng: np.random.Generator,
                  params: AugmentParams = AugmentParams()) -> np.ndarray:
    return np.stack([augment(x, rng, params) for x in xs])


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """A uniform full-cycle permutation: out[i] != i for every i."""
    if n < 2:
        raise TrainingError("negatives need a batch of at least 2 images")
    sigma = rng.permutation(n)
    out = np.empty(n, dtype=np.intp)
    out[sigma] = sigma[np.roll(np.arange(n), -1)]
    return out


@dataclass
class PairBatch:
    """Anchors with positive views and derangement negatives, plus the
    latents/structures computed under the current parameters."""

    anchors: np.ndarray
    positives: np.ndarray
    neg_index: np.ndarray
    z: Tensor
    z_pos: Tensor
    z_neg: Tensor
    h: Tensor | None = None
    a_pos: Tensor | None = None
    a_neg: Tensor | None = None


def build_pairs(model: Model, batch: np.ndarray, rng: np.random.Generator,
                params: AugmentParams = AugmentParams(),
                with_structures: bool = True) -> PairBatch:
    """Augment, encode, and wire up positives and derangement negatives.

    Negative latents reuse the positive views' tensors through index
    selection, so each image is encoded exactly twice per step.  The two
    structure samples (anchor side and view side) draw independent Gumbel
    noise; negatives share the view side's draw by construction.
    """
    b = batch.shape[0]
    if b < 2:
        raise TrainingError("negatives need a batch of at least 2 images")
    views = augment_batch(batch, rng, params)
    neg = derangement(b, rng)
    # one stacked pass: rows 0..b-1 are anchors, rows b..2b-1 are views
    z_all = model.encode(np.concatenate([batch, views]))
    anchor_rows = np.arange(b)
    z = tt.index_rows(z_all, anchor_rows)
    z_pos = tt.index_rows(z_all, b + anchor_rows)
    z_neg = tt.index_rows(z_all, b + neg)
    pb = PairBatch(anchors=batch, positives=views, neg_index=neg,
                   z=z, z_pos=z_pos, z_neg=z_neg)
    if with_structures:
        gumbel = gumbel_sample((2 * b, model.s, model.s, model.k), rng)
        a_all, _ = model.relations(z_all, gumbel=gumbel)
        pb.h = tt.index_rows(a_all, anchor_rows)
        pb.a_pos = tt.index_rows(a_all, b + anchor_rows)
        pb.a_neg = tt.index_rows(a_all, b + neg)
    return pb


@dataclass
class ObjectiveStats:
    bound: float
    z_bound: float | None
    a_bound: float | None
    clamped: int


def _bound_part(t_pos: Tensor, t_neg: Tensor) -> tuple[Tensor, int]:
    """mean T on positives minus mean e^(T-1) on negatives, e^T clamped."""
    clamped = int(np.count_nonzero(t_neg.data >= EXP_CLAMP))
    neg = tt.mean(tt.exp(tt.sub(tt.clamp_max(t_neg, EXP_CLAMP), tt.constant(1.0))))
    return tt.sub(tt.mean(t_pos), neg), clamped


def nwj_objective(model: Model, pb: PairBatch,
                  variant: str = "ZA") -> tuple[Tensor, ObjectiveStats]:
    """Negated NWJ bound for one PairBatch.

    The ZA bound is literally the Z part plus the A part, so variant values
    are additive to the last bit on a shared PairBatch.
    """
    if variant not in VARIANTS:
        raise TrainingError(f"variant must be one of {'/'.join(VARIANTS)}, got '{variant}'")
    z_part = a_part = None
    z_val = a_val = None
    clamped = 0
    if variant in ("Z", "ZA"):
        z_part, n = _bound_part(model.critic_z_latents(pb.z, pb.z_pos),
                                model.critic_z_latents(pb.z, pb.z_neg))
        z_val = z_part.item()
        clamped += n
    if variant in ("A", "ZA"):
        if pb.h is None:
            raise TrainingError("PairBatch was built without structures; "
                                "variant A/ZA needs them")
        a_part, n = _bound_part(model.critic_a_structures(pb.h, pb.a_pos),
                                model.critic_a_structures(pb.h, pb.a_neg))
        a_val = a_part.item()
        clamped += n
    bound = z_part if a_part is None else (a_part if z_part is None
                                           else tt.add(z_part, a_part))
    loss = -bound
    return loss, ObjectiveStats(bound=bound.item(), z_bound=z_val,
                                a_bound=a_val, clamped=clamped)


@dataclass
class MetricsRow:
    iteration: int
    bound: float
    loss: float
    probe_acc: float | None
    wallclock_s: float


@dataclass
class TrainResult:
    model: Model
    metrics: list[MetricsRow]
    checkpoint_path: Path | None
    clamped_total: int


def write_metrics_csv(path, rows: list[MetricsRow]) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["iteration", "bound", "loss", "probe_acc", "wallclock_s"])
        for r in rows:
            probe = "" if r.probe_acc is None else repr(r.probe_acc)
            out.writerow([r.iteration, repr(r.bound), repr(r.loss), probe,
                          repr(r.wallclock_s)])


def _param_norms(model: Model) -> str:
    by_group = {}
    for name, t in model.params.items():
        g = name.split(".", 1)[0]
        by_group[g] = by_group.get(g, 0.0) + float((t.data ** 2).sum())
    return ", ".join(f"{g}={np.sqrt(v):.4g}" for g, v in sorted(by_group.items()))


def train(cfg: TrainConfig, dataset: Dataset, out_dir=None, model: Model | None = None,
          augment_params: AugmentParams = AugmentParams(),
          probe_hook=None) -> TrainResult:
    """Run the SSL optimization loop.

    Epoch semantics: each anchor appears augmentations-per-image times per
    epoch (a shuffled multiset of indices), so each anchor contributes that
    many positive pairs per epoch pass.  Stops early after cfg.max_iters
    steps when that cap is nonzero.  probe_hook, when given, is called as
    probe_hook(model, iteration) at every probe_interval-th iteration and
    returns an accuracy to log.
    """
    if len(dataset) == 0:
        raise TrainingError("dataset is empty")
    if model is None:
        model = build_model(cfg.seed, s=cfg.s, d=cfg.d, k=cfg.k,
                            in_channels=dataset.images.shape[3])
    rng = np.random.default_rng([cfg.seed, 2])
    opt = Adam([model.params[n] for n in model.param_names()], lr=cfg.learning_rate)
    with_structures = cfg.variant != "Z"
    rows: list[MetricsRow] = []
    clamped_total = 0
    start = time.perf_counter()
    iteration = 0
    done = False
    for _ in range(cfg.epochs):
        if done:
            break
        order = rng.permutation(np.repeat(np.arange(len(dataset)),
                                          cfg.augmentations_per_image))
        for lo in range(0, len(order) - cfg.batch_size + 1, cfg.batch_size):
            batch = dataset.images[order[lo:lo + cfg.batch_size]]
            with Tape() as tape:
                pb = build_pairs(model, batch, rng, augment_params,
                                 with_structures=with_structures)
                loss, stats = nwj_objective(model, pb, cfg.variant)
            if not np.isfinite(loss.data):
                raise TrainingError(
                    f"non-finite loss at iteration {iteration}: loss={loss.data!r}, "
                    f"bound={stats.bound!r}, param norms: {_param_norms(model)}")
            backward(loss, tape)
            opt.step()
            opt.zero_grad()
            iteration += 1
            clamped_total += stats.clamped
            probe_acc = None
            if probe_hook is not None and cfg.probe_interval > 0 \
                    and iteration % cfg.probe_interval == 0:
                probe_acc = probe_hook(model, iteration)
            wallclock = 0.0 if cfg.deterministic else time.perf_counter() - start
            rows.append(MetricsRow(iteration=iteration, bound=stats.bound,
                                   loss=loss.item(), probe_acc=probe_acc,
                                   wallclock_s=wallclock))
            if cfg.max_iters and iteration >= cfg.max_iters:
                done = True
                break
    checkpoint_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_path = out_dir / "checkpoint.bin"
        save_weights(checkpoint_path, model.state_arrays())
        write_metrics_csv(out_dir / "metrics.csv", rows)
    return TrainResult(model=model, metrics=rows, checkpoint_path=checkpoint_path,
                       clamped_total=clamped_total)
