"""Model components: Conv-4 encoder, MPNN relational head, and the two critics.

All forward passes are built from tensor-module ops so gradients flow to every
parameter.  Parameters live in flat name->Tensor dicts with reserved prefixes
`theta.` (encoder), `eta.` (MPNN), `delta.` (latent critic MLP), `w.`
(bilinear structure critic), which is also the checkpoint naming scheme.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .tensor import ShapeError, Tensor


def _uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    # relu-gain (He) uniform; keeps activation scale stable through the conv stack
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def _linear_params(rng, prefix: str, n_in: int, n_out: int) -> dict[str, Tensor]:
    return {
        f"{prefix}.w": tt.parameter(_uniform_init(rng, (n_in, n_out), n_in)),
        f"{prefix}.b": tt.parameter(np.zeros(n_out)),
    }


def _linear(params: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    return tt.add(tt.matmul(x, params[f"{prefix}.w"]), params[f"{prefix}.b"])


def _mlp(params: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    """One-hidden-layer MLP: linear, relu, linear."""
    h = tt.relu(_linear(params, f"{prefix}.l1", x))
    return _linear(params, f"{prefix}.l2", h)


def _mlp_params(rng, prefix: str, n_in: int, hidden: int, n_out: int) -> dict[str, Tensor]:
    p = {}
    p.update(_linear_params(rng, f"{prefix}.l1", n_in, hidden))
    p.update(_linear_params(rng, f"{prefix}.l2", hidden, n_out))
    return p


def init_encoder(rng: np.random.Generator, in_channels: int = 3, s: int = 8, d: int = 8,
                 widths: tuple[int, ...] = (16, 32, 48, 96)) -> dict[str, Tensor]:
    """Conv-4 parameters: four 3x3 conv blocks then a linear projection to S*D."""
    params: dict[str, Tensor] = {}
    c_in = in_channels
    for i, c_out in enumerate(widths, start=1):
        params[f"theta.block{i}.w"] = tt.parameter(
            _uniform_init(rng, (3, 3, c_in, c_out), 9 * c_in))
        params[f"theta.block{i}.b"] = tt.parameter(np.zeros(c_out))
        c_in = c_out
    params.update(_linear_params(rng, "theta.proj", c_in, s * d))
    return params


def init_mpnn(rng: np.random.Generator, d: int = 8, k: int = 2,
              hidden: int = 64) -> dict[str, Tensor]:
    """MPNN parameters: node embedding, two edge MLPs, one vertex MLP."""
    params: dict[str, Tensor] = {}
    params.update(_mlp_params(rng, "eta.emb", d, hidden, hidden))
    params.update(_mlp_params(rng, "eta.e1", 2 * hidden, hidden, hidden))
    params.update(_mlp_params(rng, "eta.v1", hidden, hidden, hidden))
    params.update(_mlp_params(rng, "eta.e2", 3 * hidden, hidden, k))
    return params


def init_critic_z(rng: np.random.Generator, s: int = 8, d: int = 8,
                  hidden: int = 256) -> dict[str, Tensor]:
    """MLP that scores a concatenated pair of flattened latents.

    The output layer starts at zero so every score begins at 0 and the
    exp(T - 1) term opens at exp(-1); a randomly scaled head shocks the
    optimizer state in the first iterations.
    """
    params = _mlp_params(rng, "delta", 2 * s * d, hidden, 1)
    params["delta.l2.w"].data[:] = 0.0
    return params


def init_critic_a(rng: np.random.Generator, s: int = 8, k: int = 2) -> dict[str, Tensor]:
    """Bilinear weights, one S^2 x S^2 slice per relation channel.

    Zero start for the same reason as the latent critic: scores begin at 0,
    and the gradient of the bilinear form is nonzero there.
    """
    n = s * s
    del rng
    return {f"w.{i}": tt.parameter(np.zeros((n, n))) for i in range(k)}


def gumbel_sample(shape: tuple[int, ...], seed) -> np.ndarray:
    """Standard Gumbel noise g = -log(-log u); u clamped inside (0, 1).

    ``seed`` is an integer or an existing numpy Generator.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.random(shape)
    u = np.clip(u, np.finfo(np.float64).tiny, np.nextafter(1.0, 0.0))
    return -np.log(-np.log(u))


@dataclass
class Model:
    """Parameter bundle plus the shape/temperature settings the ops need."""

    params: dict[str, Tensor]
    s: int = 8
    d: int = 8
    k: int = 2
    tau: float = 0.5
    in_channels: int = 3
    off_diag: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mask = 1.0 - np.eye(self.s)
        self.off_diag = mask.reshape(1, self.s, self.s, 1)

    def group(self, prefix: str) -> dict[str, Tensor]:
        return {name: t for name, t in self.params.items() if name.startswith(prefix)}

    def param_names(self) -> list[str]:
        return sorted(self.params)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            missing = sorted(set(self.params) - set(arrays))
            extra = sorted(set(arrays) - set(self.params))
            raise ShapeError(f"parameter name mismatch: missing {missing}, unexpected {extra}")
        for name, value in arrays.items():
            if value.shape != self.params[name].shape:
                raise ShapeError(f"'{name}' has shape {value.shape}, "
                                 f"expected {self.params[name].shape}")
            self.params[name].data = np.array(value, dtype=np.float64)

    # --- forward passes ---

    def encode(self, x) -> Tensor:
        """Conv-4 encoder: (B,H,W,C) images to (B,S,D) latents.

        A single (H,W,C) image returns (S,D).
        """
        if not isinstance(x, Tensor):
            x = tt.constant(np.asarray(x, dtype=np.float64))
        single = x.ndim == 3
        if single:
            x = tt.reshape(x, (1,) + x.shape)
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeError(f"expected (B,H,W,{self.in_channels}) images, got {x.shape}")
        h = x
        i = 1
        while f"theta.block{i}.w" in self.params:
            h = tt.conv2d(h, self.params[f"theta.block{i}.w"])
            h = tt.add(h, self.params[f"theta.block{i}.b"])
            h = tt.avgpool2(tt.relu(h))
            i += 1
        pooled = tt.mean(h, axis=(1, 2))
        z = _linear(self.params, "theta.proj", pooled)
        if single:
            return tt.reshape(z, (self.s, self.d))
        return tt.reshape(z, (z.shape[0], self.s, self.d))

    def relations(self, z: Tensor, gumbel: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        """MPNN over the complete graph of the S latent rows.

        Returns the relaxed structure tensor (B,S,S,K) and the raw edge
        logits.  ``gumbel`` is an optional pre-drawn (B,S,S,K) noise tensor;
        None means no noise.  Rows of the structure tensor are softmax
        distributions over relation types with the diagonal forced to zero.
        """
        single = z.ndim == 2
        if single:
            z = tt.reshape(z, (1,) + z.shape)
        b, s, d = z.shape
        if s != self.s or d != self.d:
            raise ShapeError(f"latents must be (B,{self.s},{self.d}), got {z.shape}")
        hidden = self.params["eta.emb.l2.b"].shape[0]

        h1 = _mlp(self.params, "eta.emb", tt.reshape(z, (b * s, d)))
        e1_pre = self._pair_preact("eta.e1", h1, b, s, hidden)
        e1 = tt.reshape(_linear(self.params, "eta.e1.l2",
                                tt.reshape(tt.relu(e1_pre), (b * s * s, hidden))),
                        (b, s, s, hidden))

        agg = tt.sum(tt.mul(e1, tt.constant(self.off_diag)), axis=2)
        h2 = _mlp(self.params, "eta.v1", tt.reshape(agg, (b * s, hidden)))
        e2_pre = self._pair_preact("eta.e2", h2, b, s, hidden,
                                   edge=tt.reshape(e1, (b * s * s, hidden)))
        logits = tt.reshape(_linear(self.params, "eta.e2.l2",
                                    tt.reshape(tt.relu(e2_pre), (b * s * s, hidden))),
                            (b, s, s, self.k))

        perturbed = logits if gumbel is None else tt.add(logits, tt.constant(gumbel))
        # push diagonal logits far down so softmax over k leaves exact zeros there
        diag_drop = tt.constant((self.off_diag - 1.0) * 1e9)
        scaled = tt.mul(tt.add(perturbed, diag_drop), tt.constant(1.0 / self.tau))
        a = tt.mul(tt.softmax(scaled, axis=3), tt.constant(self.off_diag))
        if single:
            return tt.reshape(a, (s, s, self.k)), tt.reshape(logits, (s, s, self.k))
        return a, logits

    def _pair_preact(self, prefix: str, nodes: Tensor, b: int, s: int,
                     hidden: int, edge: Tensor | None = None) -> Tensor:
        """First edge-MLP layer, evaluated without materializing pair concats.

        The layer's input is [node_i, node_j] (plus the previous edge feature
        when given), so its weight rows split into per-part blocks and the
        sum broadcasts over the pair grid.  ``nodes`` is (b*s, hidden).
        """
        w = self.params[f"{prefix}.l1.w"]
        n_in = w.shape[0]
        rows = np.arange(n_in)
        w_i = tt.index_rows(w, rows[:hidden])
        w_j = tt.index_rows(w, rows[hidden:2 * hidden])
        u = tt.reshape(tt.matmul(nodes, w_i), (b, s, 1, w.shape[1]))
        v = tt.reshape(tt.matmul(nodes, w_j), (b, 1, s, w.shape[1]))
        pre = tt.add(u, v)
        if edge is not None:
            w_e = tt.index_rows(w, rows[2 * hidden:])
            pre = tt.add(pre, tt.reshape(tt.matmul(edge, w_e), (b, s, s, w.shape[1])))
        return tt.add(pre, self.params[f"{prefix}.l1.b"])

    def critic_z_latents(self, z_anchor: Tensor, z_other: Tensor) -> Tensor:
        """Score (B,) of latent pairs through the f_delta MLP."""
        b = z_anchor.shape[0]
        flat = tt.concat([tt.reshape(z_anchor, (b, self.s * self.d)),
                          tt.reshape(z_other, (b, self.s * self.d))], axis=1)
        return tt.reshape(_mlp(self.params, "delta", flat), (b,))

    def critic_a_structures(self, h_anchor: Tensor, a_other: Tensor) -> Tensor:
        """Bilinear score (B,): sum_k flat(h_k)^T W_k flat(a_k)."""
        b = h_anchor.shape[0]
        n = self.s * self.s
        total = None
        for k in range(self.k):
            onehot = np.zeros((1, 1, 1, self.k))
            onehot[..., k] = 1.0
            sel = tt.constant(onehot)
            h_k = tt.reshape(tt.sum(tt.mul(h_anchor, sel), axis=3), (b, n))
            a_k = tt.reshape(tt.sum(tt.mul(a_other, sel), axis=3), (b, n))
            term = tt.sum(tt.mul(tt.matmul(h_k, self.params[f"w.{k}"]), a_k), axis=1)
            total = term if total is None else tt.add(total, term)
        return total

    def critic_z(self, x, z: Tensor) -> Tensor:
        """T(x, z) = f_delta([flatten(encode(x)), flatten(z)])."""
        z_x = self.encode(x)
        if z_x.ndim == 2:
            z_x = tt.reshape(z_x, (1,) + z_x.shape)
        if z.ndim == 2:
            z = tt.reshape(z, (1,) + z.shape)
        return self.critic_z_latents(z_x, z)

    def critic_a(self, x, a: Tensor, gumbel: np.ndarray | None = None) -> Tensor:
        """T(x, a) with the anchor structure recomputed from x via the MPNN."""
        z_x = self.encode(x)
        if z_x.ndim == 2:
            z_x = tt.reshape(z_x, (1,) + z_x.shape)
        h, _ = self.relations(z_x, gumbel=gumbel)
        if a.ndim == 3:
            a = tt.reshape(a, (1,) + a.shape)
        return self.critic_a_structures(h, a)


def hard_structure(a: np.ndarray) -> np.ndarray:
    """Argmax one-hot version of a relaxed structure tensor; diagonal stays zero."""
    a = np.asarray(a)
    s = a.shape[-3]
    hard = np.zeros_like(a)
    top = np.argmax(a, axis=-1)
    np.put_along_axis(hard, top[..., None], 1.0, axis=-1)
    eye = np.eye(s, dtype=bool)
    hard[..., eye, :] = 0.0
    return hard


def build_model(seed: int, s: int = 8, d: int = 8, k: int = 2, tau: float = 0.5,
                in_channels: int = 3, widths: tuple[int, ...] = (16, 32, 48, 96),
                mpnn_hidden: int = 64, critic_hidden: int = 256) -> Model:
    """Fresh model with all four parameter groups, initialized from one seed."""
    rng = np.random.default_rng([seed, 1])
    params: dict[str, Tensor] = {}
    params.update(init_encoder(rng, in_channels=in_channels, s=s, d=d, widths=widths))
    params.update(init_mpnn(rng, d=d, k=k, hidden=mpnn_hidden))
    params.update(init_critic_z(rng, s=s, d=d, hidden=critic_hidden))
    params.update(init_critic_a(rng, s=s, k=k))
    return Model(params=params, s=s, d=d, k=k, tau=tau, in_channels=in_channels)
