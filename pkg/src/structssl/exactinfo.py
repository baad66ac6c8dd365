"""Exact information quantities on small discrete joints and Gaussian pairs.

Everything here is computed by direct summation (or closed form for the
Gaussian case) in nats, with the convention 0*log(0/q) = 0.  Cardinalities
are capped at 16 per axis: these are ground-truth oracles, not estimators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_CARD = 16
_NORM_TOL = 1e-12


class JointError(ValueError):
    """Probability table violates a DiscreteJoint invariant."""


@dataclass(frozen=True)
class DiscreteJoint:
    """Exact finite probability table over (X, Z, A)."""

    table: np.ndarray

    def __post_init__(self):
        table = np.asarray(self.table, dtype=np.float64)
        if table.ndim != 3:
            raise JointError(f"joint table must be 3-D, got shape {table.shape}")
        if any(c < 1 or c > MAX_CARD for c in table.shape):
            raise JointError(f"cardinalities must be in [1, {MAX_CARD}], got {table.shape}")
        if np.any(table < 0):
            raise JointError("joint table has negative entries")
        total = table.sum()
        if abs(total - 1.0) > _NORM_TOL:
            raise JointError(f"joint table sums to {total!r}, not 1")
        object.__setattr__(self, "table", table)

    @property
    def cards(self) -> tuple[int, int, int]:
        return self.table.shape

    def marginal_x(self) -> np.ndarray:
        return self.table.sum(axis=(1, 2))

    def marginal_z(self) -> np.ndarray:
        return self.table.sum(axis=(0, 2))

    def marginal_a(self) -> np.ndarray:
        return self.table.sum(axis=(0, 1))

    def pair_marginal(self, pair: str) -> np.ndarray:
        """Marginal table of one pair; ``pair`` is XZ, XA, or ZA."""
        axis = {"XZ": 2, "XA": 1, "ZA": 0}.get(pair.upper())
        if axis is None:
            raise JointError(f"unknown pair '{pair}' (expected XZ, XA, or ZA)")
        return self.table.sum(axis=axis)


def random_joint(cards: tuple[int, int, int], rng: np.random.Generator) -> DiscreteJoint:
    """A dense random joint: i.i.d. uniform weights, normalized."""
    table = rng.random(cards)
    return DiscreteJoint(table / table.sum())


def _kl_vs_product(joint: np.ndarray, *marginals: np.ndarray) -> float:
    product = marginals[0]
    for m in marginals[1:]:
        product = np.multiply.outer(product, m)
    support = joint > 0
    if np.any(support & (product <= 0)):
        raise JointError("marginal product is zero on the joint's support")
    terms = np.zeros_like(joint)
    terms[support] = joint[support] * (np.log(joint[support]) - np.log(product[support]))
    return float(terms.sum())


def total_correlation(j: DiscreteJoint) -> float:
    """KL between the joint and the product of its three marginals, in nats."""
    return _kl_vs_product(j.table, j.marginal_x(), j.marginal_z(), j.marginal_a())


def pairwise_mi(j: DiscreteJoint, pair: str) -> float:
    """Mutual information of one marginal pair, in nats."""
    table = j.pair_marginal(pair)
    return _kl_vs_product(table, table.sum(axis=1), table.sum(axis=0))


def make_cond_independent(p_x: np.ndarray, p_z_given_x: np.ndarray,
                          p_a_given_x: np.ndarray) -> DiscreteJoint:
    """Build p(x,z,a) = p(x) p(z|x) p(a|x); conditionals are (|X|, .) tables."""
    p_x = np.asarray(p_x, dtype=np.float64)
    p_z_given_x = np.asarray(p_z_given_x, dtype=np.float64)
    p_a_given_x = np.asarray(p_a_given_x, dtype=np.float64)
    if abs(p_x.sum() - 1.0) > 1e-10:
        raise JointError(f"p(x) sums to {p_x.sum()!r}, not 1")
    for name, cond in (("p(z|x)", p_z_given_x), ("p(a|x)", p_a_given_x)):
        if cond.ndim != 2 or cond.shape[0] != p_x.shape[0]:
            raise JointError(f"{name} must have one row per x value")
        rows = cond.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-10):
            worst = int(np.argmax(np.abs(rows - 1.0)))
            raise JointError(f"{name} row {worst} sums to {rows[worst]!r}, not 1")
    table = p_x[:, None, None] * p_z_given_x[:, :, None] * p_a_given_x[:, None, :]
    return DiscreteJoint(table)


def decomposition_residual(j: DiscreteJoint) -> float:
    """|TC(X,Z,A) - I(X,Z) - I(X,A)|; zero iff Z and A are independent given X."""
    return abs(total_correlation(j) - pairwise_mi(j, "XZ") - pairwise_mi(j, "XA"))


def nwj_exact(j: DiscreteJoint, pair: str, critic: np.ndarray) -> float:
    """Exact NWJ bound value E_p{T} - E_{pq}{e^(T-1)} for a critic table.

    e^(T-1) is the (1/e)e^T weight of the bound written overflow-safely; the
    two forms are identical.  ``critic`` entries may be -inf (they contribute
    nothing where the pair marginal is zero).
    """
    critic = np.asarray(critic, dtype=np.float64)
    p_pair = j.pair_marginal(pair)
    if critic.shape != p_pair.shape:
        raise JointError(f"critic shape {critic.shape} != pair table shape {p_pair.shape}")
    if np.any(np.isnan(critic)) or np.any(critic == np.inf):
        raise JointError("critic table must be free of NaN/+inf")
    product = np.multiply.outer(p_pair.sum(axis=1), p_pair.sum(axis=0))
    support = p_pair > 0
    joint_term = float((p_pair[support] * critic[support]).sum())
    with np.errstate(over="raise"):
        try:
            weights = np.exp(critic - 1.0)
        except FloatingPointError:
            raise OverflowError("e^(T-1) overflows float64 for this critic") from None
    prod_term = float((product * weights).sum())
    return joint_term - prod_term


def optimal_critic(j: DiscreteJoint, pair: str) -> np.ndarray:
    """The critic 1 + log(p_pair / (p p)) that makes the NWJ bound tight.

    Entries are -inf where the pair marginal is zero.
    """
    p_pair = j.pair_marginal(pair)
    product = np.multiply.outer(p_pair.sum(axis=1), p_pair.sum(axis=0))
    critic = np.full_like(p_pair, -np.inf)
    support = p_pair > 0
    critic[support] = 1.0 + np.log(p_pair[support]) - np.log(product[support])
    return critic


@dataclass(frozen=True)
class GaussianPairSpec:
    """d independent standard-normal pairs, each with correlation rho."""

    d: int = 1
    rho: float = 0.0

    def __post_init__(self):
        if self.d < 1:
            raise JointError(f"dimension must be >= 1, got {self.d}")
        if not abs(self.rho) < 1.0:
            raise JointError(f"|rho| must be < 1, got {self.rho}")


def gaussian_mi(spec: GaussianPairSpec) -> float:
    """Closed-form MI of the correlated Gaussian pair: -(d/2) ln(1 - rho^2)."""
    return -0.5 * spec.d * np.log1p(-spec.rho * spec.rho)


def sample_gaussian_pair(spec: GaussianPairSpec, n: int,
                         rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """n joint samples (x, z), each of shape (n, d)."""
    x = rng.standard_normal((n, spec.d))
    noise = rng.standard_normal((n, spec.d))
    z = spec.rho * x + np.sqrt(1.0 - spec.rho * spec.rho) * noise
    return x, z


def sample_joint(j: DiscreteJoint, n: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """n i.i.d. samples of (x, z, a) index triples from the joint."""
    flat = j.table.reshape(-1)
    cells = rng.choice(flat.size, size=n, p=flat)
    return np.unravel_index(cells, j.table.shape)
