"""Attack-side gradient machinery.

Two sources of direction toward the target class: white-box gradients
averaged over a substitute ensemble (with momentum accumulation in the
L1-normalized style), and query-based finite-difference estimates from
masked top-k scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .api import Preprocessor, ResizeBilinear, resize_adjoint


@dataclass(frozen=True)
class EnsembleMember:
    """A substitute network plus the resize that maps attack space to it."""

    net: nn.Network
    pre: Preprocessor = field(default_factory=Preprocessor)

    def __post_init__(self):
        for step in self.pre.steps:
            # gradients are pulled back through the member preprocessing,
            # which is only defined here for pure resizes
            if not isinstance(step, ResizeBilinear):
                raise ValueError(
                    "ensemble member preprocessing must be resize-only"
                )


@dataclass(frozen=True)
class EnsembleSpec:
    members: tuple
    weights: tuple | None = None

    def __post_init__(self):
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        if self.weights is not None:
            if len(self.weights) != len(self.members):
                raise ValueError("one weight per member required")
            if any(w <= 0 for w in self.weights):
                raise ValueError("ensemble weights must be positive")

    def normalized_weights(self) -> np.ndarray:
        if self.weights is None:
            k = len(self.members)
            return np.full(k, 1.0 / k)
        w = np.asarray(self.weights, dtype=np.float64)
        return w / w.sum()

    @property
    def size(self) -> int:
        return len(self.members)


def uniform_ensemble(nets, native_sizes=None) -> EnsembleSpec:
    """Convenience: equal-weight ensemble, resizing where a size differs."""
    members = []
    for i, net in enumerate(nets):
        pre = Preprocessor()
        if native_sizes is not None and native_sizes[i] is not None:
            h, w = native_sizes[i]
            pre = Preprocessor.resize_to(h, w)
        members.append(EnsembleMember(net=net, pre=pre))
    return EnsembleSpec(members=tuple(members))


@dataclass
class MomentumState:
    """Accumulated direction g <- mu * g + normalize(grad)."""

    g: np.ndarray
    mu: float = 1.0

    @classmethod
    def zeros(cls, shape, mu: float = 1.0) -> "MomentumState":
        return cls(g=np.zeros(shape), mu=mu)


def member_gradient(member: EnsembleMember, x: np.ndarray, target: int) -> np.ndarray:
    """Descent direction for one member, pulled back to attack space."""
    u = member.pre.apply(x)
    g = -nn.input_gradient(member.net, u, target)
    for step in reversed(member.pre.steps):
        g = resize_adjoint(g, x.shape[1], x.shape[2])
    return g


def ensemble_grad(ens: EnsembleSpec, x: np.ndarray, target: int,
                  state: MomentumState) -> np.ndarray:
    """Momentum-accumulated ascent direction for the target class.

    The weighted member average is normalized by its L1 norm before
    entering the momentum buffer, so step magnitude is controlled
    entirely by the caller's step size. Returns a copy of the updated
    buffer; an all-zero raw gradient contributes nothing.
    """
    x = np.asarray(x, dtype=np.float64)
    raw = np.zeros_like(x)
    for w, member in zip(ens.normalized_weights(), ens.members):
        raw += w * member_gradient(member, x, target)
    norm = np.abs(raw).sum()
    if norm > 0.0:
        raw = raw / norm
    else:
        raw = np.zeros_like(raw)
    state.g = state.mu * state.g + raw
    return state.g.copy()


def subsample(ens: EnsembleSpec, rng) -> EnsembleSpec:
    """Random sub-ensemble: size uniform on 1..K, then members without
    replacement. Relative weights of the chosen members are preserved."""
    k = ens.size
    size = int(rng.integers(1, k + 1))
    idx = np.sort(rng.choice(k, size=size, replace=False))
    members = tuple(ens.members[i] for i in idx)
    weights = None
    if ens.weights is not None:
        weights = tuple(ens.weights[i] for i in idx)
    return EnsembleSpec(members=members, weights=weights)


# ---------------------------------------------------------------------------
# query-based estimation

@dataclass(frozen=True)
class NesConfig:
    """Antithetic finite-difference estimator configuration.

    n_queries probes per estimate (half antithetic pairs), perturbation
    scale sigma. With orthogonal=True each block of directions is
    orthogonalized (QR with norms preserved), which markedly tightens
    the estimate at these small probe counts; directions remain
    Gaussian-distributed in norm.
    """

    n_queries: int = 100
    sigma: float = 1e-3
    antithetic: bool = True
    orthogonal: bool = True

    def __post_init__(self):
        if self.n_queries < 2 or self.n_queries % 2 != 0:
            raise ValueError("n_queries must be even and >= 2")
        if self.sigma <= 0.0:
            raise ValueError("sigma must be positive")
        if not self.antithetic:
            raise ValueError("only antithetic probing is supported")


def _directions(rng, count: int, dim: int, orthogonal: bool) -> np.ndarray:
    raw = rng.standard_normal((count, dim))
    if not orthogonal:
        return raw
    out = []
    done = 0
    while done < count:
        block = raw[done : done + dim]
        norms = np.linalg.norm(block, axis=1)
        q, _ = np.linalg.qr(block.T)  # (dim, b) orthonormal columns
        out.append(q.T * norms[:, None])
        done += block.shape[0]
    return np.vstack(out)


def nes_estimate(apiobj, x: np.ndarray, target: int, cfg: NesConfig, rng) -> np.ndarray:
    """Gradient estimate of the target's masked score at x.

    ghat = (1 / (sigma * n)) * sum_i s_i * delta_i over antithetic pairs
    (delta, -delta), where s_i is the target's top-k score and 0 when
    the target is absent from the response. Budget exhaustion mid-batch
    propagates; the partial sums are discarded.
    """
    x = np.asarray(x, dtype=np.float64)
    pairs = cfg.n_queries // 2
    dirs = _directions(rng, pairs, x.size, cfg.orthogonal)
    acc = np.zeros(x.size)
    for i in range(pairs):
        delta = dirs[i]
        step = (cfg.sigma * delta).reshape(x.shape)
        s_pos = apiobj.query(x + step).score_of(target) or 0.0
        s_neg = apiobj.query(x - step).score_of(target) or 0.0
        acc += (s_pos - s_neg) * delta
    return (acc / (cfg.sigma * cfg.n_queries)).reshape(x.shape)
