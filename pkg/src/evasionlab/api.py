"""Simulated prediction APIs: preprocessing, truncated responses, query budgets.

An API is post(model(pre(x))): an optional resize/clip pipeline in front of
a local network, and a response shaper behind it that hides all but the
top-k classes (or everything but the argmax label). Every query passes
through a ledger that enforces a hard budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import nn


class BudgetExceededError(RuntimeError):
    """Query refused: the ledger already spent its whole budget."""

    def __init__(self, used: int):
        super().__init__(f"query budget exhausted after {used} queries")
        self.used = used


@dataclass
class QueryLedger:
    """Monotone query counter with an optional hard cap."""

    budget: int | None = None
    used: int = 0

    def charge(self) -> None:
        if self.budget is not None and self.used >= self.budget:
            raise BudgetExceededError(self.used)
        self.used += 1

    @property
    def remaining(self) -> int | None:
        if self.budget is None:
            return None
        return self.budget - self.used


# ---------------------------------------------------------------------------
# bilinear resize with half-pixel centers

@lru_cache(maxsize=None)
def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) interpolation weights."""
    m = np.zeros((n_out, n_in))
    for o in range(n_out):
        src = (o + 0.5) * n_in / n_out - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        t = src - i0
        m[o, i0] += 1.0 - t
        m[o, i1] += t
    m.setflags(write=False)
    return m


def resize_bilinear(x: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize (c, h, w) -> (c, height, width); identity sizes copy exactly."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError("expected a (c, h, w) tensor")
    c, h, w = x.shape
    if (h, w) == (height, width):
        return x.copy()
    rh = _resize_matrix(h, height)
    rw = _resize_matrix(w, width)
    return np.einsum("oi,cij,pj->cop", rh, x, rw, optimize=True)


def resize_adjoint(g: np.ndarray, height: int, width: int) -> np.ndarray:
    """Pull a gradient on the resized tensor back to a (c, height, width) one.

    Adjoint of resize_bilinear: transposed weight matrices on both axes.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 3:
        raise ValueError("expected a (c, h, w) tensor")
    c, h2, w2 = g.shape
    if (h2, w2) == (height, width):
        return g.copy()
    rh = _resize_matrix(height, h2)
    rw = _resize_matrix(width, w2)
    return np.einsum("oi,cop,pj->cij", rh, g, rw, optimize=True)


# ---------------------------------------------------------------------------
# preprocessing steps

@dataclass(frozen=True)
class ResizeBilinear:
    height: int
    width: int

    def apply(self, x: np.ndarray) -> np.ndarray:
        return resize_bilinear(x, self.height, self.width)


@dataclass(frozen=True)
class ClipUnit:
    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, 0.0, 1.0)


@dataclass(frozen=True)
class Preprocessor:
    """Ordered pipeline of resize/clip steps; empty tuple is the identity."""

    steps: tuple = ()

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        for step in self.steps:
            x = step.apply(x)
        return x

    @classmethod
    def resize_to(cls, height: int, width: int) -> "Preprocessor":
        return cls(steps=(ResizeBilinear(height, width),))


# ---------------------------------------------------------------------------
# responses

@dataclass(frozen=True)
class FullResponse:
    """All class probabilities, untruncated."""

    probs: np.ndarray

    def top1(self) -> int:
        return int(np.argmax(self.probs))

    def contains(self, label: int) -> bool:
        return True

    def score_of(self, label: int) -> float:
        return float(self.probs[label])


@dataclass(frozen=True)
class LabelResponse:
    """Argmax label only; carries no scores."""

    label: int

    def top1(self) -> int:
        return self.label

    def contains(self, label: int) -> bool:
        return label == self.label

    def score_of(self, label: int):
        return None


@dataclass(frozen=True)
class TopKResponse:
    """The k best (label, score) pairs, best first.

    score_of is the masked read used by the attacks: absent labels
    score 0 rather than raising, because the caller cannot distinguish
    "low" from "hidden".
    """

    entries: tuple  # ((label, score), ...) sorted by descending score

    def top1(self) -> int:
        return self.entries[0][0]

    def contains(self, label: int) -> bool:
        return any(lbl == label for lbl, _ in self.entries)

    def score_of(self, label: int) -> float:
        for lbl, score in self.entries:
            if lbl == label:
                return float(score)
        return 0.0


@dataclass(frozen=True)
class Postprocessor:
    """Response shaper: 'identity', 'label_only', or 'top_k' with k >= 1."""

    kind: str = "identity"
    k: int | None = None

    def __post_init__(self):
        if self.kind not in ("identity", "label_only", "top_k"):
            raise ValueError(f"unknown postprocessor kind {self.kind!r}")
        if self.kind == "top_k" and (self.k is None or self.k < 1):
            raise ValueError("top_k postprocessor needs k >= 1")


def top_k_entries(probs: np.ndarray, k: int) -> tuple:
    """Best k (label, score) pairs; ties broken toward the lower label."""
    probs = np.asarray(probs)
    if k > probs.shape[0]:
        raise ValueError(f"k={k} exceeds {probs.shape[0]} classes")
    # stable sort on (-score, label): equal scores keep index order
    order = np.lexsort((np.arange(probs.shape[0]), -probs))
    return tuple((int(i), float(probs[i])) for i in order[:k])


def postprocess(probs: np.ndarray, post: Postprocessor):
    if post.kind == "identity":
        return FullResponse(probs=np.asarray(probs, dtype=np.float64).copy())
    if post.kind == "label_only":
        return LabelResponse(label=top_k_entries(probs, 1)[0][0])
    return TopKResponse(entries=top_k_entries(probs, post.k))


# ---------------------------------------------------------------------------

@dataclass
class PredictionApi:
    """post(model(pre(x))) behind a query ledger.

    The input tensor is never mutated; every call charges the ledger
    exactly once (a refused call charges nothing).
    """

    model: nn.Network
    pre: Preprocessor = field(default_factory=Preprocessor)
    post: Postprocessor = field(default_factory=Postprocessor)
    ledger: QueryLedger = field(default_factory=QueryLedger)

    def query(self, x: np.ndarray):
        self.ledger.charge()
        probs = nn.forward(self.model, self.pre.apply(x))
        return postprocess(probs, self.post)

    def peek_label(self, x: np.ndarray) -> int:
        """Clean top-1 without charging the ledger; setup/eval use only."""
        return int(np.argmax(nn.forward(self.model, self.pre.apply(x))))
