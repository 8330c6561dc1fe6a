"""Result analysis: pareto frontiers, dominance regions, plane scans.

The frontier answers "which method solved each setting cheapest"; the
dominance fit turns those per-setting winners into query-count regions
by multinomial logistic regression on log10(q*); the span scan samples
victim decisions on the plane spanned by a setting's start image and
its adversarial perturbation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .attacks import METHODS

_METHOD_RANK = {m: i for i, m in enumerate(METHODS)}


@dataclass(frozen=True)
class FrontierPoint:
    setting_id: int
    method: str
    q_star: int


def pareto_frontier(rows) -> list:
    """Per setting, the cheapest successful method.

    Ties go to the earlier method in the fixed order ENS < PRISM <
    PRISM_R < QO; schedules and other method labels rank after those,
    alphabetically. Settings with no success are omitted.
    """
    by_setting: dict = {}
    for r in rows:
        if not r.success:
            continue
        rank = _METHOD_RANK.get(r.method, len(METHODS))
        key = (r.queries, rank, r.method)
        cur = by_setting.get(r.setting_id)
        if cur is None or key < cur:
            by_setting[r.setting_id] = key
    return [
        FrontierPoint(setting_id=sid, method=key[2], q_star=key[0])
        for sid, key in sorted(by_setting.items())
    ]


# ---------------------------------------------------------------------------
# dominance regions: multinomial logistic regression on log10(q*)

@dataclass
class DominanceModel:
    """Softmax regression over methods with the single feature log10 q*."""

    methods: tuple
    intercepts: np.ndarray
    slopes: np.ndarray
    nll_path: list = field(default_factory=list)
    degenerate: bool = False
    iterations: int = 0

    def scores(self, q) -> np.ndarray:
        t = np.log10(np.asarray(q, dtype=np.float64))
        z = self.intercepts[:, None] + self.slopes[:, None] * t
        return z.T  # (n_points, n_methods)

    def predict(self, q):
        z = self.scores(np.atleast_1d(q))
        picks = [self.methods[i] for i in np.argmax(z, axis=1)]
        return picks[0] if np.isscalar(q) or np.ndim(q) == 0 else picks

    def boundaries(self, q_max: float, points: int = 2001) -> list:
        """(method, onset) pairs over a log-spaced scan of [1, q_max]."""
        qs = np.logspace(0.0, math.log10(max(q_max, 1.0)), points)
        z = self.scores(qs)
        picks = np.argmax(z, axis=1)
        out = []
        for i, p in enumerate(picks):
            m = self.methods[p]
            if not out or out[-1][0] != m:
                out.append((m, float(qs[i])))
        return out


def _nll_and_grad(t: np.ndarray, y: np.ndarray, a: np.ndarray, b: np.ndarray):
    z = a[None, :] + b[None, :] * t[:, None]
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    n = t.shape[0]
    nll = -float(np.mean(np.log(p[np.arange(n), y] + 1e-300)))
    resid = p.copy()
    resid[np.arange(n), y] -= 1.0
    ga = resid.mean(axis=0)
    gb = (resid * t[:, None]).mean(axis=0)
    return nll, ga, gb


def fit_dominance(points, grad_tol: float = 1e-6,
                  max_iterations: int = 100000) -> DominanceModel:
    """Fit methods ~ softmax(a + b * log10 q*) by full-batch descent.

    Backtracking halves the step until the negative log-likelihood
    decreases, so the recorded nll_path is monotone. A single-method
    input cannot be regressed; the model then degenerates to a constant
    prediction and is flagged.
    """
    pts = [(float(q), m) for q, m in points]
    if not pts:
        raise ValueError("no frontier points to fit")
    methods = tuple(sorted({m for _, m in pts},
                           key=lambda m: _METHOD_RANK.get(m, len(METHODS))))
    if any(q < 1 for q, _ in pts):
        raise ValueError("query counts must be >= 1")
    t = np.array([math.log10(q) for q, _ in pts])
    y = np.array([methods.index(m) for _, m in pts])
    k = len(methods)
    a = np.zeros(k)
    b = np.zeros(k)
    if k == 1:
        a = np.array([1.0])
        return DominanceModel(methods=methods, intercepts=a, slopes=b,
                              degenerate=True)

    nll, ga, gb = _nll_and_grad(t, y, a, b)
    path = [nll]
    step = 1.0
    it = 0
    for it in range(1, max_iterations + 1):
        if max(np.abs(ga).max(), np.abs(gb).max()) < grad_tol:
            break
        while True:
            a_try = a - step * ga
            b_try = b - step * gb
            nll_try, ga_try, gb_try = _nll_and_grad(t, y, a_try, b_try)
            if nll_try < nll or step < 1e-12:
                break
            step *= 0.5
        if nll_try >= nll:
            break  # no descent direction left at numeric floor
        a, b, nll, ga, gb = a_try, b_try, nll_try, ga_try, gb_try
        path.append(nll)
        step = min(step * 2.0, 1e6)
    return DominanceModel(methods=methods, intercepts=a, slopes=b,
                          nll_path=path, iterations=it)


# ---------------------------------------------------------------------------
# span scan: victim decisions on the (start, perturbation) plane

@dataclass(frozen=True)
class SpanScan:
    u_values: np.ndarray  # along x_start - x_goal
    v_values: np.ndarray  # along the orthogonal residual of x_adv - x_goal
    classes: np.ndarray  # (len(u), len(v)) victim labels
    scores: np.ndarray  # target probability per cell
    start_cell: tuple
    adv_cell: tuple
    goal_cell: tuple
    degenerate: bool


def _peek(victim, x: np.ndarray):
    if hasattr(victim, "peek_label"):
        probs = nn.forward(victim.model, victim.pre.apply(x))
    else:
        probs = nn.forward(victim, x)
    return int(np.argmax(probs)), probs


def span_scan(victim, x_start: np.ndarray, x_adv: np.ndarray,
              x_goal: np.ndarray, target: int,
              grid: tuple = (121, 21),
              u_range: tuple = (-0.1, 0.5),
              v_range: tuple = (0.0, 0.1)) -> SpanScan:
    """Classify the plane through x_goal spanned by start and residual.

    Axis u is scaled so x_start sits at u=0.5, v=0; axis v is the
    component of (x_adv - x_goal) orthogonal to axis u, normalized to
    max-norm 1 so v reads in max-norm units. Every sampled point is
    clipped to [0, 1] before classification. When x_adv lies on the
    start axis the scan degenerates to one informative axis and is
    flagged.
    """
    x_start = np.asarray(x_start, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    x_goal = np.asarray(x_goal, dtype=np.float64)
    if not (x_start.shape == x_adv.shape == x_goal.shape):
        raise ValueError("span images must share one shape")

    a1 = (x_start - x_goal) / 0.5  # x_start lands at u = 0.5
    denom = float(np.dot(a1.ravel(), a1.ravel()))
    if denom == 0.0:
        raise ValueError("x_start equals x_goal; no span to scan")
    delta = x_adv - x_goal
    u_adv = float(np.dot(delta.ravel(), a1.ravel())) / denom
    resid = delta - u_adv * a1
    v_adv = float(np.max(np.abs(resid)))
    degenerate = v_adv < 1e-12
    a2 = np.zeros_like(a1) if degenerate else resid / v_adv

    nu, nv = grid
    u_values = np.linspace(u_range[0], u_range[1], nu)
    v_values = np.linspace(v_range[0], v_range[1], nv)
    classes = np.zeros((nu, nv), dtype=np.int64)
    scores = np.zeros((nu, nv), dtype=np.float64)
    for i, u in enumerate(u_values):
        for j, v in enumerate(v_values):
            x = np.clip(x_goal + u * a1 + v * a2, 0.0, 1.0)
            label, probs = _peek(victim, x)
            classes[i, j] = label
            scores[i, j] = float(probs[target])

    def snap(u, v):
        i = int(np.clip(np.rint((u - u_range[0]) / (u_range[1] - u_range[0])
                                * (nu - 1)), 0, nu - 1))
        j = int(np.clip(np.rint((v - v_range[0]) / (v_range[1] - v_range[0])
                                * (nv - 1)), 0, nv - 1))
        return i, j

    return SpanScan(
        u_values=u_values, v_values=v_values, classes=classes, scores=scores,
        start_cell=snap(0.5, 0.0), adv_cell=snap(u_adv, v_adv),
        goal_cell=snap(0.0, 0.0), degenerate=degenerate,
    )
