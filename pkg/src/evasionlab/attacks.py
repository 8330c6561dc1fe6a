"""Targeted evasion attacks against budgeted top-k prediction APIs.

All four attacks share one goal: a point within epsilon (max norm) of
x_goal that the victim's API labels as the target class. They differ in
what they spend: ENS transfers substitute-ensemble gradients and queries
only to check, PRISM walks from a start image already inside the target
region using pseudolabels while far away and queries only near the goal,
PRISM_R resamples a random sub-ensemble each step, and QO estimates
gradients purely from query scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .api import BudgetExceededError
from .gradest import (EnsembleSpec, MomentumState, NesConfig, ensemble_grad,
                      nes_estimate, subsample)

METHODS = ("ENS", "PRISM", "PRISM_R", "QO")

_TOL = 1e-9


def _clip_ball(x: np.ndarray, center: np.ndarray, d: float) -> np.ndarray:
    return np.clip(x, center - d, center + d)


def _linf(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)))


@dataclass
class AttackSetting:
    """One attack instance: move x_goal's label to `target` within epsilon.

    x_start is a point the victim already labels as the target (the
    partial-information entry point); start_label records the victim's
    clean top-1 of x_start as observed at plan-construction time, so
    attacks can reject settings that violate that precondition without
    spending budget. A budget, when given, is installed on the API's
    ledger.
    """

    x_start: np.ndarray
    x_goal: np.ndarray
    target: int
    api: object
    epsilon: float = 0.05
    budget: int | None = None
    start_label: int | None = None
    setting_id: int = 0

    def __post_init__(self):
        self.x_start = np.asarray(self.x_start, dtype=np.float64)
        self.x_goal = np.asarray(self.x_goal, dtype=np.float64)
        if self.x_start.shape != self.x_goal.shape:
            raise ValueError("x_start and x_goal shapes differ")
        for name, arr in (("x_start", self.x_start), ("x_goal", self.x_goal)):
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must be in (0, 1)")
        if self.target < 0:
            raise ValueError("target label must be >= 0")
        if self.budget is not None:
            if self.budget < 0:
                raise ValueError("budget must be >= 0")
            self.api.ledger.budget = self.budget


def _require_pi_start(setting: AttackSetting) -> None:
    # partial-information regime: the walk starts inside the target region
    if (setting.start_label is not None
            and setting.start_label != setting.target):
        raise ValueError(
            f"x_start classifies as {setting.start_label}, "
            f"not the target {setting.target}"
        )


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    d: float
    queried: bool
    top1: int | None
    score_target: float | None
    linf_to_goal: float


@dataclass
class AttackOutcome:
    method: str
    success: bool
    x_adv: np.ndarray
    queries_used: int
    iterations: int
    trace: list = field(default_factory=list)
    ball_violations: int = 0
    winning_stage: str | None = None
    stage_results: list | None = None

    def perturbation(self, x_goal: np.ndarray) -> np.ndarray:
        return self.x_adv - x_goal


# ---------------------------------------------------------------------------
# ENS: transfer attack with verification queries

@dataclass(frozen=True)
class EnsConfig:
    eta: float = 0.005
    mu: float = 1.0
    warmup: int = 10
    max_iterations: int = 100000

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.warmup < 1:
            raise ValueError("warmup must be >= 1")


def run_ens(setting: AttackSetting, ens: EnsembleSpec,
            cfg: EnsConfig = EnsConfig()) -> AttackOutcome:
    """Ensemble transfer: momentum gradient steps inside the epsilon-ball
    around x_goal, with at least `warmup` free steps before the first
    query, then one verification query per further step."""
    eps = setting.epsilon
    goal = setting.x_goal
    api = setting.api
    used0 = api.ledger.used
    state = MomentumState.zeros(goal.shape, mu=cfg.mu)
    x = goal.copy()
    trace = []
    violations = 0
    success = False

    def step(x):
        g = ensemble_grad(ens, x, setting.target, state)
        return np.clip(_clip_ball(x + cfg.eta * np.sign(g), goal, eps), 0.0, 1.0)

    for it in range(1, cfg.warmup + 1):
        x = step(x)
        trace.append(TraceRecord(it, eps, False, None, None, _linf(x, goal)))

    it = cfg.warmup
    while it < cfg.max_iterations:
        it += 1
        try:
            resp = api.query(x)
        except BudgetExceededError:
            break
        dist = _linf(x, goal)
        if dist > eps + _TOL:
            violations += 1
        top1 = resp.top1()
        trace.append(
            TraceRecord(it, eps, True, top1, resp.score_of(setting.target), dist)
        )
        if top1 == setting.target and dist <= eps + _TOL:
            success = True
            break
        x = step(x)

    return AttackOutcome(
        method="ENS", success=success, x_adv=x.copy(),
        queries_used=api.ledger.used - used0, iterations=len(trace),
        trace=trace, ball_violations=violations,
    )


# ---------------------------------------------------------------------------
# PRISM: shrinking-ball descent with pseudolabels far from the goal

@dataclass(frozen=True)
class PrismConfig:
    """Knobs for the shrinking-ball ensemble descent.

    While the ball radius d exceeds epsilon the attack fabricates the
    response [target] instead of querying; real queries begin once
    d = epsilon. Accepted steps shrink d by delta_eps down to epsilon.
    After more than `patience` consecutive misses the iterate backtracks
    to the last confident point (real target score >= t_adv, or any
    accepted pseudolabel step).
    """

    d0: float = 0.50
    delta_eps: float = 0.005
    patience: int = 5
    t_adv: float = 0.20
    eta: float = 0.005
    mu: float = 1.0
    reset_momentum_on_backtrack: bool = False
    max_iterations: int | None = None

    def __post_init__(self):
        if self.delta_eps <= 0 or self.eta <= 0 or self.d0 <= 0:
            raise ValueError("d0, delta_eps and eta must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")

    def iteration_cap(self, eps: float) -> int:
        if self.max_iterations is not None:
            return self.max_iterations
        ladder = max(0.0, max(self.d0, eps) - eps) / self.delta_eps
        return int(self.patience * ladder) + 1000


def _prism_core(setting: AttackSetting, ens: EnsembleSpec, cfg: PrismConfig,
                method: str, subsample_rng) -> AttackOutcome:
    _require_pi_start(setting)
    eps = setting.epsilon
    goal = setting.x_goal
    api = setting.api
    used0 = api.ledger.used

    d = max(cfg.d0, eps)  # d0 <= eps degenerates to querying immediately
    x_adv = np.clip(_clip_ball(setting.x_start, goal, d), 0.0, 1.0)
    x_back = x_adv
    x_prop = x_adv  # gradients are evaluated at the latest proposal
    state = MomentumState.zeros(goal.shape, mu=cfg.mu)
    misses = 0
    trace = []
    violations = 0
    success = False

    for it in range(1, cfg.iteration_cap(eps) + 1):
        active = ens if subsample_rng is None else subsample(ens, subsample_rng)
        g = ensemble_grad(active, x_prop, setting.target, state)
        x_prop = np.clip(
            _clip_ball(x_adv + cfg.eta * np.sign(g), goal, d), 0.0, 1.0
        )
        dist = _linf(x_prop, goal)
        if dist > d + _TOL:
            violations += 1

        if d <= eps + _TOL:
            try:
                resp = api.query(x_prop)
            except BudgetExceededError:
                break
            queried = True
            top1 = resp.top1()
            score = resp.score_of(setting.target)
            hit = resp.contains(setting.target)
        else:
            # free phase: fabricated response [target], no ledger charge
            queried, top1, score, hit = False, None, None, True
        trace.append(TraceRecord(it, d, queried, top1, score, dist))

        if hit:
            x_adv = x_prop
            # the anchor moves only on real high-confidence verdicts; the
            # free phase fabricates labels without scores, so the anchor
            # stays at the clipped start until the victim certifies better
            if queried and score is not None and score >= cfg.t_adv:
                x_back = x_adv
            if queried and top1 == setting.target and dist <= eps + _TOL:
                success = True
                break
            misses = 0
            d = max(eps, d - cfg.delta_eps)
        else:
            misses += 1
            if misses > cfg.patience:
                x_adv = x_back
                misses = 0
                if cfg.reset_momentum_on_backtrack:
                    state.g = np.zeros_like(state.g)

    return AttackOutcome(
        method=method, success=success, x_adv=x_adv.copy(),
        queries_used=api.ledger.used - used0, iterations=len(trace),
        trace=trace, ball_violations=violations,
    )


def run_prism(setting: AttackSetting, ens: EnsembleSpec,
              cfg: PrismConfig = PrismConfig()) -> AttackOutcome:
    """Shrinking-ball ensemble descent from x_start toward x_goal."""
    return _prism_core(setting, ens, cfg, "PRISM", None)


def run_prism_r(setting: AttackSetting, ens: EnsembleSpec,
                cfg: PrismConfig = PrismConfig(), rng=0) -> AttackOutcome:
    """PRISM with a fresh random sub-ensemble drawn every iteration."""
    return _prism_core(setting, ens, cfg, "PRISM_R", np.random.default_rng(rng))


# ---------------------------------------------------------------------------
# QO: query-only attack (estimated gradients)

@dataclass(frozen=True)
class QoConfig:
    """Query-only descent: per round one NES estimate, then a line search.

    A proposal is one signed step clipped to the next (shrunken) ball;
    each proposal costs one verification query. Accepted proposals keep
    the shrink and relax eta back toward eta0; rejections halve eta down
    to eta_min, after which the round is abandoned for a fresh estimate.
    The ladder starts at the true start distance when that exceeds d0,
    because clipping x_start harder would silently void the top-k
    precondition the score estimator depends on.
    """

    nes: NesConfig = field(default_factory=NesConfig)
    eta0: float = 0.01
    eta_min: float = 5e-4
    d0: float = 0.50
    delta_eps: float = 0.005
    max_iterations: int = 100000

    def __post_init__(self):
        if not 0 < self.eta_min <= self.eta0:
            raise ValueError("need 0 < eta_min <= eta0")
        if self.delta_eps <= 0 or self.d0 <= 0:
            raise ValueError("d0 and delta_eps must be positive")


def run_qo(setting: AttackSetting, cfg: QoConfig = QoConfig(),
           rng=0) -> AttackOutcome:
    """Pure query attack from x_start; no substitute models involved."""
    _require_pi_start(setting)
    rng = np.random.default_rng(rng)
    eps = setting.epsilon
    goal = setting.x_goal
    api = setting.api
    used0 = api.ledger.used

    d = max(cfg.d0, eps, _linf(setting.x_start, goal))
    x_adv = np.clip(_clip_ball(setting.x_start, goal, d), 0.0, 1.0)
    eta = cfg.eta0
    trace = []
    violations = 0
    success = False
    out_of_budget = False
    it = 0

    for it in range(1, cfg.max_iterations + 1):
        remaining = api.ledger.remaining
        if remaining is not None and remaining < cfg.nes.n_queries + 1:
            break  # cannot afford an estimate plus its verification
        try:
            ghat = nes_estimate(api, x_adv, setting.target, cfg.nes, rng)
        except BudgetExceededError:
            break
        d_try = max(eps, d - cfg.delta_eps)
        directed = bool(np.any(ghat))
        if not directed:
            # flat scores (saturated confidence, or target invisible):
            # no step direction, but the bare projection onto the next
            # ball still advances the ladder when the target stays put
            trace.append(
                TraceRecord(it, d, False, None, None, _linf(x_adv, goal))
            )
        while True:
            x_prop = np.clip(
                _clip_ball(x_adv + eta * np.sign(ghat), goal, d_try), 0.0, 1.0
            )
            try:
                resp = api.query(x_prop)
            except BudgetExceededError:
                out_of_budget = True
                break
            dist = _linf(x_prop, goal)
            if dist > d_try + _TOL:
                violations += 1
            top1 = resp.top1()
            score = resp.score_of(setting.target)
            trace.append(TraceRecord(it, d_try, True, top1, score, dist))
            if resp.contains(setting.target):
                x_adv = x_prop
                d = d_try
                if top1 == setting.target and dist <= eps + _TOL and d <= eps + _TOL:
                    success = True
                eta = min(cfg.eta0, eta * 2.0)
                break
            if not directed:
                break  # retrying an identical projection is pointless
            eta *= 0.5
            if eta < cfg.eta_min:
                eta = cfg.eta_min
                break  # stalled; draw a fresh estimate
        if success or out_of_budget:
            break

    return AttackOutcome(
        method="QO", success=success, x_adv=x_adv.copy(),
        queries_used=api.ledger.used - used0, iterations=it,
        trace=trace, ball_violations=violations,
    )


RUNNERS = {
    "ENS": run_ens,
    "PRISM": run_prism,
    "PRISM_R": run_prism_r,
    "QO": run_qo,
}
