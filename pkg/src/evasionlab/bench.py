"""Benchmark harness: build setting plans, run attack batteries, tabulate.

The plan derives one setting per dataset entry by cyclic pairing: entry
i supplies the goal image, entry i+1 (mod n) supplies the start image
and the target label. Settings that violate the attack preconditions
are kept in the plan but marked skipped, so denominators stay honest.
"""

from __future__ import annotations

import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .api import Postprocessor, PredictionApi, Preprocessor, QueryLedger
from .attacks import AttackSetting
from .gradest import EnsembleSpec
from .strategy import MethodConfigs, NAMED_SCHEDULES, Schedule, run_schedule, run_stage

SKIP_START_MISCLASSIFIED = "start_misclassified"
SKIP_GOAL_ALREADY_TARGET = "goal_already_target"


@dataclass(frozen=True)
class PlannedSetting:
    setting_id: int
    goal_index: int
    start_index: int
    target: int
    skip_reason: str | None = None

    @property
    def runnable(self) -> bool:
        return self.skip_reason is None


@dataclass(frozen=True)
class ExperimentPlan:
    """Cyclic pairing of a dataset slice, filtered against one victim."""

    images: tuple
    labels: tuple
    victim_labels: tuple
    settings: tuple

    def runnable(self) -> tuple:
        return tuple(s for s in self.settings if s.runnable)

    def setting_arrays(self, ps: PlannedSetting):
        return self.images[ps.start_index], self.images[ps.goal_index]

    def skip_counts(self) -> dict:
        counts: dict = {}
        for s in self.settings:
            if s.skip_reason:
                counts[s.skip_reason] = counts.get(s.skip_reason, 0) + 1
        return counts


def build_plan(items, oracle) -> ExperimentPlan:
    """Pair entry i's image (goal) with entry i+1's (start, target).

    `oracle` answers clean top-1 labels without spending budget. A
    setting is skipped when the victim misclassifies its start image
    (the partial-information entry point would be invalid) or already
    assigns the target label to its goal image (nothing to evade).
    """
    items = list(items)
    if len(items) < 2:
        raise ValueError("a plan needs at least 2 entries")
    images = tuple(np.asarray(x, dtype=np.float64) for x, _ in items)
    labels = tuple(int(y) for _, y in items)
    victim_labels = tuple(oracle.peek_label(x) for x in images)

    settings = []
    n = len(items)
    for i in range(n):
        j = (i + 1) % n
        target = labels[j]
        skip = None
        if victim_labels[j] != target:
            skip = SKIP_START_MISCLASSIFIED
        elif victim_labels[i] == target:
            skip = SKIP_GOAL_ALREADY_TARGET
        settings.append(PlannedSetting(
            setting_id=i, goal_index=i, start_index=j, target=target,
            skip_reason=skip,
        ))
    return ExperimentPlan(images=images, labels=labels,
                          victim_labels=victim_labels, settings=tuple(settings))


@dataclass(frozen=True)
class ApiFactory:
    """Builds fresh budgeted victim APIs; picklable for worker pools."""

    model: object
    pre: Preprocessor = field(default_factory=Preprocessor)
    k: int = 1

    def __call__(self, budget: int | None = None) -> PredictionApi:
        return PredictionApi(
            model=self.model, pre=self.pre,
            post=Postprocessor(kind="top_k", k=self.k),
            ledger=QueryLedger(budget=budget),
        )

    def oracle(self) -> PredictionApi:
        return PredictionApi(model=self.model, pre=self.pre)


@dataclass(frozen=True)
class ResultRow:
    setting_id: int
    method: str
    success: bool
    queries: int
    iterations: int
    wall_time: float = 0.0
    x_adv: np.ndarray | None = None
    winning_stage: str | None = None
    ball_violations: int = 0
    skipped: bool = False

    @property
    def q_star(self) -> float:
        return float(self.queries) if self.success else math.inf


@dataclass(frozen=True)
class BenchSpec:
    """Everything one worker needs to run one (setting, method) cell."""

    plan: ExperimentPlan
    api_factory: ApiFactory
    ens: EnsembleSpec | None
    cfgs: MethodConfigs = field(default_factory=MethodConfigs)
    methods: tuple = ()
    schedules: tuple = ()
    budgets: dict = field(default_factory=dict)
    epsilon: float = 0.05
    seed: int = 0

    def jobs_list(self) -> list:
        jobs = []
        for ps in self.plan.settings:
            for m in self.methods:
                jobs.append((ps.setting_id, "method", m))
            for s in self.schedules:
                jobs.append((ps.setting_id, "schedule", s))
        return jobs


def run_cell(spec: BenchSpec, setting_id: int, kind: str, name: str) -> ResultRow:
    ps = spec.plan.settings[setting_id]
    label = name
    if ps.skip_reason is not None:
        return ResultRow(setting_id=setting_id, method=label, success=False,
                         queries=0, iterations=0, skipped=True)
    x_start, x_goal = spec.plan.setting_arrays(ps)
    if kind == "schedule":
        schedule = NAMED_SCHEDULES[name]
        budget = schedule.budget
    else:
        budget = spec.budgets.get(name, 1000)
    setting = AttackSetting(
        x_start=x_start, x_goal=x_goal, target=ps.target,
        api=spec.api_factory(budget), epsilon=spec.epsilon, budget=budget,
        start_label=ps.target, setting_id=setting_id,
    )
    t0 = time.perf_counter()
    if kind == "schedule":
        outcome = run_schedule(setting, schedule, spec.ens, spec.cfgs,
                               seed=spec.seed * 100003 + setting_id)
    else:
        rng = np.random.default_rng([spec.seed, setting_id])
        outcome = run_stage(setting, name, spec.ens, spec.cfgs, rng)
    wall = time.perf_counter() - t0
    return ResultRow(
        setting_id=setting_id, method=label, success=outcome.success,
        queries=outcome.queries_used, iterations=outcome.iterations,
        wall_time=wall, x_adv=outcome.x_adv,
        winning_stage=outcome.winning_stage,
        ball_violations=outcome.ball_violations,
    )


_WORKER_SPEC: BenchSpec | None = None


def _init_worker(spec: BenchSpec) -> None:
    global _WORKER_SPEC
    _WORKER_SPEC = spec


def _worker_cell(job) -> ResultRow:
    return run_cell(_WORKER_SPEC, *job)


def run_bench(spec: BenchSpec, jobs: int = 1, progress=None) -> list:
    """Run every (setting, method/schedule) cell; rows sorted and stable.

    jobs > 1 fans settings out over a process pool; each worker receives
    the spec once at startup. Results are identical to the sequential
    path because every cell seeds its own RNG stream.
    """
    work = spec.jobs_list()
    if jobs <= 1:
        rows = []
        for job in work:
            rows.append(run_cell(spec, *job))
            if progress is not None:
                progress(rows[-1])
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                 initargs=(spec,)) as pool:
            rows = []
            for row in pool.map(_worker_cell, work, chunksize=4):
                rows.append(row)
                if progress is not None:
                    progress(row)
    rows.sort(key=lambda r: (r.method, r.setting_id))
    return rows


# ---------------------------------------------------------------------------
# aggregate views

def success_rate(rows, method: str, denominator: int | None = None) -> float:
    picked = [r for r in rows if r.method == method]
    n = denominator if denominator is not None else len(picked)
    if n == 0:
        return 0.0
    return sum(r.success for r in picked) / n

def median_queries(rows, method: str):
    qs = [r.queries for r in rows if r.method == method and r.success]
    return statistics.median(qs) if qs else None

def joint_success(rows, method_a: str, method_b: str) -> list:
    """(setting_id, q_a, q_b) for settings both methods solved."""
    qa = {r.setting_id: r.queries for r in rows
          if r.method == method_a and r.success}
    qb = {r.setting_id: r.queries for r in rows
          if r.method == method_b and r.success}
    shared = sorted(set(qa) & set(qb))
    return [(i, qa[i], qb[i]) for i in shared]


def ablation_ensemble_size(spec: BenchSpec, members_desc, budgets=(1, 1000),
                           jobs: int = 1) -> list:
    """Grow the ensemble one accuracy-ranked member at a time.

    For each K runs ENS at every budget plus PRISM at the largest
    budget, mirroring the substitute-count study. Returns dicts, one per
    (K, method, budget) cell.
    """
    table = []
    for k in range(1, len(members_desc) + 1):
        ens_k = EnsembleSpec(members=tuple(members_desc[:k]))
        cells = [("ENS", b) for b in budgets] + [("PRISM", max(budgets))]
        for method, budget in cells:
            sub = replace(spec, ens=ens_k, methods=(method,), schedules=(),
                          budgets={method: budget})
            rows = run_bench(sub, jobs=jobs)
            n = len(spec.plan.settings)
            table.append({
                "k": k, "method": method, "budget": budget,
                "success_rate": success_rate(rows, method, n),
                "median_queries": median_queries(rows, method),
            })
    return table
