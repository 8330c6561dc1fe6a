"""Agile attack schedules: run cheap attacks first, escalate on failure.

A schedule is an ordered list of (method, cumulative query cap) stages
sharing one ledger. Each stage restarts from the canonical start point
and runs until it succeeds or its cap refuses further queries; the caps
are thresholds on total spend, not per-stage allowances.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .attacks import (AttackOutcome, AttackSetting, EnsConfig, METHODS,
                      PrismConfig, QoConfig, run_ens, run_prism, run_prism_r,
                      run_qo)
from .gradest import EnsembleSpec


@dataclass(frozen=True)
class Stage:
    method: str
    until: int  # cumulative ledger cap in force during this stage

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.until < 1:
            raise ValueError("stage cap must be >= 1")


@dataclass(frozen=True)
class Schedule:
    name: str
    stages: tuple
    carry_state: bool = False

    def __post_init__(self):
        if not self.stages:
            raise ValueError("schedule needs at least one stage")
        caps = [s.until for s in self.stages]
        if any(b >= a for b, a in zip(caps, caps[1:])):
            raise ValueError("stage caps must be strictly increasing")

    @property
    def budget(self) -> int:
        return self.stages[-1].until


def _sched(name: str, *pairs) -> Schedule:
    return Schedule(name=name, stages=tuple(Stage(m, b) for m, b in pairs))


NAMED_SCHEDULES = {
    "EQ": _sched("EQ", ("ENS", 1), ("QO", 100000)),
    "EPQ": _sched("EPQ", ("ENS", 1), ("PRISM", 1000), ("QO", 100000)),
    "EPPRQ": _sched(
        "EPPRQ", ("ENS", 1), ("PRISM", 50), ("PRISM_R", 1000), ("QO", 100000)
    ),
    "EPPR": _sched("EPPR", ("ENS", 1), ("PRISM", 50), ("PRISM_R", 1000)),
}


def schedule_to_json(schedule: Schedule) -> str:
    return json.dumps(
        {
            "name": schedule.name,
            "stages": [
                {"method": s.method, "until": s.until} for s in schedule.stages
            ],
            "budget": schedule.budget,
        }
    )


def schedule_from_json(text: str) -> Schedule:
    doc = json.loads(text)
    try:
        stages = tuple(
            Stage(str(s["method"]), int(s["until"])) for s in doc["stages"]
        )
        name = str(doc.get("name", ""))
    except (KeyError, TypeError, ValueError) as e:
        raise ValueError(f"malformed schedule document: {e}") from e
    sched = Schedule(name=name, stages=stages,
                     carry_state=bool(doc.get("carry_state", False)))
    if "budget" in doc and int(doc["budget"]) != sched.budget:
        raise ValueError("schedule budget does not match final stage cap")
    return sched


@dataclass(frozen=True)
class MethodConfigs:
    """Per-method attack parameters used by schedules and benchmarks."""

    ens: EnsConfig = field(default_factory=EnsConfig)
    prism: PrismConfig = field(default_factory=PrismConfig)
    prism_r: PrismConfig = field(default_factory=PrismConfig)
    qo: QoConfig = field(default_factory=QoConfig)


def run_stage(setting: AttackSetting, method: str, ens: EnsembleSpec | None,
              cfgs: MethodConfigs, rng) -> AttackOutcome:
    if method == "ENS":
        return run_ens(setting, ens, cfgs.ens)
    if method == "PRISM":
        return run_prism(setting, ens, cfgs.prism)
    if method == "PRISM_R":
        return run_prism_r(setting, ens, cfgs.prism_r, rng=rng)
    if method == "QO":
        return run_qo(setting, cfgs.qo, rng=rng)
    raise ValueError(f"unknown method {method!r}")


def run_schedule(setting: AttackSetting, schedule: Schedule,
                 ens: EnsembleSpec | None,
                 cfgs: MethodConfigs = MethodConfigs(),
                 seed: int = 0) -> AttackOutcome:
    """Run the schedule's stages over the setting's shared ledger.

    Per-stage RNG streams derive from (seed, stage index), so a shared
    prefix of two schedules replays identically at equal seeds. Returns
    an aggregate outcome whose winning_stage names the successful
    method; stage_results holds the per-stage outcomes.
    """
    api = setting.api
    used0 = api.ledger.used
    stage_results = []
    trace = []
    winner = None
    x_adv = None
    violations = 0
    x_start = setting.x_start
    start_label = setting.start_label

    for idx, stage in enumerate(schedule.stages):
        api.ledger.budget = stage.until
        stage_setting = dataclasses.replace(
            setting, budget=None, x_start=x_start, start_label=start_label
        )
        rng = np.random.default_rng([seed, idx])
        outcome = run_stage(stage_setting, stage.method, ens, cfgs, rng)
        stage_results.append(outcome)
        trace.extend(outcome.trace)
        violations += outcome.ball_violations
        x_adv = outcome.x_adv
        if outcome.success:
            winner = stage.method
            break
        if schedule.carry_state and stage.method != "ENS":
            # optional escalation state: hand the best iterate onward
            x_start = outcome.x_adv
            start_label = None

    api.ledger.budget = schedule.budget
    return AttackOutcome(
        method=schedule.name, success=winner is not None, x_adv=x_adv.copy(),
        queries_used=api.ledger.used - used0,
        iterations=sum(o.iterations for o in stage_results),
        trace=trace, ball_violations=violations, winning_stage=winner,
        stage_results=stage_results,
    )
