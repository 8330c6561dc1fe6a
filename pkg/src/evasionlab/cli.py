"""Command line entry point.

Subcommands: zoo-build, attack, bench, scan, serve-adapter. A JSON
config file can pre-set any flag (flags win). Exit codes: 0 success,
2 attack or training failure, 64 usage error, 69 service unavailable,
74 I/O error.
"""

from __future__ import annotations

import argparse
import errno
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, bench, report, zoo
from .api import Postprocessor, PredictionApi, QueryLedger
from .attacks import METHODS, AttackSetting, EnsConfig, PrismConfig, QoConfig
from .gradest import NesConfig
from .remote import RemoteApi, TcpTransport, TransportError
from .strategy import MethodConfigs, NAMED_SCHEDULES, run_schedule, run_stage
from .zoo import TASKS

EXIT_OK = 0
EXIT_FAIL = 2
EXIT_USAGE = 64
EXIT_UNAVAILABLE = 69
EXIT_IO = 74


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="evasionlab", description=__doc__)
    p.add_argument("--config", help="JSON file with default flag values")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default="out")
        sp.add_argument("--zoo", default=None,
                        help="zoo directory (default <out>/zoo)")
        sp.add_argument("--task", choices=TASKS, default="shapes")

    sp = sub.add_parser("zoo-build", help="train victim and substitutes")
    common(sp)
    sp.add_argument("--tasks", default=None,
                    help="comma list of tasks (default: the --task value)")

    sp = sub.add_parser("attack", help="run one method on chosen settings")
    common(sp)
    sp.add_argument("--method", required=True)
    sp.add_argument("--setting", default="0",
                    help="comma list or a-b ranges of setting ids")
    sp.add_argument("--budget", type=int, default=None)
    sp.add_argument("--epsilon", type=float, default=0.05)
    sp.add_argument("--k", type=int, default=1)
    sp.add_argument("--ensemble-size", type=int, default=None)
    sp.add_argument("--remote", default=None, metavar="HOST:PORT",
                    help="attack a served model instead of the local victim")
    sp.add_argument("--export-perturbation", action="store_true")

    sp = sub.add_parser("bench", help="run the full battery and reports")
    common(sp)
    sp.add_argument("--methods", default="ENS,PRISM,PRISM_R,QO")
    sp.add_argument("--schedules", default="EQ,EPQ,EPPRQ,EPPR")
    sp.add_argument("--budget", type=int, default=None,
                    help="override every method budget")
    sp.add_argument("--epsilon", type=float, default=0.05)
    sp.add_argument("--k", type=int, default=1)
    sp.add_argument("--ensemble-size", type=int, default=None)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--settings", type=int, default=None,
                    help="limit the plan to the first N dataset entries")
    sp.add_argument("--ablation", action="store_true",
                    help="also write the ensemble-size ablation table")
    sp.add_argument("--resume", action="store_true",
                    help="reuse rows already present in results.csv")

    sp = sub.add_parser("scan", help="classify the start/adv plane")
    common(sp)
    sp.add_argument("--method", default="PRISM")
    sp.add_argument("--setting", type=int, default=0)
    sp.add_argument("--budget", type=int, default=1000)
    sp.add_argument("--epsilon", type=float, default=0.05)
    sp.add_argument("--k", type=int, default=1)

    sp = sub.add_parser("serve-adapter", help="serve the victim over TCP")
    common(sp)
    sp.add_argument("--port", type=int, default=0)
    sp.add_argument("--k", type=int, default=1)
    sp.add_argument("--max-connections", type=int, default=None,
                    help="exit after this many connections (testing)")
    return p


def _apply_config(args, argv) -> None:
    if not args.config:
        return
    try:
        with open(args.config) as fh:
            doc = json.load(fh)
    except OSError as e:
        raise IOFailure(f"cannot read config: {e}") from e
    except json.JSONDecodeError as e:
        raise UsageError(f"config is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object of flag defaults")
    given = sys.argv[1:] if argv is None else argv
    argv_flags = {a.split("=")[0] for a in given if a.startswith("--")}
    for key, value in doc.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            continue
        if f"--{key}" in argv_flags:
            continue  # explicit flags win
        setattr(args, attr, value)


class IOFailure(Exception):
    pass


def _zoo_dir(args) -> Path:
    return Path(args.zoo) if args.zoo else Path(args.out) / "zoo"


def _load_zoo(args):
    try:
        return zoo.load_zoo(_zoo_dir(args), args.task)
    except OSError as e:
        raise IOFailure(
            f"zoo for task {args.task!r} not found under {_zoo_dir(args)}; "
            f"run zoo-build first ({e})"
        ) from e


def _parse_settings(text: str) -> list:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, _, hi = part.partition("-")
            try:
                out.extend(range(int(lo), int(hi) + 1))
            except ValueError as e:
                raise UsageError(f"bad setting range {part!r}") from e
        else:
            try:
                out.append(int(part))
            except ValueError as e:
                raise UsageError(f"bad setting id {part!r}") from e
    if not out:
        raise UsageError("no setting ids given")
    return out


def _method_cfgs() -> MethodConfigs:
    return MethodConfigs(
        ens=EnsConfig(), prism=PrismConfig(), prism_r=PrismConfig(),
        qo=QoConfig(nes=NesConfig()),
    )


def _canon_method(name: str) -> str:
    m = name.strip().upper()
    if m in METHODS or m in NAMED_SCHEDULES:
        return m
    raise UsageError(
        f"unknown method {name!r} (methods: {', '.join(METHODS)}; "
        f"schedules: {', '.join(NAMED_SCHEDULES)})"
    )


def cmd_zoo_build(args) -> int:
    tasks = ([t.strip() for t in args.tasks.split(",") if t.strip()]
             if args.tasks else [args.task])
    for task in tasks:
        if task not in TASKS:
            raise UsageError(f"unknown task {task!r}")
    for task in tasks:
        try:
            zoo.build_zoo(task, _zoo_dir(args), seed=args.seed, log=sys.stdout)
        except zoo.ZooTrainingError as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_FAIL
        except OSError as e:
            raise IOFailure(str(e)) from e
    return EXIT_OK


def _default_budget(method: str) -> int:
    return 100000 if method == "QO" else 1000


def cmd_attack(args) -> int:
    z = _load_zoo(args)
    ids = _parse_settings(args.setting)
    method = _canon_method(args.method)
    plan = bench.build_plan(z.eval_ds.items, z.oracle_api())
    for sid in ids:
        if sid < 0 or sid >= len(plan.settings):
            raise UsageError(
                f"setting {sid} out of range 0..{len(plan.settings) - 1}"
            )
    ens = z.ensemble(args.ensemble_size)
    cfgs = _method_cfgs()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    remote = None
    if args.remote:
        host, _, port = args.remote.partition(":")
        try:
            remote = (host, int(port))
        except ValueError as e:
            raise UsageError(f"bad --remote {args.remote!r}") from e

    budget = args.budget
    if budget is None:
        budget = (NAMED_SCHEDULES[method].budget if method in NAMED_SCHEDULES
                  else _default_budget(method))

    all_ok = True
    results = []
    for sid in ids:
        ps = plan.settings[sid]
        if not ps.runnable:
            results.append({"setting": sid, "skipped": ps.skip_reason})
            all_ok = False
            continue
        x_start, x_goal = plan.setting_arrays(ps)
        if remote is not None:
            try:
                api = RemoteApi(
                    transport=TcpTransport(remote[0], remote[1]),
                    ledger=QueryLedger(),
                )
            except OSError as e:
                print(f"error: cannot reach {args.remote}: {e}",
                      file=sys.stderr)
                return EXIT_UNAVAILABLE
        else:
            api = PredictionApi(
                model=z.victim, pre=z.victim_pre(),
                post=Postprocessor(kind="top_k",
                                   k=min(args.k, z.n_classes)),
            )
        setting = AttackSetting(
            x_start=x_start, x_goal=x_goal, target=ps.target, api=api,
            epsilon=args.epsilon, budget=budget, start_label=ps.target,
            setting_id=sid,
        )
        try:
            if method in NAMED_SCHEDULES:
                outcome = run_schedule(setting, NAMED_SCHEDULES[method], ens,
                                       cfgs, seed=args.seed * 100003 + sid)
            else:
                rng = np.random.default_rng([args.seed, sid])
                outcome = run_stage(setting, method, ens, cfgs, rng)
        except TransportError as e:
            print(f"error: remote failed: {e}", file=sys.stderr)
            return EXIT_UNAVAILABLE
        finally:
            if remote is not None:
                api.close()
        doc = {
            "setting": sid, "method": method, "success": outcome.success,
            "queries": outcome.queries_used, "iterations": outcome.iterations,
        }
        if outcome.winning_stage:
            doc["winning_stage"] = outcome.winning_stage
        print(json.dumps(doc))
        results.append(doc)
        all_ok = all_ok and outcome.success
        stem = f"attack_{method}_{sid}"
        _write_json(out_dir / f"{stem}.json", doc)
        _save_image(out_dir / f"{stem}_adv.json", outcome.x_adv, ps.target)
        if args.export_perturbation:
            pert = outcome.perturbation(x_goal)
            _save_image(out_dir / f"{stem}_pert.json",
                        np.clip(pert + 0.5, 0.0, 1.0), ps.target)
    return EXIT_OK if all_ok else EXIT_FAIL


def _write_json(path, doc) -> None:
    try:
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    except OSError as e:
        raise IOFailure(str(e)) from e


def _save_image(path, x: np.ndarray, label: int) -> None:
    x = np.asarray(x)
    row = {"label": int(label), "shape": list(x.shape),
           "pixels": x.reshape(-1).tolist()}
    try:
        with open(path, "w") as fh:
            fh.write(json.dumps(row) + "\n")
    except OSError as e:
        raise IOFailure(str(e)) from e


def cmd_bench(args) -> int:
    z = _load_zoo(args)
    methods = tuple(_canon_method(m) for m in args.methods.split(",")
                    if m.strip())
    schedules = tuple(_canon_method(s) for s in args.schedules.split(",")
                      if s.strip())
    for s in schedules:
        if s not in NAMED_SCHEDULES:
            raise UsageError(f"{s} is not a schedule")
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"{m} is not a method")
    items = z.eval_ds.items
    if args.settings is not None:
        items = items[:args.settings]
    plan = bench.build_plan(items, z.oracle_api())
    budgets = {m: (args.budget if args.budget else _default_budget(m))
               for m in methods}
    spec = bench.BenchSpec(
        plan=plan,
        api_factory=bench.ApiFactory(model=z.victim, pre=z.victim_pre(),
                                     k=min(args.k, z.n_classes)),
        ens=z.ensemble(args.ensemble_size),
        cfgs=_method_cfgs(),
        methods=methods, schedules=schedules, budgets=budgets,
        epsilon=args.epsilon, seed=args.seed,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "results.csv"

    done = set()
    old_rows = []
    if args.resume and csv_path.exists():
        old_rows = report.read_results_csv(csv_path)
        done = {(r.method, r.setting_id) for r in old_rows}
        work = [(sid, kind, name) for sid, kind, name in spec.jobs_list()
                if (name, sid) not in done]
        rows = list(old_rows)
        for sid, kind, name in work:
            rows.append(bench.run_cell(spec, sid, kind, name))
        rows.sort(key=lambda r: (r.method, r.setting_id))
    else:
        rows = bench.run_bench(spec, jobs=args.jobs)

    frontier = analysis.pareto_frontier(rows)
    dominance = None
    if frontier:
        dominance = analysis.fit_dominance(
            [(p.q_star, p.method) for p in frontier]
        )
    q_max = max([100000] + [r.queries for r in rows])
    try:
        paths = report.write_report(rows, frontier, dominance, out_dir,
                                    q_max=q_max)
        if args.ablation:
            members = list(z.ensemble().members)
            table = bench.ablation_ensemble_size(spec, members,
                                                 jobs=args.jobs)
            _write_json(out_dir / "ablation.json", table)
            paths["ablation.json"] = str(out_dir / "ablation.json")
    except OSError as e:
        raise IOFailure(str(e)) from e
    n = len(plan.settings)
    for label in sorted({r.method for r in rows}):
        rate = bench.success_rate(rows, label, n)
        med = bench.median_queries(rows, label)
        print(f"{label}: success {rate:.0%} median queries "
              f"{med if med is not None else '-'}")
    print(f"wrote {', '.join(sorted(paths))} under {out_dir}")
    return EXIT_OK


def cmd_scan(args) -> int:
    z = _load_zoo(args)
    method = _canon_method(args.method)
    plan = bench.build_plan(z.eval_ds.items, z.oracle_api())
    if args.setting < 0 or args.setting >= len(plan.settings):
        raise UsageError(f"setting {args.setting} out of range")
    ps = plan.settings[args.setting]
    if not ps.runnable:
        print(f"error: setting {args.setting} skipped: {ps.skip_reason}",
              file=sys.stderr)
        return EXIT_FAIL
    x_start, x_goal = plan.setting_arrays(ps)
    api = PredictionApi(model=z.victim, pre=z.victim_pre(),
                        post=Postprocessor(kind="top_k",
                                           k=min(args.k, z.n_classes)))
    setting = AttackSetting(
        x_start=x_start, x_goal=x_goal, target=ps.target, api=api,
        epsilon=args.epsilon, budget=args.budget, start_label=ps.target,
        setting_id=args.setting,
    )
    cfgs = _method_cfgs()
    if method in NAMED_SCHEDULES:
        outcome = run_schedule(setting, NAMED_SCHEDULES[method], z.ensemble(),
                               cfgs, seed=args.seed * 100003 + args.setting)
    else:
        rng = np.random.default_rng([args.seed, args.setting])
        outcome = run_stage(setting, method, z.ensemble(), cfgs, rng)
    if not outcome.success:
        print(f"error: {method} failed on setting {args.setting}; no scan",
              file=sys.stderr)
        return EXIT_FAIL
    oracle = z.oracle_api()
    scan = analysis.span_scan(oracle, x_start, outcome.x_adv, x_goal,
                              ps.target)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "setting": args.setting, "method": method, "target": ps.target,
        "queries": outcome.queries_used,
        "degenerate": scan.degenerate,
        "class_at_start": int(scan.classes[scan.start_cell]),
        "class_at_adv": int(scan.classes[scan.adv_cell]),
        "class_at_goal": int(scan.classes[scan.goal_cell]),
    }
    try:
        report.write_scan_json(scan, out_dir / "scan.json", metadata=meta)
        report.write_scan_svg(scan, out_dir / "scan.svg")
    except OSError as e:
        raise IOFailure(str(e)) from e
    print(json.dumps(meta))
    return EXIT_OK


def cmd_serve_adapter(args) -> int:
    from .remote import ModelServer

    z = _load_zoo(args)
    try:
        server = ModelServer(z.victim, z.victim_pre(),
                             k=min(args.k, z.n_classes), port=args.port,
                             log=sys.stderr)
    except OSError as e:
        if e.errno in (errno.EADDRINUSE, errno.EACCES):
            print(f"error: cannot bind port {args.port}: {e}",
                  file=sys.stderr)
            return EXIT_UNAVAILABLE
        raise IOFailure(str(e)) from e
    print(f"serving {args.task} victim on port {server.port} "
          f"(k={min(args.k, z.n_classes)})", flush=True)
    try:
        server.serve_forever(poll_interval=0.1)
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


_COMMANDS = {
    "zoo-build": cmd_zoo_build,
    "attack": cmd_attack,
    "bench": cmd_bench,
    "scan": cmd_scan,
    "serve-adapter": cmd_serve_adapter,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config(args, argv)
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except IOFailure as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    except TransportError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_UNAVAILABLE


if __name__ == "__main__":
    sys.exit(main())
