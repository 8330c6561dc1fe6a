"""Local model zoos: a victim plus substitute networks per toy task.

Each task trains one victim (served behind the API) and ten substitutes
(the attacker's ensemble) on freshly drawn datasets from the same
family, so substitutes approximate but never equal the victim. The
shapes victim natively consumes a larger resolution than the attack
space, exercising the resize preprocessing and its gradient pullback.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import datagen, nn
from .api import Postprocessor, PredictionApi, Preprocessor, QueryLedger
from .gradest import EnsembleMember, EnsembleSpec

TASKS = ("blobs", "shapes")

ACCURACY_FLOOR = 0.90

# substitute menu: hidden widths, activation, native side (None = attack space)
_SHAPE_SUBS = (
    ((32,), "relu", None),
    ((48,), "relu", None),
    ((24, 24), "tanh", None),
    ((64,), "tanh", None),
    ((40,), "relu", None),
    ((16, 16), "tanh", None),
    ((56,), "relu", None),
    ((32, 16), "relu", 20),
    ((48,), "tanh", 20),
    ((36, 18), "relu", 20),
)
_SHAPE_VICTIM = ((48, 24), "relu", 20)

# depth > 1 trains unreliably on the near-constant 2-dim blob inputs,
# so the blob menu varies width and activation only
_BLOB_SUBS = (
    ((16,), "relu", None),
    ((24,), "relu", None),
    ((12,), "relu", None),
    ((32,), "tanh", None),
    ((20,), "relu", None),
    ((8,), "tanh", None),
    ((28,), "relu", None),
    ((14,), "relu", None),
    ((24,), "tanh", None),
    ((10,), "tanh", None),
)
_BLOB_VICTIM = ((22,), "relu", None)

_SHAPE_CLASSES = 10
_SHAPE_SIDE = 16
_BLOB_CLASSES = 3


class ZooTrainingError(RuntimeError):
    """A zoo model failed to reach the accuracy floor."""

    def __init__(self, model_name: str, acc: float):
        super().__init__(
            f"model {model_name} diverged: accuracy {acc:.3f} < {ACCURACY_FLOOR}"
        )
        self.model_name = model_name


@dataclass(frozen=True)
class ZooEntry:
    name: str
    file: str
    accuracy: float
    native: tuple[int, int] | None
    hidden: tuple
    act: str


@dataclass
class Zoo:
    task: str
    root: Path
    seed: int
    input_shape: tuple[int, int, int]
    n_classes: int
    victim: nn.Network
    victim_entry: ZooEntry
    substitutes: list
    entries: list
    eval_ds: datagen.LabeledDataset

    def victim_pre(self) -> Preprocessor:
        if self.victim_entry.native is None:
            return Preprocessor()
        h, w = self.victim_entry.native
        return Preprocessor.resize_to(h, w)

    def victim_api(self, budget: int | None = None, k: int = 5) -> PredictionApi:
        k = min(k, self.n_classes)
        return PredictionApi(
            model=self.victim,
            pre=self.victim_pre(),
            post=Postprocessor(kind="top_k", k=k),
            ledger=QueryLedger(budget=budget),
        )

    def oracle_api(self) -> PredictionApi:
        """Unbudgeted full-probability view; plan building and eval only."""
        return PredictionApi(model=self.victim, pre=self.victim_pre())

    def ensemble(self, count: int | None = None) -> EnsembleSpec:
        """First `count` substitutes in manifest (accuracy-descending) order."""
        if count is None:
            count = len(self.entries)
        members = []
        for entry, net in zip(self.entries[:count], self.substitutes[:count]):
            pre = Preprocessor()
            if entry.native is not None:
                pre = Preprocessor.resize_to(*entry.native)
            members.append(EnsembleMember(net=net, pre=pre))
        return EnsembleSpec(members=tuple(members))


def _shape_dataset(side: int, seed: int, per_class: int) -> datagen.LabeledDataset:
    return datagen.make_shapes(datagen.ShapeSpec(
        n_classes=_SHAPE_CLASSES, image_side=side,
        samples_per_class=per_class, seed=seed,
    ))


def _blob_dataset(seed: int, per_class: int) -> datagen.LabeledDataset:
    return datagen.make_blobs(datagen.BlobSpec(
        n_classes=_BLOB_CLASSES, points_per_class=per_class, seed=seed,
    ))


def _train(name: str, input_shape, hidden, act, n_classes,
           train_ds, test_ds, seed: int, cfg: nn.TrainConfig):
    net = nn.make_mlp(input_shape, tuple(hidden), n_classes, seed=seed, act=act)
    net = nn.train_sgd(net, train_ds, cfg)
    acc = nn.accuracy(net, test_ds)
    if acc < ACCURACY_FLOOR:
        raise ZooTrainingError(name, acc)
    return net, acc


def build_zoo(task: str, root, seed: int = 0, log=None) -> Zoo:
    """Train, persist, and return the zoo for one task."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    root = Path(root) / task
    root.mkdir(parents=True, exist_ok=True)
    base = seed * 10000

    if task == "shapes":
        victim_hidden, victim_act, victim_native = _SHAPE_VICTIM
        subs = _SHAPE_SUBS
        n_classes = _SHAPE_CLASSES
        input_shape = (1, _SHAPE_SIDE, _SHAPE_SIDE)
        # low-contrast inputs share a big common-mode component; slow and long
        cfg = nn.TrainConfig(epochs=500, batch_size=64, learning_rate=0.03, seed=base)
        make_train = lambda side, s: _shape_dataset(side or _SHAPE_SIDE, s, 80)
        make_heldout = lambda side, s: _shape_dataset(side or _SHAPE_SIDE, s, 30)
        eval_ds = _shape_dataset(_SHAPE_SIDE, base + 500, 10)
    else:
        victim_hidden, victim_act, victim_native = _BLOB_VICTIM
        subs = _BLOB_SUBS
        n_classes = _BLOB_CLASSES
        input_shape = (1, 1, 2)
        # near-constant 2-dim inputs condition badly; long moderate-rate SGD
        cfg = nn.TrainConfig(epochs=600, batch_size=64, learning_rate=0.25, seed=base)
        make_train = lambda side, s: _blob_dataset(s, 100)
        make_heldout = lambda side, s: _blob_dataset(s, 40)
        eval_ds = _blob_dataset(base + 500, 30)

    def native_shape(native):
        if native is None:
            return input_shape
        return (input_shape[0], native, native)

    def entry_native(native):
        return None if native is None else (native, native)

    victim_shape = native_shape(victim_native)
    victim_net, victim_acc = _train(
        "victim", victim_shape, victim_hidden, victim_act, n_classes,
        make_train(victim_native, base + 1),
        make_heldout(victim_native, base + 600), base + 1,
        nn.TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size,
                       learning_rate=cfg.learning_rate, seed=base + 1),
    )
    nn.save_model(victim_net, root / "victim.json")
    victim_entry = ZooEntry(
        name="victim", file="victim.json", accuracy=victim_acc,
        native=entry_native(victim_native), hidden=tuple(victim_hidden),
        act=victim_act,
    )
    if log is not None:
        print(f"{task}/victim accuracy {victim_acc:.3f}", file=log)

    trained = []
    for i, (hidden, act, native) in enumerate(subs):
        name = f"sub{i:02d}"
        net, acc = _train(
            name, native_shape(native), hidden, act, n_classes,
            make_train(native, base + 10 + i),
            make_heldout(native, base + 700 + i), base + 10 + i,
            nn.TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size,
                           learning_rate=cfg.learning_rate, seed=base + 10 + i),
        )
        trained.append((name, net, acc, entry_native(native), hidden, act))
        if log is not None:
            print(f"{task}/{name} accuracy {acc:.3f}", file=log)

    # ablation order: strongest substitutes first
    trained.sort(key=lambda t: (-t[2], t[0]))
    entries = []
    substitutes = []
    for name, net, acc, native, hidden, act in trained:
        fname = f"{name}.json"
        nn.save_model(net, root / fname)
        entries.append(ZooEntry(name=name, file=fname, accuracy=acc,
                                native=native, hidden=tuple(hidden), act=act))
        substitutes.append(net)

    datagen.save_dataset_jsonl(eval_ds, root / "eval.jsonl")
    manifest = {
        "task": task,
        "seed": seed,
        "input_shape": list(input_shape),
        "n_classes": n_classes,
        "eval": "eval.jsonl",
        "victim": _entry_doc(victim_entry),
        "substitutes": [_entry_doc(e) for e in entries],
    }
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)

    return Zoo(task=task, root=root, seed=seed, input_shape=input_shape,
               n_classes=n_classes, victim=victim_net,
               victim_entry=victim_entry, substitutes=substitutes,
               entries=entries, eval_ds=eval_ds)


def _entry_doc(e: ZooEntry) -> dict:
    return {
        "name": e.name, "file": e.file, "accuracy": e.accuracy,
        "native": list(e.native) if e.native else None,
        "hidden": list(e.hidden), "act": e.act,
    }


def _entry_from_doc(doc: dict) -> ZooEntry:
    return ZooEntry(
        name=doc["name"], file=doc["file"], accuracy=float(doc["accuracy"]),
        native=tuple(doc["native"]) if doc["native"] else None,
        hidden=tuple(doc["hidden"]), act=doc["act"],
    )


def load_zoo(root, task: str) -> Zoo:
    root = Path(root) / task
    with open(root / "manifest.json") as fh:
        manifest = json.load(fh)
    victim_entry = _entry_from_doc(manifest["victim"])
    victim = nn.load_model(root / victim_entry.file)
    entries = [_entry_from_doc(d) for d in manifest["substitutes"]]
    substitutes = [nn.load_model(root / e.file) for e in entries]
    eval_ds = datagen.load_dataset_jsonl(root / manifest["eval"])
    return Zoo(
        task=manifest["task"], root=root, seed=manifest["seed"],
        input_shape=tuple(manifest["input_shape"]),
        n_classes=manifest["n_classes"], victim=victim,
        victim_entry=victim_entry, substitutes=substitutes,
        entries=entries, eval_ds=eval_ds,
    )
