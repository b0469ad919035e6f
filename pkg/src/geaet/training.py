"""Optimisation, losses, metrics, the training loop and experiment sweeps."""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .config import RunConfig, config_hash, to_dict, with_overrides
from .graph import Batch, DatasetSplit, Graph, batch, generate_sbm_cluster, generate_tree_neighbour_match, load_jsonl
from .model import GEAETModel
from .posenc import attach_pe, random_sign_flip
from .tensor import (
    FlopCounter,
    Tensor,
    add,
    backward,
    count_flops,
    mul,
    no_grad,
    relu,
    row_log_softmax,
    scale,
    sub,
    sum_all,
)

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


# ---------------------------------------------------------------------------
# schedule and optimiser


@dataclass
class CosineSchedule:
    base_lr: float
    warmup_epochs: int
    total_epochs: int

    def __post_init__(self) -> None:
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ValueError("need 0 <= warmup_epochs < total_epochs")


def lr_at(epoch: int, sched: CosineSchedule) -> float:
    """Linear warmup to ``base_lr`` then cosine decay towards zero."""
    if not 0 <= epoch < sched.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {sched.total_epochs})")
    w = sched.warmup_epochs
    if epoch < w:
        return sched.base_lr * (epoch + 1) / w
    progress = (epoch - w) / (sched.total_epochs - w)
    return sched.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamWState:
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray | None],
    state: AdamWState,
    lr: float,
) -> None:
    """One AdamW update with decay applied to the weights, not the gradient."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    shrink = 1.0 - lr * state.weight_decay
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        step = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = p.data * shrink - lr * step


# ---------------------------------------------------------------------------
# losses and metrics


def cross_entropy(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, c = logits.shape
    if labels.size != n:
        raise ValueError(f"{labels.size} labels for {n} rows of logits")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    return scale(sum_all(mul(row_log_softmax(logits), Tensor(onehot))), -1.0 / n)


def l1_loss(pred: Tensor, target) -> Tensor:
    target = Tensor(np.asarray(target, dtype=np.float64).reshape(pred.shape))
    diff = sub(pred, target)
    absdiff = add(relu(diff), relu(scale(diff, -1.0)))
    return scale(sum_all(absdiff), 1.0 / diff.data.size)


def accuracy(logits: np.ndarray, labels) -> float:
    """Fraction of rows whose argmax equals the label; ties go to the lowest index."""
    labels = np.asarray(labels).reshape(-1)
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def mae(pred: np.ndarray, target) -> float:
    target = np.asarray(target, dtype=np.float64).reshape(np.shape(pred))
    return float(np.mean(np.abs(pred - target)))


def task_loss(model: GEAETModel, logits: Tensor, b: Batch) -> Tensor:
    if model.task.kind == "graph_regress":
        return l1_loss(logits, b.target)
    return cross_entropy(logits, b.target)


def task_metric(model: GEAETModel, preds: np.ndarray, targets: np.ndarray) -> float:
    if model.task.kind == "graph_regress":
        return mae(preds, targets)
    return accuracy(preds, targets)


def higher_is_better(model: GEAETModel) -> bool:
    return model.task.kind != "graph_regress"


def evaluate(model: GEAETModel, graphs: Sequence[Graph], batch_size: int = 256) -> dict[str, float]:
    """Loss and task metric (accuracy or MAE) over ``graphs``."""
    if not graphs:
        return {"loss": float("nan"), "metric": float("nan")}
    preds, targets, losses, weights = [], [], [], []
    with no_grad():
        for i in range(0, len(graphs), batch_size):
            b = batch(graphs[i : i + batch_size])
            out = model(b)
            preds.append(out.data)
            targets.append(b.target)
            losses.append(task_loss(model, out, b).item())
            weights.append(out.rows)
    p = np.concatenate(preds)
    t = np.concatenate(targets)
    return {
        "loss": float(np.average(losses, weights=weights)),
        "metric": task_metric(model, p, t),
    }


# ---------------------------------------------------------------------------
# runs


def prepare_data(cfg: RunConfig) -> DatasetSplit:
    d = cfg.dataset
    if d.kind == "tree":
        split = generate_tree_neighbour_match(d.r, d.count, d.seed, d.split)
    elif d.kind == "sbm":
        split = generate_sbm_cluster(d.n_per_cluster, d.clusters, d.p_in, d.p_out, d.seed, d.count, d.split)
    else:
        split = load_jsonl(d.path)
    for part in (split.train, split.valid, split.test):
        attach_pe(part, cfg.model.pe)
    return split


def build_model(cfg: RunConfig, split: DatasetSplit) -> GEAETModel:
    model = GEAETModel(cfg.model, split.schema, split.task)
    model.initialize(cfg.seed)
    return model


@dataclass
class RunReport:
    config: dict[str, Any]
    curves: list[dict[str, float]]
    test_metric: float
    best_epoch: int
    best_val_metric: float
    final_train_metric: float
    metric: str
    num_parameters: int
    flops: int
    seconds: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config,
            "curves": self.curves,
            "test_metric": self.test_metric,
            "best_epoch": self.best_epoch,
            "best_val_metric": self.best_val_metric,
            "final_train_metric": self.final_train_metric,
            "metric": self.metric,
            "num_parameters": self.num_parameters,
            "flops": self.flops,
            "seconds": self.seconds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @property
    def max_train_metric(self) -> float:
        return max(c["train_metric"] for c in self.curves)


@dataclass
class TrainResult:
    report: RunReport
    model: GEAETModel
    best_state: dict[str, np.ndarray]


def train(cfg: RunConfig, split: DatasetSplit | None = None) -> TrainResult:
    """Train one model; fully determined by ``cfg`` (and ``split`` if given).

    The model keeps the best-validation parameters on return. Raises
    :class:`DivergenceError` on a non-finite loss.
    """
    cfg.validate()
    t0 = time.perf_counter()
    split = prepare_data(cfg) if split is None else split
    model = build_model(cfg, split)
    params = model.parameters()
    o = cfg.optim
    sched = CosineSchedule(o.lr, o.warmup_epochs, o.epochs)
    state = AdamWState(weight_decay=o.weight_decay)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    flip_rng = np.random.default_rng([cfg.seed, 2])
    flip = cfg.model.pe.kind == "lappe" and cfg.model.pe.sign_flip
    better = higher_is_better(model)
    counter = FlopCounter()
    curves = []
    best_val, best_epoch, best_state = None, -1, model.state_dict()
    train_graphs = split.train
    for epoch in range(o.epochs):
        lr = lr_at(epoch, sched)
        order = shuffle_rng.permutation(len(train_graphs))
        losses, weights, preds, targets = [], [], [], []
        for step, i in enumerate(range(0, len(order), o.batch_size)):
            b = batch([train_graphs[j] for j in order[i : i + o.batch_size]])
            pe = random_sign_flip(b.pe, flip_rng) if flip and b.pe is not None else None
            model.zero_grad()
            with count_flops(counter):
                out = model(b, pe=pe)
            loss = task_loss(model, out, b)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite loss {value} at epoch {epoch}, step {step}")
            backward(loss)
            adamw_step(params, {k: p.grad for k, p in params.items()}, state, lr)
            losses.append(value)
            weights.append(out.rows)
            preds.append(out.data)
            targets.append(b.target)
        train_loss = float(np.average(losses, weights=weights))
        if o.eval_train:
            train_metric = evaluate(model, train_graphs, o.eval_batch_size)["metric"]
        else:
            train_metric = task_metric(model, np.concatenate(preds), np.concatenate(targets))
        val_metric = evaluate(model, split.valid, o.eval_batch_size)["metric"]
        curves.append(
            {
                "epoch": epoch,
                "lr": lr,
                "train_loss": train_loss,
                "train_metric": train_metric,
                "val_metric": val_metric,
            }
        )
        log.info("epoch %d lr %.3g loss %.4f train %.4f val %.4f", epoch, lr, train_loss, train_metric, val_metric)
        improved = best_val is None or (val_metric > best_val if better else val_metric < best_val)
        if improved or (best_val is not None and math.isnan(best_val)):
            best_val, best_epoch, best_state = val_metric, epoch, model.state_dict()
    final_train = evaluate(model, train_graphs, o.eval_batch_size)["metric"]
    model.load_state_dict(best_state)
    test_metric = evaluate(model, split.test, o.eval_batch_size)["metric"]
    report = RunReport(
        config=to_dict(cfg),
        curves=curves,
        test_metric=test_metric,
        best_epoch=best_epoch,
        best_val_metric=float(best_val),
        final_train_metric=final_train,
        metric="mae" if not better else "accuracy",
        num_parameters=model.num_parameters(),
        flops=counter.multiply_adds,
        seconds=time.perf_counter() - t0,
    )
    return TrainResult(report, model, best_state)


# ---------------------------------------------------------------------------
# sweeps


def _run_one(cfg_dict: dict[str, Any]) -> dict[str, Any]:
    from .config import resolve

    cfg = resolve(cfg_dict)
    return train(cfg).report.to_dict()


def run_many(
    configs: Sequence[RunConfig],
    jobs: int = 1,
    cache: dict[str, dict[str, Any]] | None = None,
) -> dict[str, dict[str, Any]]:
    """Train every config; results keyed by config hash.

    Reports already present in ``cache`` are reused, and new ones are added
    to it, so overlapping sweeps train each configuration once.
    """
    cache = {} if cache is None else cache
    keyed = {config_hash(c): c for c in configs}
    todo = {k: c for k, c in keyed.items() if k not in cache}
    if jobs <= 1:
        datasets: dict[str, DatasetSplit] = {}
        for key, cfg in todo.items():
            data_key = json.dumps([to_dict(cfg.dataset), to_dict(cfg.model.pe)], sort_keys=True)
            if data_key not in datasets:
                datasets[data_key] = prepare_data(cfg)
            cache[key] = train(cfg, datasets[data_key]).report.to_dict()
    elif todo:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {key: pool.submit(_run_one, to_dict(cfg)) for key, cfg in todo.items()}
            for key, f in futures.items():
                cache[key] = f.result()
    return {key: cache[key] for key in keyed}


def _stats(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def sweep(
    base: RunConfig,
    variants: dict[str, dict[str, Any]],
    seeds: Sequence[int] = (0, 1, 2, 3),
    jobs: int = 1,
    model_name: str = "GEAET",
    cache: dict[str, dict[str, Any]] | None = None,
) -> dict[str, Any]:
    """Train every (variant, seed) pair and tabulate mean and std per variant.

    ``variants`` maps a row label to dotted-key overrides of ``base``;
    ``cache`` is passed to :func:`run_many`.
    """
    plan = {
        name: [with_overrides(base, {**ov, "seed": s}) for s in seeds] for name, ov in variants.items()
    }
    results = run_many([c for cfgs in plan.values() for c in cfgs], jobs, cache)
    rows = []
    for name, cfgs in plan.items():
        reports = [results[config_hash(c)] for c in cfgs]
        test = [r["test_metric"] for r in reports]
        val = [r["best_val_metric"] for r in reports]
        t_mean, t_std = _stats(test)
        v_mean, v_std = _stats(val)
        rows.append(
            {
                "model": model_name,
                "setting": name,
                "overrides": variants[name],
                "metric": reports[0]["metric"],
                "test_mean": t_mean,
                "test_std": t_std,
                "val_mean": v_mean,
                "val_std": v_std,
                "test_values": test,
                "val_values": val,
                "seeds": list(seeds),
                "num_parameters": reports[0]["num_parameters"],
            }
        )
    return {"base_config": to_dict(base), "rows": rows}


def sweep_heads(base: RunConfig, heads: Sequence[int] = (1, 2, 4, 8), seeds=(0, 1, 2, 3), jobs=1,
                field: str = "model.ext_heads") -> dict[str, Any]:
    return sweep(base, {f"heads={h}": {field: h} for h in heads}, seeds, jobs)


def sweep_pe(base: RunConfig, kinds: Sequence[str] = ("none", "lappe", "rwpe"), seeds=(0, 1, 2, 3),
             jobs=1) -> dict[str, Any]:
    return sweep(base, {f"pe={k}": {"model.pe.kind": k} for k in kinds}, seeds, jobs)


ABLATIONS = {
    "full": {},
    "w/o external node units": {"model.use_node_units": False},
    "w/o external edge units": {"model.use_edge_units": False},
    "w/o shared unit": {"model.use_shared_unit": False},
}


def sweep_ablation(base: RunConfig, seeds=(0, 1, 2, 3), jobs=1, cache=None) -> dict[str, Any]:
    return sweep(base, ABLATIONS, seeds, jobs, cache=cache)


def format_table(table: dict[str, Any]) -> str:
    lines = [f"{'model':<8} {'setting':<26} {'test':>16} {'val':>16}"]
    for r in table["rows"]:
        lines.append(
            f"{r['model']:<8} {r['setting']:<26} "
            f"{r['test_mean']:>8.4f} ± {r['test_std']:<6.4f}{r['val_mean']:>8.4f} ± {r['val_std']:.4f}"
        )
    return "\n".join(lines)
