"""Forward-pass cost scaling on random sparse graphs."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .attention import GEANet
from .graph import FeatureSchema, TaskSpec, batch, random_graph
from .model import GEAETModel, ModelConfig
from .tensor import FlopCounter, Tensor, count_flops, no_grad

SIZES = (128, 256, 512, 1024, 2048)
MEAN_DEGREE = 4


@dataclass
class BenchConfig:
    sizes: tuple[int, ...] = SIZES
    mean_degree: int = MEAN_DEGREE
    geanet_dim: int = 32
    geanet_units: int = 16
    geanet_heads: int = 4
    # small width keeps the quadratic attention term visible within n <= 2048
    full_dim: int = 8
    full_units: int = 4
    full_heads: int = 2
    full_layers: int = 1
    repeats: int = 3
    seed: int = 0
    variants: tuple[str, ...] = ("geanet", "geaet_self_attention")


@dataclass
class BenchRow:
    n: int
    edges: int
    flops: int
    ms: float


@dataclass
class BenchResult:
    variant: str
    rows: list[BenchRow] = field(default_factory=list)

    @property
    def flop_exponent(self) -> float:
        return fit_exponent([r.n for r in self.rows], [r.flops for r in self.rows])

    @property
    def time_exponent(self) -> float:
        return fit_exponent([r.n for r in self.rows], [r.ms for r in self.rows])

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "rows": [vars(r) for r in self.rows],
            "flop_exponent": self.flop_exponent,
            "time_exponent": self.time_exponent,
        }


def fit_exponent(sizes, costs) -> float:
    """Least-squares slope of log(cost) against log(n)."""
    slope, _ = np.polyfit(np.log(np.asarray(sizes, float)), np.log(np.asarray(costs, float)), 1)
    return float(slope)


def _forward(variant: str, cfg: BenchConfig, n: int, rng: np.random.Generator):
    if variant == "geanet":
        d = cfg.geanet_dim
        g = random_graph(n, n * cfg.mean_degree // 2, rng, node_dim=d, edge_dim=d)
        b = batch([g])
        net = GEANet(d, cfg.geanet_units, cfg.geanet_heads)
        net.initialize(cfg.seed)
        x, e = Tensor(g.node_feat), Tensor(g.edge_feat)
        return g, lambda: net(x, e, b.node_offsets, b.edge_offsets)
    if variant == "geaet_self_attention":
        d = cfg.full_dim
        g = random_graph(n, n * cfg.mean_degree // 2, rng, node_dim=d, edge_dim=d)
        b = batch([g])
        mcfg = ModelConfig(
            layers=cfg.full_layers,
            dim=d,
            units=cfg.full_units,
            self_heads=cfg.full_heads,
            ext_heads=cfg.full_heads,
        )
        model = GEAETModel(mcfg, FeatureSchema(node_feat_dim=d, edge_feat_dim=d), TaskSpec("node_classify", 2))
        model.initialize(cfg.seed)
        return g, lambda: model(b)
    raise ValueError(f"unknown bench variant {variant!r}")


def run_bench(cfg: BenchConfig | None = None) -> list[BenchResult]:
    cfg = cfg or BenchConfig()
    results = []
    for variant in cfg.variants:
        res = BenchResult(variant)
        for n in cfg.sizes:
            g, fwd = _forward(variant, cfg, n, np.random.default_rng([cfg.seed, n]))
            counter = FlopCounter()
            times = []
            with no_grad():
                for i in range(cfg.repeats):
                    t0 = time.perf_counter()
                    if i == 0:
                        with count_flops(counter):
                            fwd()
                    else:
                        fwd()
                    times.append(time.perf_counter() - t0)
            res.rows.append(BenchRow(n, g.m, counter.multiply_adds, 1000 * min(times)))
        results.append(res)
    return results


def format_bench(results: list[BenchResult]) -> str:
    lines = []
    for res in results:
        lines.append(f"[{res.variant}]")
        lines.append(f"{'n':>6} {'arcs':>7} {'flops':>14} {'ms':>10}")
        for r in res.rows:
            lines.append(f"{r.n:>6} {r.edges:>7} {r.flops:>14} {r.ms:>10.2f}")
        lines.append(f"flop exponent {res.flop_exponent:.3f}   time exponent {res.time_exponent:.3f}")
    return "\n".join(lines)
