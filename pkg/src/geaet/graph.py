"""Graphs, batches, synthetic generators and the JSONL dataset format."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np

TARGET_KINDS = ("node", "graph_class", "graph_reg")


class GraphFormatError(ValueError):
    """A JSONL line could not be parsed into a graph."""


def _as_rows(value, count: int, dtype) -> np.ndarray:
    arr = np.asarray(value, dtype=dtype)
    if count == 0:
        # an empty list carries no width; keep the width of an empty 2-D array
        return arr.reshape(0, arr.shape[1] if arr.ndim == 2 else 0)
    return arr.reshape(count, -1)


@dataclass(eq=False)
class Graph:
    """One graph with arcs stored as an (m, 2) array of ``(src, dst)`` pairs.

    Undirected edges appear as both orientations. Node inputs are either
    categorical ids ``node_cat`` (n x fields) or dense ``node_feat``; edge
    inputs likewise, or absent. ``target`` holds per-node labels
    (``target_kind == "node"``), a single class id (``"graph_class"``) or a
    float vector (``"graph_reg"``). ``pe`` is a derived positional encoding
    and is never serialised.
    """

    n: int
    edges: np.ndarray
    target_kind: str
    target: np.ndarray
    node_cat: np.ndarray | None = None
    node_feat: np.ndarray | None = None
    edge_cat: np.ndarray | None = None
    edge_feat: np.ndarray | None = None
    target_node: int | None = None
    pe: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.node_cat is not None:
            self.node_cat = _as_rows(self.node_cat, self.n, np.int64)
        if self.node_feat is not None:
            self.node_feat = _as_rows(self.node_feat, self.n, np.float64)
        if self.edge_cat is not None:
            self.edge_cat = _as_rows(self.edge_cat, len(self.edges), np.int64)
        if self.edge_feat is not None:
            self.edge_feat = _as_rows(self.edge_feat, len(self.edges), np.float64)
        dtype = np.float64 if self.target_kind == "graph_reg" else np.int64
        self.target = np.asarray(self.target, dtype=dtype).reshape(-1)

    @property
    def m(self) -> int:
        return len(self.edges)

    def validate(self) -> None:
        if self.n < 1:
            raise ValueError("graph needs at least one node")
        if self.m and (self.edges.min() < 0 or self.edges.max() >= self.n):
            raise ValueError("arc endpoint out of range")
        if (self.node_cat is None) == (self.node_feat is None):
            raise ValueError("exactly one of node_cat / node_feat must be set")
        if self.edge_cat is not None and self.edge_feat is not None:
            raise ValueError("at most one of edge_cat / edge_feat may be set")
        if self.target_kind not in TARGET_KINDS:
            raise ValueError(f"unknown target kind {self.target_kind!r}")
        if self.target_kind == "node" and self.target.size != self.n:
            raise ValueError("node targets need one label per node")
        if self.target_kind == "graph_class" and self.target.size != 1:
            raise ValueError("graph_class targets hold exactly one label")
        if self.target_node is not None and not 0 <= self.target_node < self.n:
            raise ValueError("target_node out of range")
        arcs = {tuple(a) for a in self.edges.tolist()}
        if len(arcs) != self.m:
            raise ValueError("duplicate arcs")
        missing = [a for a in arcs if (a[1], a[0]) not in arcs]
        if missing:
            raise ValueError(f"arc {missing[0]} lacks its reverse")

    def permute(self, order: Sequence[int]) -> Graph:
        """Relabel nodes so that new node ``k`` is old node ``order[k]``."""
        order = np.asarray(order, dtype=np.int64)
        inv = np.empty_like(order)
        inv[order] = np.arange(self.n)
        return Graph(
            n=self.n,
            edges=inv[self.edges],
            target_kind=self.target_kind,
            target=self.target[order] if self.target_kind == "node" else self.target.copy(),
            node_cat=None if self.node_cat is None else self.node_cat[order],
            node_feat=None if self.node_feat is None else self.node_feat[order],
            edge_cat=None if self.edge_cat is None else self.edge_cat.copy(),
            edge_feat=None if self.edge_feat is None else self.edge_feat.copy(),
            target_node=None if self.target_node is None else int(inv[self.target_node]),
            pe=None if self.pe is None else self.pe[order],
        )

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        a[self.edges[:, 0], self.edges[:, 1]] = 1.0
        return a


def _same(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    if len(a) == 0 and len(b) == 0:
        return True
    return a.shape == b.shape and a.dtype == b.dtype and np.array_equal(a, b)


def graphs_equal(a: Graph, b: Graph) -> bool:
    """Field-exact equality (floats compared bit for bit)."""
    if a.n != b.n or a.target_kind != b.target_kind or a.target_node != b.target_node:
        return False
    if not _same(a.edges, b.edges):
        return False
    for name in ("node_cat", "edge_cat", "target"):
        if not _same(getattr(a, name), getattr(b, name)):
            return False
    for name in ("node_feat", "edge_feat"):
        x, y = getattr(a, name), getattr(b, name)
        if (x is None) != (y is None):
            return False
        if x is not None and (len(x) or len(y)) and (x.shape != y.shape or x.tobytes() != y.tobytes()):
            return False
    if a.target_kind == "graph_reg":
        return a.target.tobytes() == b.target.tobytes()
    return True


# ---------------------------------------------------------------------------
# batching


@dataclass(eq=False)
class Batch:
    """Block-diagonal merge of several graphs.

    ``node_offsets[g]:node_offsets[g + 1]`` are the rows of graph ``g``;
    ``edge_offsets`` does the same for arcs.
    """

    n: int
    edges: np.ndarray
    graph_id: np.ndarray
    node_offsets: np.ndarray
    edge_offsets: np.ndarray
    target_kind: str
    target: np.ndarray
    node_cat: np.ndarray | None = None
    node_feat: np.ndarray | None = None
    edge_cat: np.ndarray | None = None
    edge_feat: np.ndarray | None = None
    target_nodes: np.ndarray | None = None
    pe: np.ndarray | None = None
    target_sizes: np.ndarray | None = None

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def num_graphs(self) -> int:
        return len(self.node_offsets) - 1

    @property
    def src(self) -> np.ndarray:
        return self.edges[:, 0]

    @property
    def dst(self) -> np.ndarray:
        return self.edges[:, 1]

    @cached_property
    def in_degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.n).astype(np.float64)

    @cached_property
    def graph_sizes(self) -> np.ndarray:
        return np.diff(self.node_offsets)


def _cat(parts):
    if parts[0] is None:
        if any(p is not None for p in parts):
            raise ValueError("feature schema differs between graphs")
        return None
    if any(p is None for p in parts):
        raise ValueError("feature schema differs between graphs")
    filled = [p for p in parts if len(p)]
    widths = {p.shape[1] for p in filled}
    if len(widths) > 1:
        raise ValueError(f"feature widths differ between graphs: {sorted(widths)}")
    if not filled:
        return np.zeros((0, max(p.shape[1] for p in parts)), dtype=parts[0].dtype)
    return np.concatenate(filled, axis=0)


def batch(graphs: Sequence[Graph]) -> Batch:
    if not graphs:
        raise ValueError("cannot batch zero graphs")
    kinds = {g.target_kind for g in graphs}
    if len(kinds) != 1:
        raise ValueError(f"mixed target kinds {sorted(kinds)}")
    kind = kinds.pop()
    sizes = np.array([g.n for g in graphs], dtype=np.int64)
    arcs = np.array([g.m for g in graphs], dtype=np.int64)
    node_offsets = np.concatenate([[0], np.cumsum(sizes)])
    edge_offsets = np.concatenate([[0], np.cumsum(arcs)])
    edges = np.concatenate(
        [g.edges + node_offsets[i] for i, g in enumerate(graphs)], axis=0
    ).reshape(-1, 2)
    has_target_node = [g.target_node is not None for g in graphs]
    if any(has_target_node) and not all(has_target_node):
        raise ValueError("either every graph or none has a target node")
    target_nodes = None
    if all(has_target_node):
        target_nodes = np.array([g.target_node + node_offsets[i] for i, g in enumerate(graphs)])
    if kind == "graph_reg":
        target = np.stack([g.target for g in graphs])
    else:
        target = np.concatenate([g.target for g in graphs])
    return Batch(
        n=int(node_offsets[-1]),
        edges=edges,
        graph_id=np.repeat(np.arange(len(graphs)), sizes),
        node_offsets=node_offsets,
        edge_offsets=edge_offsets,
        target_kind=kind,
        target=target,
        node_cat=_cat([g.node_cat for g in graphs]),
        node_feat=_cat([g.node_feat for g in graphs]),
        edge_cat=_cat([g.edge_cat for g in graphs]),
        edge_feat=_cat([g.edge_feat for g in graphs]),
        target_nodes=target_nodes,
        pe=_cat([g.pe for g in graphs]),
        target_sizes=np.array([g.target.size for g in graphs]),
    )


def unbatch(b: Batch) -> list[Graph]:
    out = []
    tcuts = np.concatenate([[0], np.cumsum(b.target_sizes)])
    for i in range(b.num_graphs):
        n0, n1 = b.node_offsets[i], b.node_offsets[i + 1]
        e0, e1 = b.edge_offsets[i], b.edge_offsets[i + 1]

        def rows(a, lo, hi):
            return None if a is None else a[lo:hi].copy()

        if b.target_kind == "graph_reg":
            target = b.target[i].copy()
        else:
            target = b.target[tcuts[i] : tcuts[i + 1]].copy()
        out.append(
            Graph(
                n=int(n1 - n0),
                edges=b.edges[e0:e1] - n0,
                target_kind=b.target_kind,
                target=target,
                node_cat=rows(b.node_cat, n0, n1),
                node_feat=rows(b.node_feat, n0, n1),
                edge_cat=rows(b.edge_cat, e0, e1),
                edge_feat=rows(b.edge_feat, e0, e1),
                target_node=None if b.target_nodes is None else int(b.target_nodes[i] - n0),
                pe=rows(b.pe, n0, n1),
            )
        )
    return out


# ---------------------------------------------------------------------------
# datasets


@dataclass
class FeatureSchema:
    """Input layout shared by all graphs of a dataset."""

    node_cat_vocab: tuple[int, ...] = ()
    node_feat_dim: int = 0
    edge_cat_vocab: tuple[int, ...] = ()
    edge_feat_dim: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "node_cat_vocab": list(self.node_cat_vocab),
            "node_feat_dim": self.node_feat_dim,
            "edge_cat_vocab": list(self.edge_cat_vocab),
            "edge_feat_dim": self.edge_feat_dim,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> FeatureSchema:
        return cls(
            node_cat_vocab=tuple(d.get("node_cat_vocab", ())),
            node_feat_dim=int(d.get("node_feat_dim", 0)),
            edge_cat_vocab=tuple(d.get("edge_cat_vocab", ())),
            edge_feat_dim=int(d.get("edge_feat_dim", 0)),
        )


@dataclass
class TaskSpec:
    """Prediction task: ``kind`` in node_classify / graph_classify / graph_regress."""

    kind: str
    num_outputs: int
    readout: str = "mean"  # "mean" pooling or the "target" node row

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "num_outputs": self.num_outputs, "readout": self.readout}


@dataclass
class DatasetSplit:
    train: list[Graph]
    valid: list[Graph]
    test: list[Graph]
    seed: int
    generator: str
    params: dict[str, Any]
    schema: FeatureSchema
    task: TaskSpec

    def meta(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "generator": self.generator,
            "params": self.params,
            "schema": self.schema.to_dict(),
            "task": self.task.to_dict(),
            "sizes": [len(self.train), len(self.valid), len(self.test)],
        }


def split_counts(count: int, fractions: Sequence[float] = (0.8, 0.1, 0.1)) -> tuple[int, int, int]:
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise ValueError(f"split fractions must be three nonnegative numbers summing to 1: {fractions}")
    n_train = int(round(fractions[0] * count))
    n_valid = int(round(fractions[1] * count))
    n_valid = min(n_valid, count - n_train)
    return n_train, n_valid, count - n_train - n_valid


def _split(graphs, fractions):
    a, b, _ = split_counts(len(graphs), fractions)
    return graphs[:a], graphs[a : a + b], graphs[a + b :]


def binary_tree_edges(depth: int) -> np.ndarray:
    """Arcs of a complete binary tree in heap order (root 0, children 2i+1, 2i+2)."""
    n = 2 ** (depth + 1) - 1
    child = np.arange(1, n)
    parent = (child - 1) // 2
    arcs = np.empty((2 * (n - 1), 2), dtype=np.int64)
    arcs[0::2, 0], arcs[0::2, 1] = parent, child
    arcs[1::2, 0], arcs[1::2, 1] = child, parent
    return arcs


def generate_tree_neighbour_match(
    r: int,
    count: int,
    seed: int,
    split: Sequence[float] = (0.8, 0.1, 0.1),
) -> DatasetSplit:
    """Complete binary trees of depth ``r`` whose root must find its match.

    Each of the ``2**r`` leaves carries ``(class, key)`` with classes and keys
    drawn as independent random permutations of ``1..2**r``. Internal nodes
    carry ``(0, 0)``; the root carries ``(0, query)``. The root's label is the
    class of the leaf whose key equals the query, shifted to ``0..2**r - 1``.
    """
    if r < 2:
        raise ValueError("tree depth r must be at least 2")
    if count < 1:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    n = 2 ** (r + 1) - 1
    leaves = 2**r
    first_leaf = n - leaves
    edges = binary_tree_edges(r)
    graphs = []
    for _ in range(count):
        classes = rng.permutation(leaves) + 1
        keys = rng.permutation(leaves) + 1
        query = int(rng.integers(1, leaves + 1))
        cat = np.zeros((n, 2), dtype=np.int64)
        cat[first_leaf:, 0] = classes
        cat[first_leaf:, 1] = keys
        cat[0, 1] = query
        label = int(classes[np.nonzero(keys == query)[0][0]]) - 1
        graphs.append(
            Graph(
                n=n,
                edges=edges.copy(),
                target_kind="graph_class",
                target=np.array([label]),
                node_cat=cat,
                target_node=0,
            )
        )
    train, valid, test = _split(graphs, split)
    return DatasetSplit(
        train,
        valid,
        test,
        seed=seed,
        generator="tree",
        params={"r": r, "count": count, "split": list(split)},
        schema=FeatureSchema(node_cat_vocab=(leaves + 1, leaves + 1)),
        task=TaskSpec("graph_classify", leaves, readout="target"),
    )


def sbm_graph(
    n_per_cluster: int,
    clusters: int,
    p_in: float,
    p_out: float,
    rng: np.random.Generator,
) -> Graph:
    """One stochastic-block-model graph with one revealed seed node per cluster."""
    n = n_per_cluster * clusters
    labels = np.repeat(np.arange(clusters), n_per_cluster)
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_in, p_out)
    upper = np.triu(rng.random((n, n)) < prob, k=1)
    adj = upper | upper.T
    for i in range(n):
        if not adj[i].any() and n_per_cluster > 1:
            mates = np.nonzero((labels == labels[i]) & (np.arange(n) != i))[0]
            j = int(rng.choice(mates))
            adj[i, j] = adj[j, i] = True
    src, dst = np.nonzero(adj)
    cat = np.zeros((n, 1), dtype=np.int64)
    for c in range(clusters):
        members = np.nonzero(labels == c)[0]
        cat[int(rng.choice(members)), 0] = c + 1
    return Graph(
        n=n,
        edges=np.stack([src, dst], axis=1),
        target_kind="node",
        target=labels,
        node_cat=cat,
    )


def random_graph(
    n: int,
    edges: int,
    rng: np.random.Generator,
    node_dim: int = 4,
    edge_dim: int = 0,
    classes: int = 2,
) -> Graph:
    """Uniformly random simple graph with exactly ``edges`` undirected edges.

    Node inputs are dense N(0, 1) features; edge features are dense too when
    ``edge_dim`` > 0. Targets are random per-node class labels.
    """
    if not 0 <= edges <= n * (n - 1) // 2:
        raise ValueError(f"{edges} edges do not fit in a simple graph on {n} nodes")
    chosen: set[tuple[int, int]] = set()
    while len(chosen) < edges:
        pairs = rng.integers(0, n, size=(2 * (edges - len(chosen)) + 1, 2))
        for i, j in pairs.tolist():
            if i != j and len(chosen) < edges:
                chosen.add((min(i, j), max(i, j)))
    und = np.array(sorted(chosen), dtype=np.int64).reshape(-1, 2)
    arcs = np.stack([und, und[:, ::-1]], axis=1).reshape(-1, 2)
    return Graph(
        n=n,
        edges=arcs,
        target_kind="node",
        target=rng.integers(0, classes, size=n),
        node_feat=rng.normal(size=(n, node_dim)),
        edge_feat=rng.normal(size=(len(arcs), edge_dim)) if edge_dim else None,
    )


def generate_sbm_cluster(
    n_per_cluster: int = 20,
    clusters: int = 6,
    p_in: float = 0.55,
    p_out: float = 0.25,
    seed: int = 0,
    count: int = 1000,
    split: Sequence[float] = (0.8, 0.1, 0.1),
) -> DatasetSplit:
    if not (0 <= p_out < p_in <= 1):
        raise ValueError(f"need 0 <= p_out < p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if n_per_cluster < 1 or clusters < 1 or count < 1:
        raise ValueError("cluster size, cluster count and graph count must be positive")
    rng = np.random.default_rng(seed)
    graphs = [sbm_graph(n_per_cluster, clusters, p_in, p_out, rng) for _ in range(count)]
    train, valid, test = _split(graphs, split)
    return DatasetSplit(
        train,
        valid,
        test,
        seed=seed,
        generator="sbm",
        params={
            "n_per_cluster": n_per_cluster,
            "clusters": clusters,
            "p_in": p_in,
            "p_out": p_out,
            "count": count,
            "split": list(split),
        },
        schema=FeatureSchema(node_cat_vocab=(clusters + 1,)),
        task=TaskSpec("node_classify", clusters),
    )


# ---------------------------------------------------------------------------
# JSONL


def graph_to_json(g: Graph) -> dict[str, Any]:
    d: dict[str, Any] = {"n": g.n, "edges": g.edges.tolist()}
    if g.node_cat is not None:
        d["node_cat"] = g.node_cat.tolist()
    else:
        d["node_feat"] = g.node_feat.tolist()
    if g.edge_cat is not None:
        d["edge_cat"] = g.edge_cat.tolist()
    if g.edge_feat is not None:
        d["edge_feat"] = g.edge_feat.tolist()
    d["target"] = {"kind": g.target_kind, "values": g.target.tolist()}
    d["target_node"] = g.target_node
    return d


_KEYS = {"n", "edges", "node_cat", "node_feat", "edge_cat", "edge_feat", "target", "target_node"}


def graph_from_json(d: dict[str, Any]) -> Graph:
    if not isinstance(d, dict):
        raise ValueError("expected a JSON object")
    unknown = set(d) - _KEYS
    if unknown:
        raise ValueError(f"unknown keys {sorted(unknown)}")
    n = d["n"]
    if not isinstance(n, int) or n < 1:
        raise ValueError("'n' must be a positive integer")
    arcs = [tuple(a) for a in d.get("edges", [])]
    if any(len(a) != 2 for a in arcs):
        raise ValueError("each edge must be a [src, dst] pair")
    efeat_key = "edge_cat" if "edge_cat" in d else "edge_feat" if "edge_feat" in d else None
    efeat = list(d[efeat_key]) if efeat_key else None
    if efeat is not None and len(efeat) != len(arcs):
        raise ValueError(f"{efeat_key} has {len(efeat)} rows for {len(arcs)} edges")
    # undirected graphs: add any missing reverse arc right after its partner
    present = set(arcs)
    full, full_feat = [], []
    for i, (s, t) in enumerate(arcs):
        full.append((s, t))
        if efeat is not None:
            full_feat.append(efeat[i])
        if (t, s) not in present:
            present.add((t, s))
            full.append((t, s))
            if efeat is not None:
                full_feat.append(efeat[i])
    target = d["target"]
    if target.get("kind") not in TARGET_KINDS:
        raise ValueError(f"unknown target kind {target.get('kind')!r}")
    g = Graph(
        n=n,
        edges=np.array(full, dtype=np.int64).reshape(-1, 2),
        target_kind=target["kind"],
        target=np.array(target["values"]),
        node_cat=d.get("node_cat"),
        node_feat=d.get("node_feat"),
        edge_cat=full_feat if efeat_key == "edge_cat" else None,
        edge_feat=full_feat if efeat_key == "edge_feat" else None,
        target_node=d.get("target_node"),
    )
    g.validate()
    return g


def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_graphs(graphs: Sequence[Graph]) -> str:
    return "".join(json.dumps(graph_to_json(g), separators=(",", ":")) + "\n" for g in graphs)


def write_graphs(path: str | Path, graphs: Sequence[Graph]) -> None:
    _atomic_write(Path(path), dumps_graphs(graphs))


def read_graphs(path: str | Path) -> list[Graph]:
    graphs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                graphs.append(graph_from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError, AttributeError) as exc:
                raise GraphFormatError(f"{path}:{lineno}: {exc}") from exc
    return graphs


def save_jsonl(split: DatasetSplit, path: str | Path) -> None:
    """Write ``train/valid/test.jsonl`` and ``meta.json`` into directory ``path``."""
    path = Path(path)
    for name in ("train", "valid", "test"):
        write_graphs(path / f"{name}.jsonl", getattr(split, name))
    _atomic_write(path / "meta.json", json.dumps(split.meta(), indent=2, sort_keys=True) + "\n")


def load_jsonl(path: str | Path) -> DatasetSplit:
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    parts = [read_graphs(path / f"{name}.jsonl") for name in ("train", "valid", "test")]
    task = meta["task"]
    return DatasetSplit(
        *parts,
        seed=meta["seed"],
        generator=meta["generator"],
        params=meta["params"],
        schema=FeatureSchema.from_dict(meta["schema"]),
        task=TaskSpec(task["kind"], task["num_outputs"], task.get("readout", "mean")),
    )
