"""GEAET: graph embedding, stacked feature-extraction layers and task heads."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import GEANet, TransformerLayer
from .graph import Batch, FeatureSchema, Graph, TaskSpec, _atomic_write, batch
from .mpnn import EDGE_AWARE_MPNNS, MPNN_KINDS, make_mpnn
from .nn import LayerNorm, Linear, Module
from .posenc import PosEncConfig
from .tensor import Tensor, add, gather_rows, matmul, mul, no_grad, relu, scatter_add_rows

CHECKPOINT_FORMAT = "geaet-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    layers: int = 4
    dim: int = 32
    units: int = 16
    self_heads: int = 4
    ext_heads: int = 4
    mpnn: str = "gatedgcn"
    use_tlayer: bool = True
    use_geanet: bool = True
    use_node_units: bool = True
    use_edge_units: bool = True
    use_shared_unit: bool = True
    # which node features the GEANet node stream reads: layer input "x" or MPNN output "mpnn"
    geanet_node_input: str = "x"
    pe: PosEncConfig = field(default_factory=PosEncConfig)

    def validate(self) -> None:
        if self.layers < 0:
            raise ValueError("model.layers must be nonnegative")
        if self.dim < 1 or self.units < 1:
            raise ValueError("model.dim and model.units must be positive")
        if self.mpnn != "none" and self.mpnn not in MPNN_KINDS:
            raise ValueError(f"model.mpnn must be 'none' or one of {sorted(MPNN_KINDS)}")
        if self.layers and self.mpnn == "none" and not self.use_tlayer and not self.use_geanet:
            raise ValueError("every layer needs at least one of mpnn, tlayer, geanet")
        if self.use_tlayer and (self.self_heads < 1 or self.dim % self.self_heads):
            raise ValueError(f"model.dim={self.dim} not divisible by self_heads={self.self_heads}")
        if self.use_geanet and (self.ext_heads < 1 or self.dim % self.ext_heads):
            raise ValueError(f"model.dim={self.dim} not divisible by ext_heads={self.ext_heads}")
        if self.geanet_node_input not in ("x", "mpnn"):
            raise ValueError("model.geanet_node_input must be 'x' or 'mpnn'")
        self.pe.validate()


class Embedding(Module):
    """``x_i = T p_i + W_x alpha_i + u`` and ``e_ij = W_e beta_ij + v``.

    Categorical inputs use one lookup table per field, which equals a
    one-hot encoding times a weight matrix. Graphs without edge inputs get
    ``e_ij = v``.
    """

    def __init__(self, dim: int, schema: FeatureSchema, pe: PosEncConfig) -> None:
        super().__init__()
        self.schema = schema
        self.pe_cfg = pe
        self.node_fields = len(schema.node_cat_vocab)
        self.edge_fields = len(schema.edge_cat_vocab)
        for i, vocab in enumerate(schema.node_cat_vocab):
            self.param(f"node_table_{i}", (vocab, dim), "glorot")
        if not schema.node_cat_vocab:
            self.param("W_x", (schema.node_feat_dim, dim), "glorot")
        self.param("u", (1, dim), "zeros")
        for i, vocab in enumerate(schema.edge_cat_vocab):
            self.param(f"edge_table_{i}", (vocab, dim), "glorot")
        if schema.edge_feat_dim:
            self.param("W_e", (schema.edge_feat_dim, dim), "glorot")
        self.param("v", (1, dim), "zeros")
        if pe.kind != "none":
            self.param("T", (pe.k, dim), "glorot")

    def __call__(self, b: Batch, pe: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        if self.node_fields:
            if b.node_cat is None or b.node_cat.shape[1] != self.node_fields:
                raise ValueError("node inputs do not match the embedding schema")
            x = gather_rows(self.node_table_0, b.node_cat[:, 0])
            for i in range(1, self.node_fields):
                x = add(x, gather_rows(getattr(self, f"node_table_{i}"), b.node_cat[:, i]))
        else:
            if b.node_feat is None or b.node_feat.shape[1] != self.W_x.rows:
                raise ValueError("node inputs do not match the embedding schema")
            x = matmul(Tensor(b.node_feat), self.W_x)
        x = add(x, self.u)
        if self.pe_cfg.kind != "none":
            pe = b.pe if pe is None else pe
            if pe is None or pe.shape != (b.n, self.pe_cfg.k):
                raise ValueError(f"expected positional encodings of shape {(b.n, self.pe_cfg.k)}")
            x = add(x, matmul(Tensor(pe), self.T))
        if self.edge_fields:
            if b.edge_cat is None or b.edge_cat.shape[1] != self.edge_fields:
                raise ValueError("edge inputs do not match the embedding schema")
            e = gather_rows(self.edge_table_0, b.edge_cat[:, 0])
            for i in range(1, self.edge_fields):
                e = add(e, gather_rows(getattr(self, f"edge_table_{i}"), b.edge_cat[:, i]))
            e = add(e, self.v)
        elif self.schema.edge_feat_dim:
            if b.edge_feat is None or b.edge_feat.shape[1] != self.schema.edge_feat_dim:
                raise ValueError("edge inputs do not match the embedding schema")
            e = add(matmul(Tensor(b.edge_feat), self.W_e), self.v)
        else:
            e = gather_rows(self.v, np.zeros(b.m, dtype=np.int64))
        return x, e


class FFN(Module):
    """``layer_norm(Z + W2 relu(W1 Z + b1) + b2)`` with hidden width 2d."""

    def __init__(self, dim: int) -> None:
        super().__init__()
        self.lin1 = Linear(dim, 2 * dim)
        self.lin2 = Linear(2 * dim, dim)
        self.norm = LayerNorm(dim)

    def __call__(self, z: Tensor) -> Tensor:
        return self.norm(add(z, self.lin2(relu(self.lin1(z)))))


class GEAETLayer(Module):
    """One feature-extraction layer.

    MPNN output, self-attention output and GEANet output are summed and fed
    through the FFN; the GEANet edge stream output becomes the next edge
    features. A disabled MPNN passes ``(X, E)`` through, a disabled
    transformer contributes nothing, a disabled GEANet contributes nothing
    to the node sum and leaves the MPNN edges as they are.
    """

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        d = cfg.dim
        self.node_input = cfg.geanet_node_input
        self.mpnn = make_mpnn(cfg.mpnn, d) if cfg.mpnn != "none" else None
        self.tlayer = TransformerLayer(d, cfg.self_heads) if cfg.use_tlayer else None
        self.geanet = (
            GEANet(d, cfg.units, cfg.ext_heads, cfg.use_node_units, cfg.use_edge_units, cfg.use_shared_unit)
            if cfg.use_geanet
            else None
        )
        self.ffn = FFN(d)
        # cleared by the model when no later layer reads edge features
        self.edges_needed = True

    def __call__(self, x: Tensor, e: Tensor, b: Batch, record: dict | None = None):
        if self.mpnn is not None:
            x_m, e_m = self.mpnn(x, e, b)
        else:
            x_m, e_m = x, e
        z = x_m
        if self.tlayer is not None:
            rec = record.setdefault("self", []) if record is not None else None
            z = add(z, self.tlayer(x, b.node_offsets, rec))
        e_next = e_m
        if self.geanet is not None:
            rec = record.setdefault("gea", []) if record is not None else None
            x_in = x if self.node_input == "x" else x_m
            if self.edges_needed:
                x_g, e_next = self.geanet(x_in, e_m, b.node_offsets, b.edge_offsets, rec)
            else:
                x_g = self.geanet.node_stream(x_in, b.node_offsets, rec)
            if self.geanet.units.use_node_units:
                z = add(z, x_g)
        return self.ffn(z), e_next


class PredictionHead(Module):
    """Readout (none, mean pooling or target-node row) then ``d -> d -> C`` MLP."""

    def __init__(self, dim: int, task: TaskSpec) -> None:
        super().__init__()
        self.task = task
        self.lin1 = Linear(dim, dim)
        self.lin2 = Linear(dim, task.num_outputs)

    def readout(self, x: Tensor, b: Batch) -> Tensor:
        if self.task.kind == "node_classify":
            return x
        if self.task.readout == "target":
            if b.target_nodes is None:
                raise ValueError("target readout needs graphs with a target node")
            return gather_rows(x, b.target_nodes)
        pooled = scatter_add_rows(x, b.graph_id, b.num_graphs)
        return mul(pooled, Tensor(1.0 / b.graph_sizes.reshape(-1, 1)))

    def __call__(self, x: Tensor, b: Batch) -> Tensor:
        return self.lin2(relu(self.lin1(self.readout(x, b))))


class GEAETModel(Module):
    def __init__(self, cfg: ModelConfig, schema: FeatureSchema, task: TaskSpec) -> None:
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.task = task
        self.embedding = Embedding(cfg.dim, schema, cfg.pe)
        self.layers = [GEAETLayer(cfg) for _ in range(cfg.layers)]
        # the GEANet edge stream of layer l only matters if a later MPNN reads edges
        reads_edges = cfg.mpnn in EDGE_AWARE_MPNNS
        for i, layer in enumerate(self.layers):
            layer.edges_needed = reads_edges and i < len(self.layers) - 1
        self.head = PredictionHead(cfg.dim, task)

    def encode(self, b: Batch, pe: np.ndarray | None = None, record: dict | None = None):
        x, e = self.embedding(b, pe)
        for layer in self.layers:
            rec = record.setdefault("layers", []) if record is not None else None
            if rec is not None:
                rec.append({})
            x, e = layer(x, e, b, rec[-1] if rec is not None else None)
        return x, e

    def __call__(self, g: Graph | Batch, pe: np.ndarray | None = None, record: dict | None = None) -> Tensor:
        b = batch([g]) if isinstance(g, Graph) else g
        _check_task(self.task, b)
        x, _ = self.encode(b, pe, record)
        return self.head(x, b)

    def predict(self, g: Graph | Batch) -> np.ndarray:
        with no_grad():
            return self(g).data


def _check_task(task: TaskSpec, b: Batch) -> None:
    expected = {"node_classify": "node", "graph_classify": "graph_class", "graph_regress": "graph_reg"}
    if expected.get(task.kind) != b.target_kind:
        raise ValueError(f"task {task.kind!r} does not match graph targets of kind {b.target_kind!r}")


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_dumps(state: dict[str, np.ndarray]) -> str:
    entries = [
        {"name": name, "shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
        for name, arr in state.items()
    ]
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "params": entries}
    return json.dumps(doc, separators=(",", ":")) + "\n"


def checkpoint_loads(text: str) -> dict[str, np.ndarray]:
    doc = json.loads(text)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a GEAET checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    state = {}
    for entry in doc["params"]:
        arr = np.array(entry["data"], dtype=np.float64)
        state[entry["name"]] = arr.reshape(entry["shape"])
    return state


def save_checkpoint(model_or_state, path: str | Path) -> None:
    state = model_or_state.state_dict() if isinstance(model_or_state, Module) else model_or_state
    _atomic_write(Path(path), checkpoint_dumps(state))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    return checkpoint_loads(Path(path).read_text())
