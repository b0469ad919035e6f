import numpy as np
import pytest

from geaet.attention import SelfAttention
from geaet.graph import FeatureSchema, TaskSpec, batch, random_graph
from geaet.model import (
    GEAETModel,
    ModelConfig,
    checkpoint_dumps,
    checkpoint_loads,
    load_checkpoint,
    save_checkpoint,
)
from geaet.posenc import PosEncConfig, attach_pe
from geaet.tensor import Tensor

SCHEMA = FeatureSchema(node_feat_dim=3, edge_feat_dim=2)


def make_model(task_kind="node_classify", pe="none", mpnn="gatedgcn", seed=0, **overrides):
    cfg = ModelConfig(layers=2, dim=8, units=4, self_heads=2, ext_heads=2, mpnn=mpnn,
                      pe=PosEncConfig(pe, 3 if pe != "none" else 0), **overrides)
    model = GEAETModel(cfg, SCHEMA, TaskSpec(task_kind, 3))
    model.initialize(seed)
    return model


def graphs(rng, count, pe="none", kind="node"):
    out = []
    for _ in range(count):
        n = int(rng.integers(2, 9))
        g = random_graph(n, int(rng.integers(1, n * (n - 1) // 2 + 1)), rng, node_dim=3, edge_dim=2, classes=3)
        if kind == "graph_class":
            g.target_kind, g.target = "graph_class", np.array([int(rng.integers(3))])
        out.append(g)
    if pe != "none":
        attach_pe(out, PosEncConfig(pe, 3))
    return out


class TestEquivariance:
    @pytest.mark.parametrize("pe", ["none", "rwpe"])
    def test_node_outputs_follow_relabelling(self, pe):
        rng = np.random.default_rng(0)
        model = make_model(pe=pe)
        (g,) = graphs(rng, 1, pe)
        while g.n < 6:
            (g,) = graphs(rng, 1, pe)
        base = model.predict(g)
        worst = 0.0
        for _ in range(50):
            order = rng.permutation(g.n)
            p = g.permute(order)
            if pe != "none":
                attach_pe([p], PosEncConfig(pe, 3))
            worst = max(worst, np.max(np.abs(model.predict(p) - base[order])))
        assert worst < 1e-9

    def test_graph_outputs_invariant(self):
        rng = np.random.default_rng(1)
        model = make_model("graph_classify", pe="rwpe")
        (g,) = graphs(rng, 1, "rwpe", "graph_class")
        base = model.predict(g)
        for _ in range(10):
            p = g.permute(rng.permutation(g.n))
            attach_pe([p], PosEncConfig("rwpe", 3))
            np.testing.assert_allclose(model.predict(p), base, rtol=0, atol=1e-9)


class TestBatchIndependence:
    def test_self_attention_segments(self):
        rng = np.random.default_rng(2)
        att = SelfAttention(8, 2)
        att.initialize(0)
        parts = [rng.normal(size=(n, 8)) for n in (3, 5, 3, 1)]
        offsets = np.cumsum([0] + [len(p) for p in parts])
        joint = att(Tensor(np.vstack(parts)), offsets).data
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            np.testing.assert_allclose(joint[lo:hi], att(Tensor(p)).data, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("mpnn", ["gcn", "gatedgcn", "gine"])
    def test_end_to_end(self, mpnn):
        rng = np.random.default_rng(3)
        model = make_model(pe="rwpe", mpnn=mpnn)
        gs = graphs(rng, 5, "rwpe")
        joint = model.predict(batch(gs))
        offsets = np.cumsum([0] + [g.n for g in gs])
        for g, lo, hi in zip(gs, offsets[:-1], offsets[1:]):
            np.testing.assert_allclose(joint[lo:hi], model.predict(g), rtol=0, atol=1e-10)

    def test_graph_level_readout(self):
        rng = np.random.default_rng(4)
        model = make_model("graph_classify")
        gs = graphs(rng, 4, kind="graph_class")
        joint = model.predict(batch(gs))
        for i, g in enumerate(gs):
            np.testing.assert_allclose(joint[i], model.predict(g)[0], rtol=0, atol=1e-10)


class TestConfiguration:
    def test_edge_stream_skip_is_output_identical(self):
        rng = np.random.default_rng(5)
        gs = graphs(rng, 3)
        model = make_model()
        fast = model.predict(batch(gs))
        for layer in model.layers:
            layer.edges_needed = True
        np.testing.assert_array_equal(model.predict(batch(gs)), fast)

    @pytest.mark.parametrize(
        "flags",
        [
            {"use_tlayer": False},
            {"use_geanet": False},
            {"mpnn": "none"},
            {"use_node_units": False},
            {"use_edge_units": False},
            {"use_shared_unit": False},
            {"geanet_node_input": "mpnn"},
        ],
    )
    def test_variants_run(self, flags):
        mpnn = flags.pop("mpnn", "gatedgcn")
        model = make_model(mpnn=mpnn, **flags)
        out = model.predict(batch(graphs(np.random.default_rng(6), 2)))
        assert np.all(np.isfinite(out)) and out.shape[1] == 3

    def test_invalid_configs(self):
        with pytest.raises(ValueError):
            make_model(mpnn="none", use_tlayer=False, use_geanet=False)
        with pytest.raises(ValueError):
            ModelConfig(dim=6, ext_heads=4).validate()

    def test_task_mismatch(self):
        model = make_model("graph_classify")
        with pytest.raises(ValueError, match="does not match"):
            model.predict(graphs(np.random.default_rng(7), 1)[0])

    def test_missing_pe(self):
        model = make_model(pe="rwpe")
        with pytest.raises(ValueError, match="positional"):
            model.predict(graphs(np.random.default_rng(8), 1)[0])

    def test_init_keyed_by_name(self):
        a = make_model(seed=3).parameters()
        b = make_model(seed=3, use_tlayer=False).parameters()
        for name, p in b.items():
            np.testing.assert_array_equal(p.data, a[name].data)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        model = make_model(seed=9)
        for p in model.parameters().values():
            p.data = p.data * np.pi
        save_checkpoint(model, tmp_path / "c.json")
        state = load_checkpoint(tmp_path / "c.json")
        fresh = make_model(seed=0)
        fresh.load_state_dict(state)
        for name, p in model.parameters().items():
            assert p.data.tobytes() == fresh.parameters()[name].data.tobytes()
        assert checkpoint_dumps(state) == (tmp_path / "c.json").read_text()

    def test_incompatible_state(self):
        state = make_model().state_dict()
        with pytest.raises(KeyError):
            make_model(use_tlayer=False).load_state_dict(state)

    def test_rejects_foreign_documents(self):
        with pytest.raises(ValueError):
            checkpoint_loads('{"format": "other", "version": 1, "params": []}')
        with pytest.raises(ValueError, match="version"):
            checkpoint_loads('{"format": "geaet-checkpoint", "version": 99, "params": []}')
