import numpy as np
import pytest

from igcl.config import TrainConfig, preset
from igcl.errors import NumericError, UsageError
from igcl.graph import karate_club, synth_graph_families, synth_sbm
from igcl.rng import make_rng
from igcl.studies import sbm_bed, sbm_bed_config
from igcl.train import read_history_csv, train, train_graph, train_node, write_history_csv
from igcl.vgae import Vgae


@pytest.fixture(scope="module")
def sbm():
    return sbm_bed(0)


@pytest.fixture(scope="module")
def families():
    return synth_graph_families(20, 8, make_rng(0))


def graph_cfg(**kw):
    base = dict(level="graph", epochs=10, emb_size=16, batch_size=8, tau=1.0, lr=5e-3,
                backbone=dict(kind="gin", num_layers=2), projection=dict(kind="linear"))
    base.update(kw)
    return TrainConfig(**base)


class TestTrainNode:
    def test_descends(self):
        g = synth_sbm([50, 50, 50], 0.10, 0.01, 16, 1.0, 1.0, make_rng(7))
        res = train_node(g, sbm_bed_config(seed=7, epochs=50))
        losses = res.losses()
        assert losses[49] < losses[0]

    def test_outputs(self, sbm):
        res = train_node(sbm, sbm_bed_config(epochs=3))
        assert res.embeddings.vectors.shape == (150, 32)
        np.testing.assert_array_equal(res.embeddings.labels, sbm.labels)
        assert [r.epoch for r in res.history] == [0, 1, 2]

    def test_deterministic(self, sbm):
        a = train_node(sbm, sbm_bed_config(epochs=5, seed=3))
        b = train_node(sbm, sbm_bed_config(epochs=5, seed=3))
        assert a.embeddings.vectors.tobytes() == b.embeddings.vectors.tobytes()
        assert a.losses().tobytes() == b.losses().tobytes()

    def test_seed_matters(self, sbm):
        a = train_node(sbm, sbm_bed_config(epochs=2, seed=1))
        b = train_node(sbm, sbm_bed_config(epochs=2, seed=2))
        assert not np.array_equal(a.embeddings.vectors, b.embeddings.vectors)

    @pytest.mark.parametrize("K", [1, 3])
    def test_step_log_interleaving(self, sbm, K):
        res = train_node(sbm, sbm_bed_config(epochs=4, vgae_inner_steps=K))
        assert res.step_log == (["vgae"] * K + ["theta"]) * 4

    def test_pretrained_mode(self, sbm):
        res = train_node(sbm, sbm_bed_config(epochs=3, vgae_mode="pretrained", vgae_pretrain_epochs=5))
        assert res.step_log == ["vgae"] * 5 + ["theta"] * 3
        assert all(np.isnan(r.vgae_loss) for r in res.history)

    def test_lr_schedule_recorded(self, sbm):
        res = train_node(sbm, sbm_bed_config(epochs=4, lr=0.01, lr_step=0.5))
        np.testing.assert_allclose([r.lr for r in res.history], [0.01, 0.005, 0.0025, 0.00125], rtol=1e-15)

    def test_batch_larger_than_graph(self):
        with pytest.raises(UsageError):
            train_node(karate_club(), sbm_bed_config(batch_size=35))

    def test_zero_epochs_rejected(self):
        with pytest.raises(UsageError):
            sbm_bed_config(epochs=0)

    def test_wrong_level(self, sbm):
        with pytest.raises(UsageError):
            train_node(sbm, graph_cfg())

    def test_unknown_objective(self, sbm):
        with pytest.raises(UsageError):
            train_node(sbm, sbm_bed_config(epochs=1), objective="triplet")

    @pytest.mark.parametrize("objective", ["noise", "explicit"])
    def test_ablation_objectives(self, sbm, objective):
        res = train_node(sbm, sbm_bed_config(epochs=3), objective=objective)
        assert res.step_log == ["theta"] * 3
        assert np.isfinite(res.losses()).all()

    def test_fixed_latents(self, sbm):
        lat = Vgae(16, 32, 32, make_rng(0)).encode(sbm)
        res = train_node(sbm, sbm_bed_config(epochs=2), latents=lat)
        assert res.step_log == ["theta", "theta"] and res.latents is lat

    def test_mini_batch(self, sbm):
        res = train_node(sbm, sbm_bed_config(epochs=2, batch_size=16))
        assert np.isfinite(res.losses()).all()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reports_epoch(self, sbm):
        with pytest.raises(NumericError, match="epoch 0"):
            train_node(sbm.with_features(sbm.features * 1e200), sbm_bed_config(epochs=2))

    def test_preset_runs(self):
        res = train(karate_club(), preset("citeseer", epochs=2, emb_size=8))
        assert res.embeddings.vectors.shape == (34, 8)


class TestTrainGraph:
    def test_descends(self, families):
        res = train_graph(families, graph_cfg(seed=0))
        losses = res.losses()
        assert losses[9] < losses[0]

    def test_outputs(self, families):
        res = train_graph(families, graph_cfg(epochs=2))
        assert res.embeddings.vectors.shape == (20, 16)
        np.testing.assert_array_equal(res.embeddings.labels, families.labels)

    def test_step_log_per_batch(self, families):
        res = train_graph(families, graph_cfg(epochs=2, vgae_inner_steps=2))
        batches = 3  # 20 graphs in batches of 8
        assert res.step_log == (["vgae", "vgae", "theta"]) * batches * 2

    def test_single_graph_batch_skipped(self, families):
        with pytest.warns(UserWarning, match="single graph"):
            res = train_graph(families.subset(range(9)), graph_cfg(epochs=1))
        assert res.step_log.count("theta") == 1

    def test_deterministic(self, families):
        a = train_graph(families, graph_cfg(epochs=3, seed=5))
        b = train_graph(families, graph_cfg(epochs=3, seed=5))
        assert a.embeddings.vectors.tobytes() == b.embeddings.vectors.tobytes()

    @pytest.mark.parametrize("objective", ["noise", "explicit"])
    def test_ablation_objectives(self, families, objective):
        res = train_graph(families, graph_cfg(epochs=2), objective=objective)
        assert np.isfinite(res.losses()).all()

    def test_needs_two_graphs(self, families):
        with pytest.raises(UsageError):
            train_graph(families.subset([0]), graph_cfg())

    def test_dispatch_checks_type(self, families):
        with pytest.raises(UsageError):
            train(families, sbm_bed_config())
        with pytest.raises(UsageError):
            train(karate_club(), graph_cfg())


class TestHistoryCsv:
    def test_round_trip(self, tmp_path, sbm):
        res = train_node(sbm, sbm_bed_config(epochs=3))
        write_history_csv(res.history, tmp_path / "h.csv")
        assert (tmp_path / "h.csv").read_text().splitlines()[0] == "epoch,vgae_loss,icl_loss,lr"
        assert read_history_csv(tmp_path / "h.csv") == res.history
