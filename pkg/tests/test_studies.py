import math

import numpy as np
import pytest

from igcl.graph import synth_graph_families
from igcl.rng import make_rng
from igcl.studies import (
    ABLATION_HEADER,
    SENSITIVITY_HEADER,
    STRATEGIES,
    ProbeSettings,
    ablation_suite,
    evaluate_embeddings,
    latent_embeddings,
    reconstruction_report,
    sbm_bed,
    sbm_bed_config,
    sensitivity_study,
    write_ablation_csv,
    write_sensitivity_csv,
)
from igcl.train import train
from igcl.errors import UsageError

FAST_PROBE = ProbeSettings(epochs=30, top_k=3)


@pytest.fixture(scope="module")
def sbm():
    return sbm_bed(0)


class TestSbmBed:
    def test_shape(self, sbm):
        assert sbm.num_nodes == 150 and sbm.num_features == 16
        np.testing.assert_array_equal(np.bincount(sbm.labels), [50, 50, 50])

    def test_config(self):
        cfg = sbm_bed_config(seed=4)
        assert cfg.level == "node" and cfg.seed == 4 and cfg.projection.kind == "mlp2"


class TestAblation:
    def test_four_rows_in_order(self, sbm, tmp_path):
        rows = ablation_suite(sbm, sbm_bed_config(epochs=3), seeds=[0], probe=FAST_PROBE)
        assert [r.strategy for r in rows] == list(STRATEGIES)
        assert all(len(r.accuracies) == 1 for r in rows)
        write_ablation_csv(rows, tmp_path / "a.csv")
        lines = (tmp_path / "a.csv").read_text().splitlines()
        assert lines[0] == ",".join(ABLATION_HEADER) and len(lines) == 5

    def test_vgae_only_is_latent_probe(self, sbm):
        cfg = sbm_bed_config(epochs=3, seed=2)
        rows = ablation_suite(sbm, cfg, seeds=[2], probe=FAST_PROBE)
        icl = train(sbm, cfg, objective="icl")
        direct = evaluate_embeddings(latent_embeddings(sbm, icl.latents), "node", 2, FAST_PROBE)
        assert rows[1].accuracies == [direct]

    def test_graph_level(self):
        gs = synth_graph_families(20, 8, make_rng(0))
        from igcl.config import TrainConfig
        cfg = TrainConfig(level="graph", epochs=2, emb_size=8, batch_size=10,
                          backbone=dict(kind="gin", num_layers=2))
        rows = ablation_suite(gs, cfg, seeds=1, probe=ProbeSettings(folds=4))
        assert len(rows) == 4 and all(0.0 <= r.mean <= 1.0 for r in rows)

    def test_needs_a_seed(self, sbm):
        with pytest.raises(UsageError):
            ablation_suite(sbm, sbm_bed_config(epochs=1), seeds=[])


class TestSensitivity:
    def test_rows_sorted_and_stopping_rule(self, sbm, tmp_path):
        res = sensitivity_study(sbm, sbm_bed_config(epochs=3), (0.3, 0.1, 0.2), seeds=[0],
                                max_vgae_epochs=300, probe=FAST_PROBE)
        assert [r.target for r in res.rows] == [0.1, 0.2, 0.3]
        for r in res.rows:
            assert not r.flagged and r.rate >= r.target and r.accuracy_at_half == r.rate
        epochs = [r.vgae_epoch for r in res.rows]
        assert epochs == sorted(epochs)
        write_sensitivity_csv(res, tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == ",".join(SENSITIVITY_HEADER) and len(lines) == 4

    def test_unreachable_target_flagged(self, sbm):
        res = sensitivity_study(sbm, sbm_bed_config(epochs=2), (0.99,), seeds=[0], max_vgae_epochs=2, probe=FAST_PROBE)
        (row,) = res.rows
        assert row.flagged and math.isnan(row.accuracy) and row.vgae_epoch == -1
        assert math.isnan(res.spearman_mean)

    def test_unknown_metric(self, sbm):
        with pytest.raises(UsageError):
            sensitivity_study(sbm, sbm_bed_config(), metric="f1")

    def test_recon_report_graph_set(self):
        from igcl.vgae import Vgae
        gs = synth_graph_families(4, 8, make_rng(1))
        lat = Vgae(gs.features.shape[1], 4, 4, make_rng(0)).encode(gs)
        rep = reconstruction_report(gs, lat)
        assert set(rep) == {"auc", "accuracy_at_half", "recon_rate", "flagged"}
        assert 0.0 <= rep["accuracy_at_half"] <= 1.0
