import json

import numpy as np
import pytest

from sscdl import trainer as trainer_mod
from sscdl.config import TrainConfig
from sscdl.confdist import ConfidenceGrid
from sscdl.diffcore import NumericalError, load_checkpoint
from sscdl.losses import PseudoBatch
from sscdl.diffcore import Tensor
from sscdl.model import init_params
from sscdl.trainer import Phase, Trainer, generate_pseudo, phase_of, select_pseudo


def tiny_cfg(**kw):
    base = dict(dim=6, batch_size=64, k_neg=4, t_max=6, t_pcdg=2, t_cdlrl=4, eval_every=3, alpha=0.01,
                dtype="float64", eval_ranking=True)
    base.update(kw)
    return TrainConfig(**base).validate()


def test_phase_boundaries():
    cfg = tiny_cfg(t_max=10, t_pcdg=3, t_cdlrl=7)
    got = [phase_of(e, cfg) for e in range(1, 11)]
    assert got[:2] == [Phase.WARMUP] * 2
    assert got[2:6] == [Phase.META_WARMUP] * 4
    assert got[6:] == [Phase.FULL] * 4
    same = tiny_cfg(t_pcdg=3, t_cdlrl=3)
    assert phase_of(2, same) is Phase.WARMUP and phase_of(3, same) is Phase.FULL


def test_select_pseudo_threshold_is_strict():
    d = np.array([[0.5, 0.5, 0.0], [0.9, 0.05, 0.05], [0.2, 0.3, 0.5]])
    pb = PseudoBatch(np.arange(9).reshape(3, 3), Tensor(d), Tensor(d @ np.array([0, 0.5, 1.0])))
    assert select_pseudo(pb, 0.5).triples.tolist() == [[3, 4, 5]]
    assert len(select_pseudo(pb, 0.9)) == 0
    assert len(select_pseudo(pb, 0.0)) == 3


def test_zero_output_generator_is_uniform():
    g = ConfidenceGrid(100)
    eta = init_params(10, 2, 4, seed=0, zero_output=True)
    pb = generate_pseudo(eta, np.array([[0, 0, 1], [2, 1, 3]]), g)
    assert np.allclose(pb.dists.data, 1 / 101, rtol=0, atol=1e-15)
    assert np.allclose(pb.scalars.data, 0.5)
    assert len(select_pseudo(pb, 1 / 101)) == 0  # uniform never clears its own value


def _run(cfg, split, **kw):
    steps, epochs = [], []
    t = Trainer(cfg, split, on_step=steps.append, on_epoch=lambda st: epochs.append(st.epoch), **kw)
    return t, t.run(), steps, epochs


def test_generator_static_during_warmup(toy_split):
    cfg = tiny_cfg(t_max=3, t_pcdg=3, t_cdlrl=3)
    snapshots = []
    t = Trainer(cfg, toy_split)
    eta0 = {k: v.copy() for k, v in t.state.eta.arrays.items()}
    t.on_epoch = lambda st: snapshots.append({k: v.copy() for k, v in st.eta.arrays.items()})
    t.run()
    for snap in snapshots[:2]:
        for k in eta0:
            assert np.array_equal(snap[k], eta0[k])
    assert any(not np.array_equal(snapshots[2][k], eta0[k]) for k in eta0)


def test_step_records_follow_phases(toy_split):
    cfg = tiny_cfg(threshold=0.0)
    _, res, steps, epochs = _run(cfg, toy_split)
    assert epochs == list(range(1, 7))
    for s in steps:
        if s["phase"] is Phase.WARMUP:
            assert not s["eta_updated"] and s["meta_loss"] is None and s["n_pseudo_used"] == 0
        else:
            assert s["eta_updated"] and np.isfinite(s["meta_loss"])
        if s["phase"] is Phase.META_WARMUP:
            assert s["n_pseudo_used"] == 0
        if s["phase"] is Phase.FULL:
            assert s["n_pseudo_used"] == s["batch"]  # threshold 0 keeps everything
    assert [r["phase"] for r in res.state.log] == ["warmup", "meta_warmup", "meta_warmup", "full_meta_self_training",
                                                   "full_meta_self_training", "full_meta_self_training"]


def test_learner_sees_no_pseudo_before_full_phase(toy_split, monkeypatch):
    seen = []
    real = trainer_mod.total_loss

    def spy(P, labeled, negatives, s, pseudo=None):
        # the trainer's own learner update is the only call made from this module
        seen.append(pseudo is not None and len(pseudo) > 0)
        return real(P, labeled, negatives, s, pseudo)

    monkeypatch.setattr(trainer_mod, "total_loss", spy)
    cfg = tiny_cfg(threshold=0.0)
    phases = []
    Trainer(cfg, toy_split, on_step=lambda s: phases.append(s["phase"])).run()
    assert len(seen) == len(phases)
    for used, ph in zip(seen, phases):
        assert used == (ph is Phase.FULL)


def test_boundaries_past_t_max_match_no_mst(toy_split):
    a = Trainer(tiny_cfg(t_pcdg=7, t_cdlrl=7), toy_split).run()
    b = Trainer(tiny_cfg(ablation="no_mst"), toy_split).run()
    assert b.state.eta is None
    for k, v in a.state.theta.arrays.items():
        assert np.array_equal(v, b.state.theta.arrays[k])
    assert [r["train_loss"] for r in a.state.log] == [r["train_loss"] for r in b.state.log]


def test_runs_are_deterministic(toy_split):
    a = Trainer(tiny_cfg(), toy_split).run()
    b = Trainer(tiny_cfg(), toy_split).run()
    strip = lambda log: [{k: v for k, v in r.items() if k != "seconds"} for r in log]
    assert strip(a.state.log) == strip(b.state.log)
    c = Trainer(tiny_cfg(seed=1), toy_split).run()
    assert strip(c.state.log) != strip(a.state.log)


def test_no_cdl_uses_one_hot_targets(toy_split):
    t = Trainer(tiny_cfg(ablation="no_cdl"), toy_split)
    tg = t.labeled.targets
    assert np.all(tg.sum(axis=1) == 1) and np.all(np.sort(tg, axis=1)[:, -2] == 0)
    g = Trainer(tiny_cfg(), toy_split).labeled.targets
    assert np.all(np.count_nonzero(g, axis=1) > 1)


def test_nan_raises_numerical_error(toy_split):
    t = Trainer(tiny_cfg(t_max=1), toy_split)
    bad = dict(t.state.theta.arrays)
    bad["ent"] = bad["ent"].copy()
    bad["ent"][:] = np.nan
    t.state.theta = t.state.theta.with_arrays(bad)
    with pytest.raises(NumericalError, match="epoch 1"):
        t.run()


def test_outputs_written(toy_split, tmp_path):
    res = Trainer(tiny_cfg(), toy_split, out_dir=tmp_path).run()
    lines = [json.loads(x) for x in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    assert len(lines) == 6
    assert set(lines[0]) == {"epoch", "phase", "train_loss", "val_mse", "val_mae", "val_wmrr", "val_hits1",
                             "n_pseudo_selected"}
    evaluated = [r["epoch"] for r in lines if r["val_mse"] is not None]
    assert evaluated == [3, 6]
    arrays, meta = load_checkpoint(tmp_path / "final.ckpt")
    assert meta["epoch"] == 6 and any(k.startswith("eta/") for k in arrays)
    np.testing.assert_array_equal(arrays["theta/ent"], res.state.theta.arrays["ent"])
    _, best = load_checkpoint(tmp_path / "best.ckpt")
    assert best["epoch"] == res.best_epoch
    assert best["val"]["mse"] == pytest.approx(res.best_val_mse, rel=0, abs=0)


def test_empty_training_split_rejected(toy_split):
    import dataclasses
    empty = dataclasses.replace(toy_split, train=toy_split.train[0:0])
    with pytest.raises(ValueError):
        Trainer(tiny_cfg(), empty)


def test_learner_fits_toy_with_narrow_targets():
    from sscdl.config import preset
    from sscdl.reproduce import constant_mean_mse
    from sscdl.toy import make_toy_split
    split = make_toy_split(seed=0, n_entities=300, n_relations=10, n_quads=3000, relation_effect=2.0)
    cfg = preset("nl27k", dim=16, batch_size=128, k_neg=5, t_max=4, t_pcdg=5, t_cdlrl=5, eval_every=2,
                 alpha=0.01, sigma=0.1)
    res = Trainer(cfg, split).run()
    assert res.best_val_mse < 0.5 * constant_mean_mse(split)
