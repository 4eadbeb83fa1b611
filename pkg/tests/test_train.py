import csv

import numpy as np
import pytest

from cor.dataset import Manifest, SynthConfig, synth_generate
from cor.errors import CheckpointError, InputError
from cor.model import CoreModel
from cor.numerics import load_checkpoint, save_checkpoint
from cor.train import TrainConfig, evaluate_model, load_model, prepare, save_model, train, write_log


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    return synth_generate(SynthConfig(n_train=6, n_test=6), 3, out)


def f32(a):
    return np.asarray(a, dtype=np.float32)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=-1)
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(expr="none")
    assert (TrainConfig().epochs, TrainConfig().lr, TrainConfig().batch_size) == (15, 1e-4, 6)


def test_zero_epochs_checkpoint_equals_init(tiny, tmp_path):
    cfg = TrainConfig(epochs=0)
    res = train(tiny, cfg)
    assert res.history == []
    path = save_model(tmp_path / "c.cor", res.model, cfg)
    params, meta = load_checkpoint(path)
    init = CoreModel(cfg.model_config()).state_dict()
    assert params.keys() == init.keys()
    for k in init:
        assert np.array_equal(f32(params[k]), f32(init[k])), k
    assert meta["train"]["epochs"] == 0


def test_frozen_bytes_unchanged_and_trainables_move(tiny):
    cfg = TrainConfig(epochs=1, batch_size=3)
    init = CoreModel(cfg.model_config())
    res = train(tiny, cfg)
    before, after = init.state_dict(), res.model.state_dict()
    frozen = set(init.frozen_names())
    assert frozen
    for name in before:
        same = before[name].tobytes() == after[name].tobytes()
        assert same == (name in frozen), name


def test_training_deterministic(tiny):
    cfg = TrainConfig(epochs=2, batch_size=4)
    a, b = train(tiny, cfg), train(tiny, cfg)
    assert a.history == b.history
    for k, v in a.model.state_dict().items():
        assert np.array_equal(v, b.model.state_dict()[k])
    c = train(tiny, TrainConfig(epochs=2, batch_size=4, seed=7))
    assert c.history != a.history


def test_log_columns(tiny, tmp_path):
    res = train(tiny, TrainConfig(epochs=1))
    with open(write_log(tmp_path / "a.csv", res.history, contrastive=True)) as f:
        assert next(csv.reader(f)) == ["epoch", "l_fg", "l_bg", "l_cor", "l_wbce", "l_wiou", "l_seg", "l_total"]
    res = train(tiny, TrainConfig(epochs=1, disable_lcor=True))
    assert "l_cor" not in res.history[0]
    with open(write_log(tmp_path / "b.csv", res.history, contrastive=False)) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["epoch", "l_wbce", "l_wiou", "l_seg", "l_total"]
    # without the contrastive term the objective is the segmentation loss
    assert float(rows[1][3]) == float(rows[1][4])


def test_loss_identity_in_history(tiny):
    row = train(tiny, TrainConfig(epochs=1, batch_size=6)).history[0]
    # one batch, so the epoch means are the batch values
    assert row["l_cor"] == pytest.approx(row["l_fg"] + row["l_bg"], abs=1e-12)
    assert row["l_total"] == pytest.approx(row["l_seg"] + row["l_cor"], abs=1e-12)


def test_empty_train_split_raises(tiny):
    m = Manifest(tiny.split("test_base"), tiny.base_categories, [])
    with pytest.raises(InputError):
        train(m, TrainConfig(epochs=1))


@pytest.mark.parametrize("flags", [{"disable_rre": True}, {"disable_avti": True}, {"expr": "irm"}, {"expr": "it"}, {"expr": "i"}, {"expr": "t"}])
def test_ablation_variants_train(tiny, flags):
    res = train(tiny, TrainConfig(epochs=1, **flags))
    assert np.isfinite(res.history[0]["l_total"])


def test_checkpoint_roundtrip_and_eval(tiny, tmp_path):
    cfg = TrainConfig(epochs=1)
    res = train(tiny, cfg)
    path = save_model(tmp_path / "m.cor", res.model, cfg)
    back = load_model(path)
    for k, v in res.model.state_dict().items():
        assert np.array_equal(f32(back.state_dict()[k]), f32(v))
    r1 = evaluate_model(back, tiny, "test_base")
    r2 = evaluate_model(load_model(path), tiny, "test_base")
    assert r1.to_dict() == r2.to_dict()
    assert set(r1.by_setting["test_base"]) == {s.setting for s in tiny.split("test_base")}


def test_checkpoint_errors(tiny, tmp_path):
    res = train(tiny, TrainConfig(epochs=0))
    state = res.model.state_dict()
    path = tmp_path / "bad.cor"
    save_checkpoint(path, state, {})
    with pytest.raises(CheckpointError, match="configuration"):
        load_model(path)
    name = next(iter(state))
    wrong = dict(state)
    wrong[name] = np.zeros((1, 1))
    save_checkpoint(path, wrong, {"model": res.model.config.to_dict()})
    with pytest.raises(CheckpointError):
        load_model(path)
    good = save_model(tmp_path / "ok.cor", res.model)
    data = good.read_bytes()
    (tmp_path / "trunc.cor").write_bytes(data[:-4])
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "trunc.cor")
    (tmp_path / "junk.cor").write_bytes(b"hello")
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "junk.cor")


def test_ground_truth_as_prediction_scores_perfectly(tiny):
    from cor.metrics import evaluate

    samples = tiny.split("test_base")
    rep = evaluate(samples, [s.union_mask().astype(float) for s in samples])
    m = rep.overall["test_base"]
    assert (m.dice, m.iou, m.m_dice, m.m_iou, m.mae) == (1.0, 1.0, 1.0, 1.0, 0.0)


def test_prepare_caches_frozen_outputs(tiny):
    model = CoreModel(TrainConfig().model_config())
    a = prepare(model, tiny.split("train")[:2])
    b = prepare(model, tiny.split("train")[:2])
    assert all(np.array_equal(x.inputs.f_tar.data, y.inputs.f_tar.data) for x, y in zip(a, b))
    assert all(x.gt_grid.any() for x in a)
