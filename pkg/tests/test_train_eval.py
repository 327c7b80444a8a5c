import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eitdsm import tensor_ad as ad
from eitdsm.datagen import GenConfig, generate, load_arrays
from eitdsm.train_eval import (
    TrainConfig, TrainingError, dice_score, evaluate, load_checkpoint, loss_bce, loss_l2, metric_suite,
    save_checkpoint, split_indices, train, write_metrics,
)
from eitdsm.uit import UitConfig

TINY = UitConfig(m=17, base_channels=2, levels=2)


@pytest.fixture(scope="module")
def tiny_data():
    return load_arrays(generate(GenConfig(n=8, m=17, seed=2)))


def test_l2_examples(rng):
    t = rng.random((2, 1, 65, 65))
    assert loss_l2(t, t).item() == 0.0
    direct = sum(np.sum(np.full((65, 65), (2 / 64) ** 2)) for _ in range(2)) / 2
    assert loss_l2(t + 1, t).item() == pytest.approx(direct, rel=1e-13)
    assert direct == pytest.approx(4.0 * (65 / 64) ** 2, rel=1e-13)
    e = rng.standard_normal(t.shape)
    assert loss_l2(t + 3 * e, t).item() == pytest.approx(9 * loss_l2(t + e, t).item(), rel=1e-12)
    with pytest.raises(ad.ShapeError):
        loss_l2(t, t[:1])


def test_bce_examples(rng):
    t = (rng.random((3, 1, 9, 9)) > 0.5).astype(float)
    assert loss_bce(t, t).item() < 1e-4
    assert loss_bce(np.full(t.shape, 0.5), t).item() == pytest.approx(81 * np.log(2), rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_pinsker_bound(seed):
    r = np.random.default_rng(seed)
    u = r.random((1, 1, 8, 8))
    p = (r.random((1, 1, 8, 8)) > 0.5).astype(float)
    M = p.size
    assert 2 * np.mean(np.abs(p - u)) ** 2 <= loss_bce(u, p).item() / M + 1e-15


def test_metric_examples():
    T = np.zeros((1, 1, 8, 8))
    T[..., :4, :] = 1
    m = metric_suite(T, T)
    assert m.dice[0] == 1 and m.relative_l2[0] == 0
    m = metric_suite(np.zeros_like(T), T)
    assert m.dice[0] == 0 and m.relative_l2[0] == 1
    half = np.zeros_like(T)
    half[..., 2:6, :] = 1
    assert metric_suite(half, T).dice[0] == 0.5
    # ties at the threshold count as inclusion, so a constant 0.5 predicts everything
    assert metric_suite(np.full(T.shape, 0.5), T).dice[0] == pytest.approx(2 * 32 / (64 + 32))
    assert dice_score(np.zeros(4), np.zeros(4)) == 1.0
    assert dice_score(np.ones(4), np.zeros(4)) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_metric_ranges(seed):
    r = np.random.default_rng(seed)
    p, t = r.random((2, 1, 6, 6)), (r.random((2, 1, 6, 6)) > 0.7).astype(float)
    m = metric_suite(p, t)
    assert np.all((m.dice >= 0) & (m.dice <= 1)) and np.all(m.relative_l2 >= 0)


def test_metrics_under_refinement():
    from eitdsm.mesh import make_grid
    from eitdsm.datagen import EllipseSpec, mask_from_ellipses
    e = [EllipseSpec((0.1, -0.2), 0.3, 0.5, 0.4)]
    vals = []
    for m in (65, 129):
        g = make_grid(m)
        T = mask_from_ellipses(g, e).values.reshape(m, m)
        P = mask_from_ellipses(g, [EllipseSpec((0.15, -0.2), 0.3, 0.5, 0.4)]).values.reshape(m, m)
        vals.append(metric_suite(P, T).dice[0])
    assert abs(vals[0] - vals[1]) < 0.05 * vals[1]


def test_split():
    tr, va = split_indices(320, 0.2, 0)
    assert len(tr) == 256 and len(va) == 64 and not set(tr) & set(va)
    with pytest.raises(ValueError):
        split_indices(1, 1.0, 0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_smoke_training(tmp_path, tiny_data):
    X, Y = tiny_data
    res = train(X, Y, TrainConfig(epochs=2, batch_size=4), TINY, history_path=tmp_path / "h.csv")
    rows = list(csv.DictReader(open(tmp_path / "h.csv")))
    assert len(rows) == 2 and len(res.history) == 2
    assert {"epoch", "lr", "train_loss", "train_bce", "val_bce", "val_rel_l2", "val_dice"} <= rows[0].keys()
    assert 1 <= res.best_epoch <= 2


def test_training_is_deterministic(tiny_data):
    X, Y = tiny_data
    cfg = TrainConfig(epochs=2, batch_size=4, seed=3, model="unet", loss="l2")
    a, b = train(X, Y, cfg, TINY), train(X, Y, cfg, TINY)
    assert a.history == b.history
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)


def test_non_finite_loss_aborts(tiny_data):
    X, Y = tiny_data
    bad = X.copy()
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(TrainingError) as ei:
        train(bad, Y, TrainConfig(epochs=1, batch_size=8, val_fraction=0.0), TINY)
    assert ei.value.checkpoint is not None


def test_checkpoint_and_eval(tmp_path, tiny_data):
    X, Y = tiny_data
    res = train(X, Y, TrainConfig(epochs=1, batch_size=4), TINY)
    path = tmp_path / "m.uitw"
    save_checkpoint(path, res)
    model, cfg, params = load_checkpoint(path)
    assert model == "uit" and cfg == TINY
    assert all(np.array_equal(params[k].data, res.params[k].data) for k in params)
    rows = evaluate(model, params, cfg, [(0.0, X, Y), (0.2, X, Y)])
    write_metrics(tmp_path / "m.csv", rows)
    lines = open(tmp_path / "m.csv").read().splitlines()
    assert lines[0] == "model,tau,rel_l2,ce,dice,n_params" and len(lines) == 3
    with pytest.raises(ad.ShapeError):
        evaluate(model, params, cfg, [(0.0, np.zeros((1, 3, 9, 9)), np.zeros((1, 1, 9, 9)))])
