"""Losses, reconstruction metrics, the training loop and evaluation tables."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor_ad as ad
from .tensor_ad import Adam, LrSchedule, NonFiniteGradient, ShapeError, Tensor, lr_at
from .tensor_ad.checkpoint import decode_text, encode_text, load_tensors, save_tensors
from .uit import UitConfig, count_params, forward, init_params

logger = logging.getLogger(__name__)

CLAMP = 1e-7


class TrainingError(RuntimeError):
    def __init__(self, msg, checkpoint=None):
        super().__init__(msg)
        self.checkpoint = checkpoint


def _h(m: int) -> float:
    return 2.0 / (m - 1)


def _check(pred: Tensor, target: Tensor) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")


def loss_l2(pred, target) -> Tensor:
    """Batch mean of the h**2-weighted squared error."""
    pred, target = ad.as_tensor(pred), ad.as_tensor(target)
    _check(pred, target)
    h = _h(pred.shape[-1])
    e = ad.sub(pred, target)
    return ad.scale(ad.reduce_sum(ad.mul(e, e)), h * h / pred.shape[0])


def loss_bce(pred, target) -> Tensor:
    """Position-wise binary cross entropy summed over positions, averaged over the batch."""
    pred, target = ad.as_tensor(pred), ad.as_tensor(target)
    _check(pred, target)
    u = ad.clamp(pred, CLAMP, 1.0 - CLAMP)
    t = target.data
    ll = ad.add(ad.mul(ad.log(u), t), ad.mul(ad.log(ad.sub(1.0, u)), 1.0 - t))
    return ad.scale(ad.reduce_sum(ll), -1.0 / pred.shape[0])


def _bce_np(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    u = np.clip(pred, CLAMP, 1.0 - CLAMP)
    ll = target * np.log(u) + (1.0 - target) * np.log(1.0 - u)
    return -ll.reshape(len(pred), -1).sum(axis=1)


@dataclass
class Metrics:
    relative_l2: np.ndarray
    cross_entropy: np.ndarray
    dice: np.ndarray

    def mean(self) -> dict:
        return {
            "rel_l2": float(np.mean(self.relative_l2)),
            "ce": float(np.mean(self.cross_entropy)),
            "dice": float(np.mean(self.dice)),
        }


def dice_score(pred_mask: np.ndarray, target_mask: np.ndarray) -> float:
    P = pred_mask.astype(bool)
    T = target_mask.astype(bool)
    denom = P.sum() + T.sum()
    if T.sum() == 0:
        return 1.0 if P.sum() == 0 else 0.0
    return float(2.0 * np.logical_and(P, T).sum() / denom)


def metric_suite(pred, target, threshold: float = 0.5) -> Metrics:
    """Per-sample relative L2, position-wise cross entropy and Dice.

    Arrays are (B, ..., m, m); pixels with ``pred >= threshold`` count as
    predicted inclusion.
    """
    pred = np.asarray(getattr(pred, "data", pred), dtype=float)
    target = np.asarray(getattr(target, "data", target), dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    if pred.ndim == 2:
        pred, target = pred[None], target[None]
    B = pred.shape[0]
    P = pred.reshape(B, -1)
    T = target.reshape(B, -1)
    # the h**2 weights cancel in the ratio
    num = np.linalg.norm(P - T, axis=1)
    den = np.linalg.norm(T, axis=1)
    rel = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.where(num > 0, np.inf, 0.0))
    ce = _bce_np(P, T) / P.shape[1]
    dice = np.array([dice_score(P[i] >= threshold, T[i] > 0.5) for i in range(B)])
    return Metrics(rel, ce, dice)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    seed: int = 0
    loss: str = "bce"
    lr_max: float = 1e-3
    warmup_fraction: float = 0.2
    val_fraction: float = 0.2
    model: str = "uit"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.loss not in ("bce", "l2"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def schedule(self) -> LrSchedule:
        return LrSchedule(self.epochs, self.lr_max, self.warmup_fraction * self.epochs)


@dataclass
class TrainResult:
    params: dict
    history: list
    best_epoch: int
    model: str
    config: UitConfig


def split_indices(n: int, val_fraction: float, seed: int) -> tuple:
    perm = np.random.default_rng(np.random.SeedSequence([seed, 0xD1CE])).permutation(n)
    n_val = int(round(val_fraction * n))
    if n - n_val < 1:
        raise ValueError(f"{n} samples leave nothing to train on")
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _snapshot(params: dict) -> dict:
    return {k: v.data.copy() for k, v in params.items()}


def predict(model: str, params: dict, X: np.ndarray, cfg: UitConfig, batch_size: int = 8) -> np.ndarray:
    frozen = {k: Tensor(getattr(v, "data", v)) for k, v in params.items()}
    out = [forward(model, X[i:i + batch_size], frozen, cfg).data for i in range(0, len(X), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, 1, cfg.m, cfg.m))


def _loss_fn(name: str):
    return loss_bce if name == "bce" else loss_l2


def train(X: np.ndarray, Y: np.ndarray, tcfg: TrainConfig, ucfg: UitConfig,
          history_path=None, log=None) -> TrainResult:
    """Adam with a one-cycle schedule; keeps the epoch with the lowest validation BCE.

    Parameters
    ----------
    X, Y : ndarray
        Features (N, 3L, m, m) and masks (N, 1, m, m).
    """
    tr, va = split_indices(len(X), tcfg.val_fraction, tcfg.seed)
    rng = np.random.default_rng(np.random.SeedSequence([tcfg.seed, 1]))
    params = init_params(ucfg, np.random.default_rng(np.random.SeedSequence([tcfg.seed, 2])), tcfg.model)
    opt = Adam(list(params.values()))
    sched = tcfg.schedule()
    lossf = _loss_fn(tcfg.loss)
    nb = math.ceil(len(tr) / tcfg.batch_size)
    history, best, best_val, best_epoch = [], _snapshot(params), math.inf, 0
    for epoch in range(tcfg.epochs):
        order = rng.permutation(tr)
        tot, tot_bce, count = 0.0, 0.0, 0
        for b in range(nb):
            idx = order[b * tcfg.batch_size:(b + 1) * tcfg.batch_size]
            lr = lr_at(sched, (epoch + b / nb) / tcfg.epochs)
            opt.zero_grad()
            pred = forward(tcfg.model, X[idx], params, ucfg)
            loss = lossf(pred, Y[idx])
            val = loss.item()
            if not math.isfinite(val):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}, batch {b}", best)
            loss.backward()
            try:
                opt.step(lr)
            except NonFiniteGradient as e:
                raise TrainingError(f"epoch {epoch + 1}, batch {b}: {e}", best) from e
            tot += val * len(idx)
            tot_bce += float(_bce_np(pred.data, Y[idx]).sum())
            count += len(idx)
        row = {"epoch": epoch + 1, "lr": lr, "train_loss": tot / count, "train_bce": tot_bce / count}
        if len(va):
            pv = predict(tcfg.model, params, X[va], ucfg, tcfg.batch_size)
            met = metric_suite(pv, Y[va]).mean()
            row.update(val_bce=float(_bce_np(pv, Y[va]).mean()), val_rel_l2=met["rel_l2"], val_dice=met["dice"])
            score = row["val_bce"]
        else:
            score = row["train_bce"]
        if score < best_val:
            best_val, best, best_epoch = score, _snapshot(params), epoch + 1
        history.append(row)
        if log:
            log(", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    if history_path is not None:
        write_history(history_path, history)
    return TrainResult({k: ad.parameter(v, name=k) for k, v in best.items()}, history, best_epoch, tcfg.model, ucfg)


def write_history(path, history: list) -> None:
    keys = list(history[0].keys()) if history else ["epoch"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})


def save_checkpoint(path, result_or_params, model: str | None = None, cfg: UitConfig | None = None) -> None:
    if isinstance(result_or_params, TrainResult):
        params, model, cfg = result_or_params.params, result_or_params.model, result_or_params.config
    else:
        params = result_or_params
    tensors = {k: v.data if isinstance(v, Tensor) else v for k, v in params.items()}
    tensors["__config__"] = encode_text(cfg.to_text() + f"model={model}\n")
    save_tensors(path, tensors)


def load_checkpoint(path) -> tuple:
    """Return ``(model, UitConfig, params)``."""
    t = load_tensors(path)
    text = decode_text(t.pop("__config__"))
    lines = [ln for ln in text.splitlines() if not ln.startswith("model=")]
    model = next(ln.split("=", 1)[1] for ln in text.splitlines() if ln.startswith("model="))
    cfg = UitConfig.from_text("\n".join(lines))
    return model, cfg, {k: ad.parameter(v, name=k) for k, v in t.items()}


def evaluate(model: str, params: dict, cfg: UitConfig, datasets, batch_size: int = 8) -> list:
    """One row per ``(tau, X, Y)`` dataset with mean metrics."""
    rows = []
    for tau, X, Y in datasets:
        if X.shape[-1] != cfg.m:
            raise ShapeError(f"dataset grid {X.shape[-1]} does not match model grid {cfg.m}")
        met = metric_suite(predict(model, params, X, cfg, batch_size), Y).mean()
        rows.append({"model": model, "tau": tau, **met, "n_params": count_params(params)})
    return rows


def write_metrics(path, rows: list) -> None:
    cols = ["model", "tau", "rel_l2", "ce", "dice", "n_params"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r["model"], repr(float(r["tau"])), repr(r["rel_l2"]), repr(r["ce"]),
                        repr(r["dice"]), r["n_params"]])
