"""Finite-difference gradient checks for every differentiable building block."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_ad as ad
from .attention import AttentionConfig, cross_attention, init_attention, integral_attention
from .dsm import index_learnable
from .tensor_ad.gradcheck import check_gradients, random_projection_loss
from .uit import UitConfig, init_params, uit_forward, unet_forward

OP_TOL = 1e-5
MODEL_TOL = 1e-4


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.tol)


def _check(name, build, tensors, rng, tol=OP_TOL) -> CheckResult:
    R = rng.standard_normal(build().shape)

    def loss():
        return ad.reduce_sum(ad.mul(build(), R))

    return CheckResult(name, check_gradients(loss, tensors), tol)


def _p(rng, *shape, positive=False):
    a = rng.standard_normal(shape)
    return ad.parameter(np.abs(a) + 0.5 if positive else a)


def op_checks(rng, n_shapes: int = 5) -> list:
    out = []
    for i in range(n_shapes):
        B, C, m = 1 + i % 2, 1 + i % 3, 3 + 2 * (i % 3)
        r, c = 2 + i, 3 + (i % 2)
        a, b = _p(rng, r, c), _p(rng, r, c)
        out.append(_check(f"add[{i}]", lambda: ad.add(a, b), [a, b], rng))
        out.append(_check(f"mul[{i}]", lambda: ad.mul(a, b), [a, b], rng))
        out.append(_check(f"scale[{i}]", lambda: ad.scale(a, 1.7), [a], rng))
        d = _p(rng, r, c, positive=True)
        out.append(_check(f"div[{i}]", lambda: ad.div(a, d), [a, d], rng))
        out.append(_check(f"sqrt[{i}]", lambda: ad.sqrt(d), [d], rng))
        out.append(_check(f"log[{i}]", lambda: ad.log(d), [d], rng))
        out.append(_check(f"exp[{i}]", lambda: ad.exp(a), [a], rng))
        out.append(_check(f"relu[{i}]", lambda: ad.relu(a), [a], rng))
        out.append(_check(f"sigmoid[{i}]", lambda: ad.sigmoid(a), [a], rng))
        out.append(_check(f"softmax[{i}]", lambda: ad.softmax(a, axis=i % 2), [a], rng))
        out.append(_check(f"reduce_sum[{i}]", lambda: ad.reduce_sum(a, axis=1), [a], rng))
        out.append(_check(f"reduce_mean[{i}]", lambda: ad.reduce_mean(a, axis=0), [a], rng))
        A, Bm = _p(rng, B, r, c), _p(rng, c, 2 + i % 3)
        out.append(_check(f"matmul[{i}]", lambda: ad.matmul(A, Bm), [A, Bm], rng))
        x = _p(rng, B, C, m, m)
        w, bias = _p(rng, 2, C, 3, 3), _p(rng, 2)
        out.append(_check(f"conv3x3[{i}]", lambda: ad.conv3x3(x, w, bias), [x, w, bias], rng))
        wl = _p(rng, 2, C)
        out.append(_check(f"channel_linear[{i}]", lambda: ad.channel_linear(x, wl, bias), [x, wl, bias], rng))
        g, be = _p(rng, C), _p(rng, C)
        xn = _p(rng, B, max(C, 2), m, m)
        g2, b2 = _p(rng, max(C, 2)), _p(rng, max(C, 2))
        out.append(_check(f"layer_norm[{i}]", lambda: ad.layer_norm(xn, g2, b2, axis=1), [xn, g2, b2], rng))
        out.append(_check(f"upsample2[{i}]", lambda: ad.upsample2(x), [x], rng))
        out.append(_check(f"downsample2[{i}]", lambda: ad.downsample2(x), [x], rng))
        y = _p(rng, B, 1 + i % 2, m, m)
        out.append(_check(f"concat[{i}]", lambda: ad.concat([x, y], axis=1), [x, y], rng))
    return out


def attention_checks(rng) -> list:
    out = []
    for softmax in (False, True):
        x = _p(rng, 8, 4)
        W = init_attention(4, 4, 4, rng)
        cfg = AttentionConfig(4, 0.3, softmax=softmax)
        ts = [x] + list(W.values())
        out.append(_check(f"integral_attention[softmax={softmax}]",
                          lambda: integral_attention(x, W, cfg), ts, rng))
    coarse, fine = _p(rng, 2, 3, 3, 3), _p(rng, 2, 2, 5, 5)
    W = init_attention(3, 2, 2, rng)
    cfg = AttentionConfig(2, 1.0)
    out.append(_check("cross_attention", lambda: cross_attention(coarse, fine, W, cfg),
                      [coarse, fine] + list(W.values()), rng))
    return out


def learnable_index_checks(rng, M: int = 9) -> list:
    x = ad.Tensor(rng.standard_normal((1, 2 * M)))
    WQ, WK, WV = (_p(rng, 2 * M, M) for _ in range(3))
    return [_check("index_learnable", lambda: index_learnable(x, WQ, WK, WV, 0.7), [WQ, WK, WV], rng)]


def model_checks(rng) -> list:
    out = []
    cfg = UitConfig(m=9, input_channels=3, base_channels=2, levels=3)
    x = rng.standard_normal((1, 3, 9, 9))
    for name, fwd in (("uit", uit_forward), ("unet", unet_forward)):
        params = init_params(cfg, rng, name)
        ts = list(params.values())
        out.append(_check(f"{name}_forward[m=9,C=2]", lambda: fwd(x, params, cfg), ts, rng, MODEL_TOL))
    return out


def run_all(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    return op_checks(rng) + attention_checks(rng) + learnable_index_checks(rng) + model_checks(rng)
