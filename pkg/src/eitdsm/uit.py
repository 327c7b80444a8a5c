"""U-shaped integral transformer and a plain U-Net baseline.

Both share the same encoder: an input double conv followed by ``levels``
stages of bilinear half-downsampling and a double conv that doubles the
channels, with a learned positional embedding added at every level. The
transformer adds a residual integral-attention block on the coarsest level
and, on each decoder step, a coarse-to-fine cross attention whose output is
concatenated next to the skip connection. The U-Net concatenates the skip
directly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor_ad as ad
from .attention import AttentionConfig, cross_attention, grid_alpha, init_attention, integral_attention
from .tensor_ad import ShapeError, Tensor


@dataclass(frozen=True)
class UitConfig:
    m: int = 65
    input_channels: int = 3
    base_channels: int = 16
    levels: int = 3
    softmax: bool = False
    heads: int = 1

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if (self.m - 1) % (2 ** self.levels):
            raise ValueError(f"m-1={self.m - 1} is not divisible by 2**levels={2 ** self.levels}")
        if (self.m - 1) // 2 ** self.levels < 1:
            raise ValueError("coarsest grid would have fewer than 2 nodes per side")

    def grid_size(self, level: int) -> int:
        return (self.m - 1) // 2 ** level + 1

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level

    def alpha(self, level: int) -> float:
        return grid_alpha(self.grid_size(level))

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "UitConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in kinds:
                raise ValueError(f"unknown config key {key!r}")
            kw[key] = val.lower() == "true" if kinds[key] in (bool, "bool") else int(val)
        return cls(**kw)


# ---------------------------------------------------------------------------
# parameters


def _uniform(rng, fan_in: int, shape) -> np.ndarray:
    s = fan_in ** -0.5
    return rng.uniform(-s, s, shape)


def _conv_block(p: dict, rng, name: str, cin: int, cout: int) -> None:
    p[f"{name}.c1.w"] = _uniform(rng, cin * 9, (cout, cin, 3, 3))
    p[f"{name}.c1.b"] = np.zeros(cout)
    p[f"{name}.n1.g"] = np.ones(cout)
    p[f"{name}.n1.b"] = np.zeros(cout)
    p[f"{name}.c2.w"] = _uniform(rng, cout * 9, (cout, cout, 3, 3))
    p[f"{name}.c2.b"] = np.zeros(cout)
    p[f"{name}.n2.g"] = np.ones(cout)
    p[f"{name}.n2.b"] = np.zeros(cout)


def init_params(cfg: UitConfig, rng, model: str = "uit") -> dict:
    """Parameter dict (name -> Tensor) for ``model`` in {"uit", "unet"}.

    Weights are uniform in +-fan_in**-0.5, norms start as the identity
    affine map and all biases (head included) start at zero.
    """
    if model not in ("uit", "unet"):
        raise ValueError(f"unknown model {model!r}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    p = {}
    L = cfg.levels
    _conv_block(p, rng, "enc0", cfg.input_channels, cfg.channels(0))
    for k in range(1, L + 1):
        _conv_block(p, rng, f"enc{k}", cfg.channels(k - 1), cfg.channels(k))
    for k in range(L + 1):
        p[f"pos{k}.w"] = _uniform(rng, 2, (cfg.channels(k), 2))
        p[f"pos{k}.b"] = np.zeros(cfg.channels(k))
    if model == "uit":
        cL = cfg.channels(L)
        for key, t in init_attention(cL, cL, cL, rng, "attn").items():
            p[f"attn.{key}"] = t.data
    for k in range(L - 1, -1, -1):
        ck, cu = cfg.channels(k), cfg.channels(k + 1)
        if model == "uit":
            for key, t in init_attention(cu, ck, ck, rng, f"xattn{k}").items():
                p[f"xattn{k}.{key}"] = t.data
            cin = cu + 2 * ck
        else:
            cin = cu + ck
        _conv_block(p, rng, f"dec{k}", cin, ck)
    p["head.w"] = _uniform(rng, cfg.channels(0), (1, cfg.channels(0)))
    p["head.b"] = np.zeros(1)
    return {k: ad.parameter(v, name=k) for k, v in p.items()}


def count_params(params: dict) -> int:
    return int(sum(t.data.size for t in params.values()))


def _attn_weights(params: dict, prefix: str) -> dict:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix + ".")}


# ---------------------------------------------------------------------------
# forward passes


def double_conv(x: Tensor, params: dict, name: str) -> Tensor:
    for i in (1, 2):
        x = ad.conv3x3(x, params[f"{name}.c{i}.w"], params[f"{name}.c{i}.b"])
        x = ad.layer_norm(x, params[f"{name}.n{i}.g"], params[f"{name}.n{i}.b"], axis=1)
        x = ad.relu(x)
    return x


def _coords(m: int) -> np.ndarray:
    c = np.linspace(-1.0, 1.0, m)
    X, Y = np.meshgrid(c, c)
    return np.stack([X, Y])[None]


def _add_position(x: Tensor, params: dict, level: int) -> Tensor:
    emb = ad.channel_linear(_coords(x.shape[-1]), params[f"pos{level}.w"], params[f"pos{level}.b"])
    return ad.add(x, emb)


def _encode(x: Tensor, params: dict, cfg: UitConfig) -> list:
    x = ad.as_tensor(x)
    want = (cfg.input_channels, cfg.m, cfg.m)
    if x.ndim != 4 or x.shape[1:] != want:
        raise ShapeError(f"expected input (B, {want[0]}, {want[1]}, {want[2]}), got {x.shape}")
    h = _add_position(double_conv(x, params, "enc0"), params, 0)
    skips = [h]
    for k in range(1, cfg.levels + 1):
        h = double_conv(ad.downsample2(h), params, f"enc{k}")
        assert h.shape[1:] == (cfg.channels(k), cfg.grid_size(k), cfg.grid_size(k))
        h = _add_position(h, params, k)
        skips.append(h)
    return skips


def _head(h: Tensor, params: dict) -> Tensor:
    return ad.sigmoid(ad.channel_linear(h, params["head.w"], params["head.b"]))


def _to_positions(t: Tensor) -> Tensor:
    B, C, m, _ = t.shape
    return ad.transpose(ad.reshape(t, (B, C, m * m)), (0, 2, 1))


def _to_image(t: Tensor, m: int) -> Tensor:
    B, M, C = t.shape
    return ad.reshape(ad.transpose(t, (0, 2, 1)), (B, C, m, m))


def uit_forward(x, params: dict, cfg: UitConfig) -> Tensor:
    """(B, 3L, m, m) -> (B, 1, m, m) index prediction in (0, 1)."""
    skips = _encode(x, params, cfg)
    L = cfg.levels
    h = skips[L]
    mL = cfg.grid_size(L)
    acfg = AttentionConfig(cfg.channels(L), cfg.alpha(L), cfg.heads, cfg.softmax)
    U = integral_attention(_to_positions(h), _attn_weights(params, "attn"), acfg)
    h = ad.add(h, _to_image(U, mL))
    for k in range(L - 1, -1, -1):
        xcfg = AttentionConfig(cfg.channels(k), cfg.alpha(k + 1), cfg.heads, softmax=False)
        side = cross_attention(h, skips[k], _attn_weights(params, f"xattn{k}"), xcfg)
        h = double_conv(ad.concat([ad.upsample2(h), side], axis=1), params, f"dec{k}")
    return _head(h, params)


def unet_forward(x, params: dict, cfg: UitConfig) -> Tensor:
    skips = _encode(x, params, cfg)
    h = skips[cfg.levels]
    for k in range(cfg.levels - 1, -1, -1):
        h = double_conv(ad.concat([ad.upsample2(h), skips[k]], axis=1), params, f"dec{k}")
    return _head(h, params)


def forward(model: str, x, params: dict, cfg: UitConfig) -> Tensor:
    if model == "uit":
        return uit_forward(x, params, cfg)
    if model == "unet":
        return unet_forward(x, params, cfg)
    raise ValueError(f"unknown model {model!r}")


def unet_view(params: dict, cfg: UitConfig) -> dict:
    """U-Net parameters obtained by dropping the attention-only weights.

    Decoder convs lose the input slices that read the cross-attention
    channels. With all value projections set to zero the transformer and this
    U-Net compute the same function.
    """
    out = {}
    for k, t in params.items():
        if k.startswith("attn.") or k.startswith("xattn"):
            continue
        if k.startswith("dec") and k.endswith(".c1.w"):
            level = int(k[3:k.index(".")])
            keep = cfg.channels(level + 1) + cfg.channels(level)
            out[k] = ad.parameter(t.data[:, :keep].copy(), name=k)
        else:
            out[k] = ad.parameter(t.data.copy(), name=k)
    return out
