"""Network assembly: attention-gated residual blocks with edge-profile
guidance and dilated context aggregation, nested in a fractal skip-connection
tree, plus sub-pixel upscaling and reconstruction.

Parameters live in a :class:`ParamStore` keyed by stable dotted names; every
forward function is a free function over (tensor, params, config) so the same
params can be driven in float32 or float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ConfigError, Tensor

# Epsilon of the learned residual fusion denominator.
FUSION_EPS = 1e-5

ATTENTION_KINDS = ("eca", "ca")
EP_SOURCES = ("fe", "recab")


@dataclass(frozen=True)
class EpsrConfig:
    """Architecture hyperparameters.

    fractal_depth g gives 2**g base blocks; channels is the feature width;
    eca_kernel is the cross-channel 1-D attention kernel size; attention
    selects the efficient (1-D conv) or general (bottleneck, reduction r)
    channel attention; ep_residual_source picks which feature the edge
    branch is added back onto.
    """

    fractal_depth: int = 7
    channels: int = 64
    eca_kernel: int = 9
    scale: int = 2
    attention: str = "eca"
    reduction: int = 16
    ep_residual_source: str = "fe"

    def __post_init__(self):
        if self.fractal_depth < 0:
            raise ConfigError(f"fractal_depth must be >= 0, got {self.fractal_depth}")
        if self.channels < 1:
            raise ConfigError(f"channels must be positive, got {self.channels}")
        if self.eca_kernel < 1 or self.eca_kernel % 2 == 0:
            raise ConfigError(f"eca_kernel must be odd, got {self.eca_kernel}")
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.attention not in ATTENTION_KINDS:
            raise ConfigError(f"attention must be one of {ATTENTION_KINDS}")
        if self.attention == "ca":
            if self.reduction < 1 or self.channels % self.reduction != 0:
                raise ConfigError(
                    f"reduction {self.reduction} must divide channels {self.channels}")
        if self.ep_residual_source not in EP_SOURCES:
            raise ConfigError(f"ep_residual_source must be one of {EP_SOURCES}")


class ParamStore:
    """Named, ordered collection of learnable tensors plus optimizer state."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None


def count_blocks(config: EpsrConfig) -> int:
    """Number of base residual blocks in the fractal tree."""
    return 2 ** config.fractal_depth


def count_parameters(params: ParamStore) -> int:
    """Exact census of learnable scalar entries."""
    return sum(t.size for t in params.tensors())


def attention_weight_entries(config: EpsrConfig) -> int:
    """Weight entries (biases excluded) of one block's attention module."""
    if config.attention == "eca":
        return config.eca_kernel
    c, r = config.channels, config.reduction
    return 2 * c * c // r


# ---------------------------------------------------------------------------
# Parameter construction
# ---------------------------------------------------------------------------

# Residual-branch-terminating convs start damped so every block opens close
# to identity; without this the nested residual sums amplify activations and
# the first training steps see a badly scaled output.
_RESIDUAL_TAIL_GAIN = 0.1


def _add_conv(params: ParamStore, prefix: str, cout: int, cin: int, k: int,
              rng: np.random.Generator, dtype, gain: float = 1.0) -> None:
    fan_in = cin * k * k
    std = gain * np.sqrt(2.0 / fan_in)
    w = rng.normal(0.0, std, size=(cout, cin, k, k)).astype(dtype)
    params.add(prefix + ".weight", w)
    params.add(prefix + ".bias", np.zeros((1, cout, 1, 1), dtype=dtype))


def _add_reeb(params: ParamStore, prefix: str, config: EpsrConfig,
              rng: np.random.Generator, dtype) -> None:
    c = config.channels
    _add_conv(params, prefix + "fe1", c, c, 3, rng, dtype)
    _add_conv(params, prefix + "fe2", c, c, 3, rng, dtype)
    if config.attention == "eca":
        k = config.eca_kernel
        params.add(prefix + "att.kernel",
                   np.full((1, k, 1, 1), 1.0 / k, dtype=dtype))
    else:
        mid = c // config.reduction
        _add_conv(params, prefix + "att.w1", mid, c, 1, rng, dtype)
        _add_conv(params, prefix + "att.w2", c, mid, 1, rng, dtype)
    params.add(prefix + "fuse.w1_raw", np.ones((1, 1, 1, 1), dtype=dtype))
    params.add(prefix + "fuse.w2_raw", np.ones((1, 1, 1, 1), dtype=dtype))
    _add_conv(params, prefix + "ep.img", 3, c, 3, rng, dtype)
    _add_conv(params, prefix + "ep.feat", c, 6, 3, rng, dtype,
              gain=_RESIDUAL_TAIL_GAIN)
    for name in ("cn.c1", "cn.c2", "cn.c3"):
        _add_conv(params, prefix + name, c, c, 3, rng, dtype)
    _add_conv(params, prefix + "cn.c4", c, c, 3, rng, dtype,
              gain=_RESIDUAL_TAIL_GAIN)


def build_params(config: EpsrConfig, seed: int = 0, dtype=np.float32) -> ParamStore:
    """Initialise all learnable tensors.

    Conv weights get fan-in scaled normals, biases start at zero, the fusion
    raws start at 1, and the cross-channel attention kernel starts as the
    1/k averaging filter, so early training leans toward identity behaviour.
    """
    rng = np.random.default_rng(seed)
    params = ParamStore()
    c, g, s = config.channels, config.fractal_depth, config.scale
    _add_conv(params, "shallow", c, 3, 3, rng, dtype)
    for d in range(count_blocks(config)):
        _add_reeb(params, f"reeb{d:03d}.", config, rng, dtype)
    for level in range(1, g + 1):
        for node in range(2 ** (g - level)):
            _add_conv(params, f"fsc.l{level}.n{node:03d}", c, c, 3, rng, dtype,
                      gain=_RESIDUAL_TAIL_GAIN)
    if s == 4:
        _add_conv(params, "upscale.s0", 4 * c, c, 3, rng, dtype)
        _add_conv(params, "upscale.s1", 4 * c, c, 3, rng, dtype)
    else:
        _add_conv(params, "upscale.s0", s * s * c, c, 3, rng, dtype)
    _add_conv(params, "reconstruct", 3, c, 3, rng, dtype)
    return params


def _conv(x: Tensor, params: ParamStore, prefix: str, *, padding: int,
          dilation: int = 1) -> Tensor:
    return T.conv2d(x, params[prefix + ".weight"], params[prefix + ".bias"],
                    padding=padding, dilation=dilation)


# ---------------------------------------------------------------------------
# Block-level forward passes
# ---------------------------------------------------------------------------

def shallow_extract(img: Tensor, params: ParamStore) -> Tensor:
    """First feature map from the 3-channel input, one 3x3 conv."""
    if img.shape[1] != 3:
        raise T.ShapeError(f"expected 3 input channels, got {img.shape[1]}")
    return _conv(img, params, "shallow", padding=1)


def recab_feature_extract(f_in: Tensor, params: ParamStore, d: int) -> Tensor:
    """conv3x3 -> ReLU -> conv3x3, no normalisation layers."""
    p = f"reeb{d:03d}."
    return _conv(T.relu(_conv(f_in, params, p + "fe1", padding=1)),
                 params, p + "fe2", padding=1)


def eca_weights(feature: Tensor, kernel: Tensor) -> Tensor:
    """Channel weights via pooled descriptor -> 1-D cross-channel conv -> sigmoid."""
    return T.sigmoid(T.conv1d_channel(T.global_avg_pool(feature), kernel))


def ca_weights(feature: Tensor, w1: Tensor, b1: Tensor, w2: Tensor,
               b2: Tensor) -> Tensor:
    """Bottleneck channel weights: GAP -> 1x1 down -> ReLU -> 1x1 up -> sigmoid."""
    pooled = T.global_avg_pool(feature)
    mid = T.relu(T.conv2d(pooled, w1, b1, padding=0))
    return T.sigmoid(T.conv2d(mid, w2, b2, padding=0))


def weighted_residual_fuse(f_in: Tensor, f_hat: Tensor, w1_raw: Tensor,
                           w2_raw: Tensor) -> Tensor:
    """Learned convex-ish blend (w1*f_in + w2*f_hat) / (eps + w1 + w2).

    The raws pass through ReLU so both effective weights stay non-negative;
    eps keeps the denominator positive even when both raws are clamped.
    """
    w1 = T.relu(w1_raw)
    w2 = T.relu(w2_raw)
    eps = T.tensor(FUSION_EPS, dtype=f_in.data.dtype)
    denom = T.add(eps, T.add(w1, w2))
    num = T.add(T.mul(f_in, w1), T.mul(f_hat, w2))
    return T.div(num, denom)


def _attention(feature: Tensor, params: ParamStore, d: int,
               config: EpsrConfig) -> Tensor:
    p = f"reeb{d:03d}.att."
    if config.attention == "eca":
        return eca_weights(feature, params[p + "kernel"])
    return ca_weights(feature, params[p + "w1.weight"], params[p + "w1.bias"],
                      params[p + "w2.weight"], params[p + "w2.bias"])


def edge_profile_mask(f_recab: Tensor, params: ParamStore,
                      d: int) -> tuple[Tensor, Tensor]:
    """Project a block feature to an image and expose its discontinuities.

    Returns (projected image, mask) where the mask is the positive part of
    the image minus its 3x3 mean blur; it is non-negative everywhere and
    zero wherever the image is locally flat.
    """
    i_sr = _conv(f_recab, params, f"reeb{d:03d}.ep.img", padding=1)
    mask = T.relu(T.subtract(i_sr, T.avg_pool3x3(i_sr)))
    return i_sr, mask


def ep_forward(f_recab: Tensor, f_fe: Tensor, params: ParamStore, d: int,
               config: EpsrConfig) -> Tensor:
    """Edge-profile branch.

    Re-injects the projected image and its edge mask as guidance on top of
    the residual source feature.
    """
    i_sr, mask = edge_profile_mask(f_recab, params, d)
    guided = T.concat_channels(i_sr, mask)
    residual = f_fe if config.ep_residual_source == "fe" else f_recab
    return T.add(residual, _conv(guided, params, f"reeb{d:03d}.ep.feat",
                                 padding=1))


def cn_forward(f_ep: Tensor, params: ParamStore, d: int) -> Tensor:
    """Context branch: dilated 3x3 convs (1, 2, 4, 1) in a residual wrapper.

    ReLU follows the first three convolutions only, so the residual update
    can be signed.
    """
    p = f"reeb{d:03d}.cn."
    t = T.relu(_conv(f_ep, params, p + "c1", padding=1, dilation=1))
    t = T.relu(_conv(t, params, p + "c2", padding=2, dilation=2))
    t = T.relu(_conv(t, params, p + "c3", padding=4, dilation=4))
    t = _conv(t, params, p + "c4", padding=1, dilation=1)
    return T.add(f_ep, t)


def reeb_forward(f_in: Tensor, params: ParamStore, d: int,
                 config: EpsrConfig) -> Tensor:
    """One base block: feature extraction, channel attention, learned fusion,
    edge-profile guidance, context aggregation."""
    f_fe = recab_feature_extract(f_in, params, d)
    weights = _attention(f_fe, params, d, config)
    f_hat = T.scale_channels(f_fe, weights)
    p = f"reeb{d:03d}.fuse."
    f_recab = weighted_residual_fuse(f_in, f_hat, params[p + "w1_raw"],
                                     params[p + "w2_raw"])
    f_ep = ep_forward(f_recab, f_fe, params, d, config)
    return cn_forward(f_ep, params, d)


def fractal_forward(f_k: Tensor, level: int, params: ParamStore,
                    config: EpsrConfig, node: int = 0) -> Tensor:
    """Recursive skip-connection tree.

    Level 0 is a base block; level k wraps two level-(k-1) groups applied in
    sequence, a 3x3 conv of its own, and an identity skip.  ``node`` indexes
    sibling groups at the same level; leaves map to block index
    ``node`` at level 0.
    """
    if level < 0 or level > config.fractal_depth:
        raise ConfigError(
            f"level {level} outside 0..{config.fractal_depth}")
    if level == 0:
        return reeb_forward(f_k, params, node, config)
    inner = fractal_forward(f_k, level - 1, params, config, node=2 * node)
    inner = fractal_forward(inner, level - 1, params, config, node=2 * node + 1)
    branch = _conv(inner, params, f"fsc.l{level}.n{node:03d}", padding=1)
    return T.add(f_k, branch)


def upscale(f_df: Tensor, params: ParamStore, scale: int) -> Tensor:
    """Sub-pixel upscaling: conv to scale^2 x channels then pixel shuffle;
    scale 4 runs two x2 stages."""
    if scale in (2, 3):
        return T.pixel_shuffle(_conv(f_df, params, "upscale.s0", padding=1), scale)
    if scale == 4:
        t = T.pixel_shuffle(_conv(f_df, params, "upscale.s0", padding=1), 2)
        return T.pixel_shuffle(_conv(t, params, "upscale.s1", padding=1), 2)
    raise ConfigError(f"unsupported scale {scale}")


def epsr_forward(img_lr: Tensor, params: ParamStore,
                 config: EpsrConfig) -> Tensor:
    """Full network: shallow features, fractal tree, upscale, reconstruct.

    The output is intentionally not clamped; clamping to [0,1] happens only
    when an image is emitted, so training gradients stay alive.
    """
    f0 = shallow_extract(img_lr, params)
    f_df = fractal_forward(f0, config.fractal_depth, params, config)
    f_up = upscale(f_df, params, config.scale)
    return _conv(f_up, params, "reconstruct", padding=1)


def self_ensemble(img_lr: Tensor, params: ParamStore,
                  config: EpsrConfig) -> Tensor:
    """Average the network over the 8 dihedral transforms of the input."""
    from .imaging import apply_dihedral, invert_dihedral

    if img_lr.shape[0] != 1:
        raise T.ShapeError("self_ensemble expects a single image")
    acc = None
    for tid in range(8):
        warped = np.ascontiguousarray(
            apply_dihedral(img_lr.data, tid, axes=(2, 3)))
        out = epsr_forward(Tensor(warped), params, config)
        restored = invert_dihedral(out.data, tid, axes=(2, 3))
        acc = restored.copy() if acc is None else acc + restored
    return Tensor(acc / img_lr.data.dtype.type(8))
