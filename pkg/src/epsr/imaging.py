"""Image I/O, colour conversion, degradation pipelines, and geometry.

Degradations compute in float64 on the 0-255 scale end to end; quantisation
to 8-bit happens once, when an ``ImageRGB`` is produced.  The resize follows
the MATLAB imresize convention (cubic a=-0.5 kernel, support widening when
downscaling, symmetric border mirroring) because the benchmark baselines in
this lineage are unreachable with a naive bicubic.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import correlate1d

from . import tensor as T
from .tensor import ConfigError, Tensor


class ImageFormatError(ValueError):
    """The file is not an image format this engine accepts."""


@dataclass(frozen=True)
class ImageRGB:
    """8-bit interleaved RGB raster, shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
            raise ImageFormatError(
                f"pixels must be uint8 (H,W,3), got {p.dtype} {p.shape}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def to_float(self) -> np.ndarray:
        """Pixels as float64 on the 0-255 scale."""
        return self.pixels.astype(np.float64)


def quantize_u8(arr: np.ndarray) -> np.ndarray:
    """Round half-up to 8 bits with saturation (single rounding step)."""
    return np.clip(np.floor(arr + 0.5), 0, 255).astype(np.uint8)


def image_from_float(arr: np.ndarray) -> ImageRGB:
    return ImageRGB(quantize_u8(arr))


_16BIT_MODES = ("I", "I;16", "I;16B", "I;16L", "I;16N")


def load_png(path) -> ImageRGB:
    with Image.open(path) as im:
        if im.mode in _16BIT_MODES:
            raise ImageFormatError(f"{path}: 16-bit images are not supported")
        if im.mode == "RGB":
            arr = np.asarray(im)
        elif im.mode == "L":
            gray = np.asarray(im)
            arr = np.repeat(gray[:, :, None], 3, axis=2)
        elif im.mode == "P":
            arr = np.asarray(im.convert("RGB"))
        else:
            raise ImageFormatError(f"{path}: unsupported image mode {im.mode!r}")
    return ImageRGB(np.ascontiguousarray(arr))


def save_png(img: ImageRGB, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img.pixels, mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# Colour
# ---------------------------------------------------------------------------

_Y_COEFF = np.array([65.481, 128.553, 24.966]) / 255.0


def rgb_to_ycbcr_y(img: ImageRGB | np.ndarray) -> np.ndarray:
    """BT.601 studio-swing luminance (16..235 scale), real-valued."""
    arr = img.to_float() if isinstance(img, ImageRGB) else np.asarray(img, np.float64)
    return 16.0 + arr @ _Y_COEFF


# ---------------------------------------------------------------------------
# Resizing (MATLAB imresize convention)
# ---------------------------------------------------------------------------

def _cubic(x: np.ndarray) -> np.ndarray:
    """Cubic convolution kernel with a = -0.5, support [-2, 2]."""
    ax = np.abs(x)
    ax2 = ax * ax
    ax3 = ax2 * ax
    inner = 1.5 * ax3 - 2.5 * ax2 + 1.0
    outer = -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    return np.where(ax <= 1.0, inner, np.where(ax <= 2.0, outer, 0.0))


def resize_weights(in_len: int, out_len: int, scale: float,
                   antialias: bool = True):
    """Sample positions and normalised weights for one resized dimension.

    When downscaling with antialiasing the kernel is stretched by 1/scale so
    it acts as a low-pass filter.  Out-of-range source indices are mirrored
    symmetrically (edge sample included), matching the benchmark convention.
    Returns (weights, indices) with shape (out_len, taps).
    """
    kernel_width = 4.0
    if antialias and scale < 1.0:
        width = kernel_width / scale
    else:
        width = kernel_width
    x = np.arange(1, out_len + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1.0 - 1.0 / scale)
    left = np.floor(u - width / 2.0)
    taps = int(np.ceil(width)) + 2
    indices = (left[:, None] + np.arange(taps)[None, :]).astype(np.int64)
    dist = u[:, None] - indices
    if antialias and scale < 1.0:
        weights = scale * _cubic(scale * dist)
    else:
        weights = _cubic(dist)
    weights = weights / weights.sum(axis=1, keepdims=True)
    mirror = np.concatenate([np.arange(in_len), np.arange(in_len - 1, -1, -1)])
    indices = mirror[np.mod(indices - 1, 2 * in_len)]
    keep = np.any(weights != 0.0, axis=0)
    return weights[:, keep], indices[:, keep]


def _resize_axis(arr: np.ndarray, out_len: int, scale: float,
                 antialias: bool) -> np.ndarray:
    weights, indices = resize_weights(arr.shape[0], out_len, scale, antialias)
    gathered = arr[indices]            # (out_len, taps, ...)
    w = weights.reshape(weights.shape + (1,) * (arr.ndim - 1))
    return (gathered * w).sum(axis=1)


def imresize(arr: np.ndarray, out_h: int, out_w: int,
             antialias: bool = True) -> np.ndarray:
    """Resize an (H, W) or (H, W, C) float array; returns float64."""
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"output dims must be positive, got {out_h}x{out_w}")
    src = np.asarray(arr, dtype=np.float64)
    h, w = src.shape[:2]
    out = _resize_axis(src, out_h, out_h / h, antialias)
    out = np.swapaxes(
        _resize_axis(np.swapaxes(out, 0, 1), out_w, out_w / w, antialias), 0, 1)
    return out


def bicubic_resize(img: ImageRGB | np.ndarray, out_w: int, out_h: int,
                   antialias: bool = True) -> np.ndarray:
    """Resize to (out_h, out_w); accepts an image or float raster."""
    arr = img.to_float() if isinstance(img, ImageRGB) else img
    return imresize(arr, out_h, out_w, antialias=antialias)


# ---------------------------------------------------------------------------
# Blur and noise
# ---------------------------------------------------------------------------

def gaussian_kernel(size: int = 7, sigma: float = 1.6) -> np.ndarray:
    """2-D Gaussian kernel normalised to sum exactly 1."""
    if size < 1 or size % 2 == 0:
        raise ConfigError(f"kernel size must be odd, got {size}")
    half = size // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g1 = np.exp(-coords ** 2 / (2.0 * sigma * sigma))
    kern = np.outer(g1, g1)
    return kern / kern.sum()


def gaussian_blur(arr: np.ndarray, kernel_size: int = 7,
                  sigma: float = 1.6) -> np.ndarray:
    """Separable Gaussian blur with reflective (edge-inclusive) borders."""
    if kernel_size % 2 == 0:
        raise ConfigError(f"kernel size must be odd, got {kernel_size}")
    half = kernel_size // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g1 = np.exp(-coords ** 2 / (2.0 * sigma * sigma))
    g1 /= g1.sum()
    out = np.asarray(arr, dtype=np.float64)
    out = correlate1d(out, g1, axis=0, mode="reflect")
    out = correlate1d(out, g1, axis=1, mode="reflect")
    return out


def add_gaussian_noise(arr: np.ndarray, sigma: float = 30.0,
                       seed: int | np.random.Generator = 0) -> np.ndarray:
    """Add i.i.d. zero-mean Gaussian noise on the 0-255 scale, then clip."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    noisy = np.asarray(arr, np.float64) + rng.normal(0.0, sigma, size=arr.shape)
    return np.clip(noisy, 0.0, 255.0)


# ---------------------------------------------------------------------------
# Degradation pipelines
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DegradationSpec:
    """Tagged description of one of the three fixed LR pipelines.

    bi: bicubic downscale by 2, 3 or 4.
    bd: 7x7 sigma-1.6 Gaussian blur, then x3 downscale (bicubic by default,
        plain decimation selectable).
    dn: bicubic x3 downscale, then sigma-30 Gaussian noise.
    """

    tag: str
    scale: int
    blur_size: int = 7
    blur_sigma: float = 1.6
    noise_sigma: float = 30.0
    bd_downsample: str = "bicubic"

    def __post_init__(self):
        if self.tag not in ("bi", "bd", "dn"):
            raise ConfigError(f"unknown degradation tag {self.tag!r}")
        if self.tag == "bi" and self.scale not in (2, 3, 4):
            raise ConfigError(f"bi scale must be 2, 3 or 4, got {self.scale}")
        if self.tag in ("bd", "dn") and self.scale != 3:
            raise ConfigError(f"{self.tag} is fixed at scale 3, got {self.scale}")
        if self.bd_downsample not in ("bicubic", "decimate"):
            raise ConfigError(f"bd_downsample must be bicubic or decimate")

    @classmethod
    def bi(cls, scale: int) -> "DegradationSpec":
        return cls(tag="bi", scale=scale)

    @classmethod
    def bd(cls, downsample: str = "bicubic") -> "DegradationSpec":
        return cls(tag="bd", scale=3, bd_downsample=downsample)

    @classmethod
    def dn(cls) -> "DegradationSpec":
        return cls(tag="dn", scale=3)


def crop_to_multiple(img: ImageRGB, scale: int) -> ImageRGB:
    """Top-left crop to the largest size divisible by ``scale``."""
    h = img.height - img.height % scale
    w = img.width - img.width % scale
    if h < scale or w < scale:
        raise ConfigError(f"image {img.width}x{img.height} too small for x{scale}")
    return ImageRGB(np.ascontiguousarray(img.pixels[:h, :w]))


def degrade(img: ImageRGB, spec: DegradationSpec, seed: int = 0) -> ImageRGB:
    """Produce the LR counterpart of an HR image under ``spec``.

    The HR image is first cropped so its dimensions divide by the scale;
    all arithmetic stays in float64 until the final 8-bit quantisation.
    """
    s = spec.scale
    hr = crop_to_multiple(img, s).to_float()
    lo_h, lo_w = hr.shape[0] // s, hr.shape[1] // s
    if spec.tag == "bi":
        lr = imresize(hr, lo_h, lo_w)
    elif spec.tag == "bd":
        blurred = gaussian_blur(hr, spec.blur_size, spec.blur_sigma)
        if spec.bd_downsample == "bicubic":
            lr = imresize(blurred, lo_h, lo_w)
        else:
            lr = blurred[::s, ::s]
    else:  # dn
        lr = imresize(hr, lo_h, lo_w)
        lr = add_gaussian_noise(lr, spec.noise_sigma, seed)
    return image_from_float(lr)


# ---------------------------------------------------------------------------
# Sobel gradients (differentiable, used by the gradient loss)
# ---------------------------------------------------------------------------

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_sobel_weight_cache: dict[str, Tensor] = {}


def _sobel_weight(dtype) -> Tensor:
    key = np.dtype(dtype).name
    if key not in _sobel_weight_cache:
        w = np.zeros((6, 3, 3, 3), dtype=dtype)
        for c in range(3):
            w[c, c] = _SOBEL_X
            w[3 + c, c] = _SOBEL_X.T
        _sobel_weight_cache[key] = Tensor(w)
    return _sobel_weight_cache[key]


def sobel_gradients(x: Tensor) -> Tensor:
    """Per-channel horizontal then vertical Sobel responses as 6 channels.

    Zero padding keeps the spatial size; the fixed kernels take no gradient
    but the input does, so the op participates in the loss graph.
    """
    if x.shape[1] != 3:
        raise T.ShapeError(f"sobel_gradients expects 3 channels, got {x.shape[1]}")
    return T.conv2d(x, _sobel_weight(x.data.dtype), padding=1)


# ---------------------------------------------------------------------------
# Dihedral transforms and paired augmentation
# ---------------------------------------------------------------------------

def apply_dihedral(arr: np.ndarray, transform_id: int,
                   axes: tuple[int, int] = (0, 1)) -> np.ndarray:
    """One of the 8 square symmetries: optional horizontal flip, then
    ``transform_id % 4`` counter-clockwise quarter turns.  Id 0 is identity."""
    if not 0 <= transform_id <= 7:
        raise ConfigError(f"transform id must be 0..7, got {transform_id}")
    out = arr
    if transform_id >= 4:
        out = np.flip(out, axis=axes[1])
    rot = transform_id % 4
    if rot:
        out = np.rot90(out, k=rot, axes=axes)
    return out


def invert_dihedral(arr: np.ndarray, transform_id: int,
                    axes: tuple[int, int] = (0, 1)) -> np.ndarray:
    if not 0 <= transform_id <= 7:
        raise ConfigError(f"transform id must be 0..7, got {transform_id}")
    out = arr
    rot = transform_id % 4
    if rot:
        out = np.rot90(out, k=4 - rot, axes=axes)
    if transform_id >= 4:
        out = np.flip(out, axis=axes[1])
    return out


def augment(hr_patch: np.ndarray, lr_patch: np.ndarray,
            transform_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Apply the same dihedral transform to an aligned (H,W,C) patch pair."""
    hr = np.ascontiguousarray(apply_dihedral(hr_patch, transform_id))
    lr = np.ascontiguousarray(apply_dihedral(lr_patch, transform_id))
    return hr, lr


# ---------------------------------------------------------------------------
# Dataset manifests
# ---------------------------------------------------------------------------

def read_manifest(path) -> list[tuple[Path, Path | None]]:
    """Parse a plain-text manifest: one HR path per line, optionally
    'hr<TAB>lr'.  Relative paths resolve against the manifest location."""
    base = Path(path).parent
    entries: list[tuple[Path, Path | None]] = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        hr = Path(parts[0])
        hr = hr if hr.is_absolute() else base / hr
        lr = None
        if len(parts) > 1 and parts[1]:
            lr = Path(parts[1])
            lr = lr if lr.is_absolute() else base / lr
        entries.append((hr, lr))
    return entries


def write_manifest(path, pairs) -> None:
    lines = []
    for hr, lr in pairs:
        lines.append(f"{hr}\t{lr}" if lr is not None else str(hr))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")
