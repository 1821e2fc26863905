"""Depth rendering and feature modulation.

zbuffer() images a cloud onto an axis-aligned view plane: depth d along the
view axis becomes intensity exp(-(d - alpha) / beta), splatted into a 3x3
neighborhood where the brightest (nearest) contribution wins. Quantized
pixel coordinates carry no input gradient, so the result is grad-blocked.

adain() rescales each channel of a feature map to statistics predicted
from a scene-control vector; the backward pass is implemented by hand so
the layer can sit inside the numpy training loop.
"""

from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud
from .project import GradPath, MappedImage, _pixel_coords

DEFAULT_SCENE_CONTROL = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class ZBufferConfig:
    alpha: float = 0.0   # image plane touches the near side of the unit ball
    beta: float = 1.0
    size: int = 313
    splat: int = 3
    view: str = "z"      # axis looked along, from the positive side

    def __post_init__(self):
        if self.beta <= 0.0:
            raise ValueError("beta must be > 0")
        if self.splat < 1 or self.splat % 2 == 0:
            raise ValueError("splat must be odd and >= 1")
        if self.view not in ("x", "y", "z"):
            raise ValueError(f"unknown view {self.view!r}")


def _view_frame(points: np.ndarray, view: str):
    """Plane coordinates (x-like, y-like) and depth for the given view.
    The image plane sits at +1 on the view axis, looking toward -1."""
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    if view == "z":
        return x, y, 1.0 - z
    if view == "x":
        return y, z, 1.0 - x
    if view == "y":
        return x, z, 1.0 - y
    raise ValueError(f"unknown view {view!r}")


def zbuffer(cloud: PointCloud, config: ZBufferConfig = ZBufferConfig()) -> MappedImage:
    if cloud.n == 0:
        raise ValueError("empty cloud")
    size = config.size
    px, py, depth = _view_frame(cloud.points, config.view)
    rows, cols = _pixel_coords(np.stack([px, py], axis=1), size)
    inten = np.exp(-(depth - config.alpha) / config.beta)
    inten = np.clip(inten, 0.0, 1.0)

    img = np.zeros((size, size), dtype=np.float64)
    half = config.splat // 2
    for dr in range(-half, half + 1):
        for dc in range(-half, half + 1):
            rr = rows + dr
            cc = cols + dc
            ok = (rr >= 0) & (rr < size) & (cc >= 0) & (cc < size)
            np.maximum.at(img, (rr[ok], cc[ok]), inten[ok])
    return MappedImage(img[:, :, None], GradPath.BLOCKED)


def positional_embedding(height: int, width: int) -> np.ndarray:
    """(H, W, 2): channel 0 is row/(H-1), channel 1 is col/(W-1); a
    1-pixel dimension yields 0."""
    if height < 1 or width < 1:
        raise ValueError("dimensions must be >= 1")
    r = np.linspace(0.0, 1.0, height)[:, None]
    c = np.linspace(0.0, 1.0, width)[None, :]
    out = np.empty((height, width, 2), dtype=np.float64)
    out[:, :, 0] = r
    out[:, :, 1] = c
    return out


# ---------------------------------------------------------------------------
# adaptive instance normalization

@dataclass
class AdaINParams:
    """Affine maps from the scene-control vector to per-channel styles:
    scale = w_scale @ control + b_scale, bias = w_bias @ control + b_bias."""
    control: np.ndarray  # (D,)
    w_scale: np.ndarray  # (C, D)
    b_scale: np.ndarray  # (C,)
    w_bias: np.ndarray   # (C, D)
    b_bias: np.ndarray   # (C,)
    eps: float = 1e-5

    @classmethod
    def identity(cls, channels: int,
                 control: np.ndarray = DEFAULT_SCENE_CONTROL) -> "AdaINParams":
        """Predicts scale 1 and bias 0 whatever the control vector."""
        d = len(control)
        return cls(np.asarray(control, dtype=np.float64),
                   np.zeros((channels, d)), np.ones(channels),
                   np.zeros((channels, d)), np.zeros(channels))

    @classmethod
    def random(cls, channels: int, control: np.ndarray = DEFAULT_SCENE_CONTROL,
               seed: int = 0) -> "AdaINParams":
        rng = np.random.default_rng(seed)
        d = len(control)
        return cls(np.asarray(control, dtype=np.float64),
                   rng.normal(0.0, 0.1, (channels, d)),
                   1.0 + rng.normal(0.0, 0.1, channels),
                   rng.normal(0.0, 0.1, (channels, d)),
                   rng.normal(0.0, 0.1, channels))


def adain(features: np.ndarray, params: AdaINParams):
    """Normalize each channel over its spatial extent (population std,
    eps inside the square root), then rescale and shift by the styles
    predicted from the control vector. Channel c of the output has mean
    bias[c] and std |scale[c]| up to the eps floor.
    Returns (output, cache)."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != params.w_scale.shape[0]:
        raise ValueError(f"feature channels do not match params: {x.shape}")
    y_s = params.w_scale @ params.control + params.b_scale
    y_b = params.w_bias @ params.control + params.b_bias
    mu = x.mean(axis=(0, 1))
    var = x.var(axis=(0, 1))
    sigma = np.sqrt(var + params.eps)
    xhat = (x - mu) / sigma
    out = y_s * xhat + y_b
    cache = (xhat, sigma, y_s, params)
    return out, cache


def adain_backward(d_out: np.ndarray, cache):
    """Gradients of a scalar loss wrt the adain inputs. Returns
    (d_features, grads) where grads has keys w_scale, b_scale, w_bias,
    b_bias, control."""
    if cache is None:
        raise ValueError("missing forward cache")
    xhat, sigma, y_s, params = cache

    d_ys = (d_out * xhat).sum(axis=(0, 1))
    d_yb = d_out.sum(axis=(0, 1))
    grads = {
        "w_scale": np.outer(d_ys, params.control),
        "b_scale": d_ys,
        "w_bias": np.outer(d_yb, params.control),
        "b_bias": d_yb,
        "control": params.w_scale.T @ d_ys + params.w_bias.T @ d_yb,
    }

    d_xhat = d_out * y_s
    mean_dxhat = d_xhat.mean(axis=(0, 1))
    mean_dxhat_xhat = (d_xhat * xhat).mean(axis=(0, 1))
    d_x = (d_xhat - mean_dxhat - xhat * mean_dxhat_xhat) / sigma
    return d_x, grads
