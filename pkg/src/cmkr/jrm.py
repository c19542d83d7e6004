"""Reference forward pass of the joint relation module (no training).

Feature maps are B x C x H x W arrays, color vectors B x C. Projection
heads are plain C x C linear maps applied channel-wise; the joint layer is
a 1 x 1 convolution over the 2C concatenated channels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit


@dataclass(frozen=True, eq=False)
class JrmParams:
    proj_c: np.ndarray
    proj_t: np.ndarray
    joint_weight: np.ndarray
    joint_bias: np.ndarray

    def __post_init__(self):
        c = self.proj_c.shape[0]
        expected = {"proj_c": (c, c), "proj_t": (c, c),
                    "joint_weight": (2 * c, 2 * c), "joint_bias": (2 * c,)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} must have shape {shape}")

    @property
    def channels(self) -> int:
        return self.proj_c.shape[0]

    @classmethod
    def identity(cls, c: int) -> "JrmParams":
        return cls(np.eye(c), np.eye(c), np.zeros((2 * c, 2 * c)), np.zeros(2 * c))

    @classmethod
    def zeros(cls, c: int) -> "JrmParams":
        return cls(np.zeros((c, c)), np.zeros((c, c)), np.zeros((2 * c, 2 * c)), np.zeros(2 * c))

    @classmethod
    def random(cls, c: int, rng: np.random.Generator, scale: float = 0.5) -> "JrmParams":
        return cls(rng.standard_normal((c, c)) * scale / np.sqrt(c),
                   rng.standard_normal((c, c)) * scale / np.sqrt(c),
                   rng.standard_normal((2 * c, 2 * c)) * scale / np.sqrt(2 * c),
                   rng.standard_normal(2 * c) * scale)


def _check_map(f):
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 4 or min(f.shape) < 1:
        raise ValueError(f"feature map must be B x C x H x W, got {f.shape}")
    if not np.isfinite(f).all():
        raise ValueError("feature map contains non-finite values")
    return f


def project_map(f_t, proj: np.ndarray) -> np.ndarray:
    return np.einsum("oc,bchw->bohw", proj, _check_map(f_t))


def project_vector(f_c, proj: np.ndarray) -> np.ndarray:
    return np.asarray(f_c, dtype=np.float64) @ proj.T


def channel_weights(f_t, proj: Optional[np.ndarray] = None) -> np.ndarray:
    """sigmoid(spatial mean of the projected texture map), shape B x C."""
    f_t = _check_map(f_t)
    if proj is not None:
        f_t = project_map(f_t, proj)
    return expit(f_t.mean(axis=(2, 3)))


def channel_modulate(f_c, w) -> np.ndarray:
    f_c = np.asarray(f_c, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if f_c.shape != w.shape:
        raise ValueError(f"shape mismatch: {f_c.shape} vs {w.shape}")
    return w * f_c + f_c


def dynamic_dwconv(f_t, kernel_source) -> np.ndarray:
    """1 x 1 depth-wise convolution with per-sample kernels, plus residual."""
    f_t = _check_map(f_t)
    k = np.asarray(kernel_source, dtype=np.float64)
    if k.shape != f_t.shape[:2]:
        raise ValueError(f"kernel shape {k.shape} does not match map channels {f_t.shape[:2]}")
    return f_t * k[:, :, None, None] + f_t


def joint_fuse(f_c_hat, f_t_hat, params: JrmParams) -> np.ndarray:
    """Tile the color vector over H x W, concatenate, 1x1 conv + residual, pool."""
    f_t_hat = _check_map(f_t_hat)
    f_c_hat = np.asarray(f_c_hat, dtype=np.float64)
    b, c, h, w = f_t_hat.shape
    if f_c_hat.shape != (b, c) or params.channels != c:
        raise ValueError("color vector, feature map and params disagree on B or C")
    tiled = np.broadcast_to(f_c_hat[:, :, None, None], (b, c, h, w))
    x = np.concatenate([tiled, f_t_hat], axis=1)
    conv = np.einsum("oc,bchw->bohw", params.joint_weight, x) + params.joint_bias[None, :, None, None]
    return (conv + x).mean(axis=(2, 3))


def jrm_forward(f_c, f_t, params: JrmParams) -> np.ndarray:
    """Joint embedding of shape B x 2C."""
    f_t = _check_map(f_t)
    f_c = np.asarray(f_c, dtype=np.float64)
    if f_c.shape != f_t.shape[:2] or params.channels != f_t.shape[1]:
        raise ValueError("inconsistent shapes between color vector, feature map and params")
    proj_c = project_vector(f_c, params.proj_c)
    proj_t = project_map(f_t, params.proj_t)
    # Color-centred block: channel modulation driven by texture.
    f_c_hat = channel_modulate(proj_c, channel_weights(proj_t))
    # Texture-centred block: color vector as dynamic depth-wise kernels.
    f_t_hat = dynamic_dwconv(proj_t, proj_c)
    return joint_fuse(f_c_hat, f_t_hat, params)


def invariant_report(seed: int, dims) -> dict:
    """Run the module's structural checks on random tensors."""
    from .synth import make_rng

    b, c, h, w = dims
    rng = make_rng(seed)
    f_t = rng.standard_normal((b, c, h, w))
    f_c = rng.standard_normal((b, c))
    params = JrmParams.random(c, rng)
    ident = JrmParams.identity(c)
    checks = {}
    wts = channel_weights(f_t, params.proj_t)
    checks["channel_weights_in_open_unit_interval"] = bool(((wts > 0) & (wts < 1)).all())
    checks["zero_modulation_is_identity"] = bool(
        np.array_equal(channel_modulate(f_c, np.zeros_like(f_c)), f_c))
    checks["zero_kernel_is_identity"] = bool(
        np.array_equal(dynamic_dwconv(f_t, np.zeros((b, c))), f_t))
    fused = joint_fuse(f_c, f_t, ident)
    expected = np.concatenate([f_c, f_t.mean(axis=(2, 3))], axis=1)
    checks["zero_joint_conv_is_mean_of_concat"] = bool(np.allclose(fused, expected, atol=1e-12))
    alpha = 2.5
    checks["modulation_scales_linearly"] = bool(np.allclose(
        channel_modulate(alpha * f_c, wts), alpha * channel_modulate(f_c, wts), atol=1e-12))
    out1 = jrm_forward(f_c, f_t, params)
    out2 = jrm_forward(f_c, f_t, params)
    checks["output_shape_b_by_2c"] = out1.shape == (b, 2 * c)
    checks["deterministic"] = bool(np.array_equal(out1, out2))
    checks["zero_inputs_give_zero_output"] = bool(not jrm_forward(
        np.zeros((b, c)), np.zeros((b, c, h, w)), JrmParams.zeros(c)).any())
    return {"seed": seed, "dims": [b, c, h, w], "checks": checks, "passed": all(checks.values())}
