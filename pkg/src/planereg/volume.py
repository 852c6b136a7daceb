"""Voxel volumes: trilinear resampling, HU windowing, MPR slice extraction.

A :class:`Volume` is an axis-aligned grid of Hounsfield samples indexed
``values[ix, iy, iz]`` with its world origin fixed at the grid center, so the
voxel center ``(i, j, k)`` sits at world ``((i - (nx-1)/2) * sx, ...)`` mm.
On disk a volume is a ``.vhdr`` text header plus a ``.vraw`` blob of little
endian int16 samples, x-fastest.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .geometry import GeometryError, PlaneFrame

HU_MIN = -1024.0
HU_MAX = 3071.0
FILL_HU = -1024.0

# w(0) ~ 0.01 and w(1) ~ 0.99
DEFAULT_GAIN = 2.0 * math.log(99.0)

_INTERP_CALLS = 0


def interpolation_call_count() -> int:
    """Number of interpolation passes since the last reset."""
    return _INTERP_CALLS


def reset_interpolation_counter() -> None:
    global _INTERP_CALLS
    _INTERP_CALLS = 0


def _as_triple(x, dtype=float) -> tuple:
    if np.isscalar(x):
        return (dtype(x),) * 3
    t = tuple(dtype(v) for v in x)
    if len(t) != 3:
        raise ValueError(f"expected a scalar or 3 values, got {x!r}")
    return t


@dataclass(frozen=True)
class Volume:
    """Voxel grid of HU values with physical spacing, origin at grid center."""

    values: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3:
            raise ValueError(f"values must be 3-d, got shape {v.shape}")
        if min(v.shape) < 2:
            raise ValueError("each axis needs at least 2 voxels")
        sp = _as_triple(self.spacing)
        if min(sp) <= 0:
            raise ValueError("spacing must be positive")
        if v.size and (v.min() < HU_MIN or v.max() > HU_MAX):
            raise ValueError(f"HU values outside [{HU_MIN:g}, {HU_MAX:g}]")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "spacing", sp)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def extent_mm(self) -> tuple[float, float, float]:
        """Physical edge lengths ``dims * spacing``."""
        return tuple(n * s for n, s in zip(self.values.shape, self.spacing))

    def axis_coords(self) -> list[np.ndarray]:
        """World coordinates of the voxel centers along each axis."""
        return [
            (np.arange(n, dtype=float) - (n - 1) / 2.0) * s
            for n, s in zip(self.values.shape, self.spacing)
        ]


@dataclass(frozen=True)
class WindowConfig:
    """Clip range plus logistic gain for intensity windowing."""

    clip_lo: float = -490.0
    clip_hi: float = 1040.0
    gain: float = DEFAULT_GAIN

    def __post_init__(self):
        if not self.clip_lo < self.clip_hi:
            raise ValueError("clip_lo must be below clip_hi")
        if not self.gain > 0:
            raise ValueError("gain must be positive")


def trilinear_sample(vol: Volume, points: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of world-space points, one pass.

    ``points`` has shape ``(..., 3)`` in mm.  Interpolation runs over the 8
    surrounding voxel centers; points outside the voxel-center hull return
    the air fill value of -1024 HU.
    """
    global _INTERP_CALLS
    _INTERP_CALLS += 1

    p = np.asarray(points)
    if p.shape[-1] != 3:
        raise ValueError(f"points must have shape (..., 3), got {p.shape}")
    out_shape = p.shape[:-1]
    p = np.ascontiguousarray(p.reshape(-1, 3), dtype=np.float64)

    values = vol.values
    nx, ny, nz = values.shape
    out_dtype = np.float64 if values.dtype == np.float64 else np.float32

    if _kernels.HAVE_NUMBA and p.shape[0] >= _kernels.NUMBA_MIN_POINTS:
        out = np.empty(p.shape[0], dtype=out_dtype)
        sx, sy, sz = vol.spacing
        _kernels.trilinear_gather(np.ascontiguousarray(values), sx, sy, sz, p, out, FILL_HU)
        return out.reshape(out_shape)

    # numpy fallback, same math in float64
    eps = 1e-9
    dims = np.array([nx, ny, nz], dtype=np.float64)
    spacing = np.array(vol.spacing, dtype=np.float64)
    u = p / spacing + (dims - 1.0) / 2.0
    inside = np.all((u >= -eps) & (u <= dims - 1.0 + eps), axis=1)

    i0 = np.maximum(np.floor(u).astype(np.int64), 0)
    np.clip(i0, 0, [nx - 2, ny - 2, nz - 2], out=i0)
    f = u - i0
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz

    flat = values.reshape(-1).astype(np.float64, copy=False)
    base = (i0[:, 0] * ny + i0[:, 1]) * nz + i0[:, 2]
    c000 = flat[base]
    c001 = flat[base + 1]
    c010 = flat[base + nz]
    c011 = flat[base + nz + 1]
    c100 = flat[base + ny * nz]
    c101 = flat[base + ny * nz + 1]
    c110 = flat[base + ny * nz + nz]
    c111 = flat[base + ny * nz + nz + 1]

    res = (
        gx * (gy * (gz * c000 + fz * c001) + fy * (gz * c010 + fz * c011))
        + fx * (gy * (gz * c100 + fz * c101) + fy * (gz * c110 + fz * c111))
    )
    res = np.where(inside, res, FILL_HU)
    return res.reshape(out_shape).astype(out_dtype, copy=False)


def resample(vol: Volume, T: np.ndarray, out_dims, out_spacing) -> Volume:
    """Resample through transform ``T`` in a single interpolation pass.

    The output voxel at world point ``q`` takes the value of the input volume
    at ``T^-1 q``; composing any number of transforms into ``T`` beforehand
    keeps the pass count at one.
    """
    global _INTERP_CALLS
    T = np.asarray(T, dtype=float)
    try:
        Tinv = np.linalg.inv(T)
    except np.linalg.LinAlgError as exc:
        raise GeometryError("resample transform is singular") from exc

    dims = _as_triple(out_dims, int)
    spacing = _as_triple(out_spacing)
    if _kernels.HAVE_NUMBA:
        _INTERP_CALLS += 1
        out_dtype = np.float64 if vol.values.dtype == np.float64 else np.float32
        out = np.empty(dims, dtype=out_dtype)
        M = np.ascontiguousarray(Tinv[:3, :3])
        t = np.ascontiguousarray(Tinv[:3, 3])
        sx, sy, sz = vol.spacing
        _kernels.trilinear_resample(
            np.ascontiguousarray(vol.values), sx, sy, sz, M, t, spacing[0], spacing[1], spacing[2], out, FILL_HU
        )
        return Volume(values=out, spacing=spacing)

    axes = [
        (np.arange(n, dtype=float) - (n - 1) / 2.0) * s for n, s in zip(dims, spacing)
    ]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    q = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    src = q @ Tinv[:3, :3].T + Tinv[:3, 3]
    out = trilinear_sample(vol, src).reshape(dims)
    return Volume(values=out, spacing=spacing)


# ---------------------------------------------------------------------------
# intensity pipeline: jitter -> clip -> rescale -> window


def intensity_jitter(hu, factor: float):
    """Multiplicative calibration jitter: ``(hu + 1000) * factor - 1000``."""
    if not 0.95 <= factor <= 1.05:
        raise ValueError(f"jitter factor {factor} outside [0.95, 1.05]")
    return (np.asarray(hu) + 1000.0) * factor - 1000.0


def clip_rescale(hu, cfg: WindowConfig = WindowConfig()):
    """Clamp to the clip range and map it affinely onto [0, 1]."""
    x = np.clip(hu, cfg.clip_lo, cfg.clip_hi)
    return (x - cfg.clip_lo) / (cfg.clip_hi - cfg.clip_lo)


def window(x, gain: float = DEFAULT_GAIN):
    """Logistic windowing ``1 / (1 + exp(gain * (0.5 - x)))``."""
    if not gain > 0:
        raise ValueError("gain must be positive")
    x = np.asarray(x)
    return 1.0 / (1.0 + np.exp(gain * (0.5 - x)))


def intensity_pipeline(hu, cfg: WindowConfig = WindowConfig(), jitter_factor: float = 1.0):
    """Full HU-to-network-input mapping, returning values in (0, 1)."""
    return window(clip_rescale(intensity_jitter(hu, jitter_factor), cfg), cfg.gain)


# ---------------------------------------------------------------------------
# MPR slice extraction


def extract_mpr_slice(
    vol: Volume,
    plane: PlaneFrame,
    size=(256, 256),
    px_spacing: float = 1.0,
    cfg: WindowConfig = WindowConfig(),
) -> np.ndarray:
    """Render a plane as an 8-bit grayscale image.

    Pixel ``(i, j)`` samples the volume at
    ``A + (i - (w-1)/2) * px * e_u + (j - (h-1)/2) * px * e_v`` with ``j``
    increasing upward; the returned array is in display order (row 0 on top).
    Intensities go through clip/rescale plus windowing before quantization.
    """
    w, h = (int(size), int(size)) if np.isscalar(size) else (int(size[0]), int(size[1]))
    iu = (np.arange(w, dtype=float) - (w - 1) / 2.0) * float(px_spacing)
    jv = (np.arange(h, dtype=float) - (h - 1) / 2.0) * float(px_spacing)
    pts = (
        plane.A[None, None, :]
        + iu[None, :, None] * plane.e_u[None, None, :]
        + jv[:, None, None] * plane.e_v[None, None, :]
    )
    hu = trilinear_sample(vol, pts.reshape(-1, 3)).reshape(h, w)
    img = window(clip_rescale(hu, cfg), cfg.gain)
    img8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return img8[::-1, :]  # row 0 = top of the image


# ---------------------------------------------------------------------------
# file formats


def write_volume(path_base, vol: Volume) -> None:
    """Write ``<base>.vhdr`` (text header) and ``<base>.vraw`` (int16le)."""
    base = os.fspath(path_base)
    nx, ny, nz = vol.dims
    header = (
        f"dims: {nx} {ny} {nz}\n"
        f"spacing_mm: {vol.spacing[0]:.17g} {vol.spacing[1]:.17g} {vol.spacing[2]:.17g}\n"
        "dtype: int16le\n"
    )
    with open(base + ".vhdr", "w", encoding="ascii") as fh:
        fh.write(header)
    raw = np.rint(np.asarray(vol.values, dtype=np.float64))
    raw = np.clip(raw, HU_MIN, HU_MAX).astype("<i2")
    # file layout is x-fastest, then y, then z
    raw.transpose(2, 1, 0).tofile(base + ".vraw")


def read_volume(path_base) -> Volume:
    base = os.fspath(path_base)
    if base.endswith(".vhdr"):
        base = base[: -len(".vhdr")]
    fields = {}
    with open(base + ".vhdr", "r", encoding="ascii") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            key, _, val = line.partition(":")
            fields[key.strip()] = val.strip()
    for req in ("dims", "spacing_mm", "dtype"):
        if req not in fields:
            raise ValueError(f"{base}.vhdr: missing `{req}` line")
    if fields["dtype"] != "int16le":
        raise ValueError(f"{base}.vhdr: unsupported dtype {fields['dtype']!r}")
    nx, ny, nz = (int(v) for v in fields["dims"].split())
    spacing = tuple(float(v) for v in fields["spacing_mm"].split())
    raw = np.fromfile(base + ".vraw", dtype="<i2")
    if raw.size != nx * ny * nz:
        raise ValueError(f"{base}.vraw: expected {nx * ny * nz} samples, got {raw.size}")
    return Volume(values=raw.reshape(nz, ny, nx).transpose(2, 1, 0), spacing=spacing)


def write_pgm(path, image: np.ndarray) -> None:
    """Write an 8-bit grayscale image as binary PGM (P5)."""
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("PGM export expects a 2-d uint8 array")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
