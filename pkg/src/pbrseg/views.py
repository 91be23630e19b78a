"""Multi-view slicing, per-view prediction, and probability fusion.

A volume is sliced along each anatomical axis (axial by z, coronal by y,
sagittal by x), every slice is zero-padded to dims divisible by 16 so it
fits the 4-level network, and the per-view probability volumes are merged
by voxelwise averaging.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .pvol import ProbVolume, Volume

VIEWS = ("axial", "coronal", "sagittal")
PAD_DIVISOR = 16

_ORIENT = {"axial": (0, 1, 2), "coronal": (1, 0, 2), "sagittal": (2, 0, 1)}
_UNORIENT = {"axial": (0, 1, 2), "coronal": (1, 0, 2), "sagittal": (1, 2, 0)}


def orient(data: np.ndarray, view: str) -> np.ndarray:
    """Bring the slicing axis of `view` to the front."""
    return np.transpose(data, _ORIENT[view])


def unorient(data: np.ndarray, view: str) -> np.ndarray:
    """Inverse of orient."""
    return np.transpose(data, _UNORIENT[view])


@dataclass
class ViewStack:
    """All slices of one view as an (n, 1, H, W) batch, padding recorded."""

    view: str
    slices: np.ndarray
    padding: tuple  # ((top, bottom), (left, right)) zero padding
    orig_dims: tuple
    spacing: tuple


def _sym_pad(n: int):
    extra = (-n) % PAD_DIVISOR
    return extra // 2, extra - extra // 2


def slice_views(v: Volume, views=VIEWS) -> dict:
    """Slice a volume along each requested view."""
    out = {}
    for view in views:
        if view not in _ORIENT:
            raise ConfigError(f"unknown view {view!r}")
        arr = orient(v.data, view)
        pad_h = _sym_pad(arr.shape[1])
        pad_w = _sym_pad(arr.shape[2])
        padded = np.pad(arr, ((0, 0), pad_h, pad_w))
        out[view] = ViewStack(view, padded[:, None].astype(np.float32),
                              (pad_h, pad_w), v.dims, v.spacing)
    return out


def predict_view(net, stack: ViewStack, batch: int = 8) -> ProbVolume:
    """Run the single-channel net over every slice of a view and reassemble
    the probabilities in original volume orientation."""
    if net.in_channels != 1:
        raise ConfigError(f"view net must take 1 channel, has {net.in_channels}")
    n = stack.slices.shape[0]
    chunks = []
    for i in range(0, n, batch):
        y = net.forward(stack.slices[i:i + batch])
        chunks.append(y[:, 0])
    p = np.concatenate(chunks, axis=0)
    (t, b), (l, r) = stack.padding
    p = p[:, t:p.shape[1] - b, l:p.shape[2] - r]
    return ProbVolume(unorient(p, stack.view).astype(np.float32), stack.spacing)


def fuse_views(*maps: ProbVolume) -> ProbVolume:
    """Voxelwise arithmetic mean of per-view probability volumes."""
    if not maps:
        raise ConfigError("fuse_views needs at least one map")
    dims = maps[0].dims
    for p in maps[1:]:
        if p.dims != dims:
            raise ConfigError(f"fused map dims differ: {p.dims} vs {dims}")
    acc = np.zeros(dims, dtype=np.float64)
    for p in maps:
        acc += p.data
    acc /= len(maps)
    return ProbVolume(acc.astype(np.float32), maps[0].spacing)


def estimate_initial(nets: dict, v: Volume, batch: int = 8) -> ProbVolume:
    """Initial probabilistic map: per-view predictions fused by averaging.

    `nets` maps view names to single-channel networks; any subset of the
    three views works (axial-only is the fast ablation mode).
    """
    used = [view for view in VIEWS if view in nets]
    if not used:
        raise ConfigError(f"no usable views in {sorted(nets)}")
    stacks = slice_views(v, views=used)
    return fuse_views(*[predict_view(nets[view], stacks[view], batch) for view in used])
