"""
Sliding-window patch extraction with mask pruning, and reassembly of
per-patch predictions into full fields.
"""
import itertools

import numpy as np

from easy_geodesics.exceptions import InvalidFieldError
from easy_geodesics.field import check_grids


def window_starts(size, patch, stride):
    """
    Start offsets of sliding windows along one axis; the last window is
    shifted back to end exactly at the border.
    """
    if patch > size:
        raise InvalidFieldError(
            "Patch of {0} voxels exceeds an axis of {1}".format(patch, size))
    starts = list(range(0, size - patch + 1, stride))
    if starts[-1] != size - patch:
        starts.append(size - patch)
    return starts


def patch_origins(dims, patch_size, stride, mask=None):
    """
    Origins of every window, keeping only those intersecting ``mask``.
    """
    axes = [window_starts(n, patch_size, stride) for n in dims]
    origins = []
    for origin in itertools.product(*axes):
        if mask is not None and not mask[_window(origin, patch_size)].any():
            continue
        origins.append(origin)
    return origins


def _window(origin, patch_size):
    return tuple(slice(o, o + patch_size) for o in origin)


class PatchDataset:
    """
    Co-located source and target patches, optionally labelled with the
    momentum patch at the same location.
    """

    def __init__(self, sources, targets, labels=None, origins=None):
        self.sources = np.asarray(sources, dtype=np.float64)
        self.targets = np.asarray(targets, dtype=np.float64)
        self.labels = None if labels is None else np.asarray(
            labels, dtype=np.float64)
        self.origins = list(origins or [])

    def __len__(self):
        return len(self.sources)

    @property
    def labelled(self):
        return self.labels is not None

    @classmethod
    def concatenate(cls, datasets):
        datasets = [d for d in datasets if len(d)]
        if not datasets:
            return cls(np.zeros((0,)), np.zeros((0,)))
        labels = None
        if all(d.labelled for d in datasets):
            labels = np.concatenate([d.labels for d in datasets])
        return cls(
            np.concatenate([d.sources for d in datasets]),
            np.concatenate([d.targets for d in datasets]),
            labels,
            [o for d in datasets for o in d.origins])


def extract_patches(source, target, momentum=None, mask=None, cfg=None):
    """
    Cut co-located patches out of an image pair (and its momentum).

    Windows slide by ``cfg.stride``; a window is kept when it intersects
    ``mask`` (every window when there is no mask).
    """
    grid = check_grids(source, target, momentum, mask)
    if grid.ndim != cfg.dim:
        raise InvalidFieldError(
            "A {0}D network cannot read {1}D images".format(
                cfg.dim, grid.ndim))
    origins = patch_origins(
        grid.dims, cfg.patch_size, cfg.stride,
        None if mask is None else mask.flags)
    shape = (len(origins),) + cfg.patch_shape
    sources = np.zeros(shape)
    targets = np.zeros(shape)
    labels = None
    if momentum is not None:
        labels = np.zeros((len(origins), grid.ndim) + cfg.patch_shape)
    for index, origin in enumerate(origins):
        window = _window(origin, cfg.patch_size)
        sources[index] = source.data[window]
        targets[index] = target.data[window]
        if labels is not None:
            labels[index] = momentum.data[(slice(None),) + window]
    return PatchDataset(sources, targets, labels, origins)


def assemble(patches, origins, dims, patch_size):
    """
    Average overlapping ``(d,) + patch_shape`` patches into a
    ``(d,) + dims`` array; voxels no patch covers stay zero.
    """
    ndim = len(dims)
    total = np.zeros((ndim,) + tuple(dims))
    count = np.zeros(tuple(dims))
    for patch, origin in zip(patches, origins):
        window = _window(origin, patch_size)
        total[(slice(None),) + window] += patch
        count[window] += 1
    covered = count > 0
    total[:, covered] /= count[covered]
    return total
