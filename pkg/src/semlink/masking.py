"""Patch bookkeeping and location-informed Bernoulli masking.

An image is cut into a grid of square patches.  The mask sampler takes the
set of object patches R (from the scene locator) and masks each patch
independently: object patches with probability p, background patches with
probability 1 - p.  Keeping p below 0.5 biases the kept set towards object
pixels.  A fixed-count variant supports budget-matched baseline comparisons,
and a uniform sampler is the baseline being compared against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .rng import RngStream
from .tensor import Tensor, permute_axes, reshape

__all__ = [
    "PatchGrid",
    "MaskPlan",
    "patchify",
    "unpatchify",
    "sample_mask",
    "sample_mask_fixed_count",
    "random_mask",
]


@dataclass(frozen=True)
class PatchGrid:
    """Square-patch partition of a C x H x W image."""

    patch_size: int
    grid_h: int
    grid_w: int
    channels: int

    @staticmethod
    def for_image(shape, patch_size: int) -> "PatchGrid":
        c, h, w = shape
        if h % patch_size or w % patch_size:
            raise ConfigError(f"image {h}x{w} not divisible by patch size {patch_size}")
        return PatchGrid(patch_size, h // patch_size, w // patch_size, c)

    @property
    def num_patches(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_size * self.patch_size

    def patch_bbox(self, index: int):
        """Pixel rectangle (x, y, w, h) of one patch."""
        r, c = divmod(index, self.grid_w)
        p = self.patch_size
        return (c * p, r * p, p, p)


@dataclass
class MaskPlan:
    """Per-patch keep/mask decisions plus the index bookkeeping."""

    masked: np.ndarray  # bool per patch
    keep_indices: np.ndarray  # sorted kept (unmasked) patch indices
    object_indices: frozenset = field(default_factory=frozenset)  # the set R
    object_mask_prob: float = 0.0  # p applied to R; 1 - p to the rest

    def __post_init__(self):
        self.masked = np.asarray(self.masked, dtype=bool)
        self.keep_indices = np.asarray(self.keep_indices, dtype=np.intp)
        kept = np.flatnonzero(~self.masked)
        if not np.array_equal(kept, self.keep_indices):
            raise ContractError("keep_indices disagree with the masked flags")

    @property
    def num_patches(self) -> int:
        return len(self.masked)

    @property
    def keep_count(self) -> int:
        return len(self.keep_indices)

    def to_json(self) -> str:
        return json.dumps(
            {
                "p_r": self.object_mask_prob,
                "keep": [int(i) for i in self.keep_indices],
                "object": sorted(int(i) for i in self.object_indices),
            }
        )

    @staticmethod
    def from_json(text: str, num_patches: int) -> "MaskPlan":
        d = json.loads(text)
        masked = np.ones(num_patches, dtype=bool)
        masked[np.asarray(d["keep"], dtype=np.intp)] = False
        return MaskPlan(masked, np.asarray(sorted(d["keep"]), dtype=np.intp),
                        frozenset(d["object"]), float(d["p_r"]))


def patchify(image: Tensor, grid: PatchGrid) -> Tensor:
    """[C,H,W] image -> [num_patches, patch_dim] rows in row-major grid order.

    Row i is the channel-first flattening of the patch at
    (i // grid_w, i % grid_w).  Graph-preserving (pure reshape/permute).
    """
    image = image if isinstance(image, Tensor) else Tensor(image)
    c, h, w = image.shape
    p = grid.patch_size
    if (c, h, w) != (grid.channels, grid.grid_h * p, grid.grid_w * p):
        raise ShapeError(f"image shape {image.shape} does not match grid {grid}")
    arr = reshape(image, (c, grid.grid_h, p, grid.grid_w, p))
    return reshape(permute_axes(arr, (1, 3, 0, 2, 4)), (grid.num_patches, grid.patch_dim))


def unpatchify(rows, grid: PatchGrid) -> Tensor:
    """Inverse of patchify; accepts a Tensor or ndarray of patch rows."""
    rows = rows if isinstance(rows, Tensor) else Tensor(np.asarray(rows, dtype=np.float64))
    if rows.shape != (grid.num_patches, grid.patch_dim):
        raise ShapeError(f"rows shape {rows.shape} does not match grid {grid}")
    p = grid.patch_size
    arr = reshape(rows, (grid.grid_h, grid.grid_w, grid.channels, p, p))
    return reshape(
        permute_axes(arr, (2, 0, 3, 1, 4)),
        (grid.channels, grid.grid_h * p, grid.grid_w * p),
    )


def _plan_from_masked(masked: np.ndarray, object_indices, p: float) -> MaskPlan:
    keep = np.flatnonzero(~masked)
    return MaskPlan(masked, keep, frozenset(int(i) for i in object_indices), float(p))


def sample_mask(grid: PatchGrid, loc, p: float, rng: RngStream) -> MaskPlan:
    """Independent Bernoulli mask: patch i is masked with probability p when
    i is an object patch (i in loc) and 1 - p otherwise."""
    if not 0.0 <= p <= 1.0:
        raise ContractError(f"mask probability {p} outside [0, 1]")
    n = grid.num_patches
    probs = np.full(n, 1.0 - p)
    obj = np.asarray(sorted(loc.patch_indices), dtype=np.intp)
    probs[obj] = p
    u = rng.uniform((n,))
    return _plan_from_masked(u < probs, obj, p)


def sample_mask_fixed_count(grid: PatchGrid, loc, p: float, keep_count: int,
                            rng: RngStream) -> MaskPlan:
    """Exactly keep_count kept patches, drawn without replacement with keep
    weight 1 - p on object patches and p elsewhere.

    If fewer patches have positive weight than keep_count, the positive-weight
    ones are all kept and the remainder is filled uniformly from the rest.
    """
    if not 0.0 <= p <= 1.0:
        raise ContractError(f"mask probability {p} outside [0, 1]")
    n = grid.num_patches
    if not 0 <= keep_count <= n:
        raise ContractError(f"keep_count {keep_count} outside [0, {n}]")
    weights = np.full(n, p)
    obj = np.asarray(sorted(loc.patch_indices), dtype=np.intp)
    weights[obj] = 1.0 - p

    positive = np.flatnonzero(weights > 0)
    if keep_count == 0:
        kept = np.empty(0, dtype=np.intp)
    elif len(positive) >= keep_count:
        pnorm = weights[positive] / weights[positive].sum()
        kept = positive[rng.choice(len(positive), keep_count, replace=False, p=pnorm)]
    else:
        rest = np.flatnonzero(weights == 0)
        extra = rest[rng.choice(len(rest), keep_count - len(positive), replace=False)]
        kept = np.concatenate([positive, extra])

    masked = np.ones(n, dtype=bool)
    masked[kept] = False
    return _plan_from_masked(masked, obj, p)


def random_mask(grid: PatchGrid, keep_count: int, rng: RngStream) -> MaskPlan:
    """Uniform masking baseline: keep_count patches sampled uniformly without
    replacement; no object set."""
    n = grid.num_patches
    if not 0 <= keep_count <= n:
        raise ContractError(f"keep_count {keep_count} outside [0, {n}]")
    kept = rng.choice(n, keep_count, replace=False) if keep_count else np.empty(0, dtype=np.intp)
    masked = np.ones(n, dtype=bool)
    masked[kept] = False
    return _plan_from_masked(masked, (), 0.0)
