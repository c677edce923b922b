"""Frame and map naming for a stereo-video cycle.

Frames are ``l0, r0, l1, r1`` (view, time).  A map key ``(a, b)`` names the
correspondence field defined on frame ``a``'s grid that points into frame
``b``; warping ``I[b]`` by it reconstructs ``I[a]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

FRAMES = ("l0", "r0", "l1", "r1")

# forward/backward pairs, stereo first
PAIRS = (("l0", "r0"), ("l1", "r1"), ("l0", "l1"), ("r0", "r1"))

MAP_KEYS = tuple(k for a, b in PAIRS for k in ((a, b), (b, a)))
STEREO_KEYS = tuple(k for k in MAP_KEYS if k[0][0] != k[1][0])
FLOW_KEYS = tuple(k for k in MAP_KEYS if k[0][0] == k[1][0])


def is_stereo(key) -> bool:
    return key[0][0] != key[1][0]


def key_name(key) -> str:
    return f"{key[0]}-{key[1]}"


def parse_key(name: str):
    a, b = name.split("-")
    if a not in FRAMES or b not in FRAMES:
        raise ValueError(f"bad map name {name!r}")
    return a, b


def mirror_frame(f: str) -> str:
    return {"l": "r", "r": "l"}[f[0]] + f[1]


def mirror_key(key):
    return mirror_frame(key[0]), mirror_frame(key[1])


@dataclass
class Cycle:
    """Two temporally adjacent stereo pairs plus optional ground truth.

    ``images`` maps frame name to an (H, W, C) array in [0, 1].
    ``gt_maps`` / ``gt_occlusion`` are keyed like the correspondence maps.
    ``fb`` is focal length times baseline (meters * pixels).
    """

    images: dict
    gt_maps: Optional[dict] = None
    gt_occlusion: Optional[dict] = None
    fb: Optional[float] = None
    gt_depth: Optional[dict] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        missing = set(FRAMES) - set(self.images)
        if missing:
            raise ValueError(f"cycle is missing frames {sorted(missing)}")
        shapes = {np.shape(self.images[f]) for f in FRAMES}
        if len(shapes) != 1:
            raise ValueError(f"cycle frames differ in shape: {shapes}")
        for f in FRAMES:
            im = np.asarray(self.images[f], dtype=np.float64)
            if im.ndim == 2:
                im = im[..., None]
            if not np.all(np.isfinite(im)) or im.min() < 0 or im.max() > 1:
                raise ValueError(f"frame {f} must be finite with values in [0, 1]")
            self.images[f] = im

    @property
    def shape(self):
        return self.images["l0"].shape
