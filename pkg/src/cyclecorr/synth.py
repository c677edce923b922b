"""Synthetic stereo-video cycles with exact correspondence and occlusion.

A scene is a textured background plane plus fronto-parallel sprites.  Every
surface translates rigidly: by its velocity between t=0 and t=1, and by minus
its disparity ``fb / depth`` from the left to the right view.  Each frame is
rendered with a z-buffer, so ground-truth maps and visibility follow directly
from which surface owns each pixel.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .cycle import FRAMES, MAP_KEYS, Cycle


class DegenerateSceneError(ValueError):
    pass


@dataclass
class Sprite:
    center: tuple = (32.0, 32.0)  # (x, y) in the left view at t=0
    half_size: tuple = (8.0, 8.0)  # (half width, half height)
    depth: float = 10.0
    velocity: tuple = (4.0, 0.0)
    shape: str = "rect"  # or "ellipse"


@dataclass
class SceneSpec:
    height: int = 64
    width: int = 64
    channels: int = 3
    fb: float = 100.0
    background_depth: float = 25.0
    background_velocity: tuple = (0.0, 0.0)
    sprites: list = field(default_factory=list)
    # None picks 1.2 px, or 4 px in subpixel mode where a smoother texture keeps
    # double bilinear interpolation within about 1e-2 of the truth
    texture_sigma: Optional[float] = None
    seed: int = 0
    subpixel: bool = False

    def __post_init__(self):
        if self.background_depth <= 0 or any(s.depth <= 0 for s in self.sprites):
            raise ValueError("depths must be positive")
        if self.fb <= 0:
            raise ValueError("fb must be positive")
        if self.texture_sigma is None:
            self.texture_sigma = 4.0 if self.subpixel else 1.2

    @property
    def background_disparity(self) -> float:
        return 0.0 if np.isinf(self.background_depth) else self.fb / self.background_depth


def _texture(rng, h, w, channels, sigma, lo, hi, octaves=4):
    # octaves of smoothed noise keep contrast at every pyramid level
    out = np.empty((h, w, channels))
    for c in range(channels):
        n = np.zeros((h, w))
        for o in range(octaves):
            if o and sigma * 2 ** o > 0.75 * min(h, w):
                break  # wider blurs are flat to rounding; normalising them amplifies noise
            layer = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma * 2 ** o, mode="wrap")
            n += 2 ** o * layer / (layer.std() + 1e-12) / (o + 1)
        n = (n - n.mean()) / (n.std() + 1e-12)
        out[..., c] = np.clip(0.5 * (lo + hi) + 0.5 * (hi - lo) * n / 2.5, lo, hi)
    return out


def _offset(view: str, time: int, velocity, disparity):
    dx = velocity[0] * time - (disparity if view == "r" else 0.0)
    dy = velocity[1] * time
    return dx, dy


def _sample(canvas, x, y):
    # integer coordinates gather exactly; fractional ones interpolate bilinearly
    if np.allclose(x, np.round(x)) and np.allclose(y, np.round(y)):
        return canvas[np.round(y).astype(int), np.round(x).astype(int)]
    return np.stack([ndimage.map_coordinates(canvas[..., c], [y, x], order=1, mode="nearest")
                     for c in range(canvas.shape[-1])], axis=-1)


def _surfaces(spec: SceneSpec):
    surf = [("background", None, spec.background_depth, spec.background_velocity,
             spec.background_disparity)]
    for s in spec.sprites:
        surf.append(("sprite", s, s.depth, s.velocity, spec.fb / s.depth))
    if not spec.subpixel:
        surf = [(k, s, z, tuple(float(round(c)) for c in v), float(round(d)))
                for k, s, z, v, d in surf]
    return surf


def render_cycle(spec: SceneSpec) -> Cycle:
    """Render the four frames and attach ground-truth maps, visibility and depth."""
    h, w, ch = spec.height, spec.width, spec.channels
    if not spec.subpixel:
        vals = [spec.background_disparity, *spec.background_velocity]
        for s in spec.sprites:
            vals += [spec.fb / s.depth, *s.velocity, *s.center]
        if not np.allclose(vals, np.round(vals)):
            raise ValueError("integer mode needs integer motions, disparities and centers;"
                             " set subpixel=True otherwise")
    rng = np.random.default_rng(spec.seed)
    surfaces = _surfaces(spec)
    pad = int(np.ceil(max(abs(v) for _, _, _, vel, d in surfaces for v in (*vel, d)))) + 4

    bg = _texture(rng, h + 2 * pad, w + 2 * pad, ch, spec.texture_sigma, 0.1, 0.9)
    sprite_tex = []
    for s in spec.sprites:
        hw, hh = s.half_size
        th, tw = int(2 * np.ceil(hh)) + 3, int(2 * np.ceil(hw)) + 3
        lo, hi = (0.05, 0.6) if rng.random() < 0.5 else (0.4, 0.95)
        sprite_tex.append(_texture(rng, th, tw, ch, spec.texture_sigma, lo, hi))

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    images, ids, depth = {}, {}, {}
    order = sorted(range(len(surfaces)), key=lambda i: -surfaces[i][2])
    for frame in FRAMES:
        view, t = frame[0], int(frame[1])
        img = np.zeros((h, w, ch))
        owner = np.full((h, w), -1)
        zbuf = np.full((h, w), np.inf)
        for i in order:
            kind, sprite, z, vel, disp = surfaces[i]
            dx, dy = _offset(view, t, vel, disp)
            if kind == "background":
                img[:] = _sample(bg, xs - dx + pad, ys - dy + pad)
                owner[:] = i
                zbuf[:] = z
                continue
            cx, cy = sprite.center
            qx, qy = xs - dx - cx, ys - dy - cy
            hw, hh = sprite.half_size
            if sprite.shape == "ellipse":
                inside = (qx / hw) ** 2 + (qy / hh) ** 2 <= 1.0
            else:
                inside = (np.abs(qx) <= hw) & (np.abs(qy) <= hh)
            if not inside.any():
                raise DegenerateSceneError(f"sprite {i - 1} lies entirely outside frame {frame}")
            tex = sprite_tex[i - 1]
            oy, ox = (tex.shape[0] - 1) / 2, (tex.shape[1] - 1) / 2
            vals = _sample(tex, np.clip(qx + ox, 0, tex.shape[1] - 1),
                           np.clip(qy + oy, 0, tex.shape[0] - 1))
            img[inside] = vals[inside]
            owner[inside] = i
            zbuf[inside] = z
        images[frame] = np.clip(img, 0.0, 1.0)
        ids[frame] = owner
        depth[frame] = zbuf

    gt_maps, gt_occ = {}, {}
    for a, b in MAP_KEYS:
        u = np.zeros((h, w))
        v = np.zeros((h, w))
        for i, (_, _, _, vel, disp) in enumerate(surfaces):
            ax, ay = _offset(a[0], int(a[1]), vel, disp)
            bx, by = _offset(b[0], int(b[1]), vel, disp)
            sel = ids[a] == i
            u[sel] = bx - ax
            v[sel] = by - ay
        gt_maps[(a, b)] = np.stack([u, v], axis=-1)
        gt_occ[(a, b)] = _footprint_visible(ids[a], ids[b], xs + u, ys + v)[..., None]

    return Cycle(images=images, gt_maps=gt_maps, gt_occlusion=gt_occ, fb=spec.fb,
                 gt_depth=depth, meta={"ids": ids, "spec": spec})


def _footprint_visible(own_a, own_b, tx, ty):
    """1 where every bilinear neighbour of the target that carries weight is
    in bounds and owned by the same surface as the source pixel."""
    h, w = own_b.shape
    x0, y0 = np.floor(tx), np.floor(ty)
    fx, fy = tx - x0, ty - y0
    ok = np.ones(tx.shape, dtype=bool)
    for dy, wy in ((0, fy < 1), (1, fy > 0)):
        for dx, wx in ((0, fx < 1), (1, fx > 0)):
            used = wy & wx
            nx, ny = (x0 + dx).astype(int), (y0 + dy).astype(int)
            inb = (nx >= 0) & (nx < w) & (ny >= 0) & (ny < h)
            match = np.zeros(tx.shape, dtype=bool)
            match[inb] = own_b[ny[inb], nx[inb]] == own_a[inb]
            ok &= ~used | match
    return ok.astype(np.float64)


def perturb(maps: dict, noise_sigma: float, seed: int = 0) -> dict:
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")
    rng = np.random.default_rng(seed)
    out = {}
    for key in sorted(maps):
        m = np.asarray(maps[key], dtype=np.float64)
        out[key] = m + noise_sigma * rng.standard_normal(m.shape) if noise_sigma else m.copy()
    return out


# ----------------------------------------------------------------------------
# standard scenes used by tests and scripts


def occlusion_scene(motion: int = 4, size: int = 64, seed: int = 0) -> SceneSpec:
    """A square translating over a static background, no stereo baseline effects on flow."""
    c = size // 2
    return SceneSpec(height=size, width=size, seed=seed, background_depth=50.0,
                     sprites=[Sprite(center=(c - motion // 2, c), half_size=(10, 10),
                                     depth=20.0, velocity=(motion, 0))])


def translation_scene(flow=(3, 0), disparity: int = 5, size: int = 64, seed: int = 0) -> SceneSpec:
    return SceneSpec(height=size, width=size, seed=seed, fb=100.0,
                     background_depth=100.0 / disparity, background_velocity=flow)


def suite_scene(seed: int, size: int = 64, occluders: bool = True) -> SceneSpec:
    """Seeded scene with motions <= 6 px and disparities <= 8 px."""
    rng = np.random.default_rng(1000 + seed)
    fb = 120.0
    bg_disp = int(rng.integers(2, 5))
    bg_vel = (int(rng.integers(-2, 3)), int(rng.integers(-2, 3)))
    sprites = []
    if occluders:
        n = int(rng.integers(1, 3))
        for k in range(n):
            disp = int(rng.integers(bg_disp + 2, 9))
            vel = (int(rng.integers(-4, 5)), int(rng.integers(-3, 4)))
            vel = (max(-6, min(6, vel[0] + bg_vel[0])), max(-6, min(6, vel[1] + bg_vel[1])))
            half = (int(rng.integers(6, 11)), int(rng.integers(6, 11)))
            margin = 14
            cx = int(rng.integers(margin, size - margin))
            cy = int(rng.integers(margin, size - margin))
            sprites.append(Sprite(center=(cx, cy), half_size=half, depth=fb / disp,
                                  velocity=vel, shape="rect" if k % 2 == 0 else "ellipse"))
    return SceneSpec(height=size, width=size, fb=fb, background_depth=fb / bg_disp,
                     background_velocity=bg_vel, sprites=sprites, seed=seed)
