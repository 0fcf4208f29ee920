"""Images in and out, synthetic rectified stereo with exact disparity,
augmentation, and per-stage resizing.

Images are float arrays ``(C, H, W)`` normalised to ``(v - 128) / 255``.
Right images obey ``right(x + D(x)) == left(x)``.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .errors import SpecError
from .geometry import Calibration

logger = logging.getLogger(__name__)

DEPTH_RANGE = (1.0, 50.0)
TEXTURES = ("noise", "sinusoid", "checker")


# ------------------------------------------------------------------ images


def normalize(img: np.ndarray) -> np.ndarray:
    """Map 8-bit values to ``(v - 128) / 255``."""
    return (np.asarray(img, dtype=np.float64) - 128.0) / 255.0


def denormalize(img: np.ndarray) -> np.ndarray:
    """Inverse of :func:`normalize`, rounded and clipped to uint8."""
    return np.clip(np.rint(np.asarray(img) * 255.0 + 128.0), 0, 255).astype(np.uint8)


def load_image(path, normalized: bool = True) -> np.ndarray:
    """Read an 8-bit PGM/PPM/PNG into ``(C, H, W)``."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB", "RGBA", "P"):
                raise OSError(f"{path}: unsupported image mode {im.mode} (need 8-bit gray or RGB)")
            if im.mode in ("RGBA", "P"):
                im = im.convert("RGB")
            arr = np.asarray(im)
    except OSError as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    arr = arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1)
    return normalize(arr) if normalized else arr.copy()


def save_image(path, img: np.ndarray) -> None:
    """Write a normalised ``(C, H, W)`` image; format from the suffix (.pgm/.ppm/.png)."""
    path = Path(path)
    arr = denormalize(img)
    if arr.shape[0] == 1:
        Image.fromarray(arr[0], mode="L").save(path)
    else:
        Image.fromarray(arr[:3].transpose(1, 2, 0), mode="RGB").save(path)


def save_raw_f32(path, arr: np.ndarray) -> None:
    np.asarray(arr, dtype="<f4").tofile(path)


def load_raw_f32(path, shape) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4")
    if data.size != int(np.prod(shape)):
        raise OSError(f"{path}: expected {int(np.prod(shape))} floats, found {data.size}")
    return data.reshape(shape).astype(np.float64)


# ----------------------------------------------------------------- samples


@dataclass
class StereoSample:
    left: np.ndarray
    right: np.ndarray
    calibration: Calibration
    gt_disparity: Optional[np.ndarray] = None
    id: str = ""
    gt_disparity_right: Optional[np.ndarray] = None
    occlusion: Optional[np.ndarray] = None
    occlusion_right: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.left.shape != self.right.shape:
            raise SpecError(f"sample {self.id}: left {self.left.shape} and right {self.right.shape} differ")
        if self.gt_disparity is not None:
            if self.gt_disparity.shape != self.left.shape[1:]:
                raise SpecError(f"sample {self.id}: gt disparity shape mismatch")
            if not np.all(np.isfinite(self.gt_disparity)) or np.any(self.gt_disparity < 0):
                raise SpecError(f"sample {self.id}: gt disparity must be finite and >= 0")

    @property
    def shape(self) -> tuple:
        return self.left.shape

    @property
    def resolution(self) -> tuple:
        return self.left.shape[1:]


def stack(samples: Sequence[StereoSample], dtype=np.float32):
    """Batch arrays ``(left, right)`` of shape (N, C, H, W)."""
    left = np.stack([s.left for s in samples]).astype(dtype)
    right = np.stack([s.right for s in samples]).astype(dtype)
    return left, right


# -------------------------------------------------------------- synthetic


@dataclass
class Rect:
    depth: float
    bounds: tuple  # (x0, y0, x1, y1) in left-image pixels, half-open
    texture_seed: int = 0


@dataclass
class SyntheticSceneSpec:
    """Fronto-parallel textured planes over a background plane.

    ``lighting`` multiplies albedo by ``ambient + headlight * D`` (D in
    pixels): a headlamp whose falloff makes near surfaces brighter, the one
    monocular depth cue in this scene family.
    """

    layout: list
    background_depth: float
    image_size: tuple
    calibration: Calibration
    texture: str = "noise"
    background_seed: int = 0
    channels: int = 3
    ambient: float = 1.0
    headlight: float = 0.0
    contrast: float = 0.35
    frequency_range: tuple = (0.02, 0.22)  # cycles per pixel, noise texture
    integer_disparity: bool = False
    quantize: bool = True
    id: str = "scene"

    def surfaces(self) -> list:
        """``[(disparity, bounds or None, seed)]``, background first."""
        fb = self.calibration.fB
        out = [(self._disp(fb / self.background_depth), None, self.background_seed)]
        for r in self.layout:
            out.append((self._disp(fb / r.depth), tuple(r.bounds), r.texture_seed))
        return out

    def _disp(self, d):
        return float(np.round(d)) if self.integer_disparity else float(d)

    def validate(self) -> None:
        h, w = self.image_size
        if h < 2 or w < 2:
            raise SpecError(f"{self.id}: image too small {self.image_size}")
        if self.texture not in TEXTURES:
            raise SpecError(f"{self.id}: unknown texture {self.texture!r}")
        lo, hi = DEPTH_RANGE
        depths = [self.background_depth] + [r.depth for r in self.layout]
        for d in depths:
            if not (lo <= d <= hi):
                raise SpecError(f"{self.id}: depth {d} outside [{lo}, {hi}] m")
        for disp, bounds, _ in self.surfaces():
            if disp >= w:
                raise SpecError(f"{self.id}: disparity {disp:.2f} px exceeds image width {w}")
        for r in self.layout:
            x0, y0, x1, y1 = r.bounds
            if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
                raise SpecError(f"{self.id}: rectangle bounds {r.bounds} outside {w}x{h} image")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["calibration"] = {"focal_px": self.calibration.focal_px, "baseline_m": self.calibration.baseline_m}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSceneSpec":
        d = dict(d)
        cal = d.pop("calibration")
        d["calibration"] = cal if isinstance(cal, Calibration) else Calibration(**cal)
        d["layout"] = [r if isinstance(r, Rect) else Rect(**r) for r in d.get("layout", [])]
        d["image_size"] = tuple(d["image_size"])
        if "frequency_range" in d:
            d["frequency_range"] = tuple(d["frequency_range"])
        for r in d["layout"]:
            r.bounds = tuple(r.bounds)
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


class Texture:
    """Albedo pattern evaluated at continuous x (and integer y)."""

    def __init__(self, kind: str, seed: int, channels: int, contrast: float, frequency_range=(0.02, 0.22)):
        rng = np.random.default_rng(seed)
        self.kind = kind
        self.contrast = contrast
        self.tint = rng.uniform(0.8, 1.2, size=channels)
        if kind == "noise":
            # random-phase sinusoids spread over octaves, amplitude ~ 1/f
            k = 48
            f_lo, f_hi = frequency_range
            f = np.exp(rng.uniform(np.log(f_lo), np.log(f_hi), size=k))
            theta = rng.uniform(0, np.pi, size=k)
            self.fx, self.fy = f * np.cos(theta), f * np.sin(theta)
            self.phase = rng.uniform(0, 2 * np.pi, size=k)
            amp = 1.0 / f
            self.amp = amp / np.sqrt(0.5 * np.sum(amp**2))
        elif kind == "sinusoid":
            self.fx = np.array([rng.uniform(0.05, 0.12), rng.uniform(0.02, 0.06)])
            self.fy = np.array([rng.uniform(-0.03, 0.03), rng.uniform(0.04, 0.1)])
            self.phase = rng.uniform(0, 2 * np.pi, size=2)
            self.amp = np.array([1.0, 0.6]) / np.sqrt(0.5 * (1.0 + 0.36))
        else:
            self.cell = int(rng.integers(6, 12))
            self.offset = rng.uniform(0, self.cell, size=2)

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Albedo ``(C, *x.shape)`` in roughly [0, 1]."""
        if self.kind == "checker":
            cx = np.floor((x + self.offset[0]) / self.cell)
            cy = np.floor((y + self.offset[1]) / self.cell)
            base = np.where((cx + cy) % 2 == 0, 1.0, -1.0)
        else:
            arg = 2 * np.pi * (x[..., None] * self.fx + y[..., None] * self.fy) + self.phase
            base = np.sum(self.amp * np.cos(arg), axis=-1)
        base = 0.5 + 0.5 * self.contrast * np.clip(base, -2.0, 2.0)
        return self.tint[:, None, None] * base[None]


def _coverage(bounds, xl: np.ndarray, ys: np.ndarray) -> np.ndarray:
    if bounds is None:
        return np.ones(np.broadcast(xl, ys).shape, dtype=bool)
    x0, y0, x1, y1 = bounds
    return (xl >= x0) & (xl < x1) & (ys >= y0) & (ys < y1)


def _render_view(spec: SyntheticSceneSpec, textures, view: str):
    """Render one view; returns (image, visible disparity, occlusion mask)."""
    h, w = spec.image_size
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    surfaces = spec.surfaces()
    best_d = np.full((h, w), -np.inf)
    img = np.zeros((spec.channels, h, w))
    # right view: pixel xr shows the surface point at left x = xr - D
    sign = 0.0 if view == "left" else -1.0
    for (disp, bounds, _), tex in zip(surfaces, textures):
        xl = xs + sign * disp
        cover = _coverage(bounds, xl, ys) & (disp > best_d)
        if not cover.any():
            continue
        shade = spec.ambient + spec.headlight * disp
        val = tex(xl, ys) * shade
        img = np.where(cover[None], val, img)
        best_d = np.where(cover, disp, best_d)
    # occlusion: the point seen here is hidden by a nearer surface in the other view
    occl = np.zeros((h, w), dtype=bool)
    if view == "left":
        x_other = xs + best_d  # where this point lands in the right view
        for disp, bounds, _ in surfaces:
            occl |= (disp > best_d) & _coverage(bounds, x_other - disp, ys)
    else:
        x_other = xs - best_d  # where this point lands in the left view
        for disp, bounds, _ in surfaces:
            occl |= (disp > best_d) & _coverage(bounds, x_other, ys)
    occl &= (x_other >= 0) & (x_other <= w - 1)
    return img, best_d, occl


def generate_synthetic_pair(spec: SyntheticSceneSpec) -> StereoSample:
    """Render left/right views with exact per-pixel disparity and occlusion masks."""
    spec.validate()
    textures = [
        Texture(spec.texture, seed, spec.channels, spec.contrast, spec.frequency_range)
        for _, _, seed in spec.surfaces()
    ]
    left, disp_l, occ_l = _render_view(spec, textures, "left")
    right, disp_r, occ_r = _render_view(spec, textures, "right")

    def finish(img):
        if spec.quantize:
            return normalize(np.clip(np.rint(img * 255.0), 0, 255))
        return img - 128.0 / 255.0

    return StereoSample(
        left=finish(left),
        right=finish(right),
        calibration=spec.calibration,
        gt_disparity=disp_l,
        id=spec.id,
        gt_disparity_right=disp_r,
        occlusion=occ_l,
        occlusion_right=occ_r,
    )


@dataclass
class SceneFamily:
    """Random multi-plane scenes; disparities drawn uniformly in pixel space.

    ``layout="objects"`` scatters rectangles over a background plane.
    ``layout="ground"`` stacks full-width horizontal bands whose disparity
    grows towards the bottom (a stepped ground plane) and stands a few
    rectangles on them.  Horizontal depth edges cause no stereo occlusion,
    so most of the image is photometrically consistent at the true disparity.
    """

    image_size: tuple = (64, 192)
    calibration: Calibration = field(default_factory=lambda: Calibration(100.0, 0.54))
    layout: str = "objects"
    background_disparity: tuple = (3.0, 5.0)
    object_disparity: tuple = (6.0, 11.0)
    n_objects: tuple = (1, 3)
    object_size: tuple = (0.25, 0.55)
    ground_disparity: tuple = (12.0, 16.0)
    n_bands: tuple = (4, 7)
    object_offset: tuple = (0.5, 2.0)
    texture: str = "noise"
    channels: int = 3
    ambient: float = 0.3
    headlight: float = 0.06
    contrast: float = 0.35
    frequency_range: tuple = (0.02, 0.22)
    integer_disparity: bool = False

    def __post_init__(self):
        if self.layout not in ("objects", "ground"):
            raise SpecError(f"unknown scene layout {self.layout!r}")

    def _objects(self, rng, fb):
        h, w = self.image_size
        out = []
        for _ in range(int(rng.integers(self.n_objects[0], self.n_objects[1] + 1))):
            d = rng.uniform(*self.object_disparity)
            rh = int(round(h * rng.uniform(*self.object_size)))
            rw = int(round(w * rng.uniform(*self.object_size) * 0.6))
            x0 = int(rng.integers(0, w - rw - int(np.ceil(d)) + 1))
            y0 = int(rng.integers(0, h - rh + 1))
            out.append(Rect(fb / d, (x0, y0, x0 + rw, y0 + rh), int(rng.integers(1 << 30))))
        return out

    def _ground(self, rng, fb, d_top):
        h, w = self.image_size
        k = int(rng.integers(self.n_bands[0], self.n_bands[1] + 1))
        d_bottom = rng.uniform(*self.ground_disparity)
        cuts = np.sort(rng.choice(np.arange(4, h - 3), size=k - 1, replace=False))
        edges = [0] + [int(c) for c in cuts] + [h]
        band_disp = d_top + (d_bottom - d_top) * np.arange(k) / (k - 1)
        out = []
        # band 0 is the background plane itself
        for i in range(1, k):
            out.append(Rect(fb / band_disp[i], (0, edges[i], w, edges[i + 1]), int(rng.integers(1 << 30))))
        for _ in range(int(rng.integers(self.n_objects[0], self.n_objects[1] + 1))):
            rh = int(round(h * rng.uniform(*self.object_size)))
            rw = int(round(w * rng.uniform(*self.object_size) * 0.5))
            y1 = int(rng.integers(rh, h + 1))
            band = int(np.searchsorted(edges, y1 - 1, side="right") - 1)
            d = band_disp[band] + rng.uniform(*self.object_offset)
            x0 = int(rng.integers(0, w - rw - int(np.ceil(d)) + 1))
            out.append(Rect(fb / d, (x0, y1 - rh, x0 + rw, y1), int(rng.integers(1 << 30))))
        return out

    def sample(self, rng: np.random.Generator, scene_id: str) -> SyntheticSceneSpec:
        fb = self.calibration.fB
        bg = rng.uniform(*self.background_disparity)
        layout = self._ground(rng, fb, bg) if self.layout == "ground" else self._objects(rng, fb)
        return SyntheticSceneSpec(
            layout=layout,
            background_depth=fb / bg,
            image_size=tuple(self.image_size),
            calibration=self.calibration,
            texture=self.texture,
            background_seed=int(rng.integers(1 << 30)),
            channels=self.channels,
            ambient=self.ambient,
            headlight=self.headlight,
            contrast=self.contrast,
            frequency_range=tuple(self.frequency_range),
            integer_disparity=self.integer_disparity,
            id=scene_id,
        )


def make_dataset(n: int, seed: int = 0, family: Optional[SceneFamily] = None, prefix: str = "s") -> list:
    family = family or SceneFamily()
    rng = np.random.default_rng(seed)
    specs = [family.sample(rng, f"{prefix}{i:04d}") for i in range(n)]
    return [generate_synthetic_pair(s) for s in specs]


# ------------------------------------------------------------- resampling


def _bilinear_sample(img: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    """Sample ``img`` (..., H, W) at real coords with edge clamping."""
    h, w = img.shape[-2:]
    sy = np.clip(sy, 0, h - 1)
    sx = np.clip(sx, 0, w - 1)
    y0 = np.minimum(np.floor(sy).astype(int), h - 1)
    x0 = np.minimum(np.floor(sx).astype(int), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ay = (sy - y0)[:, None]
    ax = (sx - x0)[None, :]
    top = img[..., y0[:, None], x0[None, :]] * (1 - ax) + img[..., y0[:, None], x1[None, :]] * ax
    bot = img[..., y1[:, None], x0[None, :]] * (1 - ax) + img[..., y1[:, None], x1[None, :]] * ax
    return top * (1 - ay) + bot * ay


def resample(img: np.ndarray, out_hw, scale_yx=None, offset_yx=(0, 0)) -> np.ndarray:
    """Half-pixel bilinear resampling; output pixel i reads ``(i + off + .5)/s - .5``."""
    h, w = img.shape[-2:]
    oh, ow = out_hw
    sy, sx = scale_yx if scale_yx is not None else (oh / h, ow / w)
    ys = (np.arange(oh) + offset_yx[0] + 0.5) / sy - 0.5
    xs = (np.arange(ow) + offset_yx[1] + 0.5) / sx - 0.5
    return _bilinear_sample(img, ys, xs)


def downsample(img: np.ndarray, out_hw, reduce: str = "mean") -> np.ndarray:
    """Block averaging for an integer factor, bilinear otherwise."""
    h, w = img.shape[-2:]
    oh, ow = out_hw
    if (oh, ow) == (h, w):
        return img
    if h % oh == 0 and w % ow == 0 and h // oh == w // ow:
        k = h // oh
        blocks = img.reshape(img.shape[:-2] + (oh, k, ow, k))
        return blocks.max(axis=(-3, -1)) if reduce == "max" else blocks.mean(axis=(-3, -1))
    out = resample(img.astype(np.float64), out_hw)
    return out > 0.5 if reduce == "max" else out


def resize_for_stage(sample: StereoSample, target) -> StereoSample:
    """Resize both views (and gt, rescaled by the width ratio) to ``target``."""
    h, w = sample.resolution
    th, tw = target
    if (th, tw) == (h, w):
        return sample
    if th > h or tw > w:
        raise SpecError(f"target {target} exceeds native resolution {(h, w)}")
    ratio = tw / w

    def gt(d):
        return None if d is None else downsample(d, target) * ratio

    def occ(m):
        return None if m is None else downsample(m.astype(np.float64), target, reduce="max").astype(bool)

    return StereoSample(
        left=downsample(sample.left, target),
        right=downsample(sample.right, target),
        calibration=sample.calibration.scaled(ratio),
        gt_disparity=gt(sample.gt_disparity),
        id=sample.id,
        gt_disparity_right=gt(sample.gt_disparity_right),
        occlusion=occ(sample.occlusion),
        occlusion_right=occ(sample.occlusion_right),
    )


# ----------------------------------------------------------- augmentation


def flip_swap(sample: StereoSample) -> StereoSample:
    """Mirror both views horizontally and swap them; disparities stay positive."""

    def m(a):
        return None if a is None else a[..., ::-1].copy()

    gt_new = sample.gt_disparity_right if sample.gt_disparity_right is not None else sample.gt_disparity
    return StereoSample(
        left=m(sample.right),
        right=m(sample.left),
        calibration=sample.calibration,
        gt_disparity=m(gt_new),
        id=sample.id,
        gt_disparity_right=m(sample.gt_disparity) if sample.gt_disparity_right is not None else None,
        occlusion=m(sample.occlusion_right),
        occlusion_right=m(sample.occlusion),
    )


def color_scale(sample: StereoSample, factors) -> StereoSample:
    """Multiply each channel of ``img + 0.5`` by ``factors`` and re-centre."""
    c = np.asarray(factors, dtype=np.float64)[:, None, None]
    if np.all(c == 1.0):
        return sample
    return replace(sample, left=(sample.left + 0.5) * c - 0.5, right=(sample.right + 0.5) * c - 0.5)


def scale_crop(sample: StereoSample, s: float, offset) -> StereoSample:
    """Zoom by ``s`` about the origin and crop back to the input size at ``offset``."""
    hw = sample.resolution
    if s == 1.0 and tuple(offset) == (0, 0):
        return sample
    kw = dict(scale_yx=(s, s), offset_yx=offset)

    def gt(d):
        return None if d is None else resample(d, hw, **kw) * s

    def occ(m):
        return None if m is None else resample(m.astype(np.float64), hw, **kw) > 0.5

    return StereoSample(
        left=resample(sample.left, hw, **kw),
        right=resample(sample.right, hw, **kw),
        calibration=sample.calibration.scaled(s),
        gt_disparity=gt(sample.gt_disparity),
        id=sample.id,
        gt_disparity_right=gt(sample.gt_disparity_right),
        occlusion=occ(sample.occlusion),
        occlusion_right=occ(sample.occlusion_right),
    )


@dataclass
class AugmentParams:
    color: np.ndarray
    scale: float
    offset: tuple


def draw_augment_params(sample: StereoSample, rng: np.random.Generator,
                        color_range=(0.9, 1.1), scale_range=(1.0, 1.6)) -> AugmentParams:
    c = rng.uniform(*color_range, size=sample.left.shape[0])
    s = float(rng.uniform(*scale_range))
    h, w = sample.resolution
    oy = int(rng.integers(0, int(np.floor(h * s - h)) + 1))
    ox = int(rng.integers(0, int(np.floor(w * s - w)) + 1))
    return AugmentParams(c, s, (oy, ox))


def augment(sample: StereoSample, rng: np.random.Generator, params: Optional[AugmentParams] = None) -> list:
    """Eight variants: {identity, colour} x {identity, scale+crop} x {identity, flip-swap}.

    The first variant is the input itself.
    """
    p = params or draw_augment_params(sample, rng)
    out = []
    for use_color in (False, True):
        a = color_scale(sample, p.color) if use_color else sample
        for use_scale in (False, True):
            b = scale_crop(a, p.scale, p.offset) if use_scale else a
            for use_flip in (False, True):
                v = flip_swap(b) if use_flip else b
                tag = "".join(t for t, on in (("c", use_color), ("s", use_scale), ("f", use_flip)) if on)
                out.append(replace(v, id=f"{sample.id}+{tag}") if tag else v)
    return out


# ------------------------------------------------------------ dataset I/O


MANIFEST = "manifest.json"


def write_dataset(samples: Sequence[StereoSample], root, specs: Optional[Sequence[SyntheticSceneSpec]] = None,
                  extra: Optional[dict] = None) -> Path:
    """``samples/<id>_{left,right}.pgm|ppm`` + ``<id>_gt.f32`` + ``manifest.json``."""
    root = Path(root)
    (root / "samples").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        ext = "pgm" if s.left.shape[0] == 1 else "ppm"
        save_image(root / "samples" / f"{s.id}_left.{ext}", s.left)
        save_image(root / "samples" / f"{s.id}_right.{ext}", s.right)
        entry = {
            "id": s.id,
            "left": f"samples/{s.id}_left.{ext}",
            "right": f"samples/{s.id}_right.{ext}",
            "shape": list(s.left.shape),
            "calibration": {"focal_px": s.calibration.focal_px, "baseline_m": s.calibration.baseline_m},
        }
        if s.gt_disparity is not None:
            save_raw_f32(root / "samples" / f"{s.id}_gt.f32", s.gt_disparity)
            entry["gt"] = f"samples/{s.id}_gt.f32"
        if s.occlusion is not None:
            save_raw_f32(root / "samples" / f"{s.id}_occ.f32", s.occlusion)
            entry["occlusion"] = f"samples/{s.id}_occ.f32"
        if specs is not None:
            entry["spec_hash"] = specs[i].digest()
        entries.append(entry)
    manifest = {"format": "unsupdepth-dataset/1", "samples": entries}
    if extra:
        manifest.update(extra)
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root / MANIFEST


def read_dataset(root) -> list:
    root = Path(root)
    if root.is_file():
        root = root.parent
    try:
        manifest = json.loads((root / MANIFEST).read_text())
    except OSError as exc:
        raise OSError(f"cannot read dataset manifest in {root}: {exc}") from exc
    out = []
    for e in manifest["samples"]:
        left = load_image(root / e["left"])
        right = load_image(root / e["right"])
        hw = tuple(e["shape"][1:])
        gt = load_raw_f32(root / e["gt"], hw) if "gt" in e else None
        occ = load_raw_f32(root / e["occlusion"], hw) > 0.5 if "occlusion" in e else None
        out.append(StereoSample(left, right, Calibration(**e["calibration"]), gt, e["id"], occlusion=occ))
    return out
