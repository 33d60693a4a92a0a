"""Image preprocessing: centre crop + bilinear resize, per-channel
normalization, space-time stacks and the streaming mean image."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

PAPER_CROP = 300
PAPER_OUT = 224
DESK_CROP = 100
DESK_OUT = 64
GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class ImageNormSpec:
    mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    std: tuple[float, float, float] = (0.229, 0.224, 0.225)

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValueError("image normalization needs three channel means and stds")
        if not all(s > 0 for s in self.std):
            raise ValueError("image normalization std must be > 0")


IMAGENET = ImageNormSpec()


@dataclass(frozen=True)
class SpaceTimeSpec:
    spacing: int = 10
    depth: int = 3
    alpha: float = 0.01  # streaming mean smoothing factor

    def __post_init__(self):
        if self.spacing < 1:
            raise ValueError("space-time spacing must be >= 1")
        if self.depth < 2:
            raise ValueError("space-time depth must be >= 2")
        if not 0 < self.alpha <= 1:
            raise ValueError("smoothing factor must lie in (0, 1]")

    @property
    def history(self) -> int:
        """Ticks of past frames needed before the newest one."""
        return self.spacing * (self.depth - 1)


def crop_offset(width: int, height: int, crop: int = PAPER_CROP) -> tuple[int, int]:
    """Top-left corner (x, y) of the centred crop window."""
    if width < crop or height < crop:
        raise ValueError(f"image {width}x{height} is smaller than the {crop}x{crop} crop")
    return (width - crop) // 2, (height - crop) // 2


@lru_cache(maxsize=16)
def _lerp_table(crop: int, out: int):
    # half-pixel-centre bilinear sampling, edges clamped
    src = (np.arange(out) + 0.5) * (crop / out) - 0.5
    src = np.clip(src, 0, crop - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, crop - 1)
    w1 = src - i0
    return i0, i1, 1.0 - w1, w1


class CropResize:
    """Centre crop then bilinear resize with precomputed tables.

    ``__call__`` writes into an internal buffer when ``out`` is not given, so
    a streaming loop allocates nothing per frame.
    """

    def __init__(self, width: int, height: int, crop: int = PAPER_CROP, out: int = PAPER_OUT, channels: int = 3):
        self.x0, self.y0 = crop_offset(width, height, crop)
        self.width, self.height = width, height
        self.crop, self.size = crop, out
        self.i0, self.i1, self.w0, self.w1 = _lerp_table(crop, out)
        shape = (out, out, channels) if channels else (out, out)
        self._rows = np.empty((out, crop) + shape[2:])
        self._rows2 = np.empty((out, crop) + shape[2:])
        self._tmp = np.empty((out, out) + shape[2:])
        self._buf = np.empty(shape)

    def __call__(self, img: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        if img.shape[0] != self.height or img.shape[1] != self.width:
            raise ValueError(f"expected a {self.width}x{self.height} image, got {img.shape[1]}x{img.shape[0]}")
        out = self._buf if out is None else out
        i0, i1 = self.y0 + self.i0, self.y0 + self.i1
        w0 = self.w0.reshape((-1,) + (1,) * (img.ndim - 1))
        w1 = self.w1.reshape(w0.shape)
        rows = self._rows
        a = img[i0, self.x0:self.x0 + self.crop]
        b = img[i1, self.x0:self.x0 + self.crop]
        np.multiply(a, w0, out=rows)
        np.multiply(b, w1, out=self._rows2)
        rows += self._rows2
        c0 = self.w0.reshape((1, -1) + (1,) * (img.ndim - 2))
        c1 = self.w1.reshape(c0.shape)
        np.multiply(rows[:, self.i0], c0, out=self._tmp)
        np.multiply(rows[:, self.i1], c1, out=out)
        out += self._tmp
        return out


def center_crop_resize(img: np.ndarray, crop: int = PAPER_CROP, out: int = PAPER_OUT) -> np.ndarray:
    """Centre-crop ``crop`` x ``crop`` and bilinearly resize to ``out`` x ``out`` (float64, same scale)."""
    img = np.asarray(img)
    channels = img.shape[2] if img.ndim == 3 else 0
    return CropResize(img.shape[1], img.shape[0], crop, out, channels)(img).copy()


def normalize_image(img: np.ndarray, spec: ImageNormSpec = IMAGENET, layout: str = "chw") -> np.ndarray:
    """Per-channel (x - mean) / std of an HxWx3 image already scaled to [0, 1].

    ``layout='chw'`` returns 3xHxW; ``'hwc'`` keeps channels last (network layout).
    """
    img = np.asarray(img, dtype=float)
    z = (img - np.asarray(spec.mean)) / np.asarray(spec.std)
    if layout == "chw":
        return np.ascontiguousarray(np.moveaxis(z, -1, -3))
    if layout == "hwc":
        return z
    raise ValueError(f"unknown layout {layout!r}")


def denormalize_image(z: np.ndarray, spec: ImageNormSpec = IMAGENET, layout: str = "chw") -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if layout == "chw":
        z = np.moveaxis(z, -3, -1)
    return z * np.asarray(spec.std) + np.asarray(spec.mean)


def to_gray(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=float) @ GRAY_WEIGHTS


def clip_mean_image(frames: np.ndarray) -> np.ndarray:
    return np.asarray(frames, dtype=float).mean(axis=0)


def spacetime_transform(frames: np.ndarray, t: int, spec: SpaceTimeSpec = SpaceTimeSpec(),
                        mean_image: np.ndarray | None = None) -> np.ndarray:
    """Stack frames t, t-spacing, ... (newest first) as channels, mean-subtracted.

    ``frames`` is a (T, H, W) grayscale or (T, H, W, 3) colour buffer; colour
    frames are converted to gray.  Returns (H, W, depth).
    """
    start = t - spec.history
    if t >= len(frames) or start < 0:
        raise ValueError(f"space-time stack at tick {t} needs {spec.history} ticks of history "
                         f"(buffer has {len(frames)} frames)")
    picks = np.asarray(frames[start:t + 1:spec.spacing][::-1], dtype=float)
    if picks.ndim == 4:
        picks = to_gray(picks)
    if mean_image is not None:
        m = np.asarray(mean_image, dtype=float)
        picks = picks - (to_gray(m) if m.ndim == 3 else m)
    return np.moveaxis(picks, 0, -1)


def clip_spacetime(gray: np.ndarray, spec: SpaceTimeSpec = SpaceTimeSpec(),
                   mean_image: np.ndarray | None = None) -> np.ndarray:
    """Space-time stacks for every tick with enough history: (T - history, H, W, depth)."""
    gray = np.asarray(gray, dtype=float)
    if mean_image is not None:
        gray = gray - mean_image
    h = spec.history
    if len(gray) <= h:
        raise ValueError(f"clip of {len(gray)} frames is shorter than the {h}-tick history")
    cols = [gray[h - k * spec.spacing:len(gray) - k * spec.spacing] for k in range(spec.depth)]
    return np.stack(cols, axis=-1)


class StreamingMean:
    """Exponentially smoothed mean image: mean <- (1 - a) mean + a frame."""

    def __init__(self, alpha: float = 0.01, shape: tuple[int, ...] | None = None):
        if not 0 < alpha <= 1:
            raise ValueError(f"smoothing factor must lie in (0, 1], got {alpha}")
        self.alpha = float(alpha)
        self.mean = None if shape is None else np.zeros(shape)
        self._scratch = None if shape is None else np.empty(shape)
        self.count = 0

    def update(self, frame: np.ndarray) -> np.ndarray:
        if self.mean is None or self.count == 0:
            if self.mean is None:
                self.mean = np.empty(frame.shape)
                self._scratch = np.empty(frame.shape)
            self.mean[...] = frame
        else:
            np.subtract(frame, self.mean, out=self._scratch)
            self._scratch *= self.alpha
            self.mean += self._scratch
        self.count += 1
        return self.mean


def streaming_mean_update(mean: np.ndarray, frame: np.ndarray, alpha: float) -> np.ndarray:
    if not 0 < alpha <= 1:
        raise ValueError(f"smoothing factor must lie in (0, 1], got {alpha}")
    return (1.0 - alpha) * np.asarray(mean, dtype=float) + alpha * np.asarray(frame, dtype=float)


class FramePreprocessor:
    """uint8 frame -> normalized network input (H, W, 3) for the single-frame models.

    Used by both the offline dataset path and the benchmark loop so the two
    are bit-identical.
    """

    def __init__(self, width: int, height: int, crop: int, out: int, spec: ImageNormSpec = IMAGENET):
        self.resize = CropResize(width, height, crop, out, 3)
        self.scale = 1.0 / (255.0 * np.asarray(spec.std))
        self.shift = np.asarray(spec.mean) / np.asarray(spec.std)
        self._buf = np.empty((out, out, 3))

    def __call__(self, frame: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        out = self._buf if out is None else out
        self.resize(frame, out)
        out *= self.scale
        out -= self.shift
        return out


def preset_geometry(width: int, height: int) -> tuple[int, int]:
    """(crop, output size) for a render size: paper-preset geometry for 960x540, desk-preset geometry for 320x180."""
    if (width, height) == (960, 540):
        return PAPER_CROP, PAPER_OUT
    if (width, height) == (320, 180):
        return DESK_CROP, DESK_OUT
    raise ValueError(f"no crop geometry defined for {width}x{height} frames")
