"""Layered depth image container, validity checks and boundary masks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

LDI_MAGIC = "LDI"
IMAGE_MAGIC = "IMG"
FORMAT_VERSION = 1

#: Lower disparity bound as a fraction of ``d_max``; disparity must stay positive.
MIN_DISPARITY_FRACTION = 1e-4


@dataclass
class Ldi:
    """``L`` layers of texture ``(L, H, W, 3)`` and disparity ``(L, H, W)``.

    Layer 0 holds the visible surface; disparity is meant to be
    non-increasing with the layer index.
    """

    textures: np.ndarray
    disparities: np.ndarray
    d_max: float = 1.0

    def __post_init__(self):
        self.textures = np.asarray(self.textures, dtype=np.float64)
        self.disparities = np.asarray(self.disparities, dtype=np.float64)
        if self.textures.ndim != 4 or self.textures.shape[-1] != 3:
            raise ValueError(f"textures must be (L, H, W, 3), got {self.textures.shape}")
        if self.disparities.shape != self.textures.shape[:3]:
            raise ValueError(
                f"disparities {self.disparities.shape} do not match textures {self.textures.shape}"
            )
        if self.textures.shape[0] < 1:
            raise ValueError("an LDI needs at least one layer")
        if not self.d_max > 0:
            raise ValueError(f"d_max must be positive, got {self.d_max}")

    @property
    def n_layers(self) -> int:
        return self.textures.shape[0]

    @property
    def height(self) -> int:
        return self.textures.shape[1]

    @property
    def width(self) -> int:
        return self.textures.shape[2]

    def copy(self) -> "Ldi":
        return Ldi(self.textures.copy(), self.disparities.copy(), self.d_max)

    def layer(self, index: int) -> "Ldi":
        return Ldi(self.textures[index : index + 1], self.disparities[index : index + 1], self.d_max)

    @classmethod
    def from_layers(cls, layers, d_max: float = 1.0) -> "Ldi":
        """Build from a sequence of ``(texture, disparity)`` pairs."""
        tex = np.stack([np.asarray(t, dtype=np.float64) for t, _ in layers])
        disp = np.stack([np.asarray(d, dtype=np.float64) for _, d in layers])
        return cls(tex, disp, d_max)


class Violation(NamedTuple):
    kind: str  # "order" or "range"
    layer: int
    row: int
    col: int


def validate(ldi: Ldi) -> list[Violation]:
    """Every pixel/layer breaking the range or depth-ordering invariants.

    Range: ``0 < D <= d_max`` with finite textures and disparities.
    Ordering: ``D[l] >= D[l + 1]``, reported against layer ``l + 1``.
    """
    out = []
    d = ldi.disparities
    bad_range = ~np.isfinite(d) | (d <= 0) | (d > ldi.d_max)
    bad_range |= ~np.all(np.isfinite(ldi.textures), axis=-1)
    for l, i, j in zip(*np.nonzero(bad_range)):
        out.append(Violation("range", int(l), int(i), int(j)))
    if ldi.n_layers > 1:
        bad_order = d[1:] > d[:-1]
        for l, i, j in zip(*np.nonzero(bad_order)):
            out.append(Violation("order", int(l) + 1, int(i), int(j)))
    return out


@dataclass(frozen=True)
class BoundaryMask:
    mask: np.ndarray
    fraction: float


def _border(n: int, fraction: float) -> int:
    # tolerate float noise such as 0.1 * 30 = 3.0000000000000004
    return math.ceil(fraction * n - 1e-9) if fraction > 0 else 0


def make_boundary_mask(width: int, height: int, fraction: float = 0.1) -> BoundaryMask:
    """Binary ``(height, width)`` mask, zero within a ``fraction`` band of each edge."""
    if not 0 <= fraction < 0.5:
        raise ValueError(f"boundary fraction must lie in [0, 0.5), got {fraction}")
    bx, by = _border(width, fraction), _border(height, fraction)
    mask = np.zeros((height, width))
    mask[by : height - by, bx : width - bx] = 1.0
    return BoundaryMask(mask, fraction)


def clamp_disparity(d: np.ndarray, d_max: float) -> np.ndarray:
    return np.clip(d, MIN_DISPARITY_FRACTION * d_max, d_max)


# ---------------------------------------------------------------------------
# binary containers: one ASCII header line followed by little-endian float32


def _write(path, header: str, planes: np.ndarray) -> None:
    data = np.ascontiguousarray(planes, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write((header + "\n").encode("ascii"))
        fh.write(data.tobytes())


def _read_header(fh, magic: str) -> list[str]:
    line = fh.readline().decode("ascii", errors="replace").split()
    if not line or line[0] != magic:
        raise ValueError(f"{fh.name}: not a {magic} file")
    if int(line[1]) != FORMAT_VERSION:
        raise ValueError(f"{fh.name}: unsupported {magic} version {line[1]}")
    return line[2:]


def write_ldi(path, ldi: Ldi) -> None:
    """Write ``LDI 1 W H L d_max`` then per layer: R, G, B, disparity planes."""
    planes = np.concatenate(
        [np.moveaxis(ldi.textures, -1, 1), ldi.disparities[:, None]], axis=1
    )  # (L, 4, H, W)
    header = f"{LDI_MAGIC} {FORMAT_VERSION} {ldi.width} {ldi.height} {ldi.n_layers} {ldi.d_max!r}"
    _write(path, header, planes)


def read_ldi(path) -> Ldi:
    with open(path, "rb") as fh:
        w, h, n, d_max = _read_header(fh, LDI_MAGIC)
        w, h, n = int(w), int(h), int(n)
        raw = np.frombuffer(fh.read(), dtype="<f4")
    if raw.size != n * 4 * h * w:
        raise ValueError(f"{path}: expected {n * 4 * h * w} floats, found {raw.size}")
    planes = raw.reshape(n, 4, h, w).astype(np.float64)
    return Ldi(np.moveaxis(planes[:, :3], 1, -1), planes[:, 3], float(d_max))


def write_image(path, image: np.ndarray) -> None:
    """Raw float image: ``IMG 1 W H C`` then channel-major row-major planes."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    h, w, c = img.shape
    _write(path, f"{IMAGE_MAGIC} {FORMAT_VERSION} {w} {h} {c}", np.moveaxis(img, -1, 0))


def read_image(path) -> np.ndarray:
    """Read a raw float image; single-channel images come back as ``(H, W)``."""
    with open(path, "rb") as fh:
        w, h, c = (int(v) for v in _read_header(fh, IMAGE_MAGIC))
        raw = np.frombuffer(fh.read(), dtype="<f4")
    if raw.size != w * h * c:
        raise ValueError(f"{path}: expected {w * h * c} floats, found {raw.size}")
    img = np.moveaxis(raw.reshape(c, h, w).astype(np.float64), 0, -1)
    return img[..., 0] if c == 1 else img


def write_png(path, image: np.ndarray) -> None:
    from PIL import Image

    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(img * 255.0).astype(np.uint8)).save(Path(path))
