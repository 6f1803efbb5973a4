"""Image loading, label-map PNG export, and dataset pairing."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".pgm")
MASK_THRESHOLD = 128


class ImageLoadError(RuntimeError):
    pass


def bilinear_resize(image: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Align-corners bilinear resize of a (C, H, W) array.

    Corner pixels of the output coincide exactly with corner pixels of
    the input.
    """
    c, h, w = image.shape
    if (h, w) == (out_h, out_w):
        return image.copy()
    ys = (np.linspace(0, h - 1, out_h) if out_h > 1
          else np.zeros(1))
    xs = (np.linspace(0, w - 1, out_w) if out_w > 1
          else np.zeros(1))
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    top = image[:, y0][:, :, x0] * (1 - wx) + image[:, y0][:, :, x1] * wx
    bot = image[:, y1][:, :, x0] * (1 - wx) + image[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def load_image(path, resize: tuple[int, int] | None = None) -> np.ndarray:
    """Decode an image file to (C, H, W) floats in [0, 1].

    Grayscale stays single channel; everything else becomes RGB. `resize`
    is (width, height), applied with align-corners bilinear interpolation.
    """
    path = Path(path)
    if path.suffix.lower() not in IMAGE_EXTENSIONS:
        raise ImageLoadError(f"{path}: unsupported format {path.suffix!r}")
    try:
        with Image.open(path) as img:
            if img.mode in ("L", "I;16", "I"):
                img = img.convert("L")
            elif img.mode != "RGB":
                img = img.convert("RGB")
            arr = np.asarray(img, dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise ImageLoadError(f"{path}: cannot read image: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    if resize is not None:
        arr = bilinear_resize(arr, resize[0], resize[1])
    return arr


def load_mask(path, resize: tuple[int, int] | None = None) -> np.ndarray:
    """Load a ground-truth mask, binarized at 128 of the 8-bit range."""
    arr = load_image(path, resize=None)
    if arr.shape[0] > 1:
        arr = arr.mean(axis=0, keepdims=True)
    if resize is not None:
        arr = bilinear_resize(arr, resize[0], resize[1])
    return arr[0] >= MASK_THRESHOLD / 255.0


def _label_palette() -> list[int]:
    """256 visually distinct palette entries; entry i renders label i."""
    rng = np.random.default_rng(12345)
    base = [
        (0, 0, 0), (230, 25, 75), (60, 180, 75), (255, 225, 25),
        (0, 130, 200), (245, 130, 48), (145, 30, 180), (70, 240, 240),
        (240, 50, 230), (210, 245, 60), (250, 190, 212), (0, 128, 128),
    ]
    colors = list(base)
    while len(colors) < 256:
        colors.append(tuple(int(v) for v in rng.integers(40, 256, size=3)))
    flat: list[int] = []
    for r, g, b in colors[:256]:
        flat.extend((r, g, b))
    return flat


def save_labels_png(path, labels: np.ndarray) -> None:
    """Write a label map as an indexed-palette PNG (label i -> entry i)."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError(f"labels outside [0, 255]: {labels.min()}..{labels.max()}")
    img = Image.fromarray(labels.astype(np.uint8), mode="P")
    img.putpalette(_label_palette())
    img.save(path, format="PNG")


def read_labels_png(path) -> np.ndarray:
    """Inverse of save_labels_png: recover the label map exactly."""
    with Image.open(path) as img:
        if img.mode != "P":
            raise ImageLoadError(f"{path}: not an indexed-palette PNG")
        return np.asarray(img, dtype=np.int64)


@dataclass
class DatasetLayout:
    """Pairing of an images directory with an optional masks directory.

    A mask for image `stem.ext` is `masks_dir/stem<mask_suffix>.<any ext>`;
    each declared mask must resolve uniquely.
    """
    images_dir: Path
    masks_dir: Path | None = None
    mask_suffix: str = ""
    resize: tuple[int, int] | None = None

    def image_paths(self) -> list[Path]:
        paths = [p for p in sorted(Path(self.images_dir).iterdir())
                 if p.suffix.lower() in IMAGE_EXTENSIONS]
        if not paths:
            raise FileNotFoundError(f"no images found in {self.images_dir}")
        return paths

    def mask_for(self, image_path: Path) -> Path | None:
        if self.masks_dir is None:
            return None
        stem = image_path.stem + self.mask_suffix
        matches = [p for p in sorted(Path(self.masks_dir).iterdir())
                   if p.stem == stem and p.suffix.lower() in IMAGE_EXTENSIONS]
        if not matches:
            return None
        if len(matches) > 1:
            raise FileNotFoundError(
                f"ambiguous masks for {image_path.name}: "
                f"{[m.name for m in matches]}")
        return matches[0]

    def pairs(self) -> list[tuple[Path, Path | None]]:
        return [(p, self.mask_for(p)) for p in self.image_paths()]
