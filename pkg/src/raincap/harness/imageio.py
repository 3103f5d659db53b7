"""8-bit RGB PNG import and export."""
import io

import numpy as np
from PIL import Image, UnidentifiedImageError

from .checkpoint import atomic_write


def to_uint8(img):
    img = np.asarray(img, np.float64)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    return np.rint(np.clip(np.nan_to_num(img), 0.0, 1.0) * 255.0).astype(np.uint8)


def export_image(img, path):
    """Clamp to [0, 1], quantize and write an RGB PNG."""
    buf = io.BytesIO()
    Image.fromarray(to_uint8(img), mode="RGB").save(buf, format="PNG")
    atomic_write(path, buf.getvalue())


def import_image(path):
    """Read any Pillow-decodable image as float32 RGB in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ValueError(f"cannot read image {path}: {exc}") from exc
    return arr / 255.0
