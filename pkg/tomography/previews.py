"""
Vistas previas de reconstrucciones: corte central en escala de grises (PNG o WebP).
"""
import io
from pathlib import Path

import numpy as np
from PIL import Image

from tomography.geometry import ImageGrid

PREVIEW_EXTENSIONS = ('.png', '.webp')
WEBP_QUALITY = 80


def central_slice(image: ImageGrid) -> np.ndarray:
    volume = image.as_array()
    return volume[volume.shape[0] // 2]


def to_grayscale(values: np.ndarray, vmax: float | None = None) -> Image.Image:
    """Escala [0, vmax] a 0..255; negativos se recortan. El eje y crece hacia arriba."""
    vmax = float(values.max()) if vmax is None else float(vmax)
    scaled = np.zeros_like(values) if vmax <= 0 else np.clip(values / vmax, 0.0, 1.0)
    pixels = np.round(np.flipud(scaled) * 255.0).astype(np.uint8)
    return Image.fromarray(pixels)


def render_preview(image: ImageGrid, fmt: str = 'PNG', vmax: float | None = None) -> bytes:
    img = to_grayscale(central_slice(image), vmax)
    buffer = io.BytesIO()
    save_kwargs = {'format': fmt}
    if fmt == 'WEBP':
        save_kwargs['quality'] = WEBP_QUALITY
    img.save(buffer, **save_kwargs)
    return buffer.getvalue()


def write_preview(path, image: ImageGrid, vmax: float | None = None) -> Path:
    path = Path(path)
    ext = path.suffix.lower()
    if ext not in PREVIEW_EXTENSIONS:
        raise ValueError(f"Extensión de vista previa no soportada: {ext!r} (use {', '.join(PREVIEW_EXTENSIONS)})")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(render_preview(image, 'WEBP' if ext == '.webp' else 'PNG', vmax))
    return path
