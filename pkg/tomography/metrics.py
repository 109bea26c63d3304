"""
Métricas de calidad sobre el volumen completo: error relativo, PSNR y SSIM.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from tomography.geometry import ImageGrid

SSIM_SIGMA = 1.5
SSIM_RADIUS = 5  # ventana 11 (×11 [×11])
SSIM_K1 = 0.01
SSIM_K2 = 0.03

CSV_HEADER = 're,psnr_db,ssim'
FULL_VOLUME = 'full_volume'


def _as_volume(x) -> np.ndarray:
    if isinstance(x, ImageGrid):
        return x.as_array()
    return np.asarray(x, dtype=np.float64)


def _pair(x, x_gt) -> tuple[np.ndarray, np.ndarray]:
    a, b = _as_volume(x), _as_volume(x_gt)
    if a.shape != b.shape:
        raise ValueError(f"Formas distintas: {a.shape} vs {b.shape}")
    return a, b


def _peak(x_gt: np.ndarray, peak: float | None) -> float:
    peak = float(np.max(x_gt)) if peak is None else float(peak)
    if not peak > 0:
        raise ValueError(f"El pico debe ser > 0 (llegó {peak}); indíquelo explícitamente")
    return peak


def relative_error(x, x_gt) -> float:
    a, b = _pair(x, x_gt)
    reference = float(np.linalg.norm(b))
    if reference == 0.0:
        raise ValueError("La referencia tiene norma cero: el error relativo no está definido")
    return float(np.linalg.norm(a - b)) / reference


def psnr(x, x_gt, peak: float | None = None) -> float:
    """10·log10(peak² / MSE) en dB; ``math.inf`` si las imágenes coinciden."""
    a, b = _pair(x, x_gt)
    peak = _peak(b, peak)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _squeeze(volume: np.ndarray) -> np.ndarray:
    # Grillas 2D (nz = 1) se filtran con ventana 2D
    return volume[0] if volume.ndim == 3 and volume.shape[0] == 1 else volume


def ssim_map(x, x_gt, peak: float | None = None) -> np.ndarray:
    a, b = _pair(x, x_gt)
    peak = _peak(b, peak)
    a, b = _squeeze(a), _squeeze(b)
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2

    def window(image):
        return gaussian_filter(image, sigma=SSIM_SIGMA, radius=SSIM_RADIUS, mode='nearest')

    mu_a, mu_b = window(a), window(b)
    var_a = window(a * a) - mu_a * mu_a
    var_b = window(b * b) - mu_b * mu_b
    cov = window(a * b) - mu_a * mu_b
    values = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
    return np.clip(values, -1.0, 1.0)


def ssim(x, x_gt, peak: float | None = None) -> float:
    """SSIM medio con ventana gaussiana σ=1.5 (11 muestras por eje), bordes replicados."""
    return float(np.mean(ssim_map(x, x_gt, peak)))


@dataclass(frozen=True)
class MetricsReport:
    re: float
    psnr: float
    ssim: float
    peak: float
    computed_over: str = FULL_VOLUME

    def __post_init__(self):
        for name in ('re', 'psnr', 'ssim', 'peak'):
            object.__setattr__(self, name, float(getattr(self, name)))

    def to_text(self) -> str:
        lines = [
            f"re = {self.re!r}",
            f"psnr_db = {self.psnr!r}",
            f"ssim = {self.ssim!r}",
            f"peak = {self.peak!r}",
            f"computed_over = {self.computed_over}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> 'MetricsReport':
        fields = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, sep, value = line.partition('=')
            if not sep:
                raise ValueError(f"Línea sin '=': {line!r}")
            fields[key.strip()] = value.strip()
        try:
            return cls(
                re=float(fields['re']),
                psnr=float(fields['psnr_db']),
                ssim=float(fields['ssim']),
                peak=float(fields['peak']),
                computed_over=fields.get('computed_over', FULL_VOLUME),
            )
        except KeyError as exc:
            raise ValueError(f"Falta la clave {exc} en el reporte") from exc

    def to_csv_row(self) -> str:
        return f"{self.re!r},{self.psnr!r},{self.ssim!r}"

    @classmethod
    def from_csv_row(cls, row: str, peak: float = math.nan) -> 'MetricsReport':
        parts = row.strip().split(',')
        if len(parts) != 3:
            raise ValueError(f"Se esperaban 3 columnas ({CSV_HEADER}), llegaron {len(parts)}")
        re, psnr_db, ssim_value = (float(p) for p in parts)
        return cls(re=re, psnr=psnr_db, ssim=ssim_value, peak=peak)


def evaluate(x, x_gt, peak: float | None = None) -> MetricsReport:
    gt = _as_volume(x_gt)
    peak = _peak(gt, peak)
    return MetricsReport(
        re=relative_error(x, x_gt),
        psnr=psnr(x, x_gt, peak),
        ssim=ssim(x, x_gt, peak),
        peak=peak,
    )
