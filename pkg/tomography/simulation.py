"""
Fantomas sintéticos y simulación de mediciones con ruido gaussiano aditivo.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from django.core.exceptions import ValidationError

from tomography.geometry import (  # noqa: F401 (make_angles y desk_geometry son parte de la API de simulación)
    GridLayout,
    ImageGrid,
    ScanGeometry,
    Sinogram,
    desk_geometry,
    make_angles,
)
from tomography.operators import forward_project

logger = logging.getLogger(__name__)

# Shepp-Logan modificado (Toft): intensidad, semiejes a, b, centro x0, y0, rotación φ en grados
SHEPP_LOGAN_2D = (
    (1.0, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.8, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.1, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.1, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.1, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.1, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
)

# Versión 3D: intensidad, semiejes a, b, c, centro x0, y0, z0, ángulos de Euler φ, θ, ψ en grados
SHEPP_LOGAN_3D = (
    (1.0, 0.6900, 0.920, 0.810, 0.00, 0.0000, 0.00, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.780, 0.00, -0.0184, 0.00, 0.0, 0.0, 0.0),
    (-0.2, 0.1100, 0.310, 0.220, 0.22, 0.0000, 0.00, -18.0, 0.0, 10.0),
    (-0.2, 0.1600, 0.410, 0.280, -0.22, 0.0000, 0.00, 18.0, 0.0, 10.0),
    (0.1, 0.2100, 0.250, 0.410, 0.00, 0.3500, -0.15, 0.0, 0.0, 0.0),
    (0.1, 0.0460, 0.046, 0.050, 0.00, 0.1000, 0.25, 0.0, 0.0, 0.0),
    (0.1, 0.0460, 0.046, 0.050, 0.00, -0.1000, 0.25, 0.0, 0.0, 0.0),
    (0.1, 0.0460, 0.023, 0.050, -0.08, -0.6050, 0.00, 0.0, 0.0, 0.0),
    (0.1, 0.0230, 0.023, 0.020, 0.00, -0.6060, 0.00, 0.0, 0.0, 0.0),
    (0.1, 0.0230, 0.046, 0.020, 0.06, -0.6050, 0.00, 0.0, 0.0, 0.0),
)

MIN_SHEPP_LOGAN_DIM = 16


class PhantomKind(str, Enum):
    SHEPP_LOGAN_2D = 'shepp_logan_2d'
    SHEPP_LOGAN_3D = 'shepp_logan_3d'
    DISKS = 'disks'


@dataclass(frozen=True)
class Disk:
    center: tuple[float, ...]
    radius: float
    value: float = 1.0

    def __post_init__(self):
        center = tuple(float(c) for c in self.center)
        if len(center) == 2:
            center = (*center, 0.0)
        object.__setattr__(self, 'center', center)
        object.__setattr__(self, 'radius', float(self.radius))
        object.__setattr__(self, 'value', float(self.value))


@dataclass(frozen=True)
class PhantomSpec:
    kind: PhantomKind
    dims: tuple[int, ...]
    voxel_size: tuple[float, ...] = (1.0, 1.0, 1.0)
    disks: tuple[Disk, ...] = ()
    value_max: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'kind', PhantomKind(self.kind))
        object.__setattr__(self, 'disks', tuple(d if isinstance(d, Disk) else Disk(**d) for d in self.disks))
        layout = GridLayout(self.dims, self.voxel_size)
        object.__setattr__(self, 'dims', layout.dims)
        object.__setattr__(self, 'voxel_size', layout.voxel_size)
        self.clean()

    def clean(self) -> None:
        errors = {}
        nx, ny, nz = self.dims
        if self.kind is PhantomKind.SHEPP_LOGAN_2D:
            if min(nx, ny) < MIN_SHEPP_LOGAN_DIM or nz != 1:
                errors['dims'] = f"Shepp-Logan 2D requiere nx, ny >= {MIN_SHEPP_LOGAN_DIM} y nz = 1: {self.dims}"
        elif self.kind is PhantomKind.SHEPP_LOGAN_3D:
            if min(self.dims) < MIN_SHEPP_LOGAN_DIM:
                errors['dims'] = f"Shepp-Logan 3D requiere dims >= {MIN_SHEPP_LOGAN_DIM}: {self.dims}"
        if not self.value_max > 0:
            errors['value_max'] = "value_max debe ser > 0."
        bad = [d for d in self.disks if not (d.radius > 0 and 0 <= d.value <= self.value_max)]
        if bad:
            errors['disks'] = f"Discos con radio <= 0 o valor fuera de [0, value_max]: {bad}"
        if self.disks and self.kind is not PhantomKind.DISKS:
            errors['disks'] = "Solo el fantoma 'disks' admite lista de discos."
        if errors:
            raise ValidationError(errors)

    @property
    def layout(self) -> GridLayout:
        return GridLayout(self.dims, self.voxel_size)


class NoiseKind(str, Enum):
    NONE = 'none'
    GAUSSIAN = 'gaussian'


@dataclass(frozen=True)
class NoiseSpec:
    kind: NoiseKind = NoiseKind.NONE
    rel_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'kind', NoiseKind(self.kind))
        object.__setattr__(self, 'rel_std', float(self.rel_std))
        self.clean()

    def clean(self) -> None:
        if not (self.rel_std >= 0 and math.isfinite(self.rel_std)):
            raise ValidationError({'rel_std': "rel_std debe ser finito y >= 0."})
        if self.kind is NoiseKind.NONE and self.rel_std != 0:
            raise ValidationError({'rel_std': "El ruido 'none' no admite rel_std."})

    @classmethod
    def none(cls) -> 'NoiseSpec':
        return cls(NoiseKind.NONE)

    @classmethod
    def gaussian(cls, rel_std: float, seed: int = 0) -> 'NoiseSpec':
        return cls(NoiseKind.GAUSSIAN, rel_std, seed)

    def describe(self) -> str:
        if self.kind is NoiseKind.NONE:
            return 'sin ruido'
        return f'gaussiano rel_std={self.rel_std:g}'


def _normalized_axes(layout: GridLayout) -> list[np.ndarray]:
    axes = []
    for a in range(3):
        half = 0.5 * layout.extent[a]
        middle = layout.origin[a] + half
        axes.append((layout.centers(a) - middle) / half)
    return axes


def _shepp_logan_2d(layout: GridLayout) -> np.ndarray:
    u, v, _ = _normalized_axes(layout)
    y, x = np.meshgrid(v, u, indexing='ij')
    image = np.zeros_like(x)
    for value, a, b, x0, y0, phi in SHEPP_LOGAN_2D:
        c, s = math.cos(math.radians(phi)), math.sin(math.radians(phi))
        dx, dy = x - x0, y - y0
        inside = ((dx * c + dy * s) / a) ** 2 + ((-dx * s + dy * c) / b) ** 2 <= 1.0
        image[inside] += value
    return image[np.newaxis]


def _euler_matrix(phi: float, theta: float, psi: float) -> np.ndarray:
    cphi, sphi = math.cos(phi), math.sin(phi)
    cth, sth = math.cos(theta), math.sin(theta)
    cpsi, spsi = math.cos(psi), math.sin(psi)
    return np.array([
        [cpsi * cphi - cth * sphi * spsi, cpsi * sphi + cth * cphi * spsi, spsi * sth],
        [-spsi * cphi - cth * sphi * cpsi, -spsi * sphi + cth * cphi * cpsi, cpsi * sth],
        [sth * sphi, -sth * cphi, cth],
    ])


def _shepp_logan_3d(layout: GridLayout) -> np.ndarray:
    u, v, w = _normalized_axes(layout)
    z, y, x = np.meshgrid(w, v, u, indexing='ij')
    points = np.stack([x.ravel(), y.ravel(), z.ravel()])
    volume = np.zeros(points.shape[1])
    for value, a, b, c, x0, y0, z0, phi, theta, psi in SHEPP_LOGAN_3D:
        rotated = _euler_matrix(math.radians(phi), math.radians(theta), math.radians(psi)) @ points
        inside = (
            ((rotated[0] - x0) / a) ** 2 + ((rotated[1] - y0) / b) ** 2 + ((rotated[2] - z0) / c) ** 2 <= 1.0
        )
        volume[inside] += value
    return volume.reshape(layout.shape)


def _disks(layout: GridLayout, disks: tuple[Disk, ...]) -> np.ndarray:
    z, y, x = np.meshgrid(layout.centers(2), layout.centers(1), layout.centers(0), indexing='ij')
    image = np.zeros(layout.shape)
    for disk in disks:
        cx, cy, cz = disk.center
        r2 = (x - cx) ** 2 + (y - cy) ** 2
        if not layout.is_2d:
            r2 = r2 + (z - cz) ** 2
        image[r2 <= disk.radius ** 2] += disk.value
    return image


def make_phantom(spec: PhantomSpec, oversample: int = 1) -> ImageGrid:
    """
    Fantoma no negativo y determinista. ``oversample`` > 1 lo evalúa sobre una
    grilla ``oversample`` veces más fina con la misma extensión.
    """
    if oversample < 1:
        raise ValueError("oversample debe ser >= 1")
    layout = spec.layout if oversample == 1 else spec.layout.refined(oversample)
    if spec.kind is PhantomKind.SHEPP_LOGAN_2D:
        array = _shepp_logan_2d(layout) * spec.value_max
    elif spec.kind is PhantomKind.SHEPP_LOGAN_3D:
        array = _shepp_logan_3d(layout) * spec.value_max
    else:
        array = _disks(layout, spec.disks)
    # Las elipses negativas pueden dejar residuos de redondeo bajo cero
    np.clip(array, 0.0, None, out=array)
    return ImageGrid.from_layout(layout, array.ravel())


def simulate_scan(
    phantom: ImageGrid,
    geometry: ScanGeometry,
    noise: NoiseSpec | None = None,
    *,
    threads: int = 1,
) -> Sinogram:
    """b = A·phantom + ruido gaussiano i.i.d. con σ = rel_std·max|A·phantom|."""
    noise = noise or NoiseSpec.none()
    geometry.check_layout(phantom.layout)
    clean = forward_project(phantom, geometry, threads=threads)
    if noise.kind is NoiseKind.NONE or noise.rel_std == 0:
        return Sinogram(geometry, clean)

    sigma = noise.rel_std * float(np.max(np.abs(clean)))
    rng = np.random.default_rng(noise.seed)
    logger.info("Ruido gaussiano: sigma=%.6e (rel_std=%g, seed=%d)", sigma, noise.rel_std, noise.seed)
    return Sinogram(geometry, clean + rng.normal(0.0, sigma, size=clean.shape))
