"""
Tipos del dominio: grilla de vóxeles, geometría de adquisición, subconjuntos de
ángulos y sinogramas.

Convenciones:
- ``values`` de una imagen se indexa como (iz * ny + iy) * nx + ix.
- Para el ángulo θ el rayo avanza en e_r = (cos θ, sin θ, 0) y el detector se
  extiende en e_u = (-sin θ, cos θ, 0) y e_v = (0, 0, 1).
- Los índices de ángulo son 0-based.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from django.core.exceptions import ValidationError

from tomography.exceptions import GeometryMismatch


def _triple(value, name: str) -> tuple:
    items = tuple(value)
    if len(items) == 2:
        # Grillas 2D: nz = 1 implícito
        items = (*items, 1)
    if len(items) != 3:
        raise ValidationError({name: f"Se esperan 2 o 3 componentes, no {len(items)}."})
    return items


@dataclass(frozen=True)
class GridLayout:
    dims: tuple[int, int, int]
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] | None = None

    def __post_init__(self):
        dims = tuple(int(n) for n in _triple(self.dims, 'dims'))
        voxel = tuple(float(s) for s in _triple(self.voxel_size, 'voxel_size'))
        object.__setattr__(self, 'dims', dims)
        object.__setattr__(self, 'voxel_size', voxel)
        if self.origin is None:
            origin = tuple(-0.5 * n * s for n, s in zip(dims, voxel))
        else:
            origin = tuple(float(o) for o in _triple(self.origin, 'origin'))
        object.__setattr__(self, 'origin', origin)
        self.clean()

    def clean(self) -> None:
        errors = {}
        if any(n < 1 for n in self.dims):
            errors['dims'] = f"Todas las dimensiones deben ser >= 1: {self.dims}"
        if any(not (s > 0 and math.isfinite(s)) for s in self.voxel_size):
            errors['voxel_size'] = f"Tamaño de vóxel inválido: {self.voxel_size}"
        if any(not math.isfinite(o) for o in self.origin):
            errors['origin'] = f"Origen no finito: {self.origin}"
        if errors:
            raise ValidationError(errors)

    @property
    def size(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def is_2d(self) -> bool:
        return self.dims[2] == 1

    @property
    def shape(self) -> tuple[int, int, int]:
        """Forma del arreglo en orden (nz, ny, nx)."""
        nx, ny, nz = self.dims
        return (nz, ny, nx)

    @property
    def extent(self) -> tuple[float, float, float]:
        return tuple(n * s for n, s in zip(self.dims, self.voxel_size))

    @property
    def radius(self) -> float:
        """Radio de la esfera (o círculo en 2D) que circunscribe la grilla."""
        ex, ey, ez = self.extent
        if self.is_2d:
            ez = 0.0
        return 0.5 * math.sqrt(ex * ex + ey * ey + ez * ez)

    def centers(self, axis: int) -> np.ndarray:
        n, s, o = self.dims[axis], self.voxel_size[axis], self.origin[axis]
        return o + (np.arange(n) + 0.5) * s

    def refined(self, factor: int) -> 'GridLayout':
        """Misma extensión con vóxeles ``factor`` veces más finos (z se conserva en 2D)."""
        nx, ny, nz = self.dims
        sx, sy, sz = self.voxel_size
        if self.is_2d:
            return GridLayout((nx * factor, ny * factor, 1), (sx / factor, sy / factor, sz), self.origin)
        return GridLayout(
            (nx * factor, ny * factor, nz * factor), (sx / factor, sy / factor, sz / factor), self.origin
        )


@dataclass(eq=False)
class ImageGrid:
    dims: tuple[int, int, int]
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] | None = None
    values: np.ndarray | None = None

    def __post_init__(self):
        layout = GridLayout(self.dims, self.voxel_size, self.origin)
        self.dims, self.voxel_size, self.origin = layout.dims, layout.voxel_size, layout.origin
        if self.values is None:
            self.values = np.zeros(layout.size)
        else:
            self.values = np.ascontiguousarray(self.values, dtype=np.float64).ravel()
        self.clean()

    def clean(self) -> None:
        if self.values.size != self.layout.size:
            raise ValidationError({
                'values': f"Se esperaban {self.layout.size} valores (dims={self.dims}), hay {self.values.size}."
            })

    @property
    def layout(self) -> GridLayout:
        return GridLayout(self.dims, self.voxel_size, self.origin)

    @classmethod
    def from_layout(cls, layout: GridLayout, values: np.ndarray | None = None) -> 'ImageGrid':
        return cls(layout.dims, layout.voxel_size, layout.origin, values)

    @classmethod
    def from_array(cls, array: np.ndarray, voxel_size=(1.0, 1.0, 1.0), origin=None) -> 'ImageGrid':
        """Crea la imagen desde un arreglo (ny, nx) o (nz, ny, nx)."""
        array = np.asarray(array, dtype=np.float64)
        if array.ndim == 2:
            array = array[np.newaxis]
        if array.ndim != 3:
            raise ValueError(f"Se espera un arreglo 2D o 3D, llegó ndim={array.ndim}")
        nz, ny, nx = array.shape
        return cls((nx, ny, nz), voxel_size, origin, array.ravel())

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.layout.shape)

    def with_values(self, values: np.ndarray) -> 'ImageGrid':
        return ImageGrid(self.dims, self.voxel_size, self.origin, values)


class GeometryKind(str, Enum):
    PARALLEL_2D = 'parallel2d'
    CONE_BEAM_3D = 'conebeam3d'


@dataclass(frozen=True)
class ScanGeometry:
    kind: GeometryKind
    angles: tuple[float, ...]
    det_cols: int
    det_rows: int = 1
    detector_spacing: float = 1.0
    source_distance: float | None = None
    detector_distance: float | None = None

    def __post_init__(self):
        object.__setattr__(self, 'kind', GeometryKind(self.kind))
        object.__setattr__(self, 'angles', tuple(float(a) for a in self.angles))
        object.__setattr__(self, 'det_cols', int(self.det_cols))
        object.__setattr__(self, 'det_rows', int(self.det_rows))
        object.__setattr__(self, 'detector_spacing', float(self.detector_spacing))
        for name in ('source_distance', 'detector_distance'):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, float(value))
        self.clean()

    def clean(self) -> None:
        errors = {}
        angles = np.asarray(self.angles)
        if angles.size < 1:
            errors['angles'] = "Se necesita al menos un ángulo."
        elif np.any(angles < 0) or np.any(angles >= 2 * math.pi) or np.any(np.diff(angles) <= 0):
            errors['angles'] = "Los ángulos deben ser estrictamente crecientes dentro de [0, 2π)."
        if self.det_cols < 1 or self.det_rows < 1:
            errors['det_cols'] = f"Detector inválido: {self.det_rows}x{self.det_cols}"
        if not (self.detector_spacing > 0 and math.isfinite(self.detector_spacing)):
            errors['detector_spacing'] = "detector_spacing debe ser > 0."
        if self.kind is GeometryKind.PARALLEL_2D:
            if self.det_rows != 1:
                errors['det_rows'] = "Parallel2D usa una sola fila de detector."
            if self.source_distance is not None or self.detector_distance is not None:
                errors['source_distance'] = "Parallel2D no admite distancias fuente/detector."
        else:
            if not (self.source_distance and self.source_distance > 0):
                errors['source_distance'] = "ConeBeam3D requiere source_distance > 0."
            if self.detector_distance is None or self.detector_distance < 0:
                errors['detector_distance'] = "ConeBeam3D requiere detector_distance >= 0."
        if errors:
            raise ValidationError(errors)

    @property
    def n_theta(self) -> int:
        return len(self.angles)

    @property
    def n_p(self) -> int:
        return self.det_rows * self.det_cols

    @property
    def n_measurements(self) -> int:
        return self.n_p * self.n_theta

    def check_layout(self, layout: GridLayout) -> None:
        """Valida que la grilla quepa en el campo de visión de esta geometría."""
        if self.kind is GeometryKind.PARALLEL_2D and not layout.is_2d:
            raise GeometryMismatch(f"Parallel2D requiere nz = 1; la grilla tiene dims={layout.dims}")
        if self.kind is GeometryKind.CONE_BEAM_3D and self.source_distance <= layout.radius:
            raise GeometryMismatch(
                f"La fuente (distancia {self.source_distance}) queda dentro del volumen (radio {layout.radius:.3f})"
            )

    def to_header(self) -> dict:
        return {
            'kind': self.kind.value,
            'angles': list(self.angles),
            'det_cols': self.det_cols,
            'det_rows': self.det_rows,
            'detector_spacing': self.detector_spacing,
            'source_distance': self.source_distance,
            'detector_distance': self.detector_distance,
        }

    @classmethod
    def from_header(cls, header: dict) -> 'ScanGeometry':
        return cls(**header)


@dataclass(frozen=True)
class AngleSubset:
    indices: tuple[int, ...]
    n_theta: int = field(compare=False)

    def __post_init__(self):
        indices = tuple(sorted(int(i) for i in self.indices))
        if not indices:
            raise ValueError("El subconjunto de ángulos está vacío.")
        if len(set(indices)) != len(indices):
            raise ValueError(f"Índices repetidos en el subconjunto: {indices}")
        if indices[0] < 0 or indices[-1] >= self.n_theta:
            raise ValueError(f"Índices fuera de rango [0, {self.n_theta}): {indices}")
        object.__setattr__(self, 'indices', indices)

    @classmethod
    def full(cls, n_theta: int) -> 'AngleSubset':
        return cls(tuple(range(n_theta)), n_theta)

    @classmethod
    def of(cls, indices: Iterable[int], n_theta: int) -> 'AngleSubset':
        return cls(tuple(indices), n_theta)

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    @property
    def is_full(self) -> bool:
        return len(self.indices) == self.n_theta


@dataclass(eq=False)
class Sinogram:
    geometry: ScanGeometry
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).ravel()
        if self.values.size != self.geometry.n_measurements:
            raise ValidationError({
                'values': f"Se esperaban n_p·n_theta = {self.geometry.n_measurements} muestras, hay {self.values.size}."
            })

    def as_array(self) -> np.ndarray:
        """Vista (n_theta, n_p): la fila i es el bloque b_i."""
        return self.values.reshape(self.geometry.n_theta, self.geometry.n_p)

    def blocks(self, subset: AngleSubset | None = None) -> list[np.ndarray]:
        rows = self.as_array()
        indices = range(self.geometry.n_theta) if subset is None else subset.indices
        return [rows[i] for i in indices]


def make_angles(n_theta: int) -> tuple[float, ...]:
    """Ángulos uniformes en [0, 2π): θ_i = 2π i / n_theta."""
    if n_theta < 1:
        raise ValueError("n_theta debe ser >= 1")
    return tuple(2.0 * math.pi * i / n_theta for i in range(n_theta))


def desk_geometry(
    kind: GeometryKind | str,
    angles: Sequence[float],
    layout: GridLayout,
    *,
    det_cols: int | None = None,
    det_rows: int | None = None,
    detector_spacing: float | None = None,
    source_distance: float | None = None,
    detector_distance: float | None = None,
) -> ScanGeometry:
    """
    Geometría por defecto para una grilla de escritorio.

    Parallel2D: ceil(√2·max(nx, ny)) celdas al paso del vóxel, de modo que todo
    rayo que toca la grilla tiene su celda. ConeBeam3D: fuente a 4R y detector a
    2R del eje (R = medio diagonal de la grilla), detector cuadrado que cubre la
    grilla magnificada.
    """
    kind = GeometryKind(kind)
    pitch = min(layout.voxel_size[0], layout.voxel_size[1])
    if kind is GeometryKind.PARALLEL_2D:
        if det_cols is None:
            det_cols = math.ceil(math.sqrt(2.0) * max(layout.dims[0], layout.dims[1]))
        return ScanGeometry(kind, tuple(angles), det_cols, 1, detector_spacing or pitch)

    radius = layout.radius
    source_distance = source_distance or 4.0 * radius
    if detector_distance is None:
        detector_distance = 2.0 * radius
    magnification = (source_distance + detector_distance) / source_distance
    spacing = detector_spacing or pitch * magnification
    # Ángulo del cono que abarca la esfera circunscrita, proyectado sobre el detector
    half_width = (source_distance + detector_distance) * radius / math.sqrt(source_distance**2 - radius**2)
    cells = det_cols or math.ceil(2.0 * half_width / spacing)
    return ScanGeometry(
        kind,
        tuple(angles),
        cells,
        det_rows or cells,
        spacing,
        source_distance,
        detector_distance,
    )
