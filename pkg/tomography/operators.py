"""
Proyector por bloques de ángulo, su adjunto y el término de fidelidad
sub-muestreado

    f_S(x) = (n_theta / 2|S|) · ||A_S x - b_S||²

con gradiente (n_theta / |S|) · A_Sᵀ (A_S x - b_S). Con S = todos los ángulos
se recupera ½||Ax - b||².
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np
from django.conf import settings
from scipy import sparse

from tomography.exceptions import DenseAssemblyRefused, GeometryMismatch
from tomography.geometry import AngleSubset, GridLayout, ImageGrid, ScanGeometry, Sinogram
from tomography.siddon import system_blocks

DEFAULT_DENSE_LIMIT = 10**6


def _map_ordered(func, items: Sequence, threads: int) -> list:
    # executor.map conserva el orden de entrada: la reducción posterior es fija
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


def _resolve_subset(geometry: ScanGeometry, subset: AngleSubset | None) -> AngleSubset:
    if subset is None:
        return AngleSubset.full(geometry.n_theta)
    if subset.n_theta != geometry.n_theta:
        raise ValueError(f"Subconjunto para {subset.n_theta} ángulos, la geometría tiene {geometry.n_theta}")
    return subset


def forward_project(
    x: ImageGrid,
    geometry: ScanGeometry,
    subset: AngleSubset | None = None,
    *,
    threads: int = 1,
) -> np.ndarray:
    """A_S x: |S|·n_p integrales de línea, ángulos en el orden del subconjunto."""
    subset = _resolve_subset(geometry, subset)
    blocks = system_blocks(geometry, x.layout)
    parts = _map_ordered(lambda i: blocks[i] @ x.values, subset.indices, threads)
    return np.concatenate(parts)


def back_project(
    y: np.ndarray,
    geometry: ScanGeometry,
    subset: AngleSubset | None,
    layout: GridLayout,
    *,
    threads: int = 1,
) -> np.ndarray:
    """A_Sᵀ y con los mismos pesos que ``forward_project``."""
    subset = _resolve_subset(geometry, subset)
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != len(subset) * geometry.n_p:
        raise ValueError(f"y tiene {y.size} muestras; se esperaban {len(subset) * geometry.n_p}")
    blocks = system_blocks(geometry, layout)
    rows = y.reshape(len(subset), geometry.n_p)
    partials = _map_ordered(lambda k: blocks[subset.indices[k]].T @ rows[k], range(len(subset)), threads)
    return _ordered_sum(partials, layout.size)


def _ordered_sum(partials: list[np.ndarray], size: int) -> np.ndarray:
    out = np.zeros(size)
    for part in partials:
        out += part
    return out


def assemble_dense(geometry: ScanGeometry, layout: GridLayout, *, limit: int | None = None) -> np.ndarray:
    """Matriz explícita n × d (oráculo de tests); rehúsa si n·d supera ``limit``."""
    if limit is None:
        limit = getattr(settings, 'STOMO_DENSE_LIMIT', DEFAULT_DENSE_LIMIT)
    n, d = geometry.n_measurements, layout.size
    if n * d > limit:
        raise DenseAssemblyRefused(f"n·d = {n}·{d} = {n * d} supera el límite {limit}")
    return sparse.vstack(system_blocks(geometry, layout), format='csr').toarray()


class BlockLeastSquares:
    """
    Fidelidad de mínimos cuadrados separada en bloques (uno por ángulo).

    ``applications`` cuenta las aplicaciones de bloque (directas o adjuntas) y
    alimenta el reloj de trabajo de los solvers.
    """

    def __init__(self, blocks: Sequence, data: Sequence[np.ndarray], *, threads: int = 1):
        if len(blocks) != len(data) or not blocks:
            raise ValueError("Se necesita el mismo número (>0) de bloques y de datos")
        self.blocks = tuple(blocks)
        self.data = tuple(np.asarray(b, dtype=np.float64).ravel() for b in data)
        self.dim = self.blocks[0].shape[1]
        for block, b in zip(self.blocks, self.data):
            if block.shape != (b.size, self.dim):
                raise ValueError(f"Bloque {block.shape} incompatible con datos de largo {b.size}")
        self.threads = max(1, int(threads))
        self.applications = 0

    @classmethod
    def from_sinogram(cls, sinogram: Sinogram, layout: GridLayout, *, threads: int = 1) -> 'BlockLeastSquares':
        return cls(system_blocks(sinogram.geometry, layout), sinogram.blocks(), threads=threads)

    @classmethod
    def from_dense(cls, matrix: np.ndarray, data: np.ndarray, n_blocks: int, *, threads: int = 1) -> 'BlockLeastSquares':
        """Divide una matriz (n × d) en ``n_blocks`` bloques de filas iguales."""
        matrix = np.asarray(matrix, dtype=np.float64)
        data = np.asarray(data, dtype=np.float64).ravel()
        if matrix.shape[0] % n_blocks or data.size != matrix.shape[0]:
            raise ValueError(f"{matrix.shape[0]} filas no se dividen en {n_blocks} bloques iguales")
        return cls(np.split(matrix, n_blocks), np.split(data, n_blocks), threads=threads)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def full_subset(self) -> AngleSubset:
        return AngleSubset.full(self.n_blocks)

    def _check(self, x: np.ndarray, subset: AngleSubset) -> None:
        if subset.n_theta != self.n_blocks:
            raise ValueError(f"Subconjunto para {subset.n_theta} bloques; el problema tiene {self.n_blocks}")
        if x.shape != (self.dim,):
            raise GeometryMismatch(f"x tiene forma {x.shape}; se esperaba ({self.dim},)")

    def residuals(self, x: np.ndarray, subset: AngleSubset) -> list[np.ndarray]:
        self._check(x, subset)
        self.applications += len(subset)
        return _map_ordered(lambda i: self.blocks[i] @ x - self.data[i], subset.indices, self.threads)

    def _scale(self, subset: AngleSubset) -> float:
        return self.n_blocks / len(subset)

    def value(self, x: np.ndarray, subset: AngleSubset) -> float:
        squares = sum(float(np.dot(r, r)) for r in self.residuals(x, subset))
        return 0.5 * self._scale(subset) * squares

    def value_and_grad(self, x: np.ndarray, subset: AngleSubset) -> tuple[float, np.ndarray]:
        residuals = self.residuals(x, subset)
        squares = sum(float(np.dot(r, r)) for r in residuals)
        self.applications += len(subset)
        partials = _map_ordered(
            lambda k: self.blocks[subset.indices[k]].T @ residuals[k], range(len(subset)), self.threads
        )
        scale = self._scale(subset)
        return 0.5 * scale * squares, scale * _ordered_sum(partials, self.dim)

    def curvature(self, step: np.ndarray, subset: AngleSubset) -> float:
        """
        (n_theta/|S|)·||A_S step||², el doble del término cuadrático de f_S a lo
        largo de ``step``: f_S(x + step) = f_S(x) + ∇f_S(x)ᵀstep + curvature/2.
        """
        self._check(step, subset)
        self.applications += len(subset)
        images = _map_ordered(lambda i: self.blocks[i] @ step, subset.indices, self.threads)
        return self._scale(subset) * sum(float(np.dot(v, v)) for v in images)

    def full_value(self, x: np.ndarray) -> float:
        """½||Ax - b||² (no cuenta para el reloj de trabajo: solo telemetría)."""
        applications = self.applications
        try:
            return self.value(x, self.full_subset())
        finally:
            self.applications = applications

    def residual_norm(self, x: np.ndarray) -> float:
        return float(np.sqrt(2.0 * self.full_value(x)))

    def data_norm(self) -> float:
        return float(np.sqrt(sum(np.dot(b, b) for b in self.data)))


def subsampled_fidelity(
    x: ImageGrid,
    b: Sinogram,
    subset: AngleSubset | None = None,
    *,
    threads: int = 1,
) -> tuple[float, np.ndarray]:
    """Valor y gradiente de f_S en x (S = todos los ángulos si ``subset`` es None)."""
    subset = _resolve_subset(b.geometry, subset)
    b.geometry.check_layout(x.layout)
    problem = BlockLeastSquares.from_sinogram(b, x.layout, threads=threads)
    return problem.value_and_grad(x.values, subset)
