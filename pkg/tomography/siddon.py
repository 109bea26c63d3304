"""
Trazado de rayos tipo Siddon: longitudes exactas de intersección rayo-vóxel.

Cada ángulo produce un bloque A_i en formato CSR de forma (n_p, d). La
retroproyección usa el mismo bloque transpuesto, así que el par
proyector/retroproyector es exactamente adjunto.
"""
from __future__ import annotations

import logging
import math
from functools import lru_cache

import numpy as np
from scipy import sparse

from tomography.geometry import GeometryKind, GridLayout, ScanGeometry

logger = logging.getLogger(__name__)

# Componentes de dirección menores que esto se consideran cero (ángulos k·π/2)
_AXIS_SNAP = 1e-15


def ray_bundle(geometry: ScanGeometry, angle: float) -> tuple[np.ndarray, np.ndarray]:
    """Puntos de partida (R, 3) y direcciones unitarias (R, 3) de los rayos de un ángulo."""
    e_r = np.array([math.cos(angle), math.sin(angle), 0.0])
    e_u = np.array([-math.sin(angle), math.cos(angle), 0.0])
    e_v = np.array([0.0, 0.0, 1.0])
    u = (np.arange(geometry.det_cols) - 0.5 * (geometry.det_cols - 1)) * geometry.detector_spacing

    if geometry.kind is GeometryKind.PARALLEL_2D:
        starts = u[:, None] * e_u[None, :]
        directions = np.broadcast_to(e_r, starts.shape).copy()
    else:
        v = (np.arange(geometry.det_rows) - 0.5 * (geometry.det_rows - 1)) * geometry.detector_spacing
        vv, uu = np.meshgrid(v, u, indexing='ij')  # fila-mayor: índice = r * cols + c
        cells = (
            geometry.detector_distance * e_r[None, :]
            + uu.ravel()[:, None] * e_u[None, :]
            + vv.ravel()[:, None] * e_v[None, :]
        )
        source = -geometry.source_distance * e_r
        starts = np.broadcast_to(source, cells.shape).copy()
        directions = cells - source
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)

    directions[np.abs(directions) < _AXIS_SNAP] = 0.0
    return starts, directions


def trace_rays(
    starts: np.ndarray,
    directions: np.ndarray,
    layout: GridLayout,
    axes: tuple[int, ...] = (0, 1, 2),
) -> sparse.csr_matrix:
    """
    Matriz (R, d) con la longitud recorrida por cada rayo dentro de cada vóxel.

    Las direcciones deben ser unitarias. Los ejes no incluidos en ``axes`` se
    tratan como una sola capa (índice 0). Rayos que no tocan la grilla dan filas
    vacías.
    """
    n_rays = starts.shape[0]
    origin = np.asarray(layout.origin)
    voxel = np.asarray(layout.voxel_size)
    dims = layout.dims

    t_enter = np.full(n_rays, -np.inf)
    t_exit = np.full(n_rays, np.inf)
    crossings = []
    with np.errstate(divide='ignore', invalid='ignore'):
        for a in axes:
            planes = origin[a] + np.arange(dims[a] + 1) * voxel[a]
            p = starts[:, a]
            e = directions[:, a]
            t = (planes[None, :] - p[:, None]) / e[:, None]
            parallel = e == 0.0
            lo = np.minimum(t[:, 0], t[:, -1])
            hi = np.maximum(t[:, 0], t[:, -1])
            inside = (p > planes[0]) & (p < planes[-1])
            lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
            hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)
            t_enter = np.maximum(t_enter, lo)
            t_exit = np.minimum(t_exit, hi)
            t[parallel] = np.nan
            crossings.append(t)

    hit = np.flatnonzero(np.isfinite(t_enter) & np.isfinite(t_exit) & (t_exit > t_enter))
    if hit.size == 0:
        return sparse.csr_matrix((n_rays, layout.size))

    lo = t_enter[hit][:, None]
    hi = t_exit[hit][:, None]
    params = np.concatenate([c[hit] for c in crossings] + [lo, hi], axis=1)
    params = np.where(np.isnan(params), lo, params)
    params = np.clip(params, lo, hi)
    params.sort(axis=1)

    lengths = np.diff(params, axis=1)
    mid = 0.5 * (params[:, :-1] + params[:, 1:])

    index = np.zeros(mid.shape, dtype=np.int64)
    stride = {0: 1, 1: dims[0], 2: dims[0] * dims[1]}
    for a in axes:
        pos = starts[hit, a][:, None] + mid * directions[hit, a][:, None]
        cell = np.floor((pos - origin[a]) / voxel[a]).astype(np.int64)
        np.clip(cell, 0, dims[a] - 1, out=cell)
        index += cell * stride[a]

    keep = lengths > 1e-12 * float(voxel.min())
    rows = np.repeat(hit, lengths.shape[1]).reshape(lengths.shape)[keep]
    block = sparse.csr_matrix((lengths[keep], (rows, index[keep])), shape=(n_rays, layout.size))
    block.sum_duplicates()
    block.sort_indices()
    return block


def _traced_axes(geometry: ScanGeometry) -> tuple[int, ...]:
    return (0, 1) if geometry.kind is GeometryKind.PARALLEL_2D else (0, 1, 2)


def angle_block(geometry: ScanGeometry, layout: GridLayout, angle_index: int) -> sparse.csr_matrix:
    starts, directions = ray_bundle(geometry, geometry.angles[angle_index])
    return trace_rays(starts, directions, layout, _traced_axes(geometry))


@lru_cache(maxsize=8)
def system_blocks(geometry: ScanGeometry, layout: GridLayout) -> tuple[sparse.csr_matrix, ...]:
    """Bloques A_0 … A_{n_theta-1}; se calculan una vez por (geometría, grilla)."""
    geometry.check_layout(layout)
    blocks = tuple(angle_block(geometry, layout, i) for i in range(geometry.n_theta))
    logger.debug(
        "Matriz del sistema %s: %d ángulos, %d rayos/ángulo, %d vóxeles, nnz=%d",
        geometry.kind.value,
        geometry.n_theta,
        geometry.n_p,
        layout.size,
        sum(b.nnz for b in blocks),
    )
    return blocks
