"""Problemas pequeños compartidos por los tests."""
import numpy as np

from tomography.geometry import GeometryKind, GridLayout, ImageGrid, desk_geometry, make_angles
from tomography.operators import BlockLeastSquares


def parallel_setup(n: int = 8, n_theta: int = 4, **kwargs):
    layout = GridLayout((n, n))
    geometry = desk_geometry(GeometryKind.PARALLEL_2D, make_angles(n_theta), layout, **kwargs)
    return layout, geometry


def cone_setup(n: int = 16, n_theta: int = 6):
    layout = GridLayout((n, n, n))
    geometry = desk_geometry(GeometryKind.CONE_BEAM_3D, make_angles(n_theta), layout)
    return layout, geometry


def random_image(layout: GridLayout, rng: np.random.Generator) -> ImageGrid:
    return ImageGrid.from_layout(layout, rng.random(layout.size))


def dense_problem(seed: int = 0, rows_per_block: int = 2, n_blocks: int = 4, dim: int = 4):
    """Mínimos cuadrados densos (n_blocks·rows_per_block × dim) con A de rango completo."""
    rng = np.random.default_rng(seed)
    matrix = rng.standard_normal((n_blocks * rows_per_block, dim))
    x_true = rng.random(dim)
    data = matrix @ x_true + 0.1 * rng.standard_normal(n_blocks * rows_per_block)
    return matrix, data, BlockLeastSquares.from_dense(matrix, data, n_blocks)
