"""
Contenedor binario autodescriptivo para volúmenes y sinogramas.

Formato:
  8 bytes    magic  b"STOMO\\x00\\x00\\x01"
  4 bytes    largo del encabezado (uint32 little-endian)
  N bytes    encabezado JSON UTF-8 (claves ordenadas)
  resto      datos float64 little-endian, orden fila-mayor

El campo "kind" del encabezado distingue "image" de "sinogram".
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError

from tomography.exceptions import ContainerError
from tomography.geometry import ImageGrid, ScanGeometry, Sinogram

MAGIC = b"STOMO\x00\x00\x01"
DTYPE_TAG = "f64"
_LENGTH = struct.Struct("<I")

IMAGE_FIELDS = {'kind', 'dtype', 'dims', 'voxel_size', 'origin'}
SINOGRAM_FIELDS = {'kind', 'dtype', 'geometry', 'shape'}


def _encode(header: dict, values: np.ndarray) -> bytes:
    raw = json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8')
    data = np.ascontiguousarray(values, dtype='<f8').tobytes()
    return MAGIC + _LENGTH.pack(len(raw)) + raw + data


def _write(path, payload: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)
    return path


def write_image(path, image: ImageGrid) -> Path:
    header = {
        'kind': 'image',
        'dtype': DTYPE_TAG,
        'dims': list(image.dims),
        'voxel_size': list(image.voxel_size),
        'origin': list(image.origin),
    }
    return _write(path, _encode(header, image.values))


def write_sinogram(path, sinogram: Sinogram) -> Path:
    header = {
        'kind': 'sinogram',
        'dtype': DTYPE_TAG,
        'geometry': sinogram.geometry.to_header(),
        'shape': [sinogram.geometry.n_theta, sinogram.geometry.n_p],
    }
    return _write(path, _encode(header, sinogram.values))


def read_container(path) -> tuple[dict, np.ndarray]:
    """Lee encabezado y datos sin interpretar el tipo de contenido."""
    payload = Path(path).read_bytes()
    if payload[: len(MAGIC)] != MAGIC:
        raise ContainerError(f"{path}: magic inválido")
    start = len(MAGIC) + _LENGTH.size
    if len(payload) < start:
        raise ContainerError(f"{path}: archivo truncado")
    (length,) = _LENGTH.unpack_from(payload, len(MAGIC))
    try:
        header = json.loads(payload[start:start + length].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: encabezado ilegible ({exc})") from exc
    if header.get('dtype') != DTYPE_TAG:
        raise ContainerError(f"{path}: dtype no soportado {header.get('dtype')!r}")
    body = payload[start + length:]
    if len(body) % 8:
        raise ContainerError(f"{path}: datos truncados ({len(body)} bytes)")
    return header, np.frombuffer(body, dtype='<f8').astype(np.float64)


def _check_fields(path, header: dict, kind: str, allowed: set) -> None:
    if header.get('kind') != kind:
        raise ContainerError(f"{path}: se esperaba kind={kind!r}, llegó {header.get('kind')!r}")
    unknown = set(header) - allowed
    if unknown:
        raise ContainerError(f"{path}: campos desconocidos en el encabezado: {sorted(unknown)}")


def read_image(path) -> ImageGrid:
    header, values = read_container(path)
    _check_fields(path, header, 'image', IMAGE_FIELDS)
    try:
        return ImageGrid(tuple(header['dims']), tuple(header['voxel_size']), tuple(header['origin']), values)
    except (KeyError, ValidationError) as exc:
        raise ContainerError(f"{path}: imagen inconsistente ({exc})") from exc


def read_sinogram(path) -> Sinogram:
    header, values = read_container(path)
    _check_fields(path, header, 'sinogram', SINOGRAM_FIELDS)
    try:
        geometry = ScanGeometry.from_header(header['geometry'])
        return Sinogram(geometry, values)
    except (KeyError, TypeError, ValidationError) as exc:
        raise ContainerError(f"{path}: sinograma inconsistente ({exc})") from exc
