"""Static graphs: identity and row-normalised Gaussian proximity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SchemaError

EARTH_RADIUS_M = 6_371_000.0


@dataclass
class AdjacencyMatrix:
    matrix: np.ndarray
    kind: str  # identity | proximity | learned
    name: str = ""


def distance_matrix(coords, kind: str = "xy") -> np.ndarray:
    """Pairwise distances in metres: Euclidean for x/y, great-circle for lat/lon (degrees)."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise SchemaError(f"coordinates must be N x 2, got {coords.shape}")
    if not np.all(np.isfinite(coords)):
        raise SchemaError("missing coordinate in area registry")
    if kind == "xy":
        diff = coords[:, None, :] - coords[None, :, :]
        d = np.sqrt((diff ** 2).sum(-1))
    elif kind == "latlon":
        lat, lon = np.radians(coords[:, 0]), np.radians(coords[:, 1])
        dlat = lat[:, None] - lat[None, :]
        dlon = lon[:, None] - lon[None, :]
        h = np.sin(dlat / 2) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlon / 2) ** 2
        d = 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    else:
        raise SchemaError(f"unknown coordinate kind {kind!r}")
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


def gaussian_kernel(distances, include_diagonal_in_sigma: bool = True) -> np.ndarray:
    """exp(-(d/sigma)^2) with sigma the population std of the distance entries."""
    d = np.asarray(distances, dtype=np.float64)
    if d.shape[0] == 1:
        return np.ones((1, 1))
    pool = d if include_diagonal_in_sigma else d[~np.eye(len(d), dtype=bool)]
    sigma = pool.std()
    if sigma == 0:
        return np.ones_like(d)
    return np.exp(-((d / sigma) ** 2))


def gaussian_proximity(distances, include_diagonal_in_sigma: bool = True) -> AdjacencyMatrix:
    k = gaussian_kernel(distances, include_diagonal_in_sigma)
    return AdjacencyMatrix(k / k.sum(axis=1, keepdims=True), "proximity", "proximity")


def identity_graph(n: int) -> AdjacencyMatrix:
    return AdjacencyMatrix(np.eye(n), "identity", "identity")


def dump_matrix(path, matrix, area_ids=None):
    m = np.asarray(matrix)
    ids = area_ids or [str(i) for i in range(len(m))]
    with open(path, "w") as fh:
        fh.write("area_id," + ",".join(ids) + "\n")
        for a, row in zip(ids, m):
            fh.write(a + "," + ",".join(repr(float(v)) for v in row) + "\n")
