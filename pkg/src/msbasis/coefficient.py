"""Scalar conductivity fields, sampled piecewise constant per fine triangle.

Every constructor evaluates the coefficient at triangle centroids, so all
stiffness assemblies are exact for the sampled field.  Constructors are
pure functions of (mesh, parameters, seed): building the same field twice
yields bit-identical values.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .mesh import TwoLevelMesh

MULTISCALE_EPSILONS = (1 / 5, 1 / 13, 1 / 17, 1 / 31, 1 / 65)


@dataclass(frozen=True)
class CoefficientField:
    """Positive conductivity value per fine triangle."""

    spec: str
    values: np.ndarray
    lam_min: float
    lam_max: float

    @property
    def contrast(self) -> float:
        return self.lam_max / self.lam_min

    def spec_hash(self) -> bytes:
        """32-byte digest identifying the sampled field (mesh included)."""
        digest = hashlib.sha256()
        digest.update(self.spec.encode())
        digest.update(np.ascontiguousarray(self.values).tobytes())
        return digest.digest()


def _make_field(spec: str, values: np.ndarray) -> CoefficientField:
    lam_min = float(values.min())
    lam_max = float(values.max())
    if lam_min <= 0.0:
        raise ValueError(f"coefficient must be strictly positive, got min {lam_min}")
    return CoefficientField(spec=spec, values=values, lam_min=lam_min, lam_max=lam_max)


def constant_field(mesh: TwoLevelMesh, c: float) -> CoefficientField:
    if c <= 0.0:
        raise ValueError(f"constant coefficient must be positive, got {c}")
    values = np.full(mesh.num_triangles, float(c))
    return _make_field(f"constant:{c!r}", values)


def multiscale_coefficient(x, y):
    """Deterministic oscillatory conductivity with five incommensurate scales."""
    e1, e2, e3, e4, e5 = MULTISCALE_EPSILONS
    two_pi = 2.0 * np.pi
    total = (
        (1.1 + np.sin(two_pi * x / e1)) / (1.1 + np.sin(two_pi * y / e1))
        + (1.1 + np.sin(two_pi * y / e2)) / (1.1 + np.cos(two_pi * x / e2))
        + (1.1 + np.cos(two_pi * x / e3)) / (1.1 + np.sin(two_pi * y / e3))
        + (1.1 + np.sin(two_pi * y / e4)) / (1.1 + np.cos(two_pi * x / e4))
        + (1.1 + np.cos(two_pi * x / e5)) / (1.1 + np.sin(two_pi * y / e5))
        + np.sin(4.0 * x**2 * y**2)
        + 1.0
    )
    return total / 6.0


def multiscale_field(mesh: TwoLevelMesh) -> CoefficientField:
    cx, cy = mesh.triangle_centroids().T
    return _make_field("multiscale", multiscale_coefficient(cx, cy))


# ---------------------------------------------------------------------- #
# seeded random field
# ---------------------------------------------------------------------- #

_U64 = np.uint64


def splitmix64(seed: int, count: int) -> np.ndarray:
    """First ``count`` outputs of the SplitMix64 stream started at ``seed``."""
    steps = np.arange(1, count + 1, dtype=_U64)
    z = _U64(seed & 0xFFFFFFFFFFFFFFFF) + steps * _U64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    return z ^ (z >> _U64(31))


def _standard_normals(seed: int, count: int) -> np.ndarray:
    """Box-Muller normals from the SplitMix64 stream.

    Uniforms are ((bits >> 11) + 1) * 2^-53 in (0, 1]; each pair of stream
    outputs yields (r cos, r sin) assigned to consecutive positions.
    """
    pairs = (count + 1) // 2
    bits = splitmix64(seed, 2 * pairs)
    u = ((bits >> _U64(11)).astype(np.float64) + 1.0) * 2.0**-53
    u1, u2 = u[0::2], u[1::2]
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    out = np.empty(2 * pairs)
    out[0::2] = radius * np.cos(angle)
    out[1::2] = radius * np.sin(angle)
    return out[:count]


def random_field(mesh: TwoLevelMesh, grid_n: int, seed: int) -> CoefficientField:
    """|gaussian lattice field| + 0.5, bilinearly interpolated to centroids.

    Normals live on the (grid_n+1)^2 lattice, consumed in row-major node
    order (x fastest), matching the mesh node convention.
    """
    if grid_n < 1:
        raise ValueError("grid_n must be >= 1")
    m = grid_n + 1
    lattice = _standard_normals(seed, m * m).reshape(m, m)  # [row=y, col=x]

    cx, cy = mesh.triangle_centroids().T
    fx = cx * grid_n
    fy = cy * grid_n
    ix = np.minimum(fx.astype(np.int64), grid_n - 1)
    iy = np.minimum(fy.astype(np.int64), grid_n - 1)
    tx = fx - ix
    ty = fy - iy
    interp = (
        lattice[iy, ix] * (1 - tx) * (1 - ty)
        + lattice[iy, ix + 1] * tx * (1 - ty)
        + lattice[iy + 1, ix] * (1 - tx) * ty
        + lattice[iy + 1, ix + 1] * tx * ty
    )
    values = np.abs(interp) + 0.5
    return _make_field(f"random:{grid_n}:{seed}", values)


# ---------------------------------------------------------------------- #
# high-contrast inclusions
# ---------------------------------------------------------------------- #

@dataclass(frozen=True)
class Inclusion:
    """Axis-aligned rectangle [x0,x1] x [y0,y1] with an override value."""

    x0: float
    y0: float
    x1: float
    y1: float
    value: float


def default_inclusions() -> list[Inclusion]:
    """Channel/patch layout shipped with the package (see data/high_contrast.cfg)."""
    text = resources.files("msbasis").joinpath("data/high_contrast.cfg").read_text()
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [float(p) for p in line.split(",")]
        rows.append(Inclusion(*parts))
    return rows


def high_contrast_field(mesh: TwoLevelMesh, inclusions: list[Inclusion] | None = None) -> CoefficientField:
    """Multiscale background plus conductive rectangles (later rows win)."""
    if inclusions is None:
        inclusions = default_inclusions()
    cx, cy = mesh.triangle_centroids().T
    values = multiscale_coefficient(cx, cy)
    spec_parts = ["high_contrast"]
    for inc in inclusions:
        if inc.value <= 0.0:
            raise ValueError(f"inclusion value must be positive, got {inc.value}")
        inside = (cx >= inc.x0) & (cx <= inc.x1) & (cy >= inc.y0) & (cy <= inc.y1)
        values = np.where(inside, inc.value, values)
        spec_parts.append(f"{inc.x0!r},{inc.y0!r},{inc.x1!r},{inc.y1!r},{inc.value!r}")
    return _make_field(";".join(spec_parts), values)
