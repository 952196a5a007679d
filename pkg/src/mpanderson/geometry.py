"""Lattice index arithmetic for n-particle cubes in Z^{nd}.

An n-particle configuration is a point x = (x_1, ..., x_n) with each
x_i in Z^d.  Cubes are max-norm balls over all n*d coordinates; the
boundary machinery uses graph (l1) distance 1, which is what the
resolvent identity sums over.  All functions here are pure and operate
on immutable values.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import CubeTooLargeError, ScaleOverflowError

# Dense eigensolves get slow and memory-hungry past a couple thousand
# sites; refuse outright enumeration beyond this unless overridden.
DEFAULT_SITE_CAP = 200_000

_UINT63_MAX = 2**63 - 1


@dataclass(frozen=True)
class Dims:
    """Problem dimensions: d lattice dimensions, n particles, N total cap."""

    d: int
    n: int
    N: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if not (1 <= self.n <= self.N):
            raise ValueError(f"need 1 <= n <= N, got n={self.n}, N={self.N}")

    @property
    def nd(self) -> int:
        return self.n * self.d


@dataclass(frozen=True, order=True)
class Site:
    """A point x = (x_1, ..., x_n) in (Z^d)^n, stored per particle."""

    coords: tuple[tuple[int, ...], ...]

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def d(self) -> int:
        return len(self.coords[0])

    @property
    def flat(self) -> tuple[int, ...]:
        return tuple(c for particle in self.coords for c in particle)

    @classmethod
    def of(cls, spec, dims: Dims) -> "Site":
        """Normalize an int, flat sequence, or nested sequence to a Site.

        Accepts e.g. 0 (d=1, n=1), (0, 10) as flat coordinates, or
        ((0,), (10,)) already nested.
        """
        if isinstance(spec, Site):
            site = spec
        elif isinstance(spec, (int, np.integer)):
            site = cls(((int(spec),),))
        else:
            seq = list(spec)
            if seq and isinstance(seq[0], (int, np.integer)):
                flat = [int(v) for v in seq]
                if len(flat) != dims.nd:
                    raise ValueError(
                        f"flat site needs {dims.nd} coordinates, got {len(flat)}")
                site = cls.from_flat(flat, dims.d)
            else:
                site = cls(tuple(tuple(int(c) for c in p) for p in seq))
        if site.n != dims.n or site.d != dims.d:
            raise ValueError(f"site {site.coords} does not match dims {dims}")
        return site

    @classmethod
    def from_flat(cls, flat: Sequence[int], d: int) -> "Site":
        flat = tuple(int(v) for v in flat)
        if len(flat) % d:
            raise ValueError(f"flat length {len(flat)} not divisible by d={d}")
        return cls(tuple(flat[i:i + d] for i in range(0, len(flat), d)))

    def particle(self, i: int) -> tuple[int, ...]:
        return self.coords[i]

    def permuted(self, perm: Sequence[int]) -> "Site":
        """Reorder particles: result particle i is self particle perm[i]."""
        return Site(tuple(self.coords[p] for p in perm))


@dataclass(frozen=True)
class Cube:
    """Max-norm ball C_L(u) = {x : |x - u| <= L} in Z^{nd}."""

    center: Site
    radius: int

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError(f"radius must be >= 0, got {self.radius}")

    @property
    def n(self) -> int:
        return self.center.n

    @property
    def d(self) -> int:
        return self.center.d

    @property
    def nd(self) -> int:
        return self.n * self.d

    @property
    def n_sites(self) -> int:
        return (2 * self.radius + 1) ** self.nd

    def contains(self, site: Site) -> bool:
        return max_norm(site, self.center) <= self.radius

    def contains_cube(self, other: "Cube") -> bool:
        return (max_norm(other.center, self.center)
                <= self.radius - other.radius)

    def label(self) -> str:
        return f"n{self.n}d{self.d}L{self.radius}@{self.center.flat}"


@dataclass(frozen=True)
class Annulus:
    """C_b(u) minus C_a(u); width is b - a."""

    center: Site
    inner: int
    outer: int

    def __post_init__(self):
        if not 0 <= self.inner < self.outer:
            raise ValueError(
                f"need 0 <= inner < outer, got {self.inner}, {self.outer}")

    @property
    def width(self) -> int:
        return self.outer - self.inner

    def sites(self) -> list[Site]:
        outer = cube_sites(Cube(self.center, self.outer))
        return [s for s in outer if max_norm(s, self.center) > self.inner]


def max_norm(x: Site, y: Site) -> int:
    """Max-norm distance over all n*d coordinates."""
    return max(abs(a - b) for a, b in zip(x.flat, y.flat))


def sym_distance(x: Site, y: Site) -> int:
    """Symmetrized distance: min over particle permutations of max-norm."""
    if x.n != y.n or x.d != y.d:
        raise ValueError("sites must share dimensions")
    best = None
    for perm in itertools.permutations(range(y.n)):
        dist = max_norm(x, y.permuted(perm))
        if best is None or dist < best:
            best = dist
            if best == 0:
                break
    return best


def cube_sites(cube: Cube, max_sites: int | None = None) -> list[Site]:
    """All sites of the cube in row-major lexicographic order.

    The ordering over the flattened nd coordinates is the canonical
    matrix index map and is fixed across runs.
    """
    cap = DEFAULT_SITE_CAP if max_sites is None else max_sites
    if cube.n_sites > cap:
        raise CubeTooLargeError(
            f"cube too large: {cube.n_sites} sites exceeds cap {cap}")
    L = cube.radius
    ranges = [range(c - L, c + L + 1) for c in cube.center.flat]
    d = cube.d
    return [Site.from_flat(flat, d) for flat in itertools.product(*ranges)]


def cube_site_array(cube: Cube, max_sites: int | None = None) -> np.ndarray:
    """Flattened coordinates of all cube sites, shape (n_sites, nd).

    Row order matches cube_sites.
    """
    cap = DEFAULT_SITE_CAP if max_sites is None else max_sites
    if cube.n_sites > cap:
        raise CubeTooLargeError(
            f"cube too large: {cube.n_sites} sites exceeds cap {cap}")
    L = cube.radius
    side = 2 * L + 1
    axes = [np.arange(c - L, c + L + 1, dtype=np.int64)
            for c in cube.center.flat]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1).reshape(side ** cube.nd, cube.nd)


def site_index(cube: Cube, site: Site) -> int:
    """Position of a site in the cube_sites ordering (mixed radix)."""
    L = cube.radius
    side = 2 * L + 1
    idx = 0
    for c, x in zip(cube.center.flat, site.flat):
        off = x - (c - L)
        if not 0 <= off < side:
            raise ValueError(f"site {site.flat} outside cube {cube.label()}")
        idx = idx * side + off
    return idx


def internal_boundary(cube: Cube) -> set[Site]:
    """Sites of the cube at graph distance 1 from the complement.

    For a full box these are the sites with some coordinate offset at
    +-L.  Radius-0 cubes have no interior/exterior pair and return the
    empty set by convention.
    """
    if cube.radius < 1:
        return set()
    L = cube.radius
    return {s for s in cube_sites(cube)
            if max(abs(a - b) for a, b in zip(s.flat, cube.center.flat)) == L}


def external_boundary(cube: Cube) -> set[Site]:
    """Sites outside the cube at graph distance 1 from it."""
    out = set()
    for inside, outside in boundary_edge_pairs(cube):
        out.add(outside)
    return out


def boundary_edge_pairs(cube: Cube) -> set[tuple[Site, Site]]:
    """Ordered pairs (v, v') with v inside, v' outside, |v - v'|_1 = 1."""
    L = cube.radius
    center = cube.center.flat
    nd = cube.nd
    d = cube.d
    pairs = set()
    for s in cube_sites(cube):
        flat = s.flat
        for j in range(nd):
            off = flat[j] - center[j]
            for step in (-1, 1):
                # a site exits the box by one step along axis j exactly
                # when its offset sits on that face (L = 0 is both faces)
                if off == step * L:
                    neighbor = list(flat)
                    neighbor[j] = flat[j] + step
                    pairs.add((s, Site.from_flat(neighbor, d)))
    return pairs


def internal_boundary_indices(cube: Cube) -> np.ndarray:
    """Indices (into cube_sites order) of the internal boundary."""
    if cube.radius < 1:
        return np.zeros(0, dtype=np.int64)
    arr = cube_site_array(cube)
    center = np.array(cube.center.flat, dtype=np.int64)
    offs = np.abs(arr - center).max(axis=1)
    return np.nonzero(offs == cube.radius)[0].astype(np.int64)


def core_indices(cube: Cube, core_radius: int) -> np.ndarray:
    """Indices of sites within max-norm core_radius of the center."""
    arr = cube_site_array(cube)
    center = np.array(cube.center.flat, dtype=np.int64)
    offs = np.abs(arr - center).max(axis=1)
    return np.nonzero(offs <= core_radius)[0].astype(np.int64)


def single_particle_projections(cube: Cube) -> list[Cube]:
    """The single-particle cubes C_L(u_i), one per particle."""
    return [Cube(Site((cube.center.coords[i],)), cube.radius)
            for i in range(cube.n)]


def projection_region(cube: Cube) -> list[tuple[int, ...]]:
    """Sorted union of the single-particle projection cubes' sites.

    These are d-dimensional lattice points; the random field only ever
    needs to be sampled here.
    """
    region = set()
    for proj in single_particle_projections(cube):
        for s in cube_sites(proj):
            region.add(s.coords[0])
    return sorted(region)


# -- scale sequence ----------------------------------------------------------

ALPHA = Fraction(3, 2)


def _next_scale(L: int) -> int:
    # floor(L^(3/2)) + 1 via exact integer arithmetic
    nxt = math.isqrt(L ** 3) + 1
    if nxt > _UINT63_MAX:
        raise ScaleOverflowError(f"scale too deep: L_k+1 = {nxt} > 2^63-1")
    return nxt


@dataclass
class ScaleSequence:
    """Length scales L_0, L_1, ... with L_{k+1} = floor(L_k^{3/2}) + 1."""

    L0: int
    alpha: Fraction = ALPHA

    def __post_init__(self):
        if self.L0 < 3:
            raise ValueError(f"L0 must be >= 3, got {self.L0}")
        if self.alpha != ALPHA:
            raise ValueError("the scale exponent is fixed at 3/2")
        self.values = [self.L0]

    def at(self, k: int) -> int:
        if k < 0:
            raise ValueError("scale index must be >= 0")
        while len(self.values) <= k:
            self.values.append(_next_scale(self.values[-1]))
        return self.values[k]


def scale_at(seq: ScaleSequence, k: int) -> int:
    return seq.at(k)


# -- PI / FI decomposability -------------------------------------------------

@dataclass(frozen=True)
class PiFiVerdict:
    """PI with the witness bipartition of particle indices, or FI."""

    kind: str  # "PI" or "FI"
    partition: tuple[tuple[int, ...], tuple[int, ...]] | None = None

    @property
    def is_pi(self) -> bool:
        return self.kind == "PI"


def _projection_gap(cube: Cube, i: int, j: int) -> int:
    """Distance between the projection cubes of particles i and j."""
    diff = max(abs(a - b) for a, b in
               zip(cube.center.coords[i], cube.center.coords[j]))
    return max(0, diff - 2 * cube.radius)


def classify_pi_fi(cube: Cube, r0: int) -> PiFiVerdict:
    """Decide whether the particle system on the cube decomposes.

    PI iff some nonempty bipartition (J, J^c) of the particle indices
    keeps every cross pair of single-particle projection cubes at
    distance >= 2L + r0, so the two subsystems cannot interact.  The
    witness returned is the lexicographically first such J (J always
    contains particle 0).  Single-particle cubes are FI by convention.
    """
    n = cube.n
    if n < 2:
        return PiFiVerdict("FI")
    threshold = 2 * cube.radius + r0
    others = range(1, n)
    subsets = []
    for size in range(0, n - 1):
        for extra in itertools.combinations(others, size):
            subsets.append((0,) + extra)
    for J in sorted(subsets):
        Jc = tuple(i for i in range(n) if i not in J)
        if not Jc:
            continue
        if all(_projection_gap(cube, i, j) >= threshold
               for i in J for j in Jc):
            return PiFiVerdict("PI", (J, Jc))
    return PiFiVerdict("FI")


def sym_distance_matrix(sites: np.ndarray, ref: Site, n: int, d: int) -> np.ndarray:
    """Symmetrized distance from every row of a flat site array to ref.

    sites has shape (m, n*d); returns shape (m,) int64.  Vectorized over
    the n! particle permutations, which stay tiny at desk scale.
    """
    m = sites.shape[0]
    best = np.full(m, np.iinfo(np.int64).max, dtype=np.int64)
    ref_parts = [np.array(ref.coords[i], dtype=np.int64) for i in range(n)]
    parts = sites.reshape(m, n, d)
    for perm in itertools.permutations(range(n)):
        permuted_ref = np.stack([ref_parts[p] for p in perm])  # (n, d)
        dist = np.abs(parts - permuted_ref[None, :, :]).reshape(m, n * d).max(axis=1)
        np.minimum(best, dist, out=best)
    return best
