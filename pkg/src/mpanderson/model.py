"""Finite-volume n-particle Hamiltonians H = -Delta + U + V on cubes.

The kinetic part is the graph Laplacian with diagonal 2nd and hopping
-1, truncated to the cube by simply dropping edges that leave it (the
diagonal keeps its full value everywhere).  With that normalization the
clean operator's spectrum sits inside [0, 4nd].  The interaction U sums
a compactly supported pair potential over particle pairs; V adds the
single-particle random field once per particle.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import IO

import numpy as np
import scipy.sparse as sp

from .disorder import FieldSample
from .errors import CapacityError
from .geometry import Cube, Site, cube_site_array, projection_region

# Dense storage up to this dimension, CSR above it.
DENSE_CAP = 4096


@dataclass(frozen=True)
class InteractionSpec:
    """Pair potential table Phi(0..r0); Phi vanishes beyond its range r0."""

    r0: int
    phi: tuple[float, ...]

    def __post_init__(self):
        if self.r0 < 0:
            raise ValueError("interaction range must be >= 0")
        if len(self.phi) != self.r0 + 1:
            raise ValueError(
                f"phi table needs r0+1={self.r0 + 1} entries, got {len(self.phi)}")
        if any(v < 0 for v in self.phi):
            raise ValueError("pair potential values must be nonnegative")

    @classmethod
    def none(cls) -> "InteractionSpec":
        return cls(0, (0.0,))

    @classmethod
    def from_table(cls, phi) -> "InteractionSpec":
        phi = tuple(float(v) for v in phi)
        return cls(len(phi) - 1, phi)

    @property
    def is_zero(self) -> bool:
        return all(v == 0.0 for v in self.phi)

    def at(self, distance: int) -> float:
        return self.phi[distance] if distance <= self.r0 else 0.0


@dataclass
class HamiltonianMatrix:
    """Cube-restricted Hamiltonian, row order matching cube_sites."""

    cube: Cube
    entries: np.ndarray | sp.csr_matrix
    diag_potential: np.ndarray  # U + V per site, kept for audits

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def is_dense(self) -> bool:
        return isinstance(self.entries, np.ndarray)

    def dense(self) -> np.ndarray:
        if self.is_dense:
            return self.entries
        if self.dim > 20_000:
            raise CapacityError(
                f"refusing to densify a {self.dim}-dimensional matrix")
        return self.entries.toarray()

    def norm_inf(self) -> float:
        if self.is_dense:
            return float(np.abs(self.entries).sum(axis=1).max())
        return float(abs(self.entries).sum(axis=1).max())

    def fingerprint(self) -> str:
        if self.is_dense:
            payload = self.entries.tobytes()
        else:
            payload = self.entries.data.tobytes() + self.entries.indices.tobytes()
        return hashlib.sha256(payload).hexdigest()[:16]

    def potential_at(self, site: Site) -> float:
        from .geometry import site_index
        return float(self.diag_potential[site_index(self.cube, site)])

    def write_coo(self, handle: IO[str]) -> None:
        """Dump as `i j value` rows with 17 significant digits."""
        if self.is_dense:
            mat = sp.coo_matrix(self.entries)
        else:
            mat = self.entries.tocoo()
        for i, j, v in zip(mat.row, mat.col, mat.data):
            handle.write(f"{i} {j} {v:.17g}\n")


def _laplacian_sparse(cube: Cube) -> sp.csr_matrix:
    # Kronecker sum of the 1-D truncated path Laplacian over all nd axes
    side = 2 * cube.radius + 1
    ones = np.ones(side - 1) if side > 1 else np.zeros(0)
    axis = sp.diags([2.0 * np.ones(side), -ones, -ones], [0, 1, -1],
                    format="csr")
    eye_axis = sp.identity(side, format="csr")
    lap = None
    for _ in range(cube.nd):
        if lap is None:
            lap = axis.copy()
        else:
            lap = sp.kron(lap, eye_axis, format="csr") \
                + sp.kron(sp.identity(lap.shape[0], format="csr"), axis,
                          format="csr")
    return lap.tocsr()


def assemble_laplacian(cube: Cube, max_sites: int | None = None,
                       dense_cap: int = DENSE_CAP) -> HamiltonianMatrix:
    """The potential-free operator -Delta restricted to the cube."""
    # triggers the site-count cap before any allocation
    cube_site_array(cube, max_sites)
    lap = _laplacian_sparse(cube)
    entries = lap.toarray() if cube.n_sites <= dense_cap else lap
    return HamiltonianMatrix(cube, entries,
                             np.zeros(cube.n_sites, dtype=np.float64))


def interaction_potential(x: Site, spec: InteractionSpec) -> float:
    """Sum of the pair potential over unordered particle pairs of x.

    Pair distance is the max-norm on Z^d.  Contributions are summed in
    sorted order so the result is invariant under particle relabeling,
    bit for bit.
    """
    vals = []
    n = x.n
    for i in range(n):
        for j in range(i + 1, n):
            dist = max(abs(a - b) for a, b in zip(x.coords[i], x.coords[j]))
            if dist <= spec.r0:
                vals.append(spec.phi[dist])
    total = 0.0
    for v in sorted(vals):
        total += v
    return total


def total_potential(x: Site, fieldsample: FieldSample) -> float:
    """Sum of the single-particle field over the particles of x.

    Coinciding particle positions count the same site value with
    multiplicity.  Values are summed in sorted order (see
    interaction_potential).
    """
    vals = sorted(fieldsample.value(x.coords[i]) for i in range(x.n))
    total = 0.0
    for v in vals:
        total += v
    return total


def _diagonal_potential(cube: Cube, fieldsample: FieldSample | None,
                        interaction: InteractionSpec | None) -> np.ndarray:
    sites = cube_site_array(cube)  # (m, nd)
    m = sites.shape[0]
    n, d = cube.n, cube.d
    parts = sites.reshape(m, n, d)
    diag = np.zeros(m, dtype=np.float64)

    if fieldsample is not None:
        vals = np.empty((m, n), dtype=np.float64)
        for i in range(n):
            idx = fieldsample.lookup_indices(parts[:, i, :])
            vals[:, i] = fieldsample.values[idx]
        # sorted summation keeps the diagonal invariant under particle
        # swaps; for n < 8 numpy accumulates sequentially, matching the
        # scalar total_potential path exactly
        vals.sort(axis=1)
        diag += np.add.reduce(vals, axis=1)

    if interaction is not None and not interaction.is_zero and n >= 2:
        phi = np.asarray(interaction.phi + (0.0,), dtype=np.float64)
        pair_vals = []
        for i in range(n):
            for j in range(i + 1, n):
                dist = np.abs(parts[:, i, :] - parts[:, j, :]).max(axis=1)
                pair_vals.append(
                    np.where(dist <= interaction.r0,
                             phi[np.minimum(dist, interaction.r0 + 1)], 0.0))
        pairs = np.stack(pair_vals, axis=1)
        pairs.sort(axis=1)
        diag += np.add.reduce(pairs, axis=1)

    return diag


def assemble_hamiltonian(cube: Cube, fieldsample: FieldSample | None,
                         interaction: InteractionSpec | None = None,
                         max_sites: int | None = None,
                         dense_cap: int = DENSE_CAP) -> HamiltonianMatrix:
    """Assemble H = -Delta + U + V on the cube with simple truncation.

    The field must cover the union of the single-particle projection
    cubes; missing sites raise FieldCoverageError.
    """
    cube_site_array(cube, max_sites)
    diag = _diagonal_potential(cube, fieldsample, interaction)
    lap = _laplacian_sparse(cube)
    if cube.n_sites <= dense_cap:
        entries = lap.toarray()
        entries[np.diag_indices_from(entries)] += diag
    else:
        entries = (lap + sp.diags(diag, format="csr")).tocsr()
    return HamiltonianMatrix(cube, entries, diag)


def field_region_for(cube: Cube) -> list[tuple[int, ...]]:
    """The single-particle region a field must cover for this cube."""
    return projection_region(cube)
