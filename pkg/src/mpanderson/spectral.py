"""Eigen-decomposition, Green functions, and resolvent-identity checks.

Green functions are computed two independent ways: direct shifted
linear solves (green_entries) and the eigenfunction expansion
(green_block).  The agreement of the two routes is a standing test
invariant; predicate code may use either but the check code never
collapses them into one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CapacityError, EigensolveError, ResonantEnergyError
from .geometry import (Cube, Site, boundary_edge_pairs, cube_site_array,
                       cube_sites, internal_boundary_indices, max_norm,
                       site_index)
from .model import HamiltonianMatrix

EIGH_CAP = 4096
_SOLVE_RTOL = 1e-9


@dataclass
class SpectralDecomposition:
    """Ascending eigenvalues with orthonormal eigenvectors as columns.

    Column j of eigenvectors belongs to eigenvalues[j]; rows follow the
    cube_sites ordering of the source cube.
    """

    cube: Cube
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    def states_in(self, lo: float, hi: float) -> np.ndarray:
        """Indices of eigenvalues inside the closed interval [lo, hi]."""
        return np.nonzero((self.eigenvalues >= lo)
                          & (self.eigenvalues <= hi))[0]


@dataclass
class GreenFunctionSlice:
    """Requested entries of (H - E)^{-1} at a real non-resonant energy."""

    energy: float
    entries: dict[tuple[Site, Site], float]

    def value(self, x: Site, y: Site) -> float:
        if (x, y) in self.entries:
            return self.entries[(x, y)]
        return self.entries[(y, x)]


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # first significantly nonzero component of every column made positive
    scale = np.abs(vectors).max(axis=0)
    mask = np.abs(vectors) > 1e-12 * scale[None, :]
    first = mask.argmax(axis=0)
    signs = np.sign(vectors[first, np.arange(vectors.shape[1])])
    signs[signs == 0.0] = 1.0
    return vectors * signs[None, :]


def diagonalize(H: HamiltonianMatrix, validate: bool = True) -> SpectralDecomposition:
    """Full symmetric eigensolve of a cube Hamiltonian.

    Deterministic up to machine arithmetic; eigenvector signs are fixed
    by making the first nonzero component positive.
    """
    if H.dim > EIGH_CAP:
        raise CapacityError(
            f"dense eigensolve capped at {EIGH_CAP}, matrix has dim {H.dim}")
    dense = H.dense()
    try:
        eigenvalues, eigenvectors = np.linalg.eigh(dense)
    except np.linalg.LinAlgError as exc:
        raise EigensolveError(
            f"eigensolve failed for matrix {H.fingerprint()}: {exc}") from exc
    eigenvectors = _fix_signs(eigenvectors)
    decomp = SpectralDecomposition(H.cube, eigenvalues, eigenvectors)
    if validate:
        _validate_decomposition(dense, decomp, H.norm_inf())
    return decomp


def _validate_decomposition(dense: np.ndarray, decomp: SpectralDecomposition,
                            row_norm: float) -> None:
    lam, V = decomp.eigenvalues, decomp.eigenvectors
    residual = np.abs(dense @ V - V * lam[None, :]).max(axis=0)
    allowed = 1e-9 * (1.0 + np.abs(lam)) * max(row_norm, 1.0)
    if np.any(residual > allowed):
        raise EigensolveError("eigensolve failed: residual out of tolerance")
    dim = decomp.dim
    if dim <= 2048:
        gram_err = np.abs(V.T @ V - np.eye(dim)).max()
    else:
        probe = np.linspace(0, dim - 1, 64).astype(int)
        gram_err = np.abs(V[:, probe].T @ V[:, probe] - np.eye(len(probe))).max()
    if gram_err > 1e-9:
        raise EigensolveError("eigensolve failed: eigenvectors not orthonormal")


def dist_to_spectrum(decomp: SpectralDecomposition, E: float) -> float:
    return float(np.abs(decomp.eigenvalues - E).min())


def resonance_floor(H: HamiltonianMatrix) -> float:
    return 1e-12 * max(1.0, H.norm_inf())


def _solve_columns(H: HamiltonianMatrix, E: float,
                   col_indices: np.ndarray) -> np.ndarray:
    """Columns of (H - E)^{-1}, via LU below the dense cap, MINRES above.

    MINRES rather than CG because the shifted operator is symmetric but
    indefinite once E enters the spectrum's convex hull.
    """
    dim = H.dim
    rhs = np.zeros((dim, len(col_indices)))
    rhs[col_indices, np.arange(len(col_indices))] = 1.0
    if H.is_dense or dim <= EIGH_CAP:
        shifted = H.dense() - E * np.eye(dim)
        try:
            lu, piv = sla.lu_factor(shifted)
        except (sla.LinAlgError, ValueError) as exc:
            raise ResonantEnergyError(f"resonant energy E={E}") from exc
        sol = sla.lu_solve((lu, piv), rhs)
    else:
        shifted = (H.entries - E * sp.identity(dim, format="csr")).tocsr()
        diag = shifted.diagonal()
        precond = spla.LinearOperator(
            (dim, dim), matvec=lambda v: v / np.where(np.abs(diag) > 1e-8,
                                                      diag, 1.0))
        sol = np.empty_like(rhs)
        for k in range(rhs.shape[1]):
            vec, info = spla.minres(shifted, rhs[:, k], rtol=1e-12,
                                    maxiter=50 * dim, M=precond)
            if info != 0:
                raise ResonantEnergyError(
                    f"resonant energy E={E}: iterative solve stalled")
            sol[:, k] = vec
    # mandatory residual check, both paths
    resid = np.abs(shifted @ sol - rhs).max()
    if not np.isfinite(sol).all() or resid > _SOLVE_RTOL * (1.0 + np.abs(sol).max()):
        raise ResonantEnergyError(
            f"resonant energy E={E}: solve residual {resid:.3e}")
    return sol


def green_entries(H: HamiltonianMatrix, E: float, pairs) -> GreenFunctionSlice:
    """Green function entries G(x, y) for the requested site pairs.

    One linear solve per distinct column y.  Near-singular shifts are
    reported as ResonantEnergyError; callers are expected to screen E
    with a resonance test first.
    """
    pairs = list(pairs)
    cols: dict[Site, int] = {}
    for _, y in pairs:
        if y not in cols:
            cols[y] = site_index(H.cube, y)
    col_sites = list(cols)
    sol = _solve_columns(H, E, np.array([cols[y] for y in col_sites]))
    col_pos = {y: k for k, y in enumerate(col_sites)}
    entries = {}
    for x, y in pairs:
        entries[(x, y)] = float(sol[site_index(H.cube, x), col_pos[y]])
    return GreenFunctionSlice(float(E), entries)


def green_block(decomp: SpectralDecomposition, E: float,
                row_idx: np.ndarray, col_idx: np.ndarray,
                floor: float = 1e-12) -> np.ndarray:
    """G restricted to rows x columns, via the eigenfunction expansion."""
    gap = np.abs(decomp.eigenvalues - E).min()
    if gap <= floor:
        raise ResonantEnergyError(
            f"resonant energy E={E}: distance to spectrum {gap:.3e}")
    weights = 1.0 / (decomp.eigenvalues - E)
    V = decomp.eigenvectors
    return (V[row_idx] * weights[None, :]) @ V[col_idx].T


@dataclass
class CombesThomasReport:
    holds: bool
    eta: float
    worst_ratio: float
    worst_pair: tuple[Site, Site]
    worst_ratio_l1: float


def combes_thomas_check(H: HamiltonianMatrix, E: float, eta: float,
                        decomp: SpectralDecomposition | None = None) -> CombesThomasReport:
    """Check |G(x,y)| <= 2/eta * exp(-eta/(12 D) |x-y|) over all pairs.

    Requires eta in (0, 1] with dist(E, spectrum) >= eta.  D is the
    number of lattice coordinates nd.  The exponent distance is the
    max-norm; the l1-norm ratio is reported alongside since the two
    differ by at most a dimensional factor.
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    if decomp is None:
        decomp = diagonalize(H)
    gap = dist_to_spectrum(decomp, E)
    if gap < eta:
        raise ValueError(
            f"eta too large: dist(E, spectrum)={gap:.6g} < eta={eta:.6g}")
    dim = H.dim
    all_idx = np.arange(dim)
    G = np.abs(green_block(decomp, E, all_idx, all_idx))
    coords = cube_site_array(H.cube)
    # accumulate per axis to avoid a (dim, dim, nd) intermediate
    dist_max = np.zeros((dim, dim))
    dist_l1 = np.zeros((dim, dim))
    for j in range(coords.shape[1]):
        axis_diff = np.abs(coords[:, None, j] - coords[None, :, j]).astype(np.float64)
        np.maximum(dist_max, axis_diff, out=dist_max)
        dist_l1 += axis_diff
    D = H.cube.nd
    bound = (2.0 / eta) * np.exp(-(eta / (12.0 * D)) * dist_max)
    bound_l1 = (2.0 / eta) * np.exp(-(eta / (12.0 * D)) * dist_l1)
    ratio = G / bound
    worst_flat = int(ratio.argmax())
    i, j = divmod(worst_flat, dim)
    sites = cube_sites(H.cube)
    ratio_l1 = float((G / bound_l1).max())
    worst = float(ratio[i, j])
    return CombesThomasReport(holds=worst <= 1.0, eta=eta, worst_ratio=worst,
                              worst_pair=(sites[i], sites[j]),
                              worst_ratio_l1=ratio_l1)


@dataclass
class GriReport:
    """Outcome of a geometric-resolvent-identity evaluation."""

    direct: float
    boundary_sum: float
    residual: float
    inequality_holds: bool
    n_terms: int


def verify_gri(H_big: HamiltonianMatrix, H_sub: HamiltonianMatrix, E: float,
               x: Site, y: Site) -> GriReport:
    """Evaluate both sides of the geometric resolvent identity.

    For x inside the sub-cube and y in the big cube but outside the
    sub-cube, G_big(x, y) equals the sum over sub-cube boundary edges
    (v, v') of G_sub(x, v) * G_big(v', y); the hopping of the cut edges
    is -1, which cancels the sign of the second resolvent identity.
    Also checks the derived inequality with the |internal boundary|
    prefactor.
    """
    big, sub = H_big.cube, H_sub.cube
    if not big.contains_cube(sub):
        raise ValueError("sub-cube must be contained in the big cube")
    if not sub.contains(x):
        raise ValueError("x must lie in the sub-cube")
    if sub.contains(y) or not big.contains(y):
        raise ValueError("y must lie in the big cube outside the sub-cube")

    pairs = [(v, vp) for v, vp in boundary_edge_pairs(sub) if big.contains(vp)]
    g_sub = green_entries(H_sub, E, [(x, v) for v, _ in pairs])
    cols_big = [(vp, y) for _, vp in pairs] + [(x, y)]
    g_big = green_entries(H_big, E, cols_big)

    boundary_sum = 0.0
    max_sub = 0.0
    max_big = 0.0
    for v, vp in pairs:
        a = g_sub.value(x, v)
        b = g_big.value(vp, y)
        boundary_sum += a * b
        max_sub = max(max_sub, abs(a))
        max_big = max(max_big, abs(b))
    direct = g_big.value(x, y)
    n_boundary = max(len({v for v, _ in pairs}), 1)
    inequality = abs(direct) <= n_boundary * max_sub * max_big * (1.0 + 1e-9)
    return GriReport(direct=direct, boundary_sum=boundary_sum,
                     residual=abs(direct - boundary_sum),
                     inequality_holds=bool(inequality), n_terms=len(pairs))
