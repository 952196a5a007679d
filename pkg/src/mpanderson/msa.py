"""Multi-scale-analysis predicate layer.

Non-singularity, resonance, tunnelling, singular-cube counting, the
initial-scale constants, and the subharmonic radial-descent bound.
Verdicts are pure functions of (cube, energy, sample); merging resonant
cubes into the singular class is a deliberate, recorded convention:
every counting argument treats resonance as bad, so the merge is
conservative.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError
from .geometry import (Cube, ScaleSequence, Site, classify_pi_fi,
                       core_indices, cube_site_array, cube_sites,
                       internal_boundary_indices, max_norm, sym_distance)
from .model import HamiltonianMatrix, InteractionSpec, assemble_hamiltonian
from .spectral import SpectralDecomposition, diagonalize, dist_to_spectrum, green_block

log = logging.getLogger(__name__)

BETA = 0.5
MAX_ENERGY_GRID = 100_000


@dataclass(frozen=True)
class MsaParams:
    """Parameters of the scale induction.

    The scale exponent alpha = 3/2 and resonance exponent beta = 1/2
    are fixed.  gamma_exponent_quarter selects the decay-rate inner
    exponent 1/4 (default) versus the 1/8 variant; both conventions
    appear in the source material, so the choice is recorded in every
    output.
    """

    m: float
    p: float
    L0: int
    N: int
    E_star: float | None = None
    gamma_exponent_quarter: bool = True

    def __post_init__(self):
        if self.m <= 0:
            raise ValueError("mass m must be positive")
        if self.p <= 0:
            raise ValueError("exponent p must be positive")
        if self.L0 < 3:
            raise ValueError("L0 must be >= 3")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.E_star is not None and self.E_star <= 0:
            raise ValueError("E_star must be positive")

    @property
    def gamma_inner_exponent(self) -> float:
        return 0.25 if self.gamma_exponent_quarter else 0.125

    def scales(self) -> ScaleSequence:
        return ScaleSequence(self.L0)


def validate_ds_exponent(params: MsaParams, d: int) -> None:
    """The probability-scaling comparisons need p > Nd alpha/(2-alpha)."""
    needed = params.N * d * 1.5 / 0.5
    if params.p <= needed:
        raise ValueError(
            f"p={params.p} too small for scale-decay comparisons; "
            f"need p > Nd*alpha/(2-alpha) = {needed}")


def gamma(m: float, L: int, n: int, N: int, quarter: bool = True) -> float:
    """Decay rate gamma(m, L, n) = m (1 + L^{-1/4})^{N - n + 1}.

    Shrinks toward m as L grows; the power counts how many more
    particles could still be added to the subsystem.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if not 1 <= n <= N:
        raise ValueError(f"need 1 <= n <= N, got n={n}, N={N}")
    exponent = 0.25 if quarter else 0.125
    return m * (1.0 + L ** (-exponent)) ** (N - n + 1)


def core_radius(L: int) -> int:
    """floor(L^{2/3}) by exact integer arithmetic (largest r: r^3 <= L^2)."""
    target = L * L
    r = round(target ** (1.0 / 3.0))
    while r ** 3 > target:
        r -= 1
    while (r + 1) ** 3 <= target:
        r += 1
    return r


def resonance_width(L: int) -> float:
    """e^{-sqrt(L)}: the energy window that counts as resonant at scale L."""
    return math.exp(-(L ** BETA))


def is_resonant(decomp: SpectralDecomposition, E: float, L: int) -> bool:
    """True iff E is within e^{-sqrt(L)} of the cube spectrum.

    L is the minimum side radius (for plain cubes, the radius).
    """
    return dist_to_spectrum(decomp, E) <= resonance_width(L)


@dataclass(frozen=True)
class SingularityVerdict:
    """Outcome of a non-singularity test at one (cube, energy)."""

    cube_label: str
    energy: float
    L: int
    n: int
    is_ns: bool
    observed_max: float
    threshold: float
    resonant: bool = False

    def to_json(self) -> dict:
        return {
            "cube": self.cube_label,
            "E": self.energy,
            "L": self.L,
            "n": self.n,
            "verdict": "NS" if self.is_ns else "S",
            "observed_max": self.observed_max,
            "threshold": self.threshold,
            "resonant": self.resonant,
        }


def is_ns(H: HamiltonianMatrix, decomp: SpectralDecomposition, E: float,
          params: MsaParams) -> SingularityVerdict:
    """Non-singularity verdict for a cube at energy E.

    The cube is non-singular when every Green entry from the core
    (radius floor(L^{2/3}) around the center) to the internal boundary
    is at most e^{-gamma(m, L, n) L}.  Resonant cubes are classified
    singular without solving; the resonant flag records that branch.
    """
    cube = H.cube
    L = cube.radius
    if L < 1:
        raise ValueError("non-singularity needs radius >= 1")
    n = cube.n
    threshold = math.exp(-gamma(params.m, L, n, params.N,
                                params.gamma_exponent_quarter) * L)
    if is_resonant(decomp, E, L):
        return SingularityVerdict(cube.label(), float(E), L, n, False,
                                  math.inf, threshold, resonant=True)
    rows = core_indices(cube, core_radius(L))
    cols = internal_boundary_indices(cube)
    block = green_block(decomp, E, rows, cols)
    observed = float(np.abs(block).max())
    return SingularityVerdict(cube.label(), float(E), L, n,
                              observed <= threshold, observed, threshold)


@dataclass(frozen=True)
class InitialConstants:
    m: float
    E_star: float
    C: float


def initial_constants(N: int, d: int, L0: int) -> InitialConstants:
    """Initial-scale mass, energy window top, and their product constant.

    m = (14 N^N + 6 N d) / sqrt(L0), E* = 12 N d * 2^{N+1} m, and
    C = E* sqrt(L0).  These are proof-sized values, far larger than
    anything a desk-scale experiment resolves; they seed defaults and
    consistency checks.
    """
    if L0 < 3:
        raise ValueError("L0 must be >= 3")
    base = 14.0 * N ** N + 6.0 * N * d
    m = base * L0 ** -0.5
    e_star = (12.0 * N * d) * (2.0 ** (N + 1) * m)
    c = 12.0 * N * d * 2.0 ** (N + 1) * base
    return InitialConstants(m, e_star, c)


def ds_probability_bound(L: int, p: float, n: int, N: int) -> float:
    """Scale-decay target L^{-p 2^{N-n+1}} for the two-cube event."""
    return float(L) ** (-p * 2.0 ** (N - n + 1))


def ds_probability_bound_2p(L: int, p: float) -> float:
    """The flat L^{-2p} form used by the per-scale counting lemmas."""
    return float(L) ** (-2.0 * p)


def energy_grid(lo: float, hi: float, L: int,
                max_points: int = MAX_ENERGY_GRID) -> np.ndarray:
    """Discretize [lo, hi] with step e^{-sqrt(L)}/4.

    A quarter of the resonance width at scale L, so no resonance window
    can be straddled undetected by an exists-E scan.
    """
    if hi < lo:
        raise ValueError("empty energy interval")
    step = resonance_width(L) / 4.0
    count = int(math.floor((hi - lo) / step)) + 1
    if count > max_points:
        raise CapacityError(
            f"energy grid would need {count} points (cap {max_points}); "
            "narrow the interval or lower the scale")
    return lo + step * np.arange(count)


def _contained_subcube_centers(cube: Cube, sub_radius: int) -> list[Site]:
    margin = cube.radius - sub_radius
    if margin < 0:
        return []
    return cube_sites(Cube(cube.center, margin))


def is_tunnelling(cube: Cube, fieldsample, E_grid, k: int, params: MsaParams,
                  interaction: InteractionSpec | None = None) -> bool:
    """Does some grid energy see two far-apart singular sub-cubes?

    Sub-cubes have radius L_k from the params scale sequence, lie fully
    inside the cube, and must sit at symmetrized distance >= 2 N L_k
    from each other.  The field sample must cover the cube's
    single-particle projection region.
    """
    L_k = params.scales().at(k)
    centers = _contained_subcube_centers(cube, L_k)
    if len(centers) < 2:
        return False
    separation = 2 * params.N * L_k
    if max(max_norm(c, cube.center) for c in centers) * 2 < separation:
        # no pair of admissible centers can ever be far enough apart
        return False
    decomps = []
    for center in centers:
        sub = Cube(center, L_k)
        H = assemble_hamiltonian(sub, fieldsample, interaction)
        decomps.append((center, H, diagonalize(H)))
    for E in np.atleast_1d(E_grid):
        singular = [center for center, H, dec in decomps
                    if not is_ns(H, dec, float(E), params).is_ns]
        if _has_separated_pair(singular, separation):
            return True
    return False


def _has_separated_pair(centers: list[Site], min_sep: int) -> bool:
    for a, b in itertools.combinations(centers, 2):
        if sym_distance(a, b) >= min_sep:
            return True
    return False


def max_separated_count(centers: list[Site], min_sep: int, cap: int = 5) -> int:
    """Largest pairwise min_sep-separated subset, exact up to cap.

    Depth-first search over lexicographically ordered centers; once cap
    compatible centers are found the search stops, so the answer is
    exact for counts below cap and reported as cap beyond it.  The
    counting arguments only ever threshold at 2 and 4.
    """
    ordered = sorted(centers)
    best = 0

    def extend(chosen: list[Site], start: int) -> int:
        nonlocal best
        best = max(best, len(chosen))
        if best >= cap:
            return best
        for i in range(start, len(ordered)):
            cand = ordered[i]
            if all(sym_distance(cand, c) >= min_sep for c in chosen):
                extend(chosen + [cand], i + 1)
                if best >= cap:
                    return best
        return best

    extend([], 0)
    return best


def count_singular_cubes(big_cube: Cube, fieldsample, E: float, kind: str,
                         L_sub: int, params: MsaParams,
                         interaction: InteractionSpec | None = None,
                         cap: int = 5) -> int:
    """Maximal number of separated singular sub-cubes of the given kind.

    kind is "PI" or "FI"; sub-cubes of radius L_sub inside the big cube
    are classified by particle-system decomposability, tested for
    singularity at E, and packed at pairwise symmetrized distance
    >= 2 N L_sub.
    """
    if kind not in ("PI", "FI"):
        raise ValueError("kind must be 'PI' or 'FI'")
    if L_sub >= big_cube.radius:
        raise ValueError("sub-scale must be smaller than the cube radius")
    r0 = interaction.r0 if interaction is not None else 0
    singular = []
    for center in _contained_subcube_centers(big_cube, L_sub):
        sub = Cube(center, L_sub)
        if classify_pi_fi(sub, r0).kind != kind:
            continue
        H = assemble_hamiltonian(sub, fieldsample, interaction)
        if not is_ns(H, diagonalize(H), E, params).is_ns:
            singular.append(center)
    return max_separated_count(singular, 2 * params.N * L_sub, cap=cap)


# -- subharmonic radial descent ----------------------------------------------

def subharmonic_descent_bound(L: int, ell: int, q: float, W_A: int,
                              r: int = 0) -> float:
    """Contraction factor q^{floor((L - r - W_A)/ell) - 1}.

    With W_A = L the exponent is -1 and the factor is >= 1; the bound
    has degenerated and a warning is logged.
    """
    if not 0.0 < q <= 1.0:
        raise ValueError("q must lie in (0, 1]")
    if ell < 1:
        raise ValueError("ell must be >= 1")
    if not 0 <= W_A <= L:
        raise ValueError("need 0 <= W_A <= L")
    exponent = (L - r - W_A) // ell - 1
    if exponent < 0:
        log.warning("radial descent bound degenerate: exponent %d < 0",
                    exponent)
    return q ** exponent


@dataclass
class SubharmonicReport:
    is_subharmonic: bool
    counterexample: Site | None
    cover_width: int
    degenerate_cover: bool
    conclusion_holds: bool | None
    conclusion_counterexample: int | None
    checked_radii: tuple[int, ...] = ()
    note: str = ""


def _radial_cover_width(cube: Cube, S: set[Site], c: float, ell: int) -> int:
    """Total width of annuli covering the c*ell-neighborhood of S."""
    if not S:
        return 0
    reach = int(math.ceil(c * ell))
    radii = set()
    arr = cube_site_array(cube)
    center = np.array(cube.center.flat, dtype=np.int64)
    offs = np.abs(arr - center).max(axis=1)
    s_flat = np.array([s.flat for s in S], dtype=np.int64)
    dist_to_s = np.abs(arr[:, None, :] - s_flat[None, :, :]).max(axis=2).min(axis=1)
    for radius in offs[dist_to_s <= reach]:
        radii.add(int(radius))
    if not radii:
        return 0
    ordered = sorted(radii)
    width = 0
    run_start = ordered[0]
    prev = ordered[0]
    for r in ordered[1:] + [None]:
        if r is None or r != prev + 1:
            # run [run_start, prev]: C_prev minus C_{run_start-1}
            width += prev - run_start + 1
            if r is not None:
                run_start = r
        prev = r if r is not None else prev
    return width


def verify_subharmonic_descent(cube: Cube, values, ell: int, q: float,
                               S=(), c: float = 1.0,
                               rtol: float = 1e-9) -> SubharmonicReport:
    """Check the subharmonicity definition, then the descent conclusion.

    values maps cube sites to (real) function values: a dict keyed by
    Site, or an array aligned with cube_sites order.  The conclusion is
    tested against a radial annulus cover of the c*ell-neighborhood of
    S; when that cover spans the whole radius the bound is vacuous and
    the report says so.
    """
    sites = cube_sites(cube)
    if isinstance(values, dict):
        f = np.array([abs(float(values[s])) for s in sites])
    else:
        f = np.abs(np.asarray(values, dtype=np.float64))
        if len(f) != len(sites):
            raise ValueError("values must cover every cube site")
    S = set(S)
    L = cube.radius
    index = {s: i for i, s in enumerate(sites)}
    arr = cube_site_array(cube)
    center = np.array(cube.center.flat, dtype=np.int64)
    offs = np.abs(arr - center).max(axis=1)

    is_sub = True
    witness = None
    for i, s in enumerate(sites):
        if s in S:
            lo, hi = ell, int((1 + c) * ell)
            dists = np.abs(arr - np.array(s.flat)).max(axis=1)
            shell = (dists >= lo) & (dists <= hi)
            if not shell.any():
                continue  # vacuous: no admissible comparison sites
            if f[i] > q * f[shell].max() * (1.0 + rtol):
                is_sub, witness = False, s
                break
        else:
            if offs[i] > L - ell:
                continue  # the ell-ball around s leaves the cube
            dists = np.abs(arr - np.array(s.flat)).max(axis=1)
            sphere = dists == ell
            if f[i] > q * f[sphere].max() * (1.0 + rtol):
                is_sub, witness = False, s
                break

    width = _radial_cover_width(cube, S, c, ell)
    degenerate = width >= L
    conclusion = None
    bad_radius = None
    radii: list[int] = []
    if is_sub and not degenerate:
        fmax = f.max()
        conclusion = True
        candidates = sorted({0, *range(width + ell, L - width + ell + 1)})
        for r in candidates:
            if r > L:
                continue
            radii.append(r)
            w_eff = width if r == 0 else width
            factor = subharmonic_descent_bound(L, ell, q, w_eff, r=r)
            lhs = f[offs <= r].max()
            if lhs > factor * fmax * (1.0 + rtol):
                conclusion = False
                bad_radius = r
                break
    note = "degenerate cover" if degenerate else ""
    return SubharmonicReport(is_subharmonic=is_sub, counterexample=witness,
                             cover_width=width, degenerate_cover=degenerate,
                             conclusion_holds=conclusion,
                             conclusion_counterexample=bad_radius,
                             checked_radii=tuple(radii), note=note)


@dataclass
class AnnuliImplicationReport:
    """Empirical record of the annulus-cover non-singularity implication."""

    premises_hold: bool
    conclusion_holds: bool | None
    n_singular: int
    cover_width: int
    verdict: SingularityVerdict | None


def check_annuli_implication(H: HamiltonianMatrix, decomp, fieldsample,
                             E: float, params: MsaParams, sub_radius: int,
                             interaction: InteractionSpec | None = None,
                             c: float = 1.0) -> AnnuliImplicationReport:
    """Check: non-resonant outer cube + annulus-covered singular set
    implies the outer cube is non-singular.

    The implication is part of the scale-induction machinery; this
    artifact measures it rather than proving it, so a violation is
    logged as a warning and reported, never asserted.
    """
    cube = H.cube
    singular_centers = []
    for center in _contained_subcube_centers(cube, sub_radius):
        sub = Cube(center, sub_radius)
        H_sub = assemble_hamiltonian(sub, fieldsample, interaction)
        if not is_ns(H_sub, diagonalize(H_sub), E, params).is_ns:
            singular_centers.append(center)
    width = _radial_cover_width(cube, set(singular_centers), c, sub_radius)
    premises = (not is_resonant(decomp, E, cube.radius)) and width < cube.radius
    if not premises:
        return AnnuliImplicationReport(False, None, len(singular_centers),
                                       width, None)
    verdict = is_ns(H, decomp, E, params)
    if not verdict.is_ns:
        log.warning("annulus-cover implication violated on %s at E=%g "
                    "(%d singular sub-cubes, cover width %d)",
                    cube.label(), E, len(singular_centers), width)
    return AnnuliImplicationReport(True, verdict.is_ns, len(singular_centers),
                                   width, verdict)
