"""Single-particle random fields and their sample-mean decomposition.

Values are produced by a stateless counter-based construction: the
value at a lattice site is a pure function of (seed, realization index,
site coordinates).  Overlapping regions therefore agree on shared
sites, which is what the two-volume eigenvalue-spacing experiment
needs, and ensemble workers can draw any site in any order.

The mixing function is the SplitMix64 finalizer, applied as a chain
over the key components.  A per-site numpy bit generator would give the
same guarantees but costs ~20us per site to instantiate; the vectorized
chain does tens of millions of sites per second.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtri

from .errors import ConditionalUnavailableError, FieldCoverageError
from .geometry import Cube, Site, cube_sites

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

_DOMAIN_FIELD = 0
_DOMAIN_MEAN = 1


def _mix64(z):
    """SplitMix64 finalizer; accepts uint64 scalars or arrays."""
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _fold(h, v):
    return _mix64(h ^ v)


def _uniform01(h):
    """Map uint64 lanes to doubles strictly inside (0, 1)."""
    return (h >> np.uint64(11)).astype(np.float64) * 2.0 ** -53 + 2.0 ** -54


@dataclass(frozen=True)
class DisorderSpec:
    """Law of the i.i.d. site potential plus the master seed.

    kind is one of gaussian(mu, sigma), uniform(a, b), bernoulli(p, w)
    or constant(c); constant is the degenerate deterministic case used
    by baselines such as the zero potential.
    """

    kind: str
    params: tuple[float, ...]
    seed: int

    def __post_init__(self):
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if self.kind == "gaussian":
            mu, sigma = self.params
            if sigma <= 0:
                raise ValueError("gaussian sigma must be > 0")
        elif self.kind == "uniform":
            a, b = self.params
            if not a < b:
                raise ValueError("uniform needs a < b")
        elif self.kind == "bernoulli":
            p, w = self.params
            if not 0 < p < 1:
                raise ValueError("bernoulli p must be in (0, 1)")
            if w <= 0:
                raise ValueError("bernoulli w must be > 0")
        elif self.kind == "constant":
            if len(self.params) != 1:
                raise ValueError("constant takes a single value")
        else:
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    @classmethod
    def gaussian(cls, mu: float, sigma: float, seed: int) -> "DisorderSpec":
        return cls("gaussian", (float(mu), float(sigma)), seed)

    @classmethod
    def uniform(cls, a: float, b: float, seed: int) -> "DisorderSpec":
        return cls("uniform", (float(a), float(b)), seed)

    @classmethod
    def bernoulli(cls, p: float, w: float, seed: int) -> "DisorderSpec":
        return cls("bernoulli", (float(p), float(w)), seed)

    @classmethod
    def constant(cls, c: float, seed: int = 0) -> "DisorderSpec":
        return cls("constant", (float(c),), seed)

    @property
    def is_nonnegative(self) -> bool:
        if self.kind == "gaussian":
            return False
        if self.kind == "uniform":
            return self.params[0] >= 0
        if self.kind == "bernoulli":
            return True
        return self.params[0] >= 0

    def describe(self) -> str:
        args = ", ".join(repr(p) for p in self.params)
        return f"{self.kind}({args})"


def _normalize_region(region) -> tuple[tuple[int, ...], ...]:
    if isinstance(region, Cube):
        if region.n != 1:
            raise ValueError("field regions are single-particle; "
                             "project multi-particle cubes first")
        points = [s.coords[0] for s in cube_sites(region)]
    else:
        points = []
        for p in region:
            if isinstance(p, Site):
                if p.n != 1:
                    raise ValueError("field regions are single-particle")
                points.append(p.coords[0])
            elif isinstance(p, (int, np.integer)):
                points.append((int(p),))
            else:
                points.append(tuple(int(c) for c in p))
    if not points:
        raise ValueError("region must be nonempty")
    dims = {len(p) for p in points}
    if len(dims) != 1:
        raise ValueError("region points must share a dimension")
    return tuple(sorted(set(points)))


@dataclass
class FieldSample:
    """One disorder realization V(., omega) on a finite region of Z^d."""

    region: tuple[tuple[int, ...], ...]
    values: np.ndarray

    def __post_init__(self):
        if len(self.region) != len(self.values):
            raise ValueError("one value per region site required")
        self._index = {p: i for i, p in enumerate(self.region)}

    @property
    def size(self) -> int:
        return len(self.region)

    def value(self, point) -> float:
        if isinstance(point, Site):
            point = point.coords[0]
        elif isinstance(point, (int, np.integer)):
            point = (int(point),)
        else:
            point = tuple(int(c) for c in point)
        try:
            return float(self.values[self._index[point]])
        except KeyError:
            raise FieldCoverageError(
                f"field region too small for cube projection: {point} missing")

    def lookup_indices(self, points: np.ndarray) -> np.ndarray:
        """Indices into values for an (m, d) array of points."""
        out = np.empty(len(points), dtype=np.int64)
        for i, row in enumerate(points):
            key = tuple(int(c) for c in row)
            idx = self._index.get(key)
            if idx is None:
                raise FieldCoverageError(
                    f"field region too small for cube projection: {key} missing")
            out[i] = idx
        return out

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {p: float(v) for p, v in zip(self.region, self.values)}

    def max_abs(self) -> float:
        return float(np.abs(self.values).max())

    def with_values(self, values: np.ndarray) -> "FieldSample":
        return FieldSample(self.region, np.asarray(values, dtype=np.float64))


@dataclass
class MeanFluctDecomposition:
    """Sample mean over the region plus per-site fluctuations."""

    region: tuple[tuple[int, ...], ...]
    mean: float
    eta: np.ndarray

    @property
    def fluct(self) -> dict[tuple[int, ...], float]:
        return {p: float(v) for p, v in zip(self.region, self.eta)}

    def reconstruct(self) -> FieldSample:
        return FieldSample(self.region, self.mean + self.eta)


@dataclass
class ModulusEstimate:
    """Empirical continuity modulus of the sample-mean distribution."""

    t_grid: tuple[float, ...]
    nu_hat: tuple[float, ...]
    trials: int

    def at(self, t: float) -> float:
        return self.nu_hat[self.t_grid.index(t)]


def _site_lanes(spec: DisorderSpec, coords: np.ndarray, realization,
                domain: int = _DOMAIN_FIELD) -> np.ndarray:
    """uint64 hash lane per (site, realization) combination.

    coords is (m, d) int64; realization is a scalar or an (m,) array.
    """
    h = _fold(_mix64(np.uint64(spec.seed)), np.uint64(domain))
    h = _fold(h, np.asarray(realization, dtype=np.int64).astype(np.uint64))
    h = np.broadcast_to(h, (coords.shape[0],)).copy() if h.ndim == 0 else h
    for j in range(coords.shape[1]):
        h = _fold(h, coords[:, j].astype(np.uint64))
    return h


def _transform(spec: DisorderSpec, lanes: np.ndarray) -> np.ndarray:
    if spec.kind == "constant":
        return np.full(lanes.shape, spec.params[0], dtype=np.float64)
    u = _uniform01(lanes)
    if spec.kind == "gaussian":
        mu, sigma = spec.params
        return mu + sigma * ndtri(u)
    if spec.kind == "uniform":
        a, b = spec.params
        return a + (b - a) * u
    p, w = spec.params
    return np.where(u < p, w, 0.0)


def sample_field(spec: DisorderSpec, region, realization_index: int) -> FieldSample:
    """Draw the i.i.d. field on a region for one realization.

    The value at each site is fully determined by (seed, realization,
    site coordinates); enumeration order and region shape are
    irrelevant, so overlapping regions agree where they intersect.
    """
    points = _normalize_region(region)
    coords = np.array(points, dtype=np.int64)
    lanes = _site_lanes(spec, coords, realization_index)
    return FieldSample(points, _transform(spec, lanes))


def decompose(fieldsample: FieldSample) -> MeanFluctDecomposition:
    """Split V into its sample mean and mean-zero fluctuations."""
    xi = float(fieldsample.values.mean())
    return MeanFluctDecomposition(fieldsample.region, xi,
                                  fieldsample.values - xi)


def resample_mean_conditional(fieldsample: FieldSample, spec: DisorderSpec,
                              new_draw_index: int) -> FieldSample:
    """Redraw the sample mean while keeping the fluctuations fixed.

    Valid only for Gaussian disorder, where the sample mean over a
    region is Normal(mu, sigma^2/|Q|) and independent of the
    fluctuation vector, so the output follows the original joint law.
    """
    if spec.kind != "gaussian":
        raise ConditionalUnavailableError(
            "conditional independence unavailable for "
            f"{spec.kind} disorder; only gaussian supported")
    mu, sigma = spec.params
    dec = decompose(fieldsample)
    # fold the region into the key so distinct regions decorrelate
    h = _fold(_mix64(np.uint64(spec.seed)), np.uint64(_DOMAIN_MEAN))
    h = _fold(h, np.uint64(np.int64(new_draw_index)))
    for p in fieldsample.region:
        for c in p:
            h = _fold(h, np.uint64(np.int64(c)))
    u = float(_uniform01(np.asarray(h)))
    xi_new = mu + sigma / np.sqrt(fieldsample.size) * float(ndtri(u))
    return fieldsample.with_values(xi_new + dec.eta)


def sample_mean_population(spec: DisorderSpec, region, trials: int,
                           first_realization: int = 0) -> np.ndarray:
    """Sample means xi_Q for `trials` consecutive realizations.

    Streams one site at a time so memory stays at O(trials).
    """
    points = _normalize_region(region)
    coords = np.array(points, dtype=np.int64)
    realizations = np.arange(first_realization, first_realization + trials,
                             dtype=np.int64)
    acc = np.zeros(trials, dtype=np.float64)
    for row in coords:
        lanes = _site_lanes(spec, np.broadcast_to(row, (trials, len(row))),
                            realizations)
        acc += _transform(spec, lanes)
    return acc / len(points)


def empirical_modulus(samples: np.ndarray, t_grid: Sequence[float]) -> ModulusEstimate:
    """Largest empirical CDF increment over windows of each width t.

    Computed exactly over all window positions (the sup is attained just
    below a sample point), then forced monotone in t.
    """
    xs = np.sort(np.asarray(samples, dtype=np.float64))
    n = len(xs)
    lo = np.searchsorted(xs, xs, side="left")
    order = np.argsort(t_grid)
    nu_sorted = np.empty(len(t_grid))
    for rank, idx in enumerate(order):
        t = t_grid[idx]
        if t < 0:
            raise ValueError("modulus widths must be >= 0")
        if t == 0:
            nu_sorted[rank] = 0.0
            continue
        hi = np.searchsorted(xs, xs + t, side="right")
        nu_sorted[rank] = (hi - lo).max() / n
    nu_sorted = np.minimum(np.maximum.accumulate(nu_sorted), 1.0)
    nu = np.empty(len(t_grid))
    nu[order] = nu_sorted
    return ModulusEstimate(tuple(float(t) for t in t_grid),
                           tuple(float(v) for v in nu), n)


def estimate_modulus(spec: DisorderSpec, region, t_grid: Sequence[float],
                     trials: int) -> ModulusEstimate:
    """Monte Carlo estimate of the sample-mean continuity modulus.

    For i.i.d. laws the marginal distribution of xi_Q stands in for the
    conditional one; for Gaussian disorder the two coincide because the
    mean is independent of the fluctuations.
    """
    if trials < 1000:
        raise ValueError("modulus estimation needs at least 1000 trials")
    xi = sample_mean_population(spec, region, trials)
    return empirical_modulus(xi, t_grid)


def gaussian_modulus_bound(t: float, region_size: int, sigma: float) -> float:
    """Closed-form modulus bound for Gaussian disorder.

    The sample mean over |Q| sites is Normal with standard deviation
    sigma/sqrt(|Q|), whose density is bounded by sqrt(|Q|)/(sigma
    sqrt(2 pi)); any CDF increment over a width-t window is at most t
    times that.
    """
    return t * np.sqrt(region_size) / (sigma * np.sqrt(2.0 * np.pi))
