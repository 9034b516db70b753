"""Random-walk-bridge theory and simulation, gap statistics, node-count
distribution checks, and pair margin / fluctuation metrics.

Conventions used throughout:

* Gap variances use the zero-mean second moment (the gap distribution is
  modeled as mean-zero, so sigma^2 = mean(y^2), not the centered sample
  variance).
* Per-component gradient profiles are treated as separate bridge samples
  and aggregated by RMS.
* Pair-level "midpoint" statistics index the node sequence at
  k* = floor(K/2); pairs with K = 0 carry no midpoint information and are
  skipped by the aggregators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np
from scipy import stats as scipy_stats

from .pathwalk import PathProfile

__all__ = [
    "GapDistribution",
    "BridgeStats",
    "PairMetrics",
    "bridge_deviation_theory",
    "bridge_simulate",
    "gaussian_increments",
    "empirical_increments",
    "midpoint_deviation_theory_2layer",
    "gap_variance_theory",
    "empirical_gap_sigma",
    "pooled_gaps",
    "node_count_check",
    "node_count_chisquare",
    "NodeCountCheck",
    "deflection_midpoint",
    "deflection_at_t",
    "deflection_rms",
    "gap_deviation_empirical",
    "margin",
    "pair_margin",
    "pair_fluctuation",
]


# ---------------------------------------------------------------------------
# Bridge theory and simulation


def bridge_deviation_theory(k: int, K: int, sigma: float) -> float:
    """Std of the pinned walk's deviation from the endpoint chord at step k:
    sigma * sqrt(k (1 - k/K)).  Computed as sqrt(k(K-k)/K) so the k <-> K-k
    symmetry is exact in floating point."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if not 0 <= k <= K:
        raise ValueError(f"k={k} out of range [0, {K}]")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    return sigma * math.sqrt((k * (K - k)) / K)


def gaussian_increments(sigma: float = 1.0) -> Callable:
    """Increment sampler drawing i.i.d. N(0, sigma^2)."""
    def sample(rng: np.random.Generator, size):
        return rng.normal(0.0, sigma, size)
    return sample


def empirical_increments(samples: np.ndarray) -> Callable:
    """Increment sampler resampling (with replacement) from pooled gaps."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise ValueError("empty sample pool")
    def sample(rng: np.random.Generator, size):
        return rng.choice(samples, size=size, replace=True)
    return sample


@dataclass(frozen=True)
class BridgeStats:
    """Monte Carlo summary of the pinned random walk T_k."""

    K: int
    trials: int
    sigma: float                    # sigma used for the theory curve
    sigma_hat: float                # pooled std of the drawn increments
    deviation_profile: np.ndarray   # theory: sigma * sqrt(k(1-k/K)), length K+1
    empirical_profile: np.ndarray   # per-k std of T_k over trials
    variance_se: np.ndarray         # standard error of the per-k variance estimate
    endpoints: tuple[float, float]


def bridge_simulate(increment_sampler: Callable, K: int, endpoints=(0.0, 0.0),
                    trials: int = 10_000, seed: int = 0, sigma: float | None = None,
                    chunk: int = 20_000) -> BridgeStats:
    """Draw free walks S_k = s0 + sum Z_i, pin both ends via
    T_k = (S_k - S_0) - (k/K)(S_K - S_0), and accumulate per-k moments.

    T_0 = T_K = 0 holds exactly in every trial by construction.  The theory
    curve uses `sigma` when given, otherwise the pooled std of the actually
    drawn increments.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    s0 = float(endpoints[0])
    frac = np.arange(K + 1) / K
    sum2 = np.zeros(K + 1)
    sum4 = np.zeros(K + 1)
    inc_sq = 0.0
    done = 0
    while done < trials:
        b = min(chunk, trials - done)
        Z = np.asarray(increment_sampler(rng, (b, K)), dtype=np.float64)
        S = np.empty((b, K + 1))
        S[:, 0] = s0
        np.cumsum(Z, axis=1, out=S[:, 1:])
        S[:, 1:] += s0
        D = S[:, -1] - s0
        T = (S - s0) - D[:, None] * frac[None, :]
        T2 = T * T
        sum2 += T2.sum(axis=0)
        sum4 += (T2 * T2).sum(axis=0)
        inc_sq += float(np.sum(Z * Z))
        done += b
    var = sum2 / trials
    var_se = np.sqrt(np.maximum(sum4 / trials - var**2, 0.0) / trials)
    sigma_hat = math.sqrt(inc_sq / (trials * K))
    sigma_used = sigma_hat if sigma is None else float(sigma)
    theory = np.array([bridge_deviation_theory(k, K, sigma_used) for k in range(K + 1)])
    return BridgeStats(K=K, trials=trials, sigma=sigma_used, sigma_hat=sigma_hat,
                       deviation_profile=theory, empirical_profile=np.sqrt(var),
                       variance_se=var_se, endpoints=(float(endpoints[0]), float(endpoints[1])))


def midpoint_deviation_theory_2layer(m: int, d: int) -> float:
    """Predicted midpoint deviation for a width-m, input-dim-d two-layer net
    at initialization: the bridge maximum (sigma sqrt(K))/2 with
    sigma^2 = 4/(md) and K = m/2, which reduces to a width-free 1/sqrt(d)."""
    if m < 1 or d < 1:
        raise ValueError("m and d must be >= 1")
    return 1.0 / math.sqrt(d)


def gap_variance_theory(layer: int, m: int, d: int | None = None) -> float:
    """Gap variance by crossing layer: 4/(m d) for layer 1, 4/m^2 deeper."""
    if layer < 1:
        raise ValueError("layer index starts at 1")
    if m < 1:
        raise ValueError("m must be >= 1")
    if layer == 1:
        if d is None or d < 1:
            raise ValueError("layer 1 needs the input dimension d")
        return 4.0 / (m * d)
    return 4.0 / (m * m)


# ---------------------------------------------------------------------------
# Empirical gap statistics


@dataclass(frozen=True)
class GapDistribution:
    samples: np.ndarray
    sigma: float
    count: int

    @property
    def variance(self) -> float:
        return self.sigma ** 2


def empirical_gap_sigma(gaps) -> GapDistribution:
    """Zero-mean std of a pooled gap sample: sigma^2 = mean(y^2)."""
    gaps = np.asarray(gaps, dtype=np.float64).ravel()
    if gaps.size == 0:
        raise ValueError("empty gap pool")
    if gaps.size < 2:
        raise ValueError("need at least 2 gap samples")
    sigma = math.sqrt(float(np.mean(gaps * gaps)))
    return GapDistribution(samples=gaps, sigma=sigma, count=gaps.size)


def pooled_gaps(profiles: Iterable[PathProfile]) -> np.ndarray:
    """All gaps of all profiles and components, flattened."""
    chunks = [p.gaps.ravel() for p in profiles if p.K > 0]
    if not chunks:
        return np.zeros(0)
    return np.concatenate(chunks)


# ---------------------------------------------------------------------------
# Node-count distribution checks


class NodeCountCheck(NamedTuple):
    mean: float
    variance: float
    z_mean: float
    z_variance: float
    n: int


def node_count_check(counts, m: int) -> NodeCountCheck:
    """Sample mean/variance of node counts with z-scores against the
    Binomial(m, 1/2) moments m/2 and m/4."""
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.size
    if n < 30:
        raise ValueError("need at least 30 samples for a moment check")
    mean = float(counts.mean())
    var = float(counts.var())
    mu, s2 = m / 2.0, m / 4.0
    se_mean = math.sqrt(s2 / n)
    # Var[s^2] for the binomial reference: (mu4 - sigma^4 (n-3)/(n-1)) / n
    mu4 = s2 * s2 * (3.0 - 2.0 / m)
    se_var = math.sqrt((mu4 - s2 * s2 * (n - 3) / (n - 1)) / n)
    return NodeCountCheck(mean=mean, variance=var,
                          z_mean=(mean - mu) / se_mean,
                          z_variance=(var - s2) / se_var, n=n)


def node_count_chisquare(counts, m: int, min_expected: float = 5.0):
    """Chi-square goodness of fit of observed node counts against
    Binomial(m, 1/2), with both tails binned so every expected count is at
    least `min_expected`.  Returns (statistic, p_value, dof)."""
    counts = np.asarray(counts, dtype=np.int64)
    n = counts.size
    if n < 30:
        raise ValueError("need at least 30 samples for a GOF test")
    k = np.arange(m + 1)
    expected = scipy_stats.binom.pmf(k, m, 0.5) * n
    lo = int(np.searchsorted(np.cumsum(expected), min_expected))
    hi = int(m - np.searchsorted(np.cumsum(expected[::-1]), min_expected))
    if hi <= lo:
        raise ValueError("sample too small to form chi-square bins")
    obs = [np.count_nonzero(counts <= lo)]
    for v in range(lo + 1, hi):
        obs.append(np.count_nonzero(counts == v))
    obs.append(np.count_nonzero(counts >= hi))
    exp = np.concatenate([[expected[:lo + 1].sum()], expected[lo + 1:hi], [expected[hi:].sum()]])
    obs = np.asarray(obs, dtype=np.float64)
    exp *= obs.sum() / exp.sum()
    stat, p = scipy_stats.chisquare(obs, exp)
    return float(stat), float(p), len(obs) - 1


# ---------------------------------------------------------------------------
# Deflection and empirical gap deviation


def deflection_midpoint(profile: PathProfile, component: int) -> float | None:
    """|R_{k*} - [R_0 + (k*/K)(R_K - R_0)]| at k* = floor(K/2); None when
    the profile has no nodes (skip marker, not an error)."""
    K = profile.K
    if K == 0:
        return None
    R = profile.gradients[:, component]
    ks = K // 2
    chord = R[0] + (ks / K) * (R[K] - R[0])
    return float(abs(R[ks] - chord))


def deflection_at_t(profile: PathProfile, component: int, t: float = 0.5) -> float | None:
    """Continuous-parameter variant: deviation of the gradient from the
    endpoint chord at path position t (the segment containing t supplies
    the gradient)."""
    K = profile.K
    if K == 0:
        return None
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    R = profile.gradients[:, component]
    seg = int(np.searchsorted(profile.nodes, t, side="right"))
    chord = R[0] + t * (R[K] - R[0])
    return float(abs(R[seg] - chord))


def deflection_rms(profiles: Sequence[PathProfile]) -> float:
    """RMS of midpoint deflections over all (pair, component) samples;
    K = 0 profiles are skipped."""
    vals = []
    for p in profiles:
        for j in range(p.num_components):
            v = deflection_midpoint(p, j)
            if v is not None:
                vals.append(v)
    if not vals:
        raise ValueError("no profile with nodes; deflection undefined")
    return float(np.sqrt(np.mean(np.square(vals))))


def gap_deviation_empirical(profiles: Sequence[PathProfile], pool: str = "pair") -> float:
    """Bridge-predicted midpoint deviation measured from the data itself:
    per profile, sigma_hat from its pooled gaps (all components) times
    sqrt(k*(1 - k*/K)); RMS over profiles.

    pool="pair" estimates sigma per profile; pool="global" uses a single
    sigma pooled over every profile's gaps.
    """
    profiles = [p for p in profiles if p.K > 0]
    if not profiles:
        raise ValueError("no profile with nodes; gap deviation undefined")
    if pool not in ("pair", "global"):
        raise ValueError("pool must be 'pair' or 'global'")
    sigma_global = None
    if pool == "global":
        sigma_global = empirical_gap_sigma(pooled_gaps(profiles)).sigma
    vals = []
    for p in profiles:
        K = p.K
        ks = K // 2
        if pool == "pair":
            sigma = math.sqrt(float(np.mean(np.square(p.gaps)))) if K > 0 else 0.0
        else:
            sigma = sigma_global
        vals.append(sigma * math.sqrt((ks * (K - ks)) / K))
    return float(np.sqrt(np.mean(np.square(vals))))


# ---------------------------------------------------------------------------
# Margins and fluctuations


def margin(fnorm, label: int) -> float:
    """Classification margin on a unit-norm output: correct-class value
    minus the best other value."""
    values = fnorm.values if hasattr(fnorm, "values") else np.asarray(fnorm, dtype=np.float64)
    if values.ndim != 1 or values.size < 2:
        raise ValueError("margin needs a vector with at least two classes")
    if abs(float(np.linalg.norm(values)) - 1.0) > 1e-9:
        raise ValueError("margin expects a unit-norm output vector")
    if not 0 <= label < values.size:
        raise ValueError(f"label {label} out of range [0, {values.size})")
    others = np.delete(values, label)
    return float(values[label] - others.max())


def pair_margin(m_i: float, m_j: float) -> float:
    """Mean of the two endpoint margins."""
    return 0.5 * (m_i + m_j)


def pair_fluctuation(u0, u1, umid) -> float:
    """Euclidean norm of (u0 + u1)/2 - umid: how far the midpoint output
    strays from the straight interpolation of the endpoint outputs."""
    u0 = np.asarray(u0, dtype=np.float64)
    u1 = np.asarray(u1, dtype=np.float64)
    umid = np.asarray(umid, dtype=np.float64)
    if not (u0.shape == u1.shape == umid.shape):
        raise ValueError("pair_fluctuation needs three equal-length vectors")
    return float(np.linalg.norm(0.5 * (u0 + u1) - umid))


@dataclass(frozen=True)
class PairMetrics:
    """Per-pair measurement row: margins on the endpoints, output
    fluctuation at the path midpoint, midpoint deflection (RMS over
    components), and the node count."""

    pm: float
    pf: float
    deflection_mid: float | None
    K: int

    def __post_init__(self):
        if self.pf < 0:
            raise ValueError("pair fluctuation is a norm; cannot be negative")
        if self.deflection_mid is not None and self.deflection_mid < 0:
            raise ValueError("deflection is an absolute deviation; cannot be negative")
