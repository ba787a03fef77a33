"""Halton draw tensors and transforms to the supported mixing distributions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DISTRIBUTIONS = ("normal", "lognormal", "uniform", "triangular")
DEFAULT_DISCARD = 50

# Acklam's rational approximation to the inverse normal CDF.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


def first_primes(n: int) -> list[int]:
    """The first ``n`` primes, by trial division against found primes."""
    primes: list[int] = []
    cand = 2
    while len(primes) < n:
        if all(cand % p for p in primes if p * p <= cand):
            primes.append(cand)
        cand += 1
    return primes


def halton_element(base: int, index: int) -> float:
    """Radical inverse of ``index`` in ``base``, correctly rounded."""
    if base < 2:
        raise ValueError("base must be >= 2")
    if index < 1:
        raise ValueError("index must be >= 1")
    num, den = 0, 1
    while index > 0:
        index, digit = divmod(index, base)
        num = num * base + digit
        den *= base
    return num / den


def _is_prime(n: int) -> bool:
    return n >= 2 and all(n % p for p in range(2, int(n ** 0.5) + 1))


def _scramble_digits(base: int) -> int:
    # digits kept so that base**D stays exactly representable in int64
    d = 1
    while base ** (d + 1) < 2 ** 62:
        d += 1
    return d


def _digit_permutations(base: int, rng: np.random.Generator) -> np.ndarray:
    """One random permutation of all ``base`` digits per digit position."""
    D = _scramble_digits(base)
    return np.stack([rng.permutation(base) for _ in range(D)])


def radical_inverse(base: int, indices, perms: np.ndarray | None = None) -> np.ndarray:
    """Vectorized radical inverse.

    Unscrambled values are exact rationals ``num / base**k`` rounded once.
    With ``perms`` (shape ``(D, base)``) every one of the first ``D`` digits,
    trailing zeros included, goes through its position's permutation.
    """
    idx = np.asarray(indices, dtype=np.int64).copy()
    if np.any(idx < 1):
        raise ValueError("indices must be >= 1")
    num = np.zeros(idx.shape, dtype=np.int64)
    den = np.ones(idx.shape, dtype=np.int64)
    if perms is None:
        while np.any(idx > 0):
            live = idx > 0
            idx, digit = np.divmod(idx, base)
            num = np.where(live, num * base + digit, num)
            den = np.where(live, den * base, den)
        return num / den
    D = perms.shape[0]
    for d in range(D):
        idx, digit = np.divmod(idx, base)
        num = num * base + perms[d][digit]
    out = num / float(base) ** D
    # an all-zero permuted expansion is astronomically unlikely but would leave (0, 1)
    return np.where(num == 0, 0.5 / float(base) ** D, out)


@dataclass(frozen=True)
class DrawConfig:
    n_obs: int
    n_draws: int = 200
    n_params: int = 1
    primes: tuple[int, ...] | None = None
    discard: int = DEFAULT_DISCARD
    scramble: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_obs < 1:
            raise ValueError("n_obs must be >= 1")
        if self.n_draws < 1:
            raise ValueError("n_draws must be >= 1")
        if self.discard < 0:
            raise ValueError("discard must be >= 0")
        if self.primes is not None:
            if not all(_is_prime(p) for p in self.primes):
                raise ValueError("primes must be prime")
            if len(set(self.primes)) != len(self.primes):
                raise ValueError("primes must be distinct")
            if len(self.primes) != self.n_params:
                raise ValueError("need one prime per random parameter")

    @property
    def bases(self) -> tuple[int, ...]:
        return tuple(self.primes) if self.primes is not None else tuple(first_primes(self.n_params))

    def to_dict(self) -> dict:
        return {
            "n_obs": self.n_obs, "n_draws": self.n_draws, "n_params": self.n_params,
            "primes": list(self.bases), "discard": self.discard,
            "scramble": self.scramble, "seed": self.seed,
        }


def build_draws(config: DrawConfig) -> np.ndarray:
    """Uniform Halton draws shaped ``(n_obs, n_draws, n_params)``.

    Observation ``n`` (0-based) and draw ``r`` (0-based) of parameter ``j``
    take sequence element ``discard + n * R + r + 1`` in the ``j``-th base.
    """
    N, R = config.n_obs, config.n_draws
    idx = config.discard + 1 + np.arange(N * R, dtype=np.int64)
    rng = np.random.default_rng(config.seed)
    cols = []
    for base in config.bases:
        perm = _digit_permutations(base, rng) if config.scramble else None
        cols.append(radical_inverse(base, idx, perm).reshape(N, R))
    draws = np.stack(cols, axis=-1) if cols else np.zeros((N, R, 0))
    draws.setflags(write=False)
    return draws


def _ndtr(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def norm_cdf(x):
    """Standard normal CDF (scalar or array)."""
    if np.ndim(x) == 0:
        return _ndtr(float(x))
    return np.vectorize(_ndtr, otypes=[float])(x)


def _ppf_scalar(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        z = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        z = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
            ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        z = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    # One Halley step; the residual is taken in whichever tail is more accurate.
    if p < 0.5:
        e = 0.5 * math.erfc(-z / _SQRT2) - p
    else:
        # Phi(z) - p == (1 - p) - Q(z); 1 - p is exact for p >= 0.5.
        e = (1.0 - p) - 0.5 * math.erfc(z / _SQRT2)
    u = e * _SQRT2PI * math.exp(0.5 * z * z)
    return z - u / (1.0 + 0.5 * z * u)


def norm_ppf(u):
    """Inverse standard normal CDF on the open interval (0, 1)."""
    arr = np.asarray(u, dtype=float)
    if np.any(~((arr > 0) & (arr < 1))):
        raise ValueError("u must lie strictly inside (0, 1)")
    if arr.ndim == 0:
        return _ppf_scalar(float(arr))
    from ._kernels import ppf_array

    return ppf_array(arr)


def transform(u, dist: str = "normal"):
    """Map uniform draws to standardized draws of ``dist``.

    normal: Phi^-1(u); lognormal: exp(Phi^-1(u)); uniform: 2u - 1 on
    [-1, 1]; triangular: symmetric triangular on [-1, 1].
    """
    arr = np.asarray(u, dtype=float)
    if np.any(~((arr > 0) & (arr < 1))):
        raise ValueError("u must lie strictly inside (0, 1)")
    if dist == "normal":
        out = norm_ppf(arr)
    elif dist == "lognormal":
        out = np.exp(norm_ppf(arr))
    elif dist == "uniform":
        out = 2.0 * arr - 1.0
    elif dist == "triangular":
        out = np.where(arr < 0.5, np.sqrt(2.0 * arr) - 1.0, 1.0 - np.sqrt(2.0 * (1.0 - arr)))
    else:
        raise ValueError(f"unsupported distribution {dist!r}")
    return float(out) if np.ndim(out) == 0 else out


def distribution_cdf(x: float, dist: str = "normal") -> float:
    """CDF of the standardized mixing distribution at ``x``."""
    if dist == "normal":
        return _ndtr(x)
    if dist == "lognormal":
        return 0.0 if x <= 0 else _ndtr(math.log(x))
    if dist == "uniform":
        return min(1.0, max(0.0, (x + 1.0) / 2.0))
    if dist == "triangular":
        if x <= -1:
            return 0.0
        if x >= 1:
            return 1.0
        return 0.5 * (x + 1.0) ** 2 if x < 0 else 1.0 - 0.5 * (1.0 - x) ** 2
    raise ValueError(f"unsupported distribution {dist!r}")
