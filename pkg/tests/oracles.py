"""Independent reference implementations used as test oracles.

Everything here is written with plain Python loops and the math module so it
shares no code path with the package under test.
"""
import math

import mpmath


def brute_cv(values, min_n=2):
    n = len(values)
    if n < max(min_n, 2):
        return None
    mean = sum(values) / n
    if mean == 0:
        return None
    ss = sum((v - mean) ** 2 for v in values)
    return math.sqrt(ss / (n - 1)) / mean


def brute_features(t, speed, along, alat, bin_length=10.0, min_bin=20, min_side=5):
    """Filter zero speed, bin by offset from the original last timestamp,
    sign-split, take magnitudes and compute CVs. Missing is ``None``."""
    anchor = t[-1]
    keep = [i for i in range(len(t)) if speed[i] != 0]
    out = {}

    def window(idx, suffix):
        for name, ch in (("long", along), ("lat", alat)):
            acc = [ch[i] for i in idx if ch[i] > 0]
            dec = [abs(ch[i]) for i in idx if ch[i] < 0]
            out[f"cv_{name}_acc{suffix}"] = brute_cv(acc, min_side)
            out[f"cv_{name}_dec{suffix}"] = brute_cv(dec, min_side)
        out[f"mean_speed{suffix}"] = sum(speed[i] for i in idx) / len(idx) if idx else None

    window(keep, "")
    if not keep:
        for k in (1, 2, 3):
            window([], f"_k{k}")
            out[f"mean_speed_k{k}"] = None
        return out
    for k in (1, 2, 3):
        lo = (3 - k) * bin_length
        hi = lo + bin_length
        idx = [i for i in keep if lo <= round(anchor - t[i], 9) < hi]
        if len(idx) >= min_bin:
            window(idx, f"_k{k}")
        else:
            for c in ("cv_long_acc", "cv_long_dec", "cv_lat_acc", "cv_lat_dec", "mean_speed"):
                out[f"{c}_k{k}"] = None
    return out


def softmax(u):
    m = max(u)
    e = [math.exp(x - m) for x in u]
    s = sum(e)
    return [x / s for x in e]


def brute_simulated_loglik(events, V, theta):
    """events: list of (chosen index, {outcome_index: [(x, coef_fn)]}).

    ``theta`` is provided to the coefficient functions; ``V[n][r]`` is the
    standardized draw vector for event n, draw r.
    """
    ll = 0.0
    for n, (chosen, utility_fn) in enumerate(events):
        acc = 0.0
        for r in range(len(V[n])):
            u = utility_fn(theta, V[n][r])
            acc += softmax(u)[chosen]
        ll += math.log(acc / len(V[n]))
    return ll


def mp_norm_ppf(p, dps=40):
    """Inverse normal CDF by bisection on the mpmath CDF."""
    with mpmath.workdps(dps):
        p = mpmath.mpf(p)
        lo, hi = mpmath.mpf(-40), mpmath.mpf(40)
        for _ in range(200):
            mid = (lo + hi) / 2
            if mpmath.ncdf(mid) < p:
                lo = mid
            else:
                hi = mid
        return float((lo + hi) / 2)


def central_difference(f, x, h=1e-5):
    g = []
    for i in range(len(x)):
        xp = list(x)
        xm = list(x)
        xp[i] += h
        xm[i] -= h
        g.append((f(xp) - f(xm)) / (2 * h))
    return g
