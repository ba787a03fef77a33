"""Hot loops: simulated log-likelihood/score and the inverse normal CDF.

Every kernel has a numba version and a pure-numpy version with identical
signatures. :data:`simulated_loglik_terms` and :data:`ppf_array` point at
whichever backend :mod:`crashvol._config` selected.

Parameter layout shared by the kernels (and by ``ParameterVector.pack``)::

    [constants (C) | term coefficients / random locations (T) |
     random scales (J) | het-mean coefficients (M) | het-variance coefficients (Q)]
"""
import math

import numpy as np

from . import _config
from .quasirandom import _ppf_scalar

LOG_FLOOR = 1e-300


# Line-search trial points can overflow; the caller rejects non-finite values.
@np.errstate(over="ignore", invalid="ignore")
def simulated_loglik_terms_numpy(
    chosen, w, X, term_out, term_rand, const_out, rand_term,
    Z, z_owner, B, b_owner, V, n_out,
    const, beta, sigma, xi, gamma, want_grad,
):
    """Per-event log simulated probabilities and (optionally) scores.

    Returns ``(ll, score)`` with ``ll`` of shape ``(N,)`` and ``score`` of
    shape ``(N, P)`` (``(N, 0)`` when ``want_grad`` is false).
    """
    N, R, J = V.shape
    T = X.shape[1]
    C, M, Q = len(const), len(xi), len(gamma)
    fixed = term_rand < 0

    vfix = np.zeros((N, n_out))
    for c in range(C):
        vfix[:, const_out[c]] += const[c]
    for t in np.flatnonzero(fixed):
        vfix[:, term_out[t]] += beta[t] * X[:, t]

    mu = np.empty((N, J))
    logscale = np.zeros((N, J))
    for j in range(J):
        mu[:, j] = beta[rand_term[j]]
    for m in range(M):
        mu[:, z_owner[m]] += xi[m] * Z[:, m]
    for q in range(Q):
        logscale[:, b_owner[q]] += gamma[q] * B[:, q]
    scale = np.exp(logscale)
    coef = mu[:, None, :] + (sigma * scale)[:, None, :] * V  # (N, R, J)

    util = np.broadcast_to(vfix[:, None, :], (N, R, n_out)).copy()
    xr = X[:, rand_term] if J else np.zeros((N, 0))
    for j in range(J):
        util[:, :, term_out[rand_term[j]]] += coef[:, :, j] * xr[:, None, j]
    util -= util.max(axis=2, keepdims=True)
    expu = np.exp(util)
    prob = expu / expu.sum(axis=2, keepdims=True)  # (N, R, K)
    rows = np.arange(N)
    pc = prob[rows, :, chosen]  # (N, R)
    S = pc.sum(axis=1)
    ll = w * np.log(np.maximum(S / R, LOG_FLOOR))
    if not want_grad:
        return ll, np.zeros((N, 0))

    onehot = np.zeros((N, n_out))
    onehot[rows, chosen] = 1.0
    resid = onehot[:, None, :] - prob  # (N, R, K)
    A = (pc[:, :, None] * resid).sum(axis=1)  # (N, K)
    inv = np.where(S > 0, 1.0 / np.where(S > 0, S, 1.0), 0.0) * w

    P = C + T + J + M + Q
    score = np.zeros((N, P))
    for c in range(C):
        score[:, c] = A[:, const_out[c]]
    for t in np.flatnonzero(fixed):
        score[:, C + t] = A[:, term_out[t]] * X[:, t]
    G = np.zeros((N, J))
    H = np.zeros((N, J))
    for j in range(J):
        g = pc * resid[:, :, term_out[rand_term[j]]] * xr[:, None, j]
        G[:, j] = g.sum(axis=1)
        H[:, j] = (g * V[:, :, j]).sum(axis=1)
        score[:, C + rand_term[j]] = G[:, j]
        score[:, C + T + j] = scale[:, j] * H[:, j]
    for m in range(M):
        score[:, C + T + J + m] = Z[:, m] * G[:, z_owner[m]]
    for q in range(Q):
        j = b_owner[q]
        score[:, C + T + J + M + q] = sigma[j] * B[:, q] * scale[:, j] * H[:, j]
    return ll, score * inv[:, None]


def _ppf_array_numpy(u):
    u = np.asarray(u, dtype=float)
    return np.vectorize(_ppf_scalar, otypes=[float])(u)


simulated_loglik_terms = simulated_loglik_terms_numpy
ppf_array = _ppf_array_numpy
simulated_loglik_terms_numba = None

if _config.HAVE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def simulated_loglik_terms_numba(
        chosen, w, X, term_out, term_rand, const_out, rand_term,
        Z, z_owner, B, b_owner, V, n_out,
        const, beta, sigma, xi, gamma, want_grad,
    ):
        N, R, J = V.shape
        T = X.shape[1]
        C, M, Q = const.shape[0], xi.shape[0], gamma.shape[0]
        P = C + T + J + M + Q
        ll = np.empty(N)
        score = np.zeros((N, P if want_grad else 0))
        vfix = np.empty(n_out)
        util = np.empty(n_out)
        prob = np.empty(n_out)
        mu = np.empty(J)
        scale = np.empty(J)
        A = np.empty(n_out)
        G = np.empty(J)
        H = np.empty(J)
        for n in range(N):
            c_n = chosen[n]
            vfix[:] = 0.0
            for c in range(C):
                vfix[const_out[c]] += const[c]
            for t in range(T):
                if term_rand[t] < 0:
                    vfix[term_out[t]] += beta[t] * X[n, t]
            for j in range(J):
                mu[j] = beta[rand_term[j]]
                scale[j] = 0.0
            for m in range(M):
                mu[z_owner[m]] += xi[m] * Z[n, m]
            for q in range(Q):
                scale[b_owner[q]] += gamma[q] * B[n, q]
            for j in range(J):
                scale[j] = math.exp(scale[j])
            S = 0.0
            A[:] = 0.0
            G[:] = 0.0
            H[:] = 0.0
            for r in range(R):
                for k in range(n_out):
                    util[k] = vfix[k]
                for j in range(J):
                    t = rand_term[j]
                    util[term_out[t]] += (mu[j] + sigma[j] * scale[j] * V[n, r, j]) * X[n, t]
                umax = util[0]
                for k in range(1, n_out):
                    if util[k] > umax:
                        umax = util[k]
                den = 0.0
                for k in range(n_out):
                    prob[k] = math.exp(util[k] - umax)
                    den += prob[k]
                for k in range(n_out):
                    prob[k] /= den
                pc = prob[c_n]
                S += pc
                if want_grad:
                    for k in range(n_out):
                        A[k] += pc * ((1.0 if k == c_n else 0.0) - prob[k])
                    for j in range(J):
                        t = rand_term[j]
                        o = term_out[t]
                        g = pc * ((1.0 if o == c_n else 0.0) - prob[o]) * X[n, t]
                        G[j] += g
                        H[j] += g * V[n, r, j]
            ll[n] = w[n] * math.log(max(S / R, LOG_FLOOR))
            if want_grad and S > 0:
                inv = w[n] / S
                for c in range(C):
                    score[n, c] = A[const_out[c]] * inv
                for t in range(T):
                    if term_rand[t] < 0:
                        score[n, C + t] = A[term_out[t]] * X[n, t] * inv
                for j in range(J):
                    score[n, C + rand_term[j]] = G[j] * inv
                    score[n, C + T + j] = scale[j] * H[j] * inv
                for m in range(M):
                    score[n, C + T + J + m] = Z[n, m] * G[z_owner[m]] * inv
                for q in range(Q):
                    j = b_owner[q]
                    score[n, C + T + J + M + q] = sigma[j] * B[n, q] * scale[j] * H[j] * inv
        return ll, score

    _ppf_scalar_jit = njit(cache=True)(_ppf_scalar)

    @njit(cache=True)
    def _ppf_flat(u):
        out = np.empty_like(u)
        for i in range(u.shape[0]):
            out[i] = _ppf_scalar_jit(u[i])
        return out

    def _ppf_array_numba(u):
        u = np.asarray(u, dtype=float)
        return _ppf_flat(np.ascontiguousarray(u).ravel()).reshape(u.shape)

    if _config.USE_NUMBA:
        simulated_loglik_terms = simulated_loglik_terms_numba
        ppf_array = _ppf_array_numba
