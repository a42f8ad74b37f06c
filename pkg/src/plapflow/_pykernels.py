"""Pure NumPy implementations of the hot loops.

These mirror ``_ckernels.pyx`` one to one and are used whenever the compiled
extension is unavailable (or ``PLAPFLOW_PURE=1`` is set).  All functions take
the raw CSR arrays of a symmetric weight matrix.
"""

import numpy as np

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _rows(indptr):
    return np.repeat(np.arange(indptr.shape[0] - 1), np.diff(indptr))


def psi(t, p):
    """|t|^(p-2) t with psi(0) = 0."""
    if p == 2.0:
        return t.copy()
    if p == 3.0:
        return np.abs(t) * t
    if p == 4.0:
        return t * t * t
    a = np.abs(t)
    out = np.zeros_like(t)
    nz = a > 0
    out[nz] = np.exp((p - 2.0) * np.log(a[nz])) * t[nz]
    return out


def _abs_pow(a, e):
    # a >= 0; 0**e handled explicitly so that e == 0 yields 1 and e > 0 yields 0
    if e == 0.0:
        return np.ones_like(a)
    if e == 1.0:
        return a.copy()
    if e == 2.0:
        return a * a
    if e == 3.0:
        return a * a * a
    if e == 4.0:
        return (a * a) * (a * a)
    out = np.zeros_like(a)
    nz = a > 0
    out[nz] = np.exp(e * np.log(a[nz]))
    return out


def plap_apply(indptr, indices, data, v, m, p):
    n = indptr.shape[0] - 1
    rows = _rows(indptr)
    t = v[indices] - v[rows]
    contrib = data * psi(t, p)
    return -m * np.bincount(rows, weights=contrib, minlength=n)


def plap_energy(indptr, indices, data, v, m, p):
    rows = _rows(indptr)
    a = np.abs(v[indices] - v[rows])
    return float(m * m * np.sum(data * _abs_pow(a, p)) / (2.0 * p))


def plap_jacobian_weights(indptr, indices, data, v, m, p):
    """Weights m K_ij (p-1)|v_j - v_i|^(p-2), aligned with ``data``; diagonal zeroed."""
    rows = _rows(indptr)
    a = np.abs(v[indices] - v[rows])
    w = m * (p - 1.0) * data * _abs_pow(a, p - 2.0)
    w[indices == rows] = 0.0
    return w


def _splitmix64(z):
    with np.errstate(over="ignore"):
        z = (z + _GOLDEN) & _MASK64
        z = ((z ^ (z >> np.uint64(30))) * _MIX1) & _MASK64
        z = ((z ^ (z >> np.uint64(27))) * _MIX2) & _MASK64
        return z ^ (z >> np.uint64(31))


def pair_uniforms(seed, i, j):
    """Counter-based uniforms in [0, 1) keyed by (seed, i, j)."""
    i = np.asarray(i, dtype=np.uint64)
    j = np.asarray(j, dtype=np.uint64)
    key = _splitmix64(np.full(i.shape, np.uint64(seed & 0xFFFFFFFFFFFFFFFF), dtype=np.uint64))
    h = _splitmix64(key ^ i)
    h = _splitmix64(h ^ j)
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def step_hessian_data(indptr, indices, data, diagpos, v, m, p, tau_mu, base_diag):
    """Values of I + tau G + tau mu J on a pattern that stores every diagonal."""
    n = indptr.shape[0] - 1
    rows = _rows(indptr)
    w = plap_jacobian_weights(indptr, indices, data, v, m, p)
    out = -tau_mu * w
    out[diagpos] = base_diag + tau_mu * np.bincount(rows, weights=w, minlength=n)
    return out
