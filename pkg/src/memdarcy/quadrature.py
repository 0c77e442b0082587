"""Volterra and stochastic convolutions on uniform grids.

Deterministic memory terms use either the trapezoid rule or the shifted and
increment sums that aggregate implicit-Euler dynamics exactly; stochastic sums
use left points (Ito).  The two swap-of-summation checks at the bottom are exact
rearrangements of finite sums, so their residuals are pure rounding.
"""
from __future__ import annotations

import numpy as np

from .errors import GridMismatch


def _apply(Kk: np.ndarray, fk: np.ndarray) -> np.ndarray:
    """Stacked ``K[k] @ f[k]`` summed over k, for scalar or matrix kernels."""
    if Kk.ndim == 1:
        return np.tensordot(Kk, fk, axes=(0, 0))
    return np.einsum("kij,kj...->i...", Kk, fk)


def trapezoid_weights(n: int, dt: float, endpoint: bool = True) -> np.ndarray:
    w = np.full(n + 1, dt)
    if n == 0:
        return np.zeros(1)
    w[0] = w[n] = 0.5 * dt
    if not endpoint:
        w[n] = 0.0
    return w


def convolve(K: np.ndarray, f: np.ndarray, n: int, dt: float, endpoint: bool = True) -> np.ndarray:
    """Trapezoid value of ``int_0^{t_n} K(t_n - s) f(s) ds``.

    Parameters
    ----------
    K : array, shape (N+1,) or (N+1, p, q)
        Kernel samples ``K(t_k)``.
    f : array, shape (N+1, ...) or (N+1, q, ...)
        Integrand samples; extra trailing axes (e.g. grid points) are carried.
    endpoint : bool
        If False, the ``s = t_n`` node is dropped (history-only memory).
    """
    K = np.asarray(K)
    f = np.asarray(f)
    if n < 0 or len(K) < n + 1 or len(f) < n + 1:
        raise GridMismatch(f"need n+1={n + 1} samples, got kernel {len(K)} and integrand {len(f)}")
    w = trapezoid_weights(n, dt, endpoint)
    Krev = K[n::-1] if n > 0 else K[:1]
    fw = f[: n + 1] * w.reshape((-1,) + (1,) * (f.ndim - 1))
    return _apply(Krev, fw)


def shifted_sum(K: np.ndarray, f: np.ndarray, n: int, dt: float) -> np.ndarray:
    """``sum_{j=1..n} dt K[n-j+1] f[j]``: the implicit-Euler aggregate of a forced trajectory."""
    K = np.asarray(K)
    f = np.asarray(f)
    if n < 0 or len(K) < n + 1 or len(f) < n + 1:
        raise GridMismatch(f"need n+1={n + 1} samples, got kernel {len(K)} and integrand {len(f)}")
    if n == 0:
        return np.zeros_like(_apply(K[:1], f[:1]))
    return dt * _apply(K[n:0:-1], f[1 : n + 1])


def increment_sum(K: np.ndarray, g: np.ndarray, n: int) -> np.ndarray:
    """``sum_{j=1..n-1} (K[n-j+1] - K[n-j]) g[j]``, history of a kernel-increment convolution."""
    K = np.asarray(K)
    g = np.asarray(g)
    if n < 1 or len(K) < n + 1 or len(g) < n:
        raise GridMismatch(f"need {n + 1} kernel samples and {n} history samples")
    if n == 1:
        return np.zeros_like(_apply(K[:1], g[:1]))
    dK = K[n:1:-1] - K[n - 1 : 0 : -1]  # j = 1..n-1
    return _apply(dK, g[1:n])


def _increments(path) -> np.ndarray:
    return np.asarray(getattr(path, "dW", path))


def stoch_convolve(K: np.ndarray, g: np.ndarray | float, path, n: int) -> np.ndarray:
    """Left-point sum ``sum_{k<n} K(t_n - t_k) g(t_k) dW_k``.

    Parameters
    ----------
    K : array, shape (N+1,) or (N+1, p, q)
    g : scalar, array (N,) or array (N, q, J)
        Gain schedule; a matrix gain maps the J mode increments to q outputs.
    path : WienerPath or array (N,) / (N, J)
        Increments ``dW_k`` over ``[t_k, t_{k+1}]``.
    """
    K = np.asarray(K)
    dW = _increments(path)
    if n < 0 or len(K) < n + 1 or len(dW) < n:
        raise GridMismatch(f"need {n} increments and {n + 1} kernel samples")
    m = max(n, 1)
    dW = dW[:m]
    g = np.asarray(g, dtype=float)
    if g.ndim == 0:
        v = g * dW
    elif g.ndim == 1:
        v = g[:m].reshape((m,) + (1,) * (dW.ndim - 1)) * dW
    else:
        v = np.einsum("kqj,kj->kq", g[:m], dW)
    if n == 0:
        return np.zeros_like(_apply(K[1:2], v[:1]))
    Krev = K[n:0:-1]  # K(t_n - t_k), k = 0..n-1
    return _apply(Krev, v)


class ConvolutionBuffer:
    """Preallocated sample history on a uniform grid."""

    def __init__(self, n_steps: int, shape: tuple[int, ...], dt: float):
        self.data = np.zeros((n_steps + 1,) + tuple(shape))
        self.dt = dt
        self.index = -1

    def append(self, x: np.ndarray) -> None:
        if self.index + 1 >= len(self.data):
            raise GridMismatch("buffer horizon exceeded")
        self.index += 1
        self.data[self.index] = x

    @property
    def history(self) -> np.ndarray:
        return self.data[: self.index + 1]

    def __len__(self) -> int:
        return self.index + 1

    def convolve(self, K: np.ndarray, n: int | None = None, endpoint: bool = True) -> np.ndarray:
        n = self.index if n is None else n
        return convolve(K, self.data, n, self.dt, endpoint)


# ---------------------------------------------------- swap identities


def fubini_sums(a: np.ndarray, b: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Both orderings of the discrete double integral for every n.

    ``lhs[n] = sum_s sum_{r <= n-s} a_r b_s dt^2`` (inner sum over the first
    argument) and ``rhs[n] = sum_s sum_{r <= s} a_{s-r} b_r dt^2`` (outer sum
    over the convolution variable).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise GridMismatch("a and b must be 1-D samples on the same grid")
    N = len(a)
    A = np.cumsum(a)
    lhs = np.array([np.dot(A[n::-1], b[: n + 1]) for n in range(N)]) * dt**2
    c = np.array([np.dot(a[s::-1], b[: s + 1]) for s in range(N)])
    rhs = np.cumsum(c) * dt**2
    return lhs, rhs


def fubini_check(a: np.ndarray, b: np.ndarray, dt: float) -> float:
    """Max over n of ``|lhs[n] - rhs[n]|`` (see :func:`fubini_sums`)."""
    lhs, rhs = fubini_sums(a, b, dt)
    return float(np.abs(lhs - rhs).max())


def fubini_scale(a, b, dt) -> float:
    return float(np.abs(a).sum() * np.abs(b).sum() * dt**2)


def stoch_fubini_sums(a: np.ndarray, g: np.ndarray, path, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Riemann-then-Ito versus Ito-then-Riemann orderings, same increments.

    ``lhs[n] = sum_{s<n} (sum_{r<=n-1-s} a_r dt) g_s dW_s`` and
    ``rhs[n] = sum_{m<n} dt sum_{k<=m} a_{m-k} g_k dW_k`` for n = 0..N.
    """
    a = np.asarray(a, dtype=float)
    g = np.asarray(g, dtype=float)
    dW = _increments(path).reshape(-1)
    N = len(dW)
    if len(a) < N or len(g) < N:
        raise GridMismatch("a and g need one sample per increment")
    v = g[:N] * dW
    lhs = np.zeros(N + 1)
    for n in range(1, N + 1):
        inner = np.cumsum(a[:n])[::-1] * dt  # entry s: sum_{r<=n-1-s} a_r dt
        lhs[n] = np.dot(inner, v[:n])
    c = np.array([np.dot(a[m::-1], v[: m + 1]) for m in range(N)])
    rhs = np.concatenate([[0.0], np.cumsum(c) * dt])
    return lhs, rhs


def stoch_fubini_check(a: np.ndarray, g: np.ndarray, path, dt: float) -> float:
    lhs, rhs = stoch_fubini_sums(a, g, path, dt)
    return float(np.abs(lhs - rhs).max())


def stoch_fubini_scale(a, g, path, dt) -> float:
    dW = _increments(path).reshape(-1)
    N = len(dW)
    return float(np.abs(a[:N]).sum() * dt * np.abs(np.asarray(g)[:N] * dW).sum())
