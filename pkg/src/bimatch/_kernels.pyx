# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Mirrors ``_pykernels`` operation for operation."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, fabs, INFINITY, ceil

cnp.import_array()

DEF BLOCK = 4096

cdef int OK = 0
cdef int ERR_NO_CONVERGE = 3
cdef int ERR_STATE = 4

NEG_INF = float("-inf")


cdef inline double _q(const double[:, :] rew, const double[:, :] u, const long[:, :] ndst,
                      const long[:, :, :] dst, const double[:, :, :] prb, Py_ssize_t i, int c,
                      double eta1, double eta2, double g, double beta, double[:] V) noexcept nogil:
    cdef double uc = u[i, c]
    cdef double val = (rew[i, c] - (c & 1) * eta1 - (c >> 1) * eta2 - g) / uc
    cdef double acc = 0.0
    cdef Py_ssize_t k
    for k in range(ndst[i, c]):
        acc += prb[i, c, k] * V[dst[i, c, k]]
    return val + beta * acc


cdef long _vi(const double[:, :] rew, const double[:, :] u, const long[:, :] ndst,
              const long[:, :, :] dst, const double[:, :, :] prb, const signed char[:, :] mask,
              double eta1, double eta2, double g, double beta, Py_ssize_t ref, double[:] V,
              double[:] new, double sigma, long max_iter) noexcept nogil:
    cdef Py_ssize_t S = rew.shape[0]
    cdef Py_ssize_t i
    cdef int c
    cdef long it
    cdef double best, q, delta, d
    for it in range(1, max_iter + 1):
        delta = 0.0
        for i in range(S):
            if i == ref:
                new[i] = 0.0
                continue
            best = -INFINITY
            for c in range(4):
                if mask[i, c] and u[i, c] > 0.0:
                    q = _q(rew, u, ndst, dst, prb, i, c, eta1, eta2, g, beta, V)
                    if q > best:
                        best = q
            new[i] = best
        for i in range(S):
            d = fabs(new[i] - V[i])
            if d > delta:
                delta = d
            V[i] = new[i]
        if delta < sigma:
            return it
    return -1


def vi_solve(rew, u, ndst, dst, prb, mask, double eta1, double eta2, double g, double beta,
             Py_ssize_t ref, double[:] V, double sigma, long max_iter):
    cdef double[:] new = np.zeros(V.shape[0])
    return _vi(rew, u, ndst, dst, prb, mask, eta1, eta2, g, beta, ref, V, new, sigma, max_iter)


cdef double _h_ref(const double[:, :] rew, const double[:, :] u, const long[:, :] ndst,
                   const long[:, :, :] dst, const double[:, :, :] prb, const signed char[:, :] mask,
                   double eta1, double eta2, double g, double beta, Py_ssize_t ref, double[:] V,
                   int with_null) noexcept nogil:
    cdef double best = -INFINITY
    cdef double q
    cdef int c
    for c in range(4):
        if not mask[ref, c]:
            continue
        if u[ref, c] > 0.0:
            q = _q(rew, u, ndst, dst, prb, ref, c, eta1, eta2, g, beta, V)
        elif with_null:
            q = 0.0
        else:
            continue
        if q > best:
            best = q
    return best


def h_ref(rew, u, ndst, dst, prb, mask, double eta1, double eta2, double g, double beta,
          Py_ssize_t ref, double[:] V, int with_null):
    return _h_ref(rew, u, ndst, dst, prb, mask, eta1, eta2, g, beta, ref, V, with_null)


cdef void _rate_bounds(const double[:, :] rew, const signed char[:, :] mask, double eta1,
                       double eta2, double* lo, double* hi) noexcept nogil:
    cdef Py_ssize_t i
    cdef int c
    cdef double r
    lo[0] = INFINITY
    hi[0] = -INFINITY
    for i in range(rew.shape[0]):
        for c in range(4):
            if mask[i, c]:
                r = rew[i, c] - (c & 1) * eta1 - (c >> 1) * eta2
                if r < lo[0]:
                    lo[0] = r
                if r > hi[0]:
                    hi[0] = r


cdef int _gain(const double[:, :] rew, const double[:, :] u, const long[:, :] ndst,
               const long[:, :, :] dst, const double[:, :, :] prb, const signed char[:, :] mask,
               double eta1, double eta2, double beta, Py_ssize_t ref, double[:] V, double[:] new,
               double sigma, long max_iter, double* gout) noexcept nogil:
    cdef bint has_null = False, has_move = False
    cdef int c, rep
    cdef Py_ssize_t i
    cdef double lo, hi, width, pad, tol, g, H
    for c in range(4):
        if mask[ref, c]:
            if u[ref, c] > 0.0:
                has_move = True
            else:
                has_null = True
    if not has_move:
        for i in range(V.shape[0]):
            V[i] = 0.0
        gout[0] = 0.0
        if _vi(rew, u, ndst, dst, prb, mask, eta1, eta2, 0.0, beta, ref, V, new, sigma, max_iter) < 0:
            return ERR_NO_CONVERGE
        return OK
    _rate_bounds(rew, mask, eta1, eta2, &lo, &hi)
    width = hi - lo
    if has_null:
        lo = 0.0
        gout[0] = 0.0
        if _vi(rew, u, ndst, dst, prb, mask, eta1, eta2, 0.0, beta, ref, V, new, sigma, max_iter) < 0:
            return ERR_NO_CONVERGE
        if _h_ref(rew, u, ndst, dst, prb, mask, eta1, eta2, 0.0, beta, ref, V, 0) <= 0.0:
            return OK
    pad = 1.0 + fabs(width)
    lo -= pad
    hi += pad
    for rep in range(61):
        if rep == 60:
            gout[0] = hi
            return ERR_NO_CONVERGE
        if _vi(rew, u, ndst, dst, prb, mask, eta1, eta2, hi, beta, ref, V, new, sigma, max_iter) < 0:
            gout[0] = hi
            return ERR_NO_CONVERGE
        if _h_ref(rew, u, ndst, dst, prb, mask, eta1, eta2, hi, beta, ref, V, 0) < 0.0:
            break
        hi += 2.0 * (hi - lo)
    if not has_null:
        for rep in range(61):
            if rep == 60:
                gout[0] = lo
                return ERR_NO_CONVERGE
            if _vi(rew, u, ndst, dst, prb, mask, eta1, eta2, lo, beta, ref, V, new, sigma, max_iter) < 0:
                gout[0] = lo
                return ERR_NO_CONVERGE
            if _h_ref(rew, u, ndst, dst, prb, mask, eta1, eta2, lo, beta, ref, V, 0) > 0.0:
                break
            lo -= 2.0 * (hi - lo)
    tol = 1e-13 * (1.0 + fabs(hi) + fabs(lo))
    g = 0.5 * (lo + hi)
    for rep in range(200):
        g = 0.5 * (lo + hi)
        if _vi(rew, u, ndst, dst, prb, mask, eta1, eta2, g, beta, ref, V, new, sigma, max_iter) < 0:
            gout[0] = g
            return ERR_NO_CONVERGE
        H = _h_ref(rew, u, ndst, dst, prb, mask, eta1, eta2, g, beta, ref, V, 0)
        if H > 0.0:
            lo = g
        elif H < 0.0:
            hi = g
        else:
            break
        if hi - lo <= tol:
            break
    g = 0.5 * (lo + hi)
    gout[0] = g
    if _vi(rew, u, ndst, dst, prb, mask, eta1, eta2, g, beta, ref, V, new, sigma, max_iter) < 0:
        return ERR_NO_CONVERGE
    return OK


def gain_solve(rew, u, ndst, dst, prb, mask, double eta1, double eta2, double beta,
               Py_ssize_t ref, double[:] V, double sigma, long max_iter):
    cdef double g = 0.0
    cdef double[:] new = np.zeros(V.shape[0])
    st = _gain(rew, u, ndst, dst, prb, mask, eta1, eta2, beta, ref, V, new, sigma, max_iter, &g)
    return g, st


cdef bint _lin_solve(double[:, :] A, double[:] b, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t col, piv, r, k
    cdef double big, f, tmp, acc
    for col in range(n):
        piv = col
        big = fabs(A[col, col])
        for r in range(col + 1, n):
            if fabs(A[r, col]) > big:
                big = fabs(A[r, col])
                piv = r
        if big == 0.0:
            return False
        if piv != col:
            for k in range(n):
                tmp = A[col, k]
                A[col, k] = A[piv, k]
                A[piv, k] = tmp
            tmp = b[col]
            b[col] = b[piv]
            b[piv] = tmp
        for r in range(col + 1, n):
            f = A[r, col] / A[col, col]
            if f != 0.0:
                for k in range(col, n):
                    A[r, k] -= f * A[col, k]
                b[r] -= f * b[col]
    r = n - 1
    while r >= 0:
        acc = b[r]
        for k in range(r + 1, n):
            acc -= A[r, k] * b[k]
        b[r] = acc / A[r, r]
        r -= 1
    return True


cdef int _pi(const double[:, :] rew, const double[:, :] u, const long[:, :] ndst,
             const long[:, :, :] dst, const double[:, :, :] prb, const signed char[:, :] mask,
             double eta1, double eta2, Py_ssize_t ref, long[:] pol, double[:] h,
             double[:, :] A, double[:] b, long max_iter, double* gout) noexcept nogil:
    cdef Py_ssize_t S = rew.shape[0]
    cdef Py_ssize_t i, k, d, r
    cdef int c, cur, best_c
    cdef long it
    cdef double lo, hi, eps, g = 0.0, rate, t, best_t, cur_t
    cdef bint changed
    for i in range(S):
        if not mask[i, pol[i]]:
            c = 3
            while c >= 0:
                if mask[i, c]:
                    pol[i] = c
                    break
                c -= 1
    _rate_bounds(rew, mask, eta1, eta2, &lo, &hi)
    eps = 1e-12 * (1.0 + fabs(lo) + fabs(hi))
    for it in range(max_iter):
        for i in range(S):
            for r in range(S):
                A[i, r] = 0.0
        for i in range(S):
            c = pol[i]
            b[i] = -(rew[i, c] - (c & 1) * eta1 - (c >> 1) * eta2)
            A[i, ref] = -1.0
            for k in range(ndst[i, c]):
                rate = prb[i, c, k] * u[i, c]
                d = dst[i, c, k]
                if d != ref:
                    A[i, d] += rate
                if i != ref:
                    A[i, i] -= rate
        if not _lin_solve(A, b, S):
            gout[0] = g
            return ERR_NO_CONVERGE
        g = b[ref]
        for i in range(S):
            h[i] = 0.0 if i == ref else b[i]
        changed = False
        for i in range(S):
            cur = pol[i]
            best_c = cur
            best_t = -INFINITY
            cur_t = -INFINITY
            for c in range(4):
                if not mask[i, c]:
                    continue
                t = rew[i, c] - (c & 1) * eta1 - (c >> 1) * eta2 - g
                for k in range(ndst[i, c]):
                    t += prb[i, c, k] * u[i, c] * (h[dst[i, c, k]] - h[i])
                if c == cur:
                    cur_t = t
                if t > best_t:
                    best_t = t
                    best_c = c
            if best_t > cur_t + eps:
                pol[i] = best_c
                changed = True
        if not changed:
            gout[0] = g
            return OK
    gout[0] = g
    return ERR_NO_CONVERGE


def pi_solve(rew, u, ndst, dst, prb, mask, double eta1, double eta2, Py_ssize_t ref,
             long[:] pol, double[:] h, long max_iter):
    cdef Py_ssize_t S = h.shape[0]
    cdef double g = 0.0
    cdef double[:, :] A = np.zeros((S, S))
    cdef double[:] b = np.zeros(S)
    st = _pi(rew, u, ndst, dst, prb, mask, eta1, eta2, ref, pol, h, A, b, max_iter, &g)
    return g, st


cdef double _action_gap(const double[:, :] rew, const double[:, :] u, const long[:, :] ndst,
                        const long[:, :, :] dst, const double[:, :, :] prb,
                        const signed char[:, :] mask, double eta1, double eta2, double g,
                        double beta, double[:] V, Py_ssize_t i) noexcept nogil:
    cdef double b1 = -INFINITY, b0 = -INFINITY, q
    cdef int c
    for c in range(4):
        if mask[i, c] and u[i, c] > 0.0:
            q = _q(rew, u, ndst, dst, prb, i, c, eta1, eta2, g, beta, V)
            if c & 1:
                if q > b1:
                    b1 = q
            elif q > b0:
                b0 = q
    return b1 - b0


def action_gap(rew, u, ndst, dst, prb, mask, double eta1, double eta2, double g, double beta,
               double[:] V, Py_ssize_t i):
    return _action_gap(rew, u, ndst, dst, prb, mask, eta1, eta2, g, beta, V, i)


cdef bint _reachable(const double[:, :] rew, const double[:, :] u, const long[:, :] ndst,
                     const long[:, :, :] dst, const double[:, :, :] prb,
                     const signed char[:, :] mask, double eta1, double eta2, double g,
                     double beta, Py_ssize_t ref, double[:] V, long[:] pol, bint use_pol,
                     Py_ssize_t target, long[:] seen, long[:] stack) noexcept nogil:
    cdef Py_ssize_t S = rew.shape[0]
    cdef Py_ssize_t i, k, d, top = 0
    cdef int c
    cdef double best, q
    cdef bint null
    for i in range(S):
        seen[i] = 0
    stack[top] = ref
    top += 1
    seen[ref] = 1
    while top > 0:
        top -= 1
        i = stack[top]
        if i == target:
            return True
        best = -INFINITY
        if not use_pol:
            if i == ref:
                null = False
                for c in range(4):
                    if mask[i, c] and u[i, c] == 0.0:
                        null = True
                if null and g == 0.0:
                    continue
            for c in range(4):
                if mask[i, c] and u[i, c] > 0.0:
                    q = _q(rew, u, ndst, dst, prb, i, c, eta1, eta2, g, beta, V)
                    if q > best:
                        best = q
        for c in range(4):
            if not mask[i, c] or u[i, c] == 0.0:
                continue
            if use_pol:
                if c != pol[i]:
                    continue
            elif _q(rew, u, ndst, dst, prb, i, c, eta1, eta2, g, beta, V) < best:
                continue
            for k in range(ndst[i, c]):
                d = dst[i, c, k]
                if not seen[d]:
                    seen[d] = 1
                    stack[top] = d
                    top += 1
    return False


def reachable(rew, u, ndst, dst, prb, mask, double eta1, double eta2, double g, double beta,
              Py_ssize_t ref, double[:] V, long[:] pol, bint use_pol, Py_ssize_t target):
    cdef Py_ssize_t S = V.shape[0]
    cdef long[:] seen = np.zeros(S, dtype=np.int64)
    cdef long[:] stack = np.zeros(S, dtype=np.int64)
    return _reachable(rew, u, ndst, dst, prb, mask, eta1, eta2, g, beta, ref, V, pol, use_pol,
                      target, seen, stack)


cdef class _Work:
    cdef double[:] V
    cdef double[:] new
    cdef long[:] pol
    cdef double[:, :] A
    cdef double[:] b
    cdef signed char[:, :] m1
    cdef signed char[:, :] m0
    cdef long[:] seen
    cdef long[:] stack

    def __init__(self, Py_ssize_t S, mask, Py_ssize_t target):
        self.seen = np.zeros(S, dtype=np.int64)
        self.stack = np.zeros(S, dtype=np.int64)
        self.V = np.zeros(S)
        self.new = np.zeros(S)
        self.pol = np.full(S, 3, dtype=np.int64)
        self.A = np.zeros((S, S))
        self.b = np.zeros(S)
        m1 = np.array(mask, dtype=np.int8, copy=True)
        m0 = np.array(mask, dtype=np.int8, copy=True)
        for c in range(4):
            if (c & 1) != 1:
                m1[target, c] = 0
            if (c & 1) != 0:
                m0[target, c] = 0
        self.m1 = m1
        self.m0 = m0


cdef int _gap(const double[:, :] rew, const double[:, :] u, const long[:, :] ndst,
              const long[:, :, :] dst, const double[:, :, :] prb, const signed char[:, :] mask,
              double eta, Py_ssize_t target, Py_ssize_t ref, bint exact, double beta,
              double sigma, long max_iter, _Work w, double* out):
    cdef double g1 = 0.0, g0 = 0.0, g = 0.0
    cdef int st
    if target == ref:
        if exact:
            st = _pi(rew, u, ndst, dst, prb, w.m1, eta, 0.0, ref, w.pol, w.V, w.A, w.b, max_iter, &g1)
        else:
            st = _gain(rew, u, ndst, dst, prb, w.m1, eta, 0.0, beta, ref, w.V, w.new, sigma, max_iter, &g1)
        if st != OK:
            return st
        if exact:
            st = _pi(rew, u, ndst, dst, prb, w.m0, eta, 0.0, ref, w.pol, w.V, w.A, w.b, max_iter, &g0)
        else:
            st = _gain(rew, u, ndst, dst, prb, w.m0, eta, 0.0, beta, ref, w.V, w.new, sigma, max_iter, &g0)
        if st != OK:
            return st
        out[0] = g1 - g0
        return OK
    cdef double b
    if exact:
        st = _pi(rew, u, ndst, dst, prb, mask, eta, 0.0, ref, w.pol, w.V, w.A, w.b, max_iter, &g)
        b = 1.0
    else:
        st = _gain(rew, u, ndst, dst, prb, mask, eta, 0.0, beta, ref, w.V, w.new, sigma, max_iter, &g)
        b = beta
    if st != OK:
        return st
    if not _reachable(rew, u, ndst, dst, prb, mask, eta, 0.0, g, b, ref, w.V, w.pol, exact,
                      target, w.seen, w.stack):
        # a state the optimal policy never visits counts as passive
        out[0] = -1.0
        return OK
    out[0] = _action_gap(rew, u, ndst, dst, prb, mask, eta, 0.0, g, b, w.V, target)
    return OK


def whittle_state(const double[:, :] rew, const double[:, :] u, const long[:, :] ndst,
                  const long[:, :, :] dst, const double[:, :, :] prb, const signed char[:, :] mask,
                  Py_ssize_t target, Py_ssize_t ref, bint exact, double beta, double sigma,
                  long max_iter):
    if not (mask[target, 1] or mask[target, 3]):
        return NEG_INF, OK
    cdef Py_ssize_t S = rew.shape[0]
    cdef _Work w = _Work(S, mask, target)
    cdef double lo0, hi0, s, lo, hi, tol, eta, gap = 0.0
    cdef int st, rep
    _rate_bounds(rew, mask, 0.0, 0.0, &lo0, &hi0)
    s = 1.0 + max(fabs(lo0), fabs(hi0))
    lo = -s
    hi = s
    for rep in range(61):
        if rep == 60:
            return lo, ERR_NO_CONVERGE
        st = _gap(rew, u, ndst, dst, prb, mask, lo, target, ref, exact, beta, sigma, max_iter, w, &gap)
        if st != OK:
            return lo, st
        if gap >= 0.0:
            break
        lo -= 2.0 * (hi - lo)
    for rep in range(61):
        if rep == 60:
            return hi, ERR_NO_CONVERGE
        st = _gap(rew, u, ndst, dst, prb, mask, hi, target, ref, exact, beta, sigma, max_iter, w, &gap)
        if st != OK:
            return hi, st
        if gap <= 0.0:
            break
        hi += 2.0 * (hi - lo)
    tol = 1e-12 * (1.0 + fabs(lo) + fabs(hi))
    eta = 0.5 * (lo + hi)
    for rep in range(200):
        eta = 0.5 * (lo + hi)
        st = _gap(rew, u, ndst, dst, prb, mask, eta, target, ref, exact, beta, sigma, max_iter, w, &gap)
        if st != OK:
            return eta, st
        if gap == 0.0 or (not exact and fabs(gap) < sigma):
            return eta, OK
        if gap > 0.0:
            lo = eta
        else:
            hi = eta
        if hi - lo <= tol:
            break
    return 0.5 * (lo + hi), OK


cdef inline double _qd(const double[:, :] rew, const double[:, :] u, const long[:, :] ndst,
                       const long[:, :, :] dst, const double[:, :, :] prb, Py_ssize_t i, int c,
                       double eta, double beta, double[:] V) noexcept nogil:
    if u[i, c] == 0.0:
        return 0.0
    return _q(rew, u, ndst, dst, prb, i, c, eta, 0.0, 0.0, beta, V)


cdef int _dpi(const double[:, :] rew, const double[:, :] u, const long[:, :] ndst,
              const long[:, :, :] dst, const double[:, :, :] prb, const signed char[:, :] mask,
              double eta, double beta, Py_ssize_t ref, long[:] pol, double[:] V,
              double[:, :] A, double[:] b, long max_iter) noexcept nogil:
    cdef Py_ssize_t S = rew.shape[0]
    cdef Py_ssize_t i, k, r
    cdef int c, cur, best_c
    cdef long it
    cdef double t, best_t, cur_t
    cdef bint changed
    for i in range(S):
        if not mask[i, pol[i]]:
            c = 3
            while c >= 0:
                if mask[i, c]:
                    pol[i] = c
                    break
                c -= 1
    for it in range(max_iter):
        for i in range(S):
            for r in range(S):
                A[i, r] = 0.0
            A[i, i] = 1.0
            b[i] = 0.0
            c = pol[i]
            if i == ref or u[i, c] == 0.0:
                continue
            b[i] = (rew[i, c] - (c & 1) * eta) / u[i, c]
            for k in range(ndst[i, c]):
                A[i, dst[i, c, k]] -= beta * prb[i, c, k]
        if not _lin_solve(A, b, S):
            return ERR_NO_CONVERGE
        for i in range(S):
            V[i] = b[i]
        changed = False
        for i in range(S):
            if i == ref:
                continue
            cur = pol[i]
            best_c = cur
            best_t = -INFINITY
            cur_t = -INFINITY
            for c in range(4):
                if not mask[i, c]:
                    continue
                t = _qd(rew, u, ndst, dst, prb, i, c, eta, beta, V)
                if c == cur:
                    cur_t = t
                if t > best_t:
                    best_t = t
                    best_c = c
            if best_t > cur_t + 1e-12 * (1.0 + fabs(cur_t)):
                pol[i] = best_c
                changed = True
        if not changed:
            return OK
    return ERR_NO_CONVERGE


def discounted_solve(rew, u, ndst, dst, prb, mask, double eta, double beta, Py_ssize_t ref,
                     long[:] pol, double[:] V, long max_iter):
    cdef Py_ssize_t S = V.shape[0]
    cdef double[:, :] A = np.zeros((S, S))
    cdef double[:] b = np.zeros(S)
    return _dpi(rew, u, ndst, dst, prb, mask, eta, beta, ref, pol, V, A, b, max_iter)


cdef int _dgap(const double[:, :] rew, const double[:, :] u, const long[:, :] ndst,
               const long[:, :, :] dst, const double[:, :, :] prb, const signed char[:, :] mask,
               double eta, Py_ssize_t target, Py_ssize_t ref, double beta, long max_iter,
               _Work w, double* out):
    cdef int st = _dpi(rew, u, ndst, dst, prb, mask, eta, beta, ref, w.pol, w.V, w.A, w.b, max_iter)
    cdef double b1 = -INFINITY, b0 = -INFINITY, q
    cdef int c
    if st != OK:
        return st
    for c in range(4):
        if mask[target, c]:
            q = _qd(rew, u, ndst, dst, prb, target, c, eta, beta, w.V)
            if c & 1:
                if q > b1:
                    b1 = q
            elif q > b0:
                b0 = q
    out[0] = b1 - b0
    return OK


def terminal_state(const double[:, :] rew, const double[:, :] u, const long[:, :] ndst,
                   const long[:, :, :] dst, const double[:, :, :] prb, const signed char[:, :] mask,
                   Py_ssize_t target, Py_ssize_t ref, double beta, double sigma, long max_iter):
    if not (mask[target, 1] or mask[target, 3]):
        return NEG_INF, OK
    if target == ref:
        return 0.0, OK
    cdef Py_ssize_t S = rew.shape[0]
    cdef _Work w = _Work(S, mask, target)
    cdef double lo0, hi0, lo, hi, tol, eta, gap = 0.0
    cdef int st, rep
    st = _dgap(rew, u, ndst, dst, prb, mask, 0.0, target, ref, beta, max_iter, w, &gap)
    if st != OK:
        return 0.0, st
    if gap <= 0.0:
        return 0.0, OK
    _rate_bounds(rew, mask, 0.0, 0.0, &lo0, &hi0)
    lo = 0.0
    hi = 1.0 + max(fabs(lo0), fabs(hi0))
    for rep in range(61):
        if rep == 60:
            return hi, ERR_NO_CONVERGE
        st = _dgap(rew, u, ndst, dst, prb, mask, hi, target, ref, beta, max_iter, w, &gap)
        if st != OK:
            return hi, st
        if gap <= 0.0:
            break
        lo = hi
        hi *= 2.0
    tol = 1e-12 * (1.0 + hi)
    eta = 0.5 * (lo + hi)
    for rep in range(200):
        eta = 0.5 * (lo + hi)
        st = _dgap(rew, u, ndst, dst, prb, mask, eta, target, ref, beta, max_iter, w, &gap)
        if st != OK:
            return eta, st
        if fabs(gap) < sigma:
            return eta, OK
        if gap > 0.0:
            lo = eta
        else:
            hi = eta
        if hi - lo <= tol:
            break
    return 0.5 * (lo + hi), OK


# ---------------------------------------------------------------------------
# Simulator


cdef class _Uniforms:
    cdef object rng
    cdef double[:] buf
    cdef Py_ssize_t pos

    def __init__(self, rng):
        self.rng = rng
        self.buf = rng.random(BLOCK)
        self.pos = 0

    cdef inline double next(self):
        if self.pos == BLOCK:
            self.buf = self.rng.random(BLOCK)
            self.pos = 0
        cdef double x = self.buf[self.pos]
        self.pos += 1
        return x


cdef inline void _tree_set(double[:] tree, Py_ssize_t P, Py_ssize_t j, double val) noexcept nogil:
    cdef Py_ssize_t k = P + j
    tree[k] = val
    k //= 2
    while k >= 1:
        tree[k] = tree[2 * k] + tree[2 * k + 1]
        k //= 2


cdef inline Py_ssize_t _tree_find(double[:] tree, Py_ssize_t P, double v) noexcept nogil:
    cdef Py_ssize_t k = 1
    cdef double left
    while k < P:
        left = tree[2 * k]
        if v < left or tree[2 * k + 1] <= 0.0:
            k = 2 * k
        else:
            v -= left
            k = 2 * k + 1
    return k - P


def simulate(
    const unsigned char[:] sv_self, const double[:] sv_R, const double[:, :] sv_mu,
    const double[:, :] sv_rnc, const long[:] tp_ptr, const long[:] tp_svc, const long[:] tp_slot,
    const double[:] edges, const double[:, :] cum, const double[:, :, :] tables,
    const long[:] tbl_of, int policy, long N, double horizon, double warmup, double bin_width,
    bint include_reneged, rng, Py_ssize_t trace_cap,
):
    cdef Py_ssize_t J = sv_R.shape[0]
    cdef Py_ssize_t L = cum.shape[1]
    cdef Py_ssize_t K = cum.shape[0]
    cdef Py_ssize_t P = 1
    while P < J:
        P *= 2
    cdef double[:] tree = np.zeros(2 * P)
    cdef long[:] cnt = np.zeros(J, dtype=np.int64)
    cdef long[:] side = np.zeros(J, dtype=np.int64)
    cdef double[:, :] times = np.zeros((J, max(N, 1)))
    cdef Py_ssize_t nbins = <Py_ssize_t>ceil(horizon / bin_width)
    bins_arr = np.zeros(nbins)
    cdef double[:] bins = bins_arr
    cdef Py_ssize_t maxdeg = 1
    cdef Py_ssize_t l
    for l in range(L):
        if tp_ptr[l + 1] - tp_ptr[l] > maxdeg:
            maxdeg = tp_ptr[l + 1] - tp_ptr[l]
    cdef long[:] cand = np.zeros(maxdeg, dtype=np.int64)
    cdef _Uniforms U = _Uniforms(rng)
    tr_t_arr = np.zeros(trace_cap)
    tr_code_arr = np.zeros((trace_cap, 3), dtype=np.int64)
    cdef double[:] tr_t = tr_t_arr
    cdef long[:, :] tr_code = tr_code_arr
    cdef Py_ssize_t ntr = 0
    cdef double t = 0.0
    cdef Py_ssize_t k = 0
    cdef long arrivals = 0, matches = 0, reneges = 0, waiting = 0, n_events = 0
    cdef double reward_win = 0.0, area = 0.0, dmean = 0.0, dm2 = 0.0, delta
    cdef long dcount = 0
    cdef int status = OK
    cdef double A, tot, x, stop, dt, tn, v, bestv, sc, lam, d, rr
    cdef bint win
    cdef Py_ssize_t b, lo, hi, mid, ell, e, j, s, best, nc, q, r, jj
    cdef long n, own, partner, xs, cap
    cdef int ev
    while True:
        A = cum[k, L - 1] if L > 0 else 0.0
        tot = A + tree[1]
        x = U.next()
        stop = edges[k + 1]
        if stop > horizon:
            stop = horizon
        if tot > 0.0:
            dt = -log(1.0 - x) / tot
        else:
            dt = INFINITY
        if t + dt >= stop:
            if t < warmup:
                if stop > warmup:
                    area += waiting * (stop - warmup)
            else:
                area += waiting * (stop - t)
            t = stop
            if t >= horizon:
                break
            k += 1
            continue
        tn = t + dt
        if tn > warmup:
            area += waiting * (tn - (t if t > warmup else warmup))
        t = tn
        n_events += 1
        v = U.next() * tot
        win = t >= warmup
        b = <Py_ssize_t>(t / bin_width)
        if b >= nbins:
            b = nbins - 1
        if v < A:
            lo = 0
            hi = L - 1
            while lo < hi:
                mid = (lo + hi) // 2
                if cum[k, mid] > v:
                    hi = mid
                else:
                    lo = mid + 1
            ell = lo
            arrivals += 1
            best = -1
            nc = 0
            bestv = 0.0
            lam = cum[k, ell] - (cum[k, ell - 1] if ell > 0 else 0.0)
            for e in range(tp_ptr[ell], tp_ptr[ell + 1]):
                j = tp_svc[e]
                s = tp_slot[e]
                n = cnt[j]
                if sv_self[j]:
                    own = n
                    partner = n
                    xs = n
                else:
                    own = n if (n > 0 and side[j] == s) else 0
                    partner = n if (n > 0 and side[j] != s) else 0
                    if own >= N:
                        continue
                    xs = own - partner
                if policy == 0:
                    sc = tables[tbl_of[k], e, xs + N]
                elif policy == 1:
                    sc = -own
                elif policy == 2:
                    sc = partner
                else:
                    sc = sv_R[j] * lam if partner > 0 else 0.0
                if best < 0 or sc > bestv:
                    best = e
                    bestv = sc
                    nc = 1
                    cand[0] = e
                elif policy == 3 and sc == bestv:
                    cand[nc] = e
                    nc += 1
            if best < 0:
                status = ERR_STATE
                break
            if policy == 3 and nc > 1:
                best = cand[<Py_ssize_t>(U.next() * nc)]
            j = tp_svc[best]
            s = tp_slot[best]
            n = cnt[j]
            if n > 0 and (sv_self[j] or side[j] != s):
                d = t - times[j, 0]
                for q in range(1, n):
                    times[j, q - 1] = times[j, q]
                cnt[j] = n - 1
                waiting -= 1
                matches += 1
                if win:
                    reward_win += sv_R[j]
                    dcount += 1
                    delta = d - dmean
                    dmean += delta / dcount
                    dm2 += delta * (d - dmean)
                    dcount += 1
                    delta = 0.0 - dmean
                    dmean += delta / dcount
                    dm2 += delta * (0.0 - dmean)
                bins[b] += sv_R[j]
                ev = 1
            else:
                cap = 1 if sv_self[j] else N
                if n >= cap:
                    status = ERR_STATE
                    break
                times[j, n] = t
                cnt[j] = n + 1
                side[j] = s
                waiting += 1
                ev = 0
            _tree_set(tree, P, j, cnt[j] * sv_mu[j, side[j]])
            if ntr < trace_cap:
                tr_t[ntr] = t
                tr_code[ntr, 0] = ev
                tr_code[ntr, 1] = ell
                tr_code[ntr, 2] = j
                ntr += 1
        else:
            j = _tree_find(tree, P, v - A)
            if j >= J or cnt[j] == 0:
                j = -1
                jj = J - 1
                while jj >= 0:
                    if cnt[jj] > 0:
                        j = jj
                        break
                    jj -= 1
                if j < 0:
                    status = ERR_STATE
                    break
            n = cnt[j]
            q = <Py_ssize_t>(U.next() * n)
            d = t - times[j, q]
            for r in range(q + 1, n):
                times[j, r - 1] = times[j, r]
            cnt[j] = n - 1
            waiting -= 1
            reneges += 1
            rr = sv_rnc[j, side[j]]
            if win:
                reward_win += rr
                if include_reneged:
                    dcount += 1
                    delta = d - dmean
                    dmean += delta / dcount
                    dm2 += delta * (d - dmean)
            bins[b] += rr
            _tree_set(tree, P, j, cnt[j] * sv_mu[j, side[j]])
            if ntr < trace_cap:
                tr_t[ntr] = t
                tr_code[ntr, 0] = 2
                tr_code[ntr, 1] = -1
                tr_code[ntr, 2] = j
                ntr += 1
    final = np.zeros((J, 2), dtype=np.int64)
    for j in range(J):
        if cnt[j] > 0:
            final[j, side[j]] = cnt[j]
    return {
        "status": status,
        "time": t,
        "reward_window": reward_win,
        "bins": bins_arr,
        "arrivals": arrivals,
        "matches": matches,
        "reneges": reneges,
        "waiting": waiting,
        "queue_area": area,
        "delay_count": dcount,
        "delay_mean": dmean,
        "delay_m2": dm2,
        "n_events": n_events,
        "final_counts": final,
        "trace_t": tr_t_arr[:ntr],
        "trace_code": tr_code_arr[:ntr],
    }
