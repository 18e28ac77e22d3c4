"""Pure-Python kernels. Same algorithms, loop order and RNG consumption as
the compiled ``_kernels`` module, so both give identical results.

Sub-process model arrays (S states, 4 action codes ``c = a1 + 2*a2``):
``rew[S,4]`` reward rate before multipliers, ``u[S,4]`` sojourn rate,
``ndst[S,4]`` number of jump targets, ``dst[S,4,3]`` / ``prb[S,4,3]``
targets and probabilities, ``mask[S,4]`` admissibility.
"""

import math

import numpy as np

NEG_INF = float("-inf")
BLOCK = 4096

# Status codes shared with the compiled kernels.
OK = 0
ERR_NO_CONVERGE = 3
ERR_STATE = 4


def _q(rew, u, ndst, dst, prb, i, c, eta1, eta2, g, beta, V):
    uc = u[i, c]
    val = (rew[i, c] - (c & 1) * eta1 - (c >> 1) * eta2 - g) / uc
    acc = 0.0
    for k in range(ndst[i, c]):
        acc += prb[i, c, k] * V[dst[i, c, k]]
    return val + beta * acc


def vi_solve(rew, u, ndst, dst, prb, mask, eta1, eta2, g, beta, ref, V, sigma, max_iter):
    """Synchronous value iteration with ``V[ref]`` pinned to 0; V updated in place.

    Returns the number of sweeps, or -1 without convergence.
    """
    S = rew.shape[0]
    new = [0.0] * S
    for it in range(1, max_iter + 1):
        delta = 0.0
        for i in range(S):
            if i == ref:
                new[i] = 0.0
                continue
            best = NEG_INF
            for c in range(4):
                if mask[i, c] and u[i, c] > 0.0:
                    q = _q(rew, u, ndst, dst, prb, i, c, eta1, eta2, g, beta, V)
                    if q > best:
                        best = q
            new[i] = best
        for i in range(S):
            d = abs(new[i] - V[i])
            if d > delta:
                delta = d
            V[i] = new[i]
        if delta < sigma:
            return it
    return -1


def h_ref(rew, u, ndst, dst, prb, mask, eta1, eta2, g, beta, ref, V, with_null):
    """Best backup value at the reference state.

    A zero-rate (null) action counts as 0 when ``with_null`` is set and is
    skipped otherwise. Returns -inf if no action qualifies.
    """
    best = NEG_INF
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


def _rate_bounds(rew, mask, eta1, eta2):
    lo = math.inf
    hi = -math.inf
    for i in range(rew.shape[0]):
        for c in range(4):
            if mask[i, c]:
                r = rew[i, c] - (c & 1) * eta1 - (c >> 1) * eta2
                lo = min(lo, r)
                hi = max(hi, r)
    return lo, hi


def gain_solve(rew, u, ndst, dst, prb, mask, eta1, eta2, beta, ref, V, sigma, max_iter):
    """Bisection on g so that the reference-state backup equals zero.

    Returns ``(g, status)``. V holds the values at the returned g.
    """
    has_null = False
    has_move = False
    for c in range(4):
        if mask[ref, c]:
            if u[ref, c] > 0.0:
                has_move = True
            else:
                has_null = True
    if not has_move:
        for i in range(V.shape[0]):
            V[i] = 0.0
        if vi_solve(rew, u, ndst, dst, prb, mask, eta1, eta2, 0.0, beta, ref, V, sigma, max_iter) < 0:
            return 0.0, ERR_NO_CONVERGE
        return 0.0, OK
    lo, hi = _rate_bounds(rew, mask, eta1, eta2)
    width = hi - lo
    if has_null:
        lo = 0.0
        if vi_solve(rew, u, ndst, dst, prb, mask, eta1, eta2, 0.0, beta, ref, V, sigma, max_iter) < 0:
            return 0.0, ERR_NO_CONVERGE
        if h_ref(rew, u, ndst, dst, prb, mask, eta1, eta2, 0.0, beta, ref, V, 0) <= 0.0:
            return 0.0, OK
    pad = 1.0 + abs(width)
    lo -= pad
    hi += pad
    for _ in range(60):
        if vi_solve(rew, u, ndst, dst, prb, mask, eta1, eta2, hi, beta, ref, V, sigma, max_iter) < 0:
            return hi, ERR_NO_CONVERGE
        if h_ref(rew, u, ndst, dst, prb, mask, eta1, eta2, hi, beta, ref, V, 0) < 0.0:
            break
        hi += 2.0 * (hi - lo)
    else:
        return hi, ERR_NO_CONVERGE
    if not has_null:
        for _ in range(60):
            if vi_solve(rew, u, ndst, dst, prb, mask, eta1, eta2, lo, beta, ref, V, sigma, max_iter) < 0:
                return lo, ERR_NO_CONVERGE
            if h_ref(rew, u, ndst, dst, prb, mask, eta1, eta2, lo, beta, ref, V, 0) > 0.0:
                break
            lo -= 2.0 * (hi - lo)
        else:
            return lo, ERR_NO_CONVERGE
    tol = 1e-13 * (1.0 + abs(hi) + abs(lo))
    g = 0.5 * (lo + hi)
    for _ in range(200):
        g = 0.5 * (lo + hi)
        if vi_solve(rew, u, ndst, dst, prb, mask, eta1, eta2, g, beta, ref, V, sigma, max_iter) < 0:
            return g, ERR_NO_CONVERGE
        H = h_ref(rew, u, ndst, dst, prb, mask, eta1, eta2, g, beta, ref, V, 0)
        if H > 0.0:
            lo = g
        elif H < 0.0:
            hi = g
        else:
            break
        if hi - lo <= tol:
            break
    g = 0.5 * (lo + hi)
    if vi_solve(rew, u, ndst, dst, prb, mask, eta1, eta2, g, beta, ref, V, sigma, max_iter) < 0:
        return g, ERR_NO_CONVERGE
    return g, OK


def _lin_solve(A, b, n):
    """Gaussian elimination with partial pivoting; A and b overwritten."""
    for col in range(n):
        piv = col
        big = abs(A[col, col])
        for r in range(col + 1, n):
            if abs(A[r, col]) > big:
                big = abs(A[r, col])
                piv = r
        if big == 0.0:
            return False
        if piv != col:
            for k in range(n):
                A[col, k], A[piv, k] = A[piv, k], A[col, k]
            b[col], b[piv] = b[piv], b[col]
        for r in range(col + 1, n):
            f = A[r, col] / A[col, col]
            if f != 0.0:
                for k in range(col, n):
                    A[r, k] -= f * A[col, k]
                b[r] -= f * b[col]
    for r in range(n - 1, -1, -1):
        acc = b[r]
        for k in range(r + 1, n):
            acc -= A[r, k] * b[k]
        b[r] = acc / A[r, r]
    return True


def pi_solve(rew, u, ndst, dst, prb, mask, eta1, eta2, ref, pol, h, max_iter):
    """Average-reward policy iteration on the CTMC (rate form).

    ``pol`` holds action codes and is used as the starting policy (invalid
    entries are replaced); ``h`` receives relative values with ``h[ref] = 0``.
    Returns ``(g, status)``.
    """
    S = rew.shape[0]
    for i in range(S):
        if not mask[i, pol[i]]:
            for c in range(3, -1, -1):
                if mask[i, c]:
                    pol[i] = c
                    break
    A = np.zeros((S, S))
    b = np.zeros(S)
    lo, hi = _rate_bounds(rew, mask, eta1, eta2)
    eps = 1e-12 * (1.0 + abs(lo) + abs(hi))
    g = 0.0
    for _ in range(max_iter):
        A[:, :] = 0.0
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
            return g, ERR_NO_CONVERGE
        g = b[ref]
        for i in range(S):
            h[i] = 0.0 if i == ref else b[i]
        changed = False
        for i in range(S):
            cur = pol[i]
            best_c = cur
            best_t = NEG_INF
            cur_t = NEG_INF
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
            return g, OK
    return g, ERR_NO_CONVERGE


def action_gap(rew, u, ndst, dst, prb, mask, eta1, eta2, g, beta, V, i):
    """Best backup with a1 = 1 minus best backup with a1 = 0 at state i."""
    b1 = NEG_INF
    b0 = NEG_INF
    for c in range(4):
        if mask[i, c] and u[i, c] > 0.0:
            q = _q(rew, u, ndst, dst, prb, i, c, eta1, eta2, g, beta, V)
            if c & 1:
                if q > b1:
                    b1 = q
            elif q > b0:
                b0 = q
    return b1 - b0


def reachable(rew, u, ndst, dst, prb, mask, eta1, eta2, g, beta, ref, V, pol, use_pol, target):
    """Whether ``target`` is reachable from ``ref`` under the greedy policy.

    With ``use_pol`` the policy is ``pol``; otherwise every maximizing
    action of the current values counts. At the reference state a null
    action is taken when the gain is exactly zero.
    """
    S = rew.shape[0]
    seen = [0] * S
    stack = [ref]
    seen[ref] = 1
    while stack:
        i = stack.pop()
        if i == target:
            return True
        best = NEG_INF
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
                    stack.append(d)
    return False


def _restricted(mask, i, a1):
    m = mask.copy()
    for c in range(4):
        if (c & 1) != a1:
            m[i, c] = 0
    return m


def _gap(rew, u, ndst, dst, prb, mask, eta, target, ref, exact, beta, sigma, max_iter, V, pol):
    if target == ref:
        gains = []
        for a1 in (1, 0):
            m = _restricted(mask, target, a1)
            if exact:
                g, st = pi_solve(rew, u, ndst, dst, prb, m, eta, 0.0, ref, pol, V, max_iter)
            else:
                g, st = gain_solve(rew, u, ndst, dst, prb, m, eta, 0.0, beta, ref, V, sigma, max_iter)
            if st != OK:
                return 0.0, st
            gains.append(g)
        return gains[0] - gains[1], OK
    if exact:
        g, st = pi_solve(rew, u, ndst, dst, prb, mask, eta, 0.0, ref, pol, V, max_iter)
        b = 1.0
    else:
        g, st = gain_solve(rew, u, ndst, dst, prb, mask, eta, 0.0, beta, ref, V, sigma, max_iter)
        b = beta
    if st != OK:
        return 0.0, st
    if not reachable(rew, u, ndst, dst, prb, mask, eta, 0.0, g, b, ref, V, pol, exact, target):
        # a state the optimal policy never visits counts as passive
        return -1.0, OK
    return action_gap(rew, u, ndst, dst, prb, mask, eta, 0.0, g, b, V, target), OK


def whittle_state(rew, u, ndst, dst, prb, mask, target, ref, exact, beta, sigma, max_iter):
    """Bisection on the multiplier of action slot 1 for one state.

    Partner actions are whatever ``mask`` allows. Returns ``(eta, status)``;
    ``eta`` is -inf where a1 = 1 is inadmissible.
    """
    if not (mask[target, 1] or mask[target, 3]):
        return NEG_INF, OK
    S = rew.shape[0]
    V = np.zeros(S)
    pol = np.full(S, 3, dtype=np.int64)
    lo0, hi0 = _rate_bounds(rew, mask, 0.0, 0.0)
    s = 1.0 + max(abs(lo0), abs(hi0))
    lo, hi = -s, s
    for _ in range(60):
        gap, st = _gap(rew, u, ndst, dst, prb, mask, lo, target, ref, exact, beta, sigma, max_iter, V, pol)
        if st != OK:
            return lo, st
        if gap >= 0.0:
            break
        lo -= 2.0 * (hi - lo)
    else:
        return lo, ERR_NO_CONVERGE
    for _ in range(60):
        gap, st = _gap(rew, u, ndst, dst, prb, mask, hi, target, ref, exact, beta, sigma, max_iter, V, pol)
        if st != OK:
            return hi, st
        if gap <= 0.0:
            break
        hi += 2.0 * (hi - lo)
    else:
        return hi, ERR_NO_CONVERGE
    tol = 1e-12 * (1.0 + abs(lo) + abs(hi))
    eta = 0.5 * (lo + hi)
    for _ in range(200):
        eta = 0.5 * (lo + hi)
        gap, st = _gap(rew, u, ndst, dst, prb, mask, eta, target, ref, exact, beta, sigma, max_iter, V, pol)
        if st != OK:
            return eta, st
        if gap == 0.0 or (not exact and abs(gap) < sigma):
            return eta, OK
        if gap > 0.0:
            lo = eta
        else:
            hi = eta
        if hi - lo <= tol:
            break
    return 0.5 * (lo + hi), OK


def _qd(rew, u, ndst, dst, prb, i, c, eta, beta, V):
    if u[i, c] == 0.0:
        return 0.0
    return _q(rew, u, ndst, dst, prb, i, c, eta, 0.0, 0.0, beta, V)


def discounted_solve(rew, u, ndst, dst, prb, mask, eta, beta, ref, pol, V, max_iter):
    """Policy iteration for the damped problem with ``V[ref]`` held at 0.

    The reference state is terminal, so ``V`` is the exact fixed point of
    value iteration at ``g = 0``. Zero-rate actions are worth 0. ``pol``
    warm-starts the search and receives the final policy. Returns a status.
    """
    S = rew.shape[0]
    for i in range(S):
        if not mask[i, pol[i]]:
            for c in range(3, -1, -1):
                if mask[i, c]:
                    pol[i] = c
                    break
    A = np.zeros((S, S))
    b = np.zeros(S)
    for _ in range(max_iter):
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
            best_t = NEG_INF
            cur_t = NEG_INF
            for c in range(4):
                if not mask[i, c]:
                    continue
                t = _qd(rew, u, ndst, dst, prb, i, c, eta, beta, V)
                if c == cur:
                    cur_t = t
                if t > best_t:
                    best_t = t
                    best_c = c
            if best_t > cur_t + 1e-12 * (1.0 + abs(cur_t)):
                pol[i] = best_c
                changed = True
        if not changed:
            return OK
    return ERR_NO_CONVERGE


def _dgap(rew, u, ndst, dst, prb, mask, eta, target, ref, beta, max_iter, V, pol):
    st = discounted_solve(rew, u, ndst, dst, prb, mask, eta, beta, ref, pol, V, max_iter)
    if st != OK:
        return 0.0, st
    b1 = NEG_INF
    b0 = NEG_INF
    for c in range(4):
        if mask[target, c]:
            q = _qd(rew, u, ndst, dst, prb, target, c, eta, beta, V)
            if c & 1:
                if q > b1:
                    b1 = q
            elif q > b0:
                b0 = q
    return b1 - b0, OK


def terminal_state(rew, u, ndst, dst, prb, mask, target, ref, beta, sigma, max_iter):
    """Index of one state with ``ref`` treated as terminal (value 0).

    Bisection over ``[0, inf)`` on the damped value gap between a1 = 1 and
    a1 = 0 at ``target``, stopping once the gap is below ``sigma``. The
    reference state itself gets 0; inadmissible states get -inf.
    """
    if not (mask[target, 1] or mask[target, 3]):
        return NEG_INF, OK
    if target == ref:
        return 0.0, OK
    S = rew.shape[0]
    V = np.zeros(S)
    pol = np.full(S, 3, dtype=np.int64)
    gap, st = _dgap(rew, u, ndst, dst, prb, mask, 0.0, target, ref, beta, max_iter, V, pol)
    if st != OK:
        return 0.0, st
    if gap <= 0.0:
        return 0.0, OK
    lo0, hi0 = _rate_bounds(rew, mask, 0.0, 0.0)
    lo = 0.0
    hi = 1.0 + max(abs(lo0), abs(hi0))
    for rep in range(61):
        if rep == 60:
            return hi, ERR_NO_CONVERGE
        gap, st = _dgap(rew, u, ndst, dst, prb, mask, hi, target, ref, beta, max_iter, V, pol)
        if st != OK:
            return hi, st
        if gap <= 0.0:
            break
        lo = hi
        hi *= 2.0
    tol = 1e-12 * (1.0 + hi)
    eta = 0.5 * (lo + hi)
    for _ in range(200):
        eta = 0.5 * (lo + hi)
        gap, st = _dgap(rew, u, ndst, dst, prb, mask, eta, target, ref, beta, max_iter, V, pol)
        if st != OK:
            return eta, st
        if abs(gap) < sigma:
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


class _Uniforms:
    __slots__ = ("rng", "buf", "pos")

    def __init__(self, rng):
        self.rng = rng
        self.buf = rng.random(BLOCK)
        self.pos = 0

    def next(self):
        if self.pos == BLOCK:
            self.buf = self.rng.random(BLOCK)
            self.pos = 0
        x = self.buf[self.pos]
        self.pos += 1
        return float(x)


def _tree_set(tree, P, j, val):
    k = P + j
    tree[k] = val
    k //= 2
    while k >= 1:
        tree[k] = tree[2 * k] + tree[2 * k + 1]
        k //= 2


def _tree_find(tree, P, v):
    k = 1
    while k < P:
        left = tree[2 * k]
        if v < left or tree[2 * k + 1] <= 0.0:
            k = 2 * k
        else:
            v -= left
            k = 2 * k + 1
    return k - P


def simulate(
    sv_self, sv_R, sv_mu, sv_rnc, tp_ptr, tp_svc, tp_slot,
    edges, cum, tables, tbl_of, policy, N, horizon, warmup, bin_width,
    include_reneged, rng, trace_cap,
):
    """Event loop over the full counting process.

    ``cum[k, l]`` is the cumulative arrival rate of types ``0..l`` in
    interval k, ``edges[k]`` that interval's start (``edges[K]`` may be inf).
    Policies: 0 BI, 1 JSQ, 2 JLQ, 3 myopic. Returns a dict of raw tallies.
    """
    J = sv_R.shape[0]
    L = cum.shape[1]
    K = cum.shape[0]
    P = 1
    while P < J:
        P *= 2
    tree = [0.0] * (2 * P)
    cnt = [0] * J
    side = [0] * J
    times = [[0.0] * N for _ in range(J)]
    nbins = int(math.ceil(horizon / bin_width))
    bins = np.zeros(nbins)
    cand = [0] * (max(tp_ptr[l + 1] - tp_ptr[l] for l in range(L)) if L else 1)
    U = _Uniforms(rng)
    tr_t = np.zeros(trace_cap)
    tr_code = np.zeros((trace_cap, 3), dtype=np.int64)
    ntr = 0
    t = 0.0
    k = 0
    while k + 1 < K + 1 and edges[k + 1] <= t:
        k += 1
    arrivals = matches = reneges = waiting = 0
    reward_win = 0.0
    area = 0.0
    dcount = 0
    dmean = 0.0
    dm2 = 0.0
    n_events = 0
    status = OK
    while True:
        A = cum[k, L - 1] if L else 0.0
        tot = A + tree[1]
        x = U.next()
        stop = edges[k + 1]
        if stop > horizon:
            stop = horizon
        if tot > 0.0:
            dt = -math.log(1.0 - x) / tot
        else:
            dt = math.inf
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
        b = int(t / bin_width)
        if b >= nbins:
            b = nbins - 1
        if v < A:
            lo, hi = 0, L - 1
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
                best = cand[int(U.next() * nc)]
            j = tp_svc[best]
            s = tp_slot[best]
            n = cnt[j]
            if n > 0 and (sv_self[j] or side[j] != s):
                d = t - times[j][0]
                for q in range(1, n):
                    times[j][q - 1] = times[j][q]
                cnt[j] = n - 1
                waiting -= 1
                matches += 1
                if win:
                    reward_win += sv_R[j]
                    for dd in (d, 0.0):
                        dcount += 1
                        delta = dd - dmean
                        dmean += delta / dcount
                        dm2 += delta * (dd - dmean)
                bins[b] += sv_R[j]
                ev = 1
            else:
                cap = 1 if sv_self[j] else N
                if n >= cap:
                    status = ERR_STATE
                    break
                times[j][n] = t
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
                for jj in range(J - 1, -1, -1):
                    if cnt[jj] > 0:
                        j = jj
                        break
                if j < 0:
                    status = ERR_STATE
                    break
            n = cnt[j]
            q = int(U.next() * n)
            d = t - times[j][q]
            for r in range(q + 1, n):
                times[j][r - 1] = times[j][r]
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
        "bins": bins,
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
        "trace_t": tr_t[:ntr],
        "trace_code": tr_code[:ntr],
    }
