"""Compiled jump-hold loops.

States are integer count vectors; the scaled state is counts / N.  Every
kernel draws from a numpy ``Generator`` passed in by the caller, so the
random stream is fully determined by how that generator was keyed.
"""

import numpy as np
from numba import njit

STATUS_HORIZON = 0
STATUS_ABSORBED = 1
STATUS_LEFT_A = 2
STATUS_EXITED = 3

# region operator codes
OP_GT, OP_GE, OP_LT, OP_LE = 0, 1, 2, 3


@njit(cache=True)
def poly_rates(coef, exps, counts, N, out):
    k, width = coef.shape
    d = exps.shape[2]
    for j in range(k):
        s = 0.0
        for t in range(width):
            c = coef[j, t]
            if c == 0.0:
                continue
            v = c
            for i in range(d):
                e = exps[j, t, i]
                if e > 0:
                    v *= (counts[i] / N) ** e
            s += v
        out[j] = s


@njit(cache=True)
def in_region(counts, N, ridx, rop, rval):
    for c in range(ridx.size):
        x = counts[ridx[c]] / N
        op = rop[c]
        v = rval[c]
        if op == 0:
            ok = x > v
        elif op == 1:
            ok = x >= v
        elif op == 2:
            ok = x < v
        else:
            ok = x <= v
        if not ok:
            return False
    return True


@njit(cache=True)
def _inside_lattice(counts, N):
    s = 0
    for i in range(counts.size):
        if counts[i] < 0:
            return False
        s += counts[i]
    return s <= N


@njit(cache=True)
def _grow(times, trans, n):
    t2 = np.empty(2 * times.size)
    j2 = np.empty(2 * trans.size, dtype=np.int64)
    t2[:n] = times[:n]
    j2[:n] = trans[:n]
    return t2, j2


@njit(cache=True)
def ssa(gen, coef, exps, jumps, counts, N, t0, t_end, tol_rate,
        ridx, rop, rval, record):
    """Jump-hold simulation of the density-dependent chain.

    Returns (times, transitions, n_events, status, t_stop, final_counts).
    With a nonempty region the run stops at the first state outside it.
    ``counts`` is updated in place.
    """
    k = coef.shape[0]
    d = counts.size
    rates = np.empty(k)
    cap = 256 if record else 1
    times = np.empty(cap)
    trans = np.empty(cap, dtype=np.int64)
    n = 0
    t = t0
    check = ridx.size > 0
    while True:
        poly_rates(coef, exps, counts, N, rates)
        total = 0.0
        for j in range(k):
            if rates[j] > 0.0:
                total += rates[j]
        if total <= tol_rate:
            return times, trans, n, STATUS_ABSORBED, t, counts
        t = t + gen.exponential() / (N * total)
        if t > t_end:
            return times, trans, n, STATUS_HORIZON, t_end, counts
        u = gen.random() * total
        acc = 0.0
        jsel = -1
        for j in range(k):
            if rates[j] > 0.0:
                acc += rates[j]
                jsel = j
                if u < acc:
                    break
        for i in range(d):
            counts[i] += jumps[jsel, i]
        if record:
            if n == times.size:
                times, trans = _grow(times, trans, n)
            times[n] = t
            trans[n] = jsel
        n += 1
        if not _inside_lattice(counts, N):
            for i in range(d):
                counts[i] -= jumps[jsel, i]
            if not record:
                trans[0] = jsel
                times[0] = t
            return times, trans, n, STATUS_LEFT_A, t, counts
        if check and not in_region(counts, N, ridx, rop, rval):
            return times, trans, n, STATUS_EXITED, t, counts


@njit(cache=True)
def ssa_tilted(gen, mu, eps, jumps, counts, N, record):
    """Jump-hold simulation with window-constant intensities ``mu`` (L, k).

    Transition j fires at rate N * mu[l, j] in window l, except that jumps
    leaving the lattice of A are switched off.  Returns
    (times, transitions, n_events, final_counts).
    """
    L, k = mu.shape
    d = counts.size
    cap = 256 if record else 1
    times = np.empty(cap)
    trans = np.empty(cap, dtype=np.int64)
    eff = np.empty(k)
    n = 0
    for l in range(L):
        t = l * eps
        t_end = (l + 1) * eps
        while True:
            total = 0.0
            for j in range(k):
                r = mu[l, j]
                if r > 0.0:
                    ok = True
                    s = 0
                    for i in range(d):
                        c = counts[i] + jumps[j, i]
                        if c < 0:
                            ok = False
                        s += c
                    if s > N:
                        ok = False
                    if not ok:
                        r = 0.0
                else:
                    r = 0.0
                eff[j] = r
                total += r
            if total <= 0.0:
                break
            t = t + gen.exponential() / (N * total)
            if t > t_end:
                break
            u = gen.random() * total
            acc = 0.0
            jsel = -1
            for j in range(k):
                if eff[j] > 0.0:
                    acc += eff[j]
                    jsel = j
                    if u < acc:
                        break
            for i in range(d):
                counts[i] += jumps[jsel, i]
            if record:
                if n == times.size:
                    times, trans = _grow(times, trans, n)
                times[n] = t
                trans[n] = jsel
            n += 1
    return times, trans, n, counts
