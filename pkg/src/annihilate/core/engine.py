"""Compiled event loop for one two-type annihilating system on a finite graph.

Particles are indexed by ``pid`` in label order ``(site, j)``; every particle's
trajectory and braveness come from its own counter-based stream, so the run is
a deterministic function of the inputs.  Ties in event time (measure zero, but
possible in floating point) resolve by pid and are counted.
"""
import numba as nb
import numpy as np

from ..rng import PARTICLE, exponential, step_index, stream_key, uniform

KIND_JUMP = 0
KIND_ANNIH = 1


@nb.njit(cache=True)
def _sift_down(ht, hp, size, i):
    t = ht[i]
    p = hp[i]
    while True:
        c = 2 * i + 1
        if c >= size:
            break
        if c + 1 < size and (ht[c + 1] < ht[c] or (ht[c + 1] == ht[c] and hp[c + 1] < hp[c])):
            c += 1
        if ht[c] < t or (ht[c] == t and hp[c] < p):
            ht[i] = ht[c]
            hp[i] = hp[c]
            i = c
        else:
            break
    ht[i] = t
    hp[i] = p


@nb.njit(cache=True)
def _heap_pop(ht, hp, size):
    size -= 1
    ht[0] = ht[size]
    hp[0] = hp[size]
    _sift_down(ht, hp, size, 0)
    return size


@nb.njit(cache=True)
def _grow(a, n):
    out = np.empty(n, dtype=a.dtype)
    out[:len(a)] = a
    return out


@nb.njit(cache=True)
def simulate(indptr, dest, cum, edisp, period, psite, pj, ptype, psalt,
             seed, rate_a, rate_b, t_max, checkpoints, watch, ladder, record):
    """Run to ``t_max``.

    ``psite``/``pj``/``ptype``/``psalt`` describe the particles (type +1 for A,
    -1 for B).  ``checkpoints`` are sorted observation times for
    ``(N_A, N_B, annihilations)``; ``watch`` is a site index (or -1) whose
    landing events are counted up to each time in ``ladder``.
    """
    n = len(psite)
    n_sites = len(indptr) - 1
    dim = edisp.shape[1]

    pos = psite.copy()
    alive = np.ones(n, dtype=np.bool_)
    jumps = np.zeros(n, dtype=np.int64)
    brave = np.empty(n)
    keys = np.empty(n, dtype=np.uint64)
    death = np.full(n, np.inf)
    disp = np.zeros((n, dim), dtype=np.int64)
    occ = np.zeros(n_sites, dtype=np.int64)
    head = np.full(n_sites, -1, dtype=np.int64)
    nxt = np.full(n, -1, dtype=np.int64)
    prv = np.full(n, -1, dtype=np.int64)

    ht = np.empty(n + 1)
    hp = np.empty(n + 1, dtype=np.int64)
    size = 0
    n_a = 0
    n_b = 0
    for p in range(n):
        keys[p] = stream_key(seed, PARTICLE, psite[p], pj[p], psalt[p])
        brave[p] = uniform(keys[p], 0)
        s = psite[p]
        occ[s] += ptype[p]
        nxt[p] = head[s]
        if head[s] >= 0:
            prv[head[s]] = p
        head[s] = p
        if ptype[p] > 0:
            n_a += 1
            rate = rate_a
        else:
            n_b += 1
            rate = rate_b
        if rate > 0:
            ht[size] = exponential(keys[p], 1, rate)
            hp[size] = p
            size += 1
    for i in range(size // 2 - 1, -1, -1):
        _sift_down(ht, hp, size, i)

    n_chk = len(checkpoints)
    chk_a = np.zeros(n_chk, dtype=np.int64)
    chk_b = np.zeros(n_chk, dtype=np.int64)
    chk_ann = np.zeros(n_chk, dtype=np.int64)
    n_lad = len(ladder)
    lad_visits = np.zeros(n_lad, dtype=np.int64)
    ci = 0
    li = 0

    cap = 1024 if record else 1
    ev_t = np.empty(cap)
    ev_kind = np.empty(cap, dtype=np.int8)
    ev_p = np.empty(cap, dtype=np.int64)
    ev_q = np.empty(cap, dtype=np.int64)
    ev_from = np.empty(cap, dtype=np.int64)
    ev_to = np.empty(cap, dtype=np.int64)
    n_ev = 0

    annihilations = 0
    visits = 0
    ties = 0
    n_jumps = 0
    last_t = -1.0
    first_wrap = np.inf
    half = period // 2

    while size > 0:
        p = hp[0]
        t = ht[0]
        if not alive[p]:
            size = _heap_pop(ht, hp, size)
            continue
        if t > t_max:
            break
        if t == last_t:
            ties += 1
        last_t = t
        while ci < n_chk and checkpoints[ci] < t:
            chk_a[ci] = n_a
            chk_b[ci] = n_b
            chk_ann[ci] = annihilations
            ci += 1
        while li < n_lad and ladder[li] < t:
            lad_visits[li] = visits
            li += 1

        u = pos[p]
        k = jumps[p]
        e = step_index(cum, indptr[u], indptr[u + 1], uniform(keys[p], 2 * k + 2))
        w = dest[e]
        jumps[p] = k + 1
        n_jumps += 1

        # unlink from u
        if prv[p] >= 0:
            nxt[prv[p]] = nxt[p]
        else:
            head[u] = nxt[p]
        if nxt[p] >= 0:
            prv[nxt[p]] = prv[p]
        occ[u] -= ptype[p]
        pos[p] = w

        if dim > 0 and first_wrap == np.inf:
            for c in range(dim):
                disp[p, c] += edisp[e, c]
                if abs(disp[p, c]) >= half:
                    first_wrap = t
        elif dim > 0:
            for c in range(dim):
                disp[p, c] += edisp[e, c]

        q = -1
        if occ[w] * ptype[p] < 0:
            best = -1.0
            r = head[w]
            while r >= 0:
                if brave[r] > best:
                    best = brave[r]
                    q = r
                r = nxt[r]
            if prv[q] >= 0:
                nxt[prv[q]] = nxt[q]
            else:
                head[w] = nxt[q]
            if nxt[q] >= 0:
                prv[nxt[q]] = prv[q]
            occ[w] -= ptype[q]
            alive[p] = False
            alive[q] = False
            death[p] = t
            death[q] = t
            n_a -= 1
            n_b -= 1
            annihilations += 1
            size = _heap_pop(ht, hp, size)
        else:
            nxt[p] = head[w]
            prv[p] = -1
            if head[w] >= 0:
                prv[head[w]] = p
            head[w] = p
            occ[w] += ptype[p]
            rate = rate_a if ptype[p] > 0 else rate_b
            ht[0] = t + exponential(keys[p], 2 * k + 3, rate)
            _sift_down(ht, hp, size, 0)
        if w == watch:
            visits += 1

        if record:
            if n_ev == len(ev_t):
                m = 2 * n_ev
                ev_t = _grow(ev_t, m)
                ev_kind = _grow(ev_kind, m)
                ev_p = _grow(ev_p, m)
                ev_q = _grow(ev_q, m)
                ev_from = _grow(ev_from, m)
                ev_to = _grow(ev_to, m)
            ev_t[n_ev] = t
            ev_kind[n_ev] = KIND_ANNIH if q >= 0 else KIND_JUMP
            ev_p[n_ev] = p
            ev_q[n_ev] = q
            ev_from[n_ev] = u
            ev_to[n_ev] = w
            n_ev += 1

    while ci < n_chk:
        chk_a[ci] = n_a
        chk_b[ci] = n_b
        chk_ann[ci] = annihilations
        ci += 1
    while li < n_lad:
        lad_visits[li] = visits
        li += 1

    return (ev_t[:n_ev], ev_kind[:n_ev], ev_p[:n_ev], ev_q[:n_ev], ev_from[:n_ev],
            ev_to[:n_ev], chk_a, chk_b, chk_ann, lad_visits, death, pos, alive, brave,
            first_wrap, ties, n_jumps)
