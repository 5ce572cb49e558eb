"""Numba kernels for event-driven integration of piecewise-linear neurons.

All kernels work on a batch of samples.  Spike times use ``inf`` for a neuron
that never fired.  Presynaptic spikes are processed in ascending time order
(stable sort), so the causal set of a neuron is always a prefix of ``order``.
"""

import math

import numpy as np
from numba import njit

NO_SPIKE = -1


@njit(cache=True, nogil=True)
def _sorted_fired(t_row, order_row):
    n = 0
    for j in range(t_row.shape[0]):
        if np.isfinite(t_row[j]):
            n += 1
    idx = np.empty(n, dtype=np.int64)
    vals = np.empty(n, dtype=np.float64)
    m = 0
    for j in range(t_row.shape[0]):
        if np.isfinite(t_row[j]):
            idx[m] = j
            vals[m] = t_row[j]
            m += 1
    perm = np.argsort(vals, kind="mergesort")
    for m in range(n):
        order_row[m] = idx[perm[m]]
    for m in range(n, order_row.shape[0]):
        order_row[m] = -1
    return n


@njit(cache=True, nogil=True)
def _threshold(vth, sigma):
    if sigma > 0.0:
        return vth + sigma * np.random.standard_normal()
    return vth


@njit(cache=True, nogil=True)
def _advance(v, s, t0, dt, clamp, vmin, rec, tr_t, tr_v, nr):
    """Integrate over ``dt`` with slope ``s``; records a clamp kink if one occurs."""
    nv = v + s * dt
    if clamp and nv < vmin:
        if rec and s < 0.0 and v > vmin and nr < tr_t.shape[0]:
            tr_t[nr] = t0 + (vmin - v) / s
            tr_v[nr] = vmin
            nr += 1
        nv = vmin
    return nv, nr


@njit(cache=True, nogil=True)
def _record(t, v, rec, tr_t, tr_v, nr):
    if rec and nr < tr_t.shape[0]:
        tr_t[nr] = t
        tr_v[nr] = v
        nr += 1
    return nr


@njit(cache=True, nogil=True)
def _neuron_continuous(w_row, ts, idx, n, vth, horizon, clamp, vmin, sigma, rec, tr_t, tr_v):
    v = 0.0
    if clamp and v < vmin:
        v = vmin
    s = 0.0
    t = 0.0
    k = 0
    nr = 0
    nr = _record(0.0, v, rec, tr_t, tr_v, nr)
    t_fire = np.inf
    while True:
        thr = _threshold(vth, sigma)
        while k < n and ts[k] <= t:
            s += w_row[idx[k]]
            k += 1
        t_next = ts[k] if k < n else horizon
        if t_next > horizon:
            t_next = horizon
        if v >= thr:
            t_fire = t
            break
        if s > 0.0:
            tstar = t + (thr - v) / s
            if tstar < t:
                tstar = t
            if tstar <= t_next:
                t_fire = tstar
                v = thr
                nr = _record(tstar, thr, rec, tr_t, tr_v, nr)
                break
        v, nr = _advance(v, s, t, t_next - t, clamp, vmin, rec, tr_t, tr_v, nr)
        t = t_next
        nr = _record(t, v, rec, tr_t, tr_v, nr)
        if t >= horizon:
            break
    nc = k
    while nc > 0 and ts[nc - 1] >= t_fire:
        nc -= 1
    return t_fire, NO_SPIKE, nc, v, nr


@njit(cache=True, nogil=True)
def _neuron_ticked(w_row, ts, idx, n, vth, n_ticks, period, clamp, vmin, sigma, rec, tr_t, tr_v):
    v = 0.0
    if clamp and v < vmin:
        v = vmin
    s = 0.0
    k = 0
    nr = 0
    t_fire = np.inf
    tick = NO_SPIKE
    for p in range(n_ticks + 1):
        tp = p * period
        thr = _threshold(vth, sigma)
        nr = _record(tp, v, rec, tr_t, tr_v, nr)
        if v >= thr:
            t_fire = tp
            tick = p
            break
        if p == n_ticks:
            break
        while k < n and ts[k] <= tp:
            s += w_row[idx[k]]
            k += 1
        t_end = (p + 1) * period
        t = tp
        while k < n and ts[k] < t_end:
            v, nr = _advance(v, s, t, ts[k] - t, clamp, vmin, rec, tr_t, tr_v, nr)
            t = ts[k]
            nr = _record(t, v, rec, tr_t, tr_v, nr)
            while k < n and ts[k] <= t:
                s += w_row[idx[k]]
                k += 1
        dt = period if t == tp else t_end - t
        v, nr = _advance(v, s, t, dt, clamp, vmin, rec, tr_t, tr_v, nr)
    nc = k
    while nc > 0 and ts[nc - 1] >= t_fire:
        nc -= 1
    return t_fire, tick, nc, v, nr


@njit(cache=True, nogil=True)
def layer_forward(w, t_in, seeds, vth, horizon, n_ticks, period, clamp, vmin, sigma, rec, cap):
    """Propagate a batch of presynaptic spike times through one layer.

    ``period <= 0`` selects continuous-time firing detection; otherwise the
    neuron fires at the first tick ``p <= n_ticks`` with ``v(p * period) >=
    threshold``.  With ``rec`` the piecewise-linear trajectory vertices are
    stored (up to ``cap`` per neuron).
    """
    batch = t_in.shape[0]
    n_out, n_in = w.shape
    t_out = np.full((batch, n_out), np.inf)
    ticks = np.full((batch, n_out), NO_SPIKE, dtype=np.int64)
    ncausal = np.zeros((batch, n_out), dtype=np.int64)
    order = np.empty((batch, n_in), dtype=np.int64)
    n_fired = np.zeros(batch, dtype=np.int64)
    v_final = np.zeros((batch, n_out))
    rec_cap = cap if rec else 1
    tr_t = np.zeros((batch, n_out, rec_cap)) if rec else np.zeros((1, 1, 1))
    tr_v = np.zeros((batch, n_out, rec_cap)) if rec else np.zeros((1, 1, 1))
    tr_n = np.zeros((batch, n_out), dtype=np.int64)
    dummy_t = np.zeros(1)
    dummy_v = np.zeros(1)
    for b in range(batch):
        n = _sorted_fired(t_in[b], order[b])
        n_fired[b] = n
        ts = np.empty(n)
        for m in range(n):
            ts[m] = t_in[b, order[b, m]]
        if sigma > 0.0:
            np.random.seed(seeds[b])
        for i in range(n_out):
            if rec:
                rt = tr_t[b, i]
                rv = tr_v[b, i]
            else:
                rt = dummy_t
                rv = dummy_v
            if period > 0.0:
                tf, tk, nc, vf, nr = _neuron_ticked(
                    w[i], ts, order[b], n, vth, n_ticks, period, clamp, vmin, sigma, rec, rt, rv
                )
            else:
                tf, tk, nc, vf, nr = _neuron_continuous(
                    w[i], ts, order[b], n, vth, horizon, clamp, vmin, sigma, rec, rt, rv
                )
            t_out[b, i] = tf
            ticks[b, i] = tk
            ncausal[b, i] = nc
            v_final[b, i] = vf
            tr_n[b, i] = nr
    return t_out, ticks, ncausal, order, n_fired, v_final, tr_t, tr_v, tr_n


@njit(cache=True, nogil=True)
def layer_backward(w, t_in, order, t_out, ncausal, g_out, g_w, g_in, want_g_in):
    """Accumulate dL/dw into ``g_w`` and dL/dt_in into ``g_in`` for one layer.

    Uses ``t_i = (v_th + sum_j w_ij t_j) / sum_j w_ij`` over the causal prefix,
    whose derivatives are ``(t_j - t_i) / S_i`` and ``w_ij / S_i``.
    Samples are reduced in batch order.
    """
    batch = t_in.shape[0]
    n_out = w.shape[0]
    for b in range(batch):
        for i in range(n_out):
            g = g_out[b, i]
            if g == 0.0 or not np.isfinite(t_out[b, i]):
                continue
            nc = ncausal[b, i]
            s = 0.0
            for m in range(nc):
                s += w[i, order[b, m]]
            if s <= 0.0:
                continue
            ti = t_out[b, i]
            for m in range(nc):
                j = order[b, m]
                g_w[i, j] += g * (t_in[b, j] - ti) / s
                if want_g_in:
                    g_in[b, j] += g * w[i, j] / s


def n_ticks_for(horizon, period):
    """Index of the last tick examined, ``ceil(horizon / period)``."""
    ratio = horizon / period
    nearest = round(ratio)
    if abs(ratio - nearest) <= 1e-9 * max(1.0, abs(ratio)):
        return int(nearest)
    return int(math.ceil(ratio))
