"""Pure numpy implementations of the hot loops (reference and fallback backend)."""
from __future__ import annotations

import numpy as np


def ensemble_sums(sx, sy, psi, amp, per_field, tx, ra, rb, center, k, big_d, n, planar):
    """Accumulate ``sum h_a conj(h_b)``, ``sum |h_a|^2``, ``sum |h_b|^2`` over fields.

    Scatterer arrays are flat, ``per_field`` consecutive entries per field.
    With ``planar`` the receivers see plane waves from each scatterer: the
    receive distance is expanded to first order about ``center`` and the
    path-loss distance is the distance to ``center``.
    """
    sx = np.asarray(sx, dtype=float).reshape(-1, per_field)
    sy = np.asarray(sy, dtype=float).reshape(-1, per_field)
    psi = np.asarray(psi, dtype=float).reshape(-1, per_field)
    amp = np.asarray(amp, dtype=float).reshape(-1, per_field)
    d_tx = np.hypot(sx - tx[0], sy - tx[1])
    if planar:
        cx, cy = sx - center[0], sy - center[1]
        xi = np.hypot(cx, cy)
        ux, uy = cx / xi, cy / xi
        d_a = xi - (ux * (ra[0] - center[0]) + uy * (ra[1] - center[1]))
        d_b = xi - (ux * (rb[0] - center[0]) + uy * (rb[1] - center[1]))
        p_a = p_b = xi
    else:
        d_a = np.hypot(sx - ra[0], sy - ra[1])
        d_b = np.hypot(sx - rb[0], sy - rb[1])
        p_a, p_b = d_a, d_b
    scale = 1.0 / np.sqrt(per_field)
    g_a = amp * (d_tx * p_a / big_d) ** (-n / 2.0)
    g_b = amp * (d_tx * p_b / big_d) ** (-n / 2.0)
    h_a = scale * np.sum(g_a * np.exp(1j * (psi - k * (d_tx + d_a))), axis=1)
    h_b = scale * np.sum(g_b * np.exp(1j * (psi - k * (d_tx + d_b))), axis=1)
    ar, ai, br, bi = h_a.real, h_a.imag, h_b.real, h_b.imag
    # Written out so identical receivers give bit-identical cross and self sums.
    return (
        complex(float(np.sum(ar * br + ai * bi)), float(np.sum(ai * br - ar * bi))),
        float(np.sum(ar * ar + ai * ai)),
        float(np.sum(br * br + bi * bi)),
    )


def cir_bank(node_x, node_y, link_tx, link_rx, sx, sy, amp, phases, k, big_d, n, ts, c, taps):
    """Complex delay-binned CIRs for every link and phase realization.

    ``phases`` has shape (M, N); the result has shape (L, M, taps).  Path ``i``
    of a link lands in tap ``floor(delay_i / ts)``; paths past the window are dropped.
    """
    node_x = np.asarray(node_x, dtype=float)
    node_y = np.asarray(node_y, dtype=float)
    link_tx = np.asarray(link_tx, dtype=np.intp)
    link_rx = np.asarray(link_rx, dtype=np.intp)
    phases = np.atleast_2d(np.asarray(phases, dtype=float))
    nlinks, nreal = len(link_tx), phases.shape[0]
    out = np.zeros((nlinks, nreal, taps), dtype=complex)
    if nlinks == 0:
        return out
    d_tx = np.hypot(sx[None, :] - node_x[link_tx, None], sy[None, :] - node_y[link_tx, None])
    d_rx = np.hypot(sx[None, :] - node_x[link_rx, None], sy[None, :] - node_y[link_rx, None])
    total = d_tx + d_rx
    gain = amp[None, :] * (d_tx * d_rx / big_d) ** (-n / 2.0)
    idx = np.floor(total / c / ts).astype(np.int64)
    valid = (idx >= 0) & (idx < taps)
    rows = np.broadcast_to(np.arange(nlinks)[:, None], idx.shape)
    flat_base = rows * taps + idx
    for m in range(nreal):
        contrib = gain * np.exp(1j * (phases[m][None, :] - k * total))
        acc = np.bincount(flat_base[valid], weights=contrib.real[valid], minlength=nlinks * taps)
        acc_i = np.bincount(flat_base[valid], weights=contrib.imag[valid], minlength=nlinks * taps)
        out[:, m, :] = (acc + 1j * acc_i).reshape(nlinks, taps)
    return out


def coverage_hits(px, py, offsets, node_x, node_y, radius):
    """Count trials in which every node has at least one point within ``radius``.

    Points of trial ``t`` are ``px[offsets[t]:offsets[t+1]]``.
    """
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    offsets = np.asarray(offsets, dtype=np.int64)
    node_x = np.asarray(node_x, dtype=float)
    node_y = np.asarray(node_y, dtype=float)
    ntrials = len(offsets) - 1
    if len(node_x) == 0:
        return ntrials
    if len(px) == 0:
        return 0
    trial_of_point = np.repeat(np.arange(ntrials), np.diff(offsets))
    near = (px[:, None] - node_x[None, :]) ** 2 + (py[:, None] - node_y[None, :]) ** 2 < radius * radius
    covered = np.zeros((ntrials, len(node_x)), dtype=bool)
    np.logical_or.at(covered, trial_of_point, near)
    return int(np.count_nonzero(covered.all(axis=1)))
