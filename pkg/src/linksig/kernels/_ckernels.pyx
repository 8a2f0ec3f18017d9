# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops; signatures mirror ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, pow, cos, sin, floor, hypot

cnp.import_array()


def ensemble_sums(const double[::1] sx, const double[::1] sy, const double[::1] psi,
                  const double[::1] amp, Py_ssize_t per_field,
                  tx, ra, rb, center, double k, double big_d, double n, bint planar):
    cdef Py_ssize_t nfields = sx.shape[0] // per_field
    cdef Py_ssize_t e, i, j
    cdef double txx = tx[0], txy = tx[1]
    cdef double rax = ra[0], ray = ra[1], rbx = rb[0], rby = rb[1]
    cdef double cx = center[0], cy = center[1]
    cdef double half_n = -n / 2.0
    cdef double scale = 1.0 / sqrt(<double>per_field)
    cdef double ar, ai, br, bi, dtx, da, db, pa, pb, ga, gb, xi, ux, uy, ph
    cdef double sab_r = 0.0, sab_i = 0.0, saa = 0.0, sbb = 0.0
    with nogil:
        for e in range(nfields):
            ar = 0.0
            ai = 0.0
            br = 0.0
            bi = 0.0
            for j in range(per_field):
                i = e * per_field + j
                dtx = hypot(sx[i] - txx, sy[i] - txy)
                if planar:
                    xi = hypot(sx[i] - cx, sy[i] - cy)
                    ux = (sx[i] - cx) / xi
                    uy = (sy[i] - cy) / xi
                    da = xi - (ux * (rax - cx) + uy * (ray - cy))
                    db = xi - (ux * (rbx - cx) + uy * (rby - cy))
                    pa = xi
                    pb = xi
                else:
                    da = hypot(sx[i] - rax, sy[i] - ray)
                    db = hypot(sx[i] - rbx, sy[i] - rby)
                    pa = da
                    pb = db
                ga = amp[i] * pow(dtx * pa / big_d, half_n)
                gb = amp[i] * pow(dtx * pb / big_d, half_n)
                ph = psi[i] - k * (dtx + da)
                ar += ga * cos(ph)
                ai += ga * sin(ph)
                ph = psi[i] - k * (dtx + db)
                br += gb * cos(ph)
                bi += gb * sin(ph)
            ar *= scale
            ai *= scale
            br *= scale
            bi *= scale
            # h_a * conj(h_b)
            sab_r += ar * br + ai * bi
            sab_i += ai * br - ar * bi
            saa += ar * ar + ai * ai
            sbb += br * br + bi * bi
    return complex(sab_r, sab_i), saa, sbb


def cir_bank(node_x, node_y, link_tx, link_rx, sx, sy, amp, phases,
             double k, double big_d, double n, double ts, double c, Py_ssize_t taps):
    cdef const double[::1] nx = np.ascontiguousarray(node_x, dtype=np.float64)
    cdef const double[::1] ny = np.ascontiguousarray(node_y, dtype=np.float64)
    cdef const Py_ssize_t[::1] ltx = np.ascontiguousarray(link_tx, dtype=np.intp)
    cdef const Py_ssize_t[::1] lrx = np.ascontiguousarray(link_rx, dtype=np.intp)
    cdef const double[::1] px = np.ascontiguousarray(sx, dtype=np.float64)
    cdef const double[::1] py = np.ascontiguousarray(sy, dtype=np.float64)
    cdef const double[::1] pa = np.ascontiguousarray(amp, dtype=np.float64)
    cdef const double[:, ::1] ph = np.ascontiguousarray(np.atleast_2d(phases), dtype=np.float64)
    cdef Py_ssize_t nlinks = ltx.shape[0], nreal = ph.shape[0], nscat = px.shape[0]
    out = np.zeros((nlinks, nreal, taps), dtype=np.complex128)
    cdef double[:, :, ::1] acc_r = np.zeros((nlinks, nreal, taps))
    cdef double[:, :, ::1] acc_i = np.zeros((nlinks, nreal, taps))
    cdef Py_ssize_t l, m, i, idx
    cdef double dtx, drx, total, g, phase, half_n = -n / 2.0
    with nogil:
        for l in range(nlinks):
            for i in range(nscat):
                dtx = hypot(px[i] - nx[ltx[l]], py[i] - ny[ltx[l]])
                drx = hypot(px[i] - nx[lrx[l]], py[i] - ny[lrx[l]])
                total = dtx + drx
                idx = <Py_ssize_t>floor(total / c / ts)
                if idx < 0 or idx >= taps:
                    continue
                g = pa[i] * pow(dtx * drx / big_d, half_n)
                for m in range(nreal):
                    phase = ph[m, i] - k * total
                    acc_r[l, m, idx] += g * cos(phase)
                    acc_i[l, m, idx] += g * sin(phase)
    out.real = np.asarray(acc_r)
    out.imag = np.asarray(acc_i)
    return out


def coverage_hits(px, py, offsets, node_x, node_y, double radius):
    cdef const double[::1] ax = np.ascontiguousarray(px, dtype=np.float64)
    cdef const double[::1] ay = np.ascontiguousarray(py, dtype=np.float64)
    cdef const long long[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const double[::1] nx = np.ascontiguousarray(node_x, dtype=np.float64)
    cdef const double[::1] ny = np.ascontiguousarray(node_y, dtype=np.float64)
    cdef Py_ssize_t ntrials = off.shape[0] - 1, nnodes = nx.shape[0]
    cdef Py_ssize_t t, p, q, covered_count, hits = 0
    cdef double r2 = radius * radius, dx, dy
    cdef unsigned char[::1] covered = np.zeros(max(nnodes, 1), dtype=np.uint8)
    with nogil:
        for t in range(ntrials):
            for q in range(nnodes):
                covered[q] = 0
            covered_count = 0
            for p in range(off[t], off[t + 1]):
                for q in range(nnodes):
                    if covered[q]:
                        continue
                    dx = ax[p] - nx[q]
                    dy = ay[p] - ny[q]
                    if dx * dx + dy * dy < r2:
                        covered[q] = 1
                        covered_count += 1
                if covered_count == nnodes:
                    break
            if covered_count == nnodes:
                hits += 1
    return hits
