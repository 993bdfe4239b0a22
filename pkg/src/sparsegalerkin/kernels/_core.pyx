# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled network kernels.

Mirrors ``numpy_backend`` operation-for-operation: batched forward pass
with spatial-derivative channels, parameter Jacobian assembly (full or
column-restricted), and the Sobolev fitting-loss gradient.  Affine maps go
through BLAS dgemm; activation/channel updates are fused C loops.  Only
float64 C-contiguous inputs are supported; the dispatcher routes anything
else to the numpy backend.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin, tanh, fabs
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

cdef double DENOM_CLAMP = 1e-12


cdef void _gemm_abt(double* X, double* W, double* Y, int n, int w1, int w2,
                    double beta) noexcept nogil:
    """Y[n, w2] = X[n, w1] @ W[w2, w1]^T (+ beta * Y), C-order buffers."""
    cdef double one = 1.0
    dgemm("T", "N", &w2, &n, &w1, &one, W, &w1, X, &w1, &beta, Y, &w2)


cdef void _gemm_ab(double* X, double* W, double* Y, int n, int w1, int w2,
                   double beta) noexcept nogil:
    """Y[n, w2] = X[n, w1] @ W[w1, w2] (+ beta * Y), C-order buffers."""
    cdef double one = 1.0
    dgemm("N", "N", &w2, &n, &w1, &one, W, &w2, X, &w1, &beta, Y, &w2)


cdef void _gemm_atb(double* A, double* B, double* Y, int n, int wa, int wb,
                    double beta) noexcept nogil:
    """Y[wa, wb] = A[n, wa]^T @ B[n, wb] (+ beta * Y), C-order buffers."""
    cdef double one = 1.0
    dgemm("N", "T", &wb, &wa, &n, &one, B, &wb, A, &wa, &beta, Y, &wb)


cdef inline double _clamp_den(double den) noexcept nogil:
    if fabs(den) < DENOM_CLAMP:
        return DENOM_CLAMP if den >= 0.0 else -DENOM_CLAMP
    return den


cdef void _act_eval(bint rational, double* rat, double* z, double* s0,
                    double* s1, double* s2, double* inv, int size,
                    int order) noexcept nogil:
    """Elementwise activation value/derivatives over a flat buffer."""
    cdef int i
    cdef double c3, c2, c1, c0, d2, d1, zz, num, den, iv, v0, v1, nump, denp, t
    if not rational:
        for i in range(size):
            t = tanh(z[i])
            s0[i] = t
            if order >= 1:
                s1[i] = 1.0 - t * t
                if order >= 2:
                    s2[i] = -2.0 * t * s1[i]
        return
    c3 = rat[0]; c2 = rat[1]; c1 = rat[2]; c0 = rat[3]; d2 = rat[4]; d1 = rat[5]
    for i in range(size):
        zz = z[i]
        num = ((c3 * zz + c2) * zz + c1) * zz + c0
        den = _clamp_den((d2 * zz + d1) * zz + 1.0)
        iv = 1.0 / den
        v0 = num * iv
        s0[i] = v0
        inv[i] = iv
        if order >= 1:
            nump = (3.0 * c3 * zz + 2.0 * c2) * zz + c1
            denp = 2.0 * d2 * zz + d1
            v1 = (nump - v0 * denp) * iv
            s1[i] = v1
            if order >= 2:
                s2[i] = (6.0 * c3 * zz + 2.0 * c2 - 2.0 * v1 * denp
                         - v0 * 2.0 * d2) * iv


cdef class _Workspace:
    """Per-call forward caches."""
    cdef public object ang, cosang, sinang
    cdef public list Z, A, T, Tz, s1, s2, inv
    cdef public object u, ux, uxx


cdef _Workspace _forward(spec, double[::1] th, double[:, ::1] X, int order,
                         bint keep_cache, int act_order):
    cdef int d = spec.d
    cdef int w = spec.w
    cdef int nb = spec.nblocks
    cdef bint rational = spec.rational
    cdef int n = X.shape[0]
    cdef double[::1] omega = np.ascontiguousarray(spec.omega, dtype=np.float64)
    if act_order < order:
        act_order = order

    ws = _Workspace()
    cdef cnp.ndarray ang = np.empty((n, w, d))
    cdef cnp.ndarray cosang = np.empty((n, w, d))
    cdef cnp.ndarray A0 = np.zeros((n, w))
    cdef cnp.ndarray sinang = None
    cdef cnp.ndarray T0 = None
    cdef cnp.ndarray H0 = None
    cdef double[:, :, ::1] angv = ang
    cdef double[:, :, ::1] cosv = cosang
    cdef double[:, :, ::1] sinv
    cdef double[:, :, ::1] Tv
    cdef double[:, :, ::1] Hv
    cdef double[:, ::1] A0v = A0
    cdef int i, j, k, l, off
    cdef double aji, phiji, bsum, ag, om
    cdef int wd = w * d

    with nogil:
        for k in range(n):
            for j in range(w):
                bsum = 0.0
                for i in range(d):
                    aji = th[j * d + i]
                    phiji = th[wd + j * d + i]
                    bsum += th[2 * wd + j * d + i]
                    ag = X[k, i] * omega[i] + phiji
                    angv[k, j, i] = ag
                    cosv[k, j, i] = cos(ag)
                    A0v[k, j] += aji * cosv[k, j, i]
                A0v[k, j] += bsum
    if order >= 1 or keep_cache:
        sinang = np.sin(ang)
    if order >= 1:
        sinv = sinang
        T0 = np.empty((n, d, w))
        Tv = T0
        with nogil:
            for k in range(n):
                for i in range(d):
                    om = omega[i]
                    for j in range(w):
                        Tv[k, i, j] = -th[j * d + i] * om * sinv[k, j, i]
        if order >= 2:
            H0 = np.empty((n, d, w))
            Hv = H0
            with nogil:
                for k in range(n):
                    for i in range(d):
                        om = omega[i] * omega[i]
                        for j in range(w):
                            Hv[k, i, j] = -th[j * d + i] * om * cosv[k, j, i]

    ws.ang = ang
    ws.cosang = cosang
    ws.sinang = sinang
    ws.Z = []; ws.A = [A0]; ws.T = [T0]; ws.Tz = []
    ws.s1 = []; ws.s2 = []; ws.inv = []

    cdef int stride = w * w + w + (6 if rational else 0)
    cdef int base = 3 * wd
    cdef cnp.ndarray A_prev = A0
    cdef cnp.ndarray T_prev = T0
    cdef cnp.ndarray H_prev = H0
    cdef cnp.ndarray Z, Anew, Tz, Tnew, Hz, Hnew, S1, S2, INV
    cdef double[:, ::1] Zv, s1v, s2v
    cdef double[:, :, ::1] Tzv, Tnv, Hzv, Hnv
    cdef double* ratp
    cdef double* s1p
    cdef double* s2p
    cdef double* invp
    cdef int nd = n * d
    for l in range(nb):
        off = base + l * stride
        Z = np.empty((n, w))
        Zv = Z
        _gemm_abt(<double*> cnp.PyArray_DATA(A_prev), &th[off],
                  <double*> cnp.PyArray_DATA(Z), n, w, w, 0.0)
        with nogil:
            for k in range(n):
                for j in range(w):
                    Zv[k, j] += th[off + w * w + j]
        Anew = np.empty((n, w))
        S1 = None; S2 = None; INV = None; Tz = None; Tnew = None
        s1p = NULL; s2p = NULL; invp = NULL; ratp = NULL
        if act_order >= 1:
            S1 = np.empty((n, w))
            s1p = <double*> cnp.PyArray_DATA(S1)
        if act_order >= 2:
            S2 = np.empty((n, w))
            s2p = <double*> cnp.PyArray_DATA(S2)
        if rational:
            INV = np.empty((n, w))
            invp = <double*> cnp.PyArray_DATA(INV)
            ratp = &th[off + w * w + w]
        _act_eval(rational, ratp, <double*> cnp.PyArray_DATA(Z),
                  <double*> cnp.PyArray_DATA(Anew), s1p, s2p, invp,
                  n * w, act_order)
        if order >= 1:
            Tz = np.empty((n, d, w))
            _gemm_abt(<double*> cnp.PyArray_DATA(T_prev), &th[off],
                      <double*> cnp.PyArray_DATA(Tz), nd, w, w, 0.0)
            Tnew = np.empty((n, d, w))
            Tzv = Tz; Tnv = Tnew; s1v = S1
            with nogil:
                for k in range(n):
                    for i in range(d):
                        for j in range(w):
                            Tnv[k, i, j] = s1v[k, j] * Tzv[k, i, j]
            if order >= 2:
                Hz = np.empty((n, d, w))
                _gemm_abt(<double*> cnp.PyArray_DATA(H_prev), &th[off],
                          <double*> cnp.PyArray_DATA(Hz), nd, w, w, 0.0)
                Hnew = np.empty((n, d, w))
                Hzv = Hz; Hnv = Hnew; s2v = S2
                with nogil:
                    for k in range(n):
                        for i in range(d):
                            for j in range(w):
                                Hnv[k, i, j] = (s2v[k, j] * Tzv[k, i, j] * Tzv[k, i, j]
                                                + s1v[k, j] * Hzv[k, i, j])
                H_prev = Hnew
        if keep_cache:
            ws.Z.append(Z); ws.A.append(Anew); ws.T.append(Tnew)
            ws.Tz.append(Tz); ws.s1.append(S1); ws.s2.append(S2)
            ws.inv.append(INV)
        A_prev = Anew
        T_prev = Tnew

    cdef int ow = base + nb * stride
    cdef cnp.ndarray u = np.empty(n)
    cdef double[::1] uv = u
    cdef double[:, ::1] Apv = A_prev
    cdef double acc
    with nogil:
        for k in range(n):
            acc = th[ow + w]
            for j in range(w):
                acc += Apv[k, j] * th[ow + j]
            uv[k] = acc
    ws.u = u
    ws.ux = None
    ws.uxx = None
    cdef cnp.ndarray ux, uxx
    cdef double[:, ::1] uxv
    if order >= 1:
        ux = np.empty((n, d))
        uxv = ux
        Tv = T_prev
        with nogil:
            for k in range(n):
                for i in range(d):
                    acc = 0.0
                    for j in range(w):
                        acc += Tv[k, i, j] * th[ow + j]
                    uxv[k, i] = acc
        ws.ux = ux
        if order >= 2:
            uxx = np.empty((n, d))
            uxv = uxx
            Hv = H_prev
            with nogil:
                for k in range(n):
                    for i in range(d):
                        acc = 0.0
                        for j in range(w):
                            acc += Hv[k, i, j] * th[ow + j]
                        uxv[k, i] = acc
            ws.uxx = uxx
    if not keep_cache:
        ws.A = [A_prev]
    return ws


def eval_batch(spec, theta, X, order=2):
    """Network value and spatial derivatives at each row of X."""
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    X = np.ascontiguousarray(X, dtype=np.float64)
    ws = _forward(spec, theta, X, int(order), False, -1)
    return ws.u, ws.ux, ws.uxx


cdef tuple _backprop(spec, double[::1] th, _Workspace ws, int n):
    """Cotangents of the scalar output at each block (act and pre-act)."""
    cdef int w = spec.w
    cdef int nb = spec.nblocks
    cdef int d = spec.d
    cdef int stride = w * w + w + (6 if spec.rational else 0)
    cdef int base = 3 * w * d
    cdef int ow = base + nb * stride
    cdef cnp.ndarray delta = np.tile(np.asarray(th[ow:ow + w]), (n, 1))
    delta_act = [None] * nb
    delta_z = [None] * nb
    cdef cnp.ndarray dz, dprev
    cdef double[:, ::1] dv, dzv, s1v
    cdef int l, k, j
    for l in range(nb - 1, -1, -1):
        delta_act[l] = delta
        dz = np.empty((n, w))
        dv = delta; dzv = dz; s1v = ws.s1[l]
        with nogil:
            for k in range(n):
                for j in range(w):
                    dzv[k, j] = dv[k, j] * s1v[k, j]
        delta_z[l] = dz
        dprev = np.empty((n, w))
        _gemm_ab(<double*> cnp.PyArray_DATA(dz), &th[base + l * stride],
                 <double*> cnp.PyArray_DATA(dprev), n, w, w, 0.0)
        delta = dprev
    return delta_act, delta_z, delta


cdef void _rat_cols(double[:, ::1] dact, double[:, ::1] Z, double[:, ::1] s0,
                    double[:, ::1] inv, double[:, ::1] out, int n,
                    int w) noexcept nogil:
    """Six shared-coefficient Jacobian columns for one block, out (6, n)."""
    cdef int k, j
    cdef double zz, iv, v0, a3, a2, a1, a0, b2, b1, da
    for k in range(n):
        a3 = a2 = a1 = a0 = b2 = b1 = 0.0
        for j in range(w):
            zz = Z[k, j]
            iv = inv[k, j]
            v0 = s0[k, j]
            da = dact[k, j]
            a1 += da * zz * iv
            a2 += da * zz * zz * iv
            a3 += da * zz * zz * zz * iv
            a0 += da * iv
            b2 += da * (-v0 * zz * zz * iv)
            b1 += da * (-v0 * zz * iv)
        out[0, k] = a3; out[1, k] = a2; out[2, k] = a1
        out[3, k] = a0; out[4, k] = b2; out[5, k] = b1


def jacobian_batch(spec, theta, X, cols=None):
    u, ux, uxx, J = _assemble_impl(spec, theta, X, cols, 0)
    return J


def assemble_batch(spec, theta, X, cols=None):
    return _assemble_impl(spec, theta, X, cols, 2)


def _assemble_impl(spec, theta, X, cols, int order):
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    X = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[::1] th = theta
    cdef int d = spec.d
    cdef int w = spec.w
    cdef int nb = spec.nblocks
    cdef bint rational = spec.rational
    cdef int n = X.shape[0]
    cdef int p = spec.p
    cdef int wd = w * d
    cdef int stride = w * w + w + (6 if rational else 0)
    cdef int base = 3 * wd
    ws = _forward(spec, th, X, order, True, 1)
    if nb > 0:
        delta_act, delta_z, demb = _backprop(spec, th, ws, n)
    else:
        delta_act = []; delta_z = []
        demb = np.tile(np.asarray(th[base:base + w]), (n, 1))

    # rational coefficient columns, one (6, n) block per layer
    rat_blocks = []
    cdef cnp.ndarray rb
    cdef double[:, ::1] rbv
    if rational:
        for l in range(nb):
            rb = np.empty((6, n))
            rbv = rb
            _rat_cols(delta_act[l], ws.Z[l], ws.A[l + 1], ws.inv[l], rbv, n, w)
            rat_blocks.append(rb)

    cdef double[:, ::1] dembv = demb
    cdef double[:, :, ::1] cosv = ws.cosang
    cdef double[:, :, ::1] sinv = ws.sinang
    cdef cnp.ndarray out
    cdef double[:, ::1] outv, dzv, apv, ratv
    cdef int k, j, i, l2, c, r, row
    cdef long ci
    cdef long[::1] colv

    if cols is None:
        out = np.empty((p, n))
        outv = out
        with nogil:
            for k in range(n):
                for j in range(w):
                    for i in range(d):
                        outv[j * d + i, k] = dembv[k, j] * cosv[k, j, i]
                        outv[wd + j * d + i, k] = (dembv[k, j]
                                                   * (-th[j * d + i] * sinv[k, j, i]))
                        outv[2 * wd + j * d + i, k] = dembv[k, j]
        for l in range(nb):
            dzv = delta_z[l]
            apv = ws.A[l]
            r = base + l * stride
            with nogil:
                for k in range(n):
                    for j in range(w):
                        for i in range(w):
                            outv[r + j * w + i, k] = dzv[k, j] * apv[k, i]
                        outv[r + w * w + j, k] = dzv[k, j]
            if rational:
                ratv = rat_blocks[l]
                with nogil:
                    for c in range(6):
                        for k in range(n):
                            outv[r + w * w + w + c, k] = ratv[c, k]
        apv = ws.A[nb]
        r = base + nb * stride
        with nogil:
            for k in range(n):
                for j in range(w):
                    outv[r + j, k] = apv[k, j]
                outv[r + w, k] = 1.0
        return ws.u, ws.ux, ws.uxx, out.T

    cols = np.ascontiguousarray(cols, dtype=np.int64)
    colv = cols
    cdef int m = cols.shape[0]
    out = np.empty((m, n))
    outv = out
    for row in range(m):
        ci = colv[row]
        if ci < wd:
            j = <int> (ci // d); i = <int> (ci % d)
            with nogil:
                for k in range(n):
                    outv[row, k] = dembv[k, j] * cosv[k, j, i]
        elif ci < 2 * wd:
            c = <int> (ci - wd); j = c // d; i = c % d
            with nogil:
                for k in range(n):
                    outv[row, k] = dembv[k, j] * (-th[j * d + i] * sinv[k, j, i])
        elif ci < base:
            c = <int> (ci - 2 * wd); j = c // d
            with nogil:
                for k in range(n):
                    outv[row, k] = dembv[k, j]
        elif ci < base + nb * stride:
            c = <int> (ci - base); l2 = c // stride; r = c % stride
            if r < w * w:
                j = r // w; i = r % w
                dzv = delta_z[l2]; apv = ws.A[l2]
                with nogil:
                    for k in range(n):
                        outv[row, k] = dzv[k, j] * apv[k, i]
            elif r < w * w + w:
                j = r - w * w
                dzv = delta_z[l2]
                with nogil:
                    for k in range(n):
                        outv[row, k] = dzv[k, j]
            else:
                c = r - w * w - w
                ratv = rat_blocks[l2]
                with nogil:
                    for k in range(n):
                        outv[row, k] = ratv[c, k]
        else:
            c = <int> (ci - base - nb * stride)
            if c < w:
                apv = ws.A[nb]
                with nogil:
                    for k in range(n):
                        outv[row, k] = apv[k, c]
            else:
                with nogil:
                    for k in range(n):
                        outv[row, k] = 1.0
    return ws.u, ws.ux, ws.uxx, out.T


def loss_grad_batch(spec, theta, X, u_target, du_target, double deriv_weight):
    """Sobolev loss and full parameter gradient (reverse over value+tangent)."""
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    X = np.ascontiguousarray(X, dtype=np.float64)
    u_target = np.ascontiguousarray(u_target, dtype=np.float64)
    du_target = np.ascontiguousarray(du_target, dtype=np.float64)
    cdef double[::1] th = theta
    cdef int d = spec.d
    cdef int w = spec.w
    cdef int nb = spec.nblocks
    cdef bint rational = spec.rational
    cdef int n = X.shape[0]
    cdef int p = spec.p
    cdef int wd = w * d
    cdef int stride = w * w + w + (6 if rational else 0)
    cdef int base = 3 * wd
    cdef int ow = base + nb * stride
    cdef int nd = n * d

    ws = _forward(spec, th, X, 1, True, 2)
    cdef double[::1] uv = ws.u
    cdef double[:, ::1] uxv = ws.ux
    cdef double[::1] utv = u_target
    cdef double[:, ::1] dutv = du_target

    cdef cnp.ndarray grad = np.zeros(p)
    cdef double[::1] g = grad
    cdef cnp.ndarray du = np.empty(n)
    cdef cnp.ndarray dux = np.empty((n, d))
    cdef double[::1] duv = du
    cdef double[:, ::1] duxv = dux
    cdef double loss = 0.0, rv, sc, sct
    cdef int k, i, j, l
    sc = 2.0 / n
    sct = 2.0 * deriv_weight / n
    with nogil:
        for k in range(n):
            rv = uv[k] - utv[k]
            loss += rv * rv
            duv[k] = sc * rv
            for i in range(d):
                rv = uxv[k, i] - dutv[k, i]
                loss += deriv_weight * rv * rv
                duxv[k, i] = sct * rv
    loss /= n

    cdef double[:, ::1] Alast = ws.A[nb]
    cdef double[:, :, ::1] Tlast = ws.T[nb]
    cdef double acc
    with nogil:
        for j in range(w):
            acc = 0.0
            for k in range(n):
                acc += duv[k] * Alast[k, j]
                for i in range(d):
                    acc += duxv[k, i] * Tlast[k, i, j]
            g[ow + j] = acc
        acc = 0.0
        for k in range(n):
            acc += duv[k]
        g[ow + w] = acc

    cdef cnp.ndarray dA = np.empty((n, w))
    cdef cnp.ndarray dT = np.empty((n, d, w))
    cdef double[:, ::1] dAv = dA
    cdef double[:, :, ::1] dTv = dT
    with nogil:
        for k in range(n):
            for j in range(w):
                dAv[k, j] = duv[k] * th[ow + j]
                for i in range(d):
                    dTv[k, i, j] = duxv[k, i] * th[ow + j]

    cdef cnp.ndarray dZ, dTz, dAprev, dTprev
    cdef double[:, ::1] dZv, s1v, s2v, invv, Zv, s0v
    cdef double[:, :, ::1] dTzv, Tzv
    cdef double c3, c2, c1, c0, d2, d1, zz, iv, v0, v1, denp
    cdef double dz1, dz2, dz3, tsum
    cdef double g0, g1, g2, g3, g4, g5
    cdef int off
    for l in range(nb - 1, -1, -1):
        off = base + l * stride
        Zv = ws.Z[l]
        s1v = ws.s1[l]
        s2v = ws.s2[l]
        Tzv = ws.Tz[l]
        dZ = np.empty((n, w))
        dZv = dZ
        dTz = np.empty((n, d, w))
        dTzv = dTz
        with nogil:
            for k in range(n):
                for j in range(w):
                    tsum = 0.0
                    for i in range(d):
                        tsum += dTv[k, i, j] * Tzv[k, i, j]
                        dTzv[k, i, j] = dTv[k, i, j] * s1v[k, j]
                    dZv[k, j] = dAv[k, j] * s1v[k, j] + tsum * s2v[k, j]
        if rational:
            invv = ws.inv[l]
            s0v = ws.A[l + 1]
            d2 = th[off + w * w + w + 4]
            d1 = th[off + w * w + w + 5]
            g0 = g1 = g2 = g3 = g4 = g5 = 0.0
            with nogil:
                for k in range(n):
                    for j in range(w):
                        zz = Zv[k, j]
                        iv = invv[k, j]
                        v0 = s0v[k, j]
                        v1 = s1v[k, j]
                        denp = 2.0 * d2 * zz + d1
                        tsum = 0.0
                        for i in range(d):
                            tsum += dTv[k, i, j] * Tzv[k, i, j]
                        dz1 = zz * iv
                        dz2 = zz * dz1
                        dz3 = zz * dz2
                        g0 += dAv[k, j] * dz3 + tsum * ((3.0 * zz * zz - dz3 * denp) * iv)
                        g1 += dAv[k, j] * dz2 + tsum * ((2.0 * zz - dz2 * denp) * iv)
                        g2 += dAv[k, j] * dz1 + tsum * ((1.0 - dz1 * denp) * iv)
                        g3 += dAv[k, j] * iv + tsum * (-iv * denp * iv)
                        g4 += (dAv[k, j] * (-v0 * zz * zz * iv)
                               + tsum * ((v0 * zz * zz * denp * iv - v0 * 2.0 * zz) * iv
                                         - v1 * zz * zz * iv))
                        g5 += (dAv[k, j] * (-v0 * zz * iv)
                               + tsum * ((v0 * zz * denp * iv - v0) * iv
                                         - v1 * zz * iv))
            g[off + w * w + w + 0] = g0
            g[off + w * w + w + 1] = g1
            g[off + w * w + w + 2] = g2
            g[off + w * w + w + 3] = g3
            g[off + w * w + w + 4] = g4
            g[off + w * w + w + 5] = g5
        _gemm_atb(<double*> cnp.PyArray_DATA(dZ),
                  <double*> cnp.PyArray_DATA(<cnp.ndarray> ws.A[l]),
                  &g[off], n, w, w, 0.0)
        _gemm_atb(<double*> cnp.PyArray_DATA(dTz),
                  <double*> cnp.PyArray_DATA(<cnp.ndarray> ws.T[l]),
                  &g[off], nd, w, w, 1.0)
        with nogil:
            for j in range(w):
                acc = 0.0
                for k in range(n):
                    acc += dZv[k, j]
                g[off + w * w + j] = acc
        dAprev = np.empty((n, w))
        _gemm_ab(<double*> cnp.PyArray_DATA(dZ), &th[off],
                 <double*> cnp.PyArray_DATA(dAprev), n, w, w, 0.0)
        dTprev = np.empty((n, d, w))
        _gemm_ab(<double*> cnp.PyArray_DATA(dTz), &th[off],
                 <double*> cnp.PyArray_DATA(dTprev), nd, w, w, 0.0)
        dA = dAprev; dAv = dA
        dT = dTprev; dTv = dT

    cdef double[:, :, ::1] cosv = ws.cosang
    cdef double[:, :, ::1] sinv = ws.sinang
    cdef double[::1] omega = np.ascontiguousarray(spec.omega, dtype=np.float64)
    cdef double ga, gphi, gb, om, aji
    with nogil:
        for j in range(w):
            for i in range(d):
                om = omega[i]
                aji = th[j * d + i]
                ga = 0.0; gphi = 0.0; gb = 0.0
                for k in range(n):
                    ga += (dAv[k, j] * cosv[k, j, i]
                           - dTv[k, i, j] * om * sinv[k, j, i])
                    gphi += -aji * (dAv[k, j] * sinv[k, j, i]
                                    + dTv[k, i, j] * om * cosv[k, j, i])
                    gb += dAv[k, j]
                g[j * d + i] = ga
                g[wd + j * d + i] = gphi
                g[2 * wd + j * d + i] = gb
    return loss, grad


def backend_name():
    return "compiled"
