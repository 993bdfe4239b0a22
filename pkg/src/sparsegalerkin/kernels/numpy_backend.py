"""Vectorized numpy implementation of the network kernels.

This is the reference backend: every operation is batched over evaluation
points with plain numpy, and the compiled backend must reproduce it to
near machine precision.  Layout arithmetic matches ``arch.ArchSpec.layout``.

Shapes used throughout: ``X`` is (n, d); value channels are (n, w); spatial
tangent/second-derivative channels are (n, d, w) where axis 1 indexes the
input dimension being differentiated.
"""

from __future__ import annotations

import numpy as np

DENOM_CLAMP = 1e-12


def _unpack(spec, theta):
    d, w, nb = spec.d, spec.w, spec.nblocks
    off = 0
    emb_a = theta[off : off + w * d].reshape(w, d)
    off += w * d
    emb_phi = theta[off : off + w * d].reshape(w, d)
    off += w * d
    emb_b = theta[off : off + w * d].reshape(w, d)
    off += w * d
    blocks = []
    for _ in range(nb):
        W = theta[off : off + w * w].reshape(w, w)
        off += w * w
        b = theta[off : off + w]
        off += w
        if spec.rational:
            rat = theta[off : off + 6]
            off += 6
        else:
            rat = None
        blocks.append((W, b, rat))
    out_w = theta[off : off + w]
    off += w
    out_b = theta[off]
    return emb_a, emb_phi, emb_b, blocks, out_w, out_b


def _clamp_denominator(den):
    small = np.abs(den) < DENOM_CLAMP
    if np.any(small):
        den = np.where(small, np.where(den >= 0, DENOM_CLAMP, -DENOM_CLAMP), den)
    return den


def _activation(rat, z, order):
    """Value and derivatives of the activation at z.

    Returns (s0, s1, s2); s1/s2 are None when not requested via ``order``.
    For the rational activation also returns (inv_d, num_p) needed by
    coefficient gradients, else (None, None).
    """
    if rat is None:
        t = np.tanh(z)
        s1 = 1.0 - t * t if order >= 1 else None
        s2 = -2.0 * t * s1 if order >= 2 else None
        return t, s1, s2, None, None
    c3, c2, c1, c0, d2, d1 = rat
    num = ((c3 * z + c2) * z + c1) * z + c0
    den = _clamp_denominator((d2 * z + d1) * z + 1.0)
    inv = 1.0 / den
    s0 = num * inv
    s1 = s2 = None
    num_p = None
    if order >= 1:
        num_p = (3.0 * c3 * z + 2.0 * c2) * z + c1
        den_p = 2.0 * d2 * z + d1
        s1 = (num_p - s0 * den_p) * inv
        if order >= 2:
            num_pp = 6.0 * c3 * z + 2.0 * c2
            s2 = (num_pp - 2.0 * s1 * den_p - s0 * 2.0 * d2) * inv
    return s0, s1, s2, inv, num_p


def _forward(spec, theta, X, order, keep_cache=False, act_order=None):
    """Shared forward pass.

    order: 0 value only, 1 +first spatial derivatives, 2 +second.
    act_order optionally raises the activation-derivative order beyond what
    the spatial channels need (reverse mode through tangents needs sigma'').
    With keep_cache, returns per-layer quantities needed for backprop.
    """
    emb_a, emb_phi, emb_b, blocks, out_w, out_b = _unpack(spec, theta)
    omega = spec.omega.astype(theta.dtype)
    ang = X[:, None, :] * omega[None, None, :] + emb_phi[None, :, :]  # (n, w, d)
    cosang = np.cos(ang)
    A = np.einsum("nwd,wd->nw", cosang, emb_a) + emb_b.sum(axis=1)[None, :]
    sinang = None
    T = H = None
    if order >= 1:
        sinang = np.sin(ang)
        # T[n, i, j] = -a_{ji} * omega_i * sin(ang[n, j, i])
        T = -np.transpose(sinang * emb_a[None, :, :], (0, 2, 1)) * omega[None, :, None]
        if order >= 2:
            H = (
                -np.transpose(cosang * emb_a[None, :, :], (0, 2, 1))
                * (omega**2)[None, :, None]
            )
    cache = {
        "unpacked": (emb_a, emb_phi, emb_b, blocks, out_w, out_b),
        "ang": ang,
        "cosang": cosang,
        "sinang": sinang,
        "A": [A],
        "T": [T],
        "Z": [],
        "Tz": [],
        "act": [],
    }
    if act_order is None:
        act_order = max(order, 1) if keep_cache else order  # backprop needs s1
    for W, b, rat in blocks:
        Z = A @ W.T + b[None, :]
        s0, s1, s2, inv, num_p = _activation(rat, Z, act_order)
        Tz = None
        if order >= 1:
            Tz = T @ W.T
            T = s1[:, None, :] * Tz
            if order >= 2:
                H = s2[:, None, :] * Tz**2 + s1[:, None, :] * (H @ W.T)
        A = s0
        if keep_cache:
            cache["Z"].append(Z)
            cache["Tz"].append(Tz)
            cache["act"].append((s0, s1, s2, inv, num_p))
            cache["A"].append(A)
            cache["T"].append(T)
    u = A @ out_w + out_b
    ux = np.einsum("ndw,w->nd", T, out_w) if order >= 1 else None
    uxx = np.einsum("ndw,w->nd", H, out_w) if order >= 2 else None
    return u, ux, uxx, cache


def eval_batch(spec, theta, X, order=2):
    """Network value and spatial derivatives at each row of X."""
    u, ux, uxx, _ = _forward(spec, theta, X, order)
    return u, ux, uxx


def _backprop_deltas(spec, cache):
    """Cotangents of the scalar output w.r.t. each layer's activations.

    Returns (delta_act, delta_z) lists: delta_act[l] is the cotangent at the
    *output* of block l's activation (for l = nblocks it is the cotangent at
    the embedding output when nblocks = 0); delta_z[l] at its pre-activation.
    Index 0 of delta_emb is the embedding-output cotangent.
    """
    _, _, _, blocks, out_w, _ = cache["unpacked"]
    n = cache["A"][0].shape[0]
    delta = np.broadcast_to(out_w, (n, spec.w)).astype(cache["A"][0].dtype)
    delta_act = [None] * spec.nblocks
    delta_z = [None] * spec.nblocks
    for l in range(spec.nblocks - 1, -1, -1):
        delta_act[l] = delta
        s1 = cache["act"][l][1]
        dz = delta * s1
        delta_z[l] = dz
        delta = dz @ blocks[l][0]
    return delta_act, delta_z, delta  # final delta = embedding-output cotangent


def _rational_coeff_columns(delta_act, Z, s0, inv):
    """The six Jacobian columns of one block's rational coefficients.

    Shared within a layer, so each column is a sum over units:
    d(u)/d(c_k) = sum_j delta_act[:, j] * z^k * inv, k = 3..0, and
    d(u)/d(d_k) = sum_j delta_act[:, j] * (-s0 * z^k * inv), k = 2, 1.
    """
    z1 = Z
    z2 = Z * Z
    z3 = z2 * Z
    cols = [
        np.einsum("nj,nj->n", delta_act, z3 * inv),
        np.einsum("nj,nj->n", delta_act, z2 * inv),
        np.einsum("nj,nj->n", delta_act, z1 * inv),
        np.einsum("nj,nj->n", delta_act, inv),
        np.einsum("nj,nj->n", delta_act, -s0 * z2 * inv),
        np.einsum("nj,nj->n", delta_act, -s0 * z1 * inv),
    ]
    return cols


def jacobian_batch(spec, theta, X, cols=None):
    """Batch Jacobian d(u)/d(theta) (n x p), optionally restricted to cols."""
    u, ux, uxx, J = _assemble(spec, theta, X, cols, order=0)
    return J


def assemble_batch(spec, theta, X, cols=None):
    """Fused Jacobian + value + spatial derivatives (one forward pass)."""
    return _assemble(spec, theta, X, cols, order=2)


def _assemble(spec, theta, X, cols, order):
    n = X.shape[0]
    d, w = spec.d, spec.w
    u, ux, uxx, cache = _forward(spec, theta, X, order, keep_cache=True)
    if cache["sinang"] is None:
        cache["sinang"] = np.sin(cache["ang"])  # embedding-phase columns need it
    emb_a, emb_phi, emb_b, blocks, out_w, out_b = cache["unpacked"]
    if spec.nblocks > 0:
        delta_act, delta_z, delta_emb = _backprop_deltas(spec, cache)
    else:
        delta_act, delta_z = [], []
        delta_emb = np.broadcast_to(out_w, (n, w)).astype(theta.dtype)

    if cols is None:
        out = np.empty((spec.p, n), dtype=theta.dtype)
        off = 0
        # embedding a, phi, b: flat index j*d + i
        blk = (delta_emb[:, :, None] * cache["cosang"]).reshape(n, w * d)
        out[off : off + w * d] = blk.T
        off += w * d
        blk = (delta_emb[:, :, None] * (-emb_a[None] * cache["sinang"])).reshape(
            n, w * d
        )
        out[off : off + w * d] = blk.T
        off += w * d
        blk = np.repeat(delta_emb[:, :, None], d, axis=2).reshape(n, w * d)
        out[off : off + w * d] = blk.T
        off += w * d
        for l in range(spec.nblocks):
            A_prev = cache["A"][l]
            blk = (delta_z[l][:, :, None] * A_prev[:, None, :]).reshape(n, w * w)
            out[off : off + w * w] = blk.T
            off += w * w
            out[off : off + w] = delta_z[l].T
            off += w
            if spec.rational:
                s0, _, _, inv, _ = cache["act"][l]
                rat_cols = _rational_coeff_columns(
                    delta_act[l], cache["Z"][l], s0, inv
                )
                for k in range(6):
                    out[off + k] = rat_cols[k]
                off += 6
        out[off : off + w] = cache["A"][spec.nblocks].T
        off += w
        out[off] = 1.0
        return u, ux, uxx, out.T

    cols = np.asarray(cols, dtype=np.int64)
    out = np.empty((cols.shape[0], n), dtype=theta.dtype)
    # Walk layout blocks and fill the selected columns of each.
    bounds = _layout_bounds(spec)
    pos = 0
    for name, lo, hi in bounds:
        upper = np.searchsorted(cols, hi, side="left")
        sel = cols[pos:upper] - lo
        if sel.size == 0:
            pos = upper
            continue
        rows = slice(pos, upper)
        if name == "emb_a":
            j, i = sel // d, sel % d
            out[rows] = (delta_emb[:, j] * cache["cosang"][:, j, i]).T
        elif name == "emb_phi":
            j, i = sel // d, sel % d
            out[rows] = (
                delta_emb[:, j] * (-emb_a[j, i][None, :] * cache["sinang"][:, j, i])
            ).T
        elif name == "emb_b":
            j = sel // d
            out[rows] = delta_emb[:, j].T
        elif name.startswith("w"):
            l = int(name[1:])
            j, i = sel // w, sel % w
            out[rows] = (delta_z[l][:, j] * cache["A"][l][:, i]).T
        elif name.startswith("b"):
            l = int(name[1:])
            out[rows] = delta_z[l][:, sel].T
        elif name.startswith("rat"):
            l = int(name[3:])
            s0, _, _, inv, _ = cache["act"][l]
            rat_cols = _rational_coeff_columns(delta_act[l], cache["Z"][l], s0, inv)
            for k, c in enumerate(sel):
                out[pos + k] = rat_cols[c]
        elif name == "out_w":
            out[rows] = cache["A"][spec.nblocks][:, sel].T
        elif name == "out_b":
            out[rows] = 1.0
        pos = upper
    return u, ux, uxx, out.T


def _layout_bounds(spec):
    d, w = spec.d, spec.w
    bounds = []
    off = 0
    for name, size in (("emb_a", w * d), ("emb_phi", w * d), ("emb_b", w * d)):
        bounds.append((name, off, off + size))
        off += size
    for l in range(spec.nblocks):
        bounds.append((f"w{l}", off, off + w * w))
        off += w * w
        bounds.append((f"b{l}", off, off + w))
        off += w
        if spec.rational:
            bounds.append((f"rat{l}", off, off + 6))
            off += 6
    bounds.append(("out_w", off, off + w))
    off += w
    bounds.append(("out_b", off, off + 1))
    return bounds


def loss_grad_batch(spec, theta, X, u_target, du_target, deriv_weight):
    """Sobolev fitting loss and its full parameter gradient.

    loss = mean((u - u_t)^2) + deriv_weight * mean(sum_i (u_xi - du_t,i)^2).
    The gradient is reverse-mode through the joint (value, spatial-tangent)
    forward computation.
    """
    n, d = X.shape
    w = spec.w
    u, ux, _, cache = _forward(spec, theta, X, order=1, keep_cache=True, act_order=2)
    emb_a, emb_phi, emb_b, blocks, out_w, out_b = cache["unpacked"]
    rv = u - u_target
    rt = ux - du_target
    loss = float(np.mean(rv**2) + deriv_weight * np.mean(np.sum(rt**2, axis=1)))

    grad = np.zeros(spec.p, dtype=theta.dtype)
    du = (2.0 / n) * rv
    dux = (2.0 * deriv_weight / n) * rt

    A_last = cache["A"][spec.nblocks]
    T_last = cache["T"][spec.nblocks]
    g_out_w = du @ A_last + np.einsum("nd,ndw->w", dux, T_last)
    g_out_b = du.sum()
    dA = du[:, None] * out_w[None, :]
    dT = dux[:, :, None] * out_w[None, None, :]

    bounds = {name: (lo, hi) for name, lo, hi in _layout_bounds(spec)}

    def put(name, arr):
        lo, hi = bounds[name]
        grad[lo:hi] = np.asarray(arr).ravel()

    put("out_w", g_out_w)
    put("out_b", g_out_b)

    for l in range(spec.nblocks - 1, -1, -1):
        W, b, rat = blocks[l]
        Z = cache["Z"][l]
        Tz = cache["Tz"][l]
        s0, s1, s2, inv, num_p = cache["act"][l]
        dZ = dA * s1 + np.einsum("ndw,ndw->nw", dT, Tz) * s2
        dTz = dT * s1[:, None, :]
        if rat is not None:
            c3, c2, c1, c0, d2, d1 = rat
            den_p = 2.0 * d2 * Z + d1
            z1, z2_, z3 = Z, Z * Z, Z * Z * Z
            zpow = (z3, z2_, z1, np.ones_like(Z))
            # contraction helper: sum over n (and d for tangents) and units
            dT_Tz = np.einsum("ndw,ndw->nw", dT, Tz)
            g_rat = np.empty(6, dtype=theta.dtype)
            for k, zk in enumerate(zpow):
                power = 3 - k
                ds_dc = zk * inv
                dzk = power * zpow[k + 1] if power >= 1 else np.zeros_like(Z)
                ds1_dc = (dzk - ds_dc * den_p) * inv
                g_rat[k] = np.sum(dA * ds_dc) + np.sum(dT_Tz * ds1_dc)
            for k, (zk, kk) in enumerate(((z2_, 2.0), (z1, 1.0))):
                ds_dd = -s0 * zk * inv
                dzk = kk * z1 if kk == 2.0 else np.ones_like(Z)
                ds1_dd = (s0 * zk * den_p * inv - s0 * dzk) * inv - s1 * zk * inv
                g_rat[4 + k] = np.sum(dA * ds_dd) + np.sum(dT_Tz * ds1_dd)
            put(f"rat{l}", g_rat)
        A_prev = cache["A"][l]
        T_prev = cache["T"][l]
        gW = dZ.T @ A_prev + np.einsum("ndj,ndi->ji", dTz, T_prev)
        gb = dZ.sum(axis=0)
        put(f"w{l}", gW)
        put(f"b{l}", gb)
        dA = dZ @ W
        dT = np.einsum("ndj,ji->ndi", dTz, W)

    cosang, sinang = cache["cosang"], cache["sinang"]
    omega = spec.omega.astype(theta.dtype)
    wsin = sinang * omega[None, None, :]
    wcos = cosang * omega[None, None, :]
    g_a = np.einsum("nj,nji->ji", dA, cosang) - np.einsum("nij,nji->ji", dT, wsin)
    g_phi = -emb_a * (
        np.einsum("nj,nji->ji", dA, sinang) + np.einsum("nij,nji->ji", dT, wcos)
    )
    g_b = np.repeat(dA.sum(axis=0)[:, None], d, axis=1)
    put("emb_a", g_a)
    put("emb_phi", g_phi)
    put("emb_b", g_b)
    return loss, grad


def backend_name() -> str:
    return "numpy"
