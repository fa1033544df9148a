"""Pure-numpy kernels, drop-in replacement for the compiled ``_ckernels``.

The functions are vectorised over the leading stack axis; loops only run
over panels and squarings.
"""

import numpy as np

THETA13 = 5.371920351148152
PADE13 = (
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
)


def expm_stack(a, t):
    """Return ``exp(t[k] * a[k])`` for every block of the stack."""
    a = np.asarray(a, dtype=np.float64)
    n, d, _ = a.shape
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    if n == 0:
        return np.empty((0, d, d))
    norm = np.abs(a).sum(axis=1).max(axis=1) * np.abs(t)
    if not np.all(np.isfinite(norm)):
        raise FloatingPointError("matrix exponential failed (non-finite or singular Pade denominator)")
    _, e = np.frexp(norm / THETA13)
    s = np.where(norm > THETA13, e, 0)
    f = np.ldexp(t, -s)
    a1 = f[:, None, None] * a
    eye = np.eye(d)
    a2 = a1 @ a1
    a4 = a2 @ a2
    a6 = a4 @ a2
    b = PADE13
    u = a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * eye
    u = a1 @ u
    v = a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * eye
    try:
        r = np.linalg.solve(v - u, v + u)
    except np.linalg.LinAlgError as exc:
        raise FloatingPointError("matrix exponential failed (non-finite or singular Pade denominator)") from exc
    # exact identity where tA vanishes, matching the compiled kernel
    r[norm == 0.0] = eye
    smax = int(s.max())
    for k in range(smax):
        sq = s > k
        if sq.all():
            r = r @ r
        else:
            r[sq] = r[sq] @ r[sq]
    return r


def _half_nodes(h, xi):
    return 0.5 * h * (1.0 + np.asarray(xi, dtype=np.float64))


def gramian_stack(a, h, panels, xi, wq, sign):
    """Composite Gauss-Legendre value of ``int_0^{panels*h} e^{sign r A} e^{sign r A^T} dr``."""
    a = np.asarray(a, dtype=np.float64)
    n, d, _ = a.shape
    nodes = _half_nodes(h, xi)
    m = nodes.size
    g = expm_stack(a, np.full(n, sign * h))
    # (m, n, d, d) node exponentials
    stacked = np.broadcast_to(a, (m, n, d, d)).reshape(m * n, d, d)
    f = expm_stack(stacked, np.repeat(sign * nodes, n)).reshape(m, n, d, d)
    coef = 0.5 * h * np.asarray(wq, dtype=np.float64)
    w0 = np.einsum("j,jnab,jncb->nac", coef, f, f)
    w0 = 0.5 * (w0 + np.swapaxes(w0, 1, 2))
    s = w0.copy()
    gt = np.swapaxes(g, 1, 2)
    for _ in range(1, panels):
        s = w0 + g @ s @ gt
        s = 0.5 * (s + np.swapaxes(s, 1, 2))
    return s


def propagate_stack(a, x0, wvals, h, xi, wq):
    """State at ``P*h`` from ``x0`` under forcing sampled at the panel nodes.

    ``wvals`` has shape ``(n, P, m, d)`` holding the forcing at
    ``p*h + h*(1+xi[j])/2``.
    """
    a = np.asarray(a, dtype=np.float64)
    n, d, _ = a.shape
    wvals = np.asarray(wvals, dtype=np.float64)
    panels = wvals.shape[1]
    xi = np.asarray(xi, dtype=np.float64)
    m = xi.size
    g = expm_stack(a, np.full(n, h))
    back = 0.5 * h * (1.0 - xi)
    stacked = np.broadcast_to(a, (m, n, d, d)).reshape(m * n, d, d)
    f = expm_stack(stacked, np.repeat(back, n)).reshape(m, n, d, d)
    coef = 0.5 * h * np.asarray(wq, dtype=np.float64)
    # contributions of every panel at once, then a Horner sweep
    b = np.einsum("j,jnab,npjb->npa", coef, f, wvals)
    acc = np.array(x0, dtype=np.float64)
    for p in range(panels):
        acc = np.einsum("nab,nb->na", g, acc) + b[:, p]
    return acc


def exp_action_stack(a, y, h, panels, xi):
    """Samples ``e^{(q*h + h*(1+xi[j])/2) a} y`` with shape ``(n, panels, m, d)``."""
    a = np.asarray(a, dtype=np.float64)
    n, d, _ = a.shape
    nodes = _half_nodes(h, xi)
    m = nodes.size
    g = expm_stack(a, np.full(n, h))
    stacked = np.broadcast_to(a, (m, n, d, d)).reshape(m * n, d, d)
    f = expm_stack(stacked, np.repeat(nodes, n)).reshape(m, n, d, d)
    cur = np.array(y, dtype=np.float64)
    powers = np.empty((n, panels, d))
    for q in range(panels):
        powers[:, q] = cur
        cur = np.einsum("nab,nb->na", g, cur)
    return np.einsum("jnab,nqb->nqja", f, powers)


def cholesky_stack(w):
    """Lower Cholesky factors of a stack; returns ``(L, bad)``.

    ``bad`` is ``(-1, -1)`` on success, otherwise ``(block, pivot)`` of the
    first non-positive pivot.
    """
    w = np.asarray(w, dtype=np.float64)
    n, d, _ = w.shape
    out = np.zeros_like(w)
    fail = np.full(n, -1)
    for j in range(d):
        piv = w[:, j, j] - np.einsum("nk,nk->n", out[:, j, :j], out[:, j, :j])
        bad = (~(piv > 0.0) | ~np.isfinite(piv)) & (fail < 0)
        fail[bad] = j
        # keep failed blocks finite so the remaining ones can finish
        piv = np.where(fail >= 0, 1.0, piv)
        out[:, j, j] = np.sqrt(piv)
        if j + 1 < d:
            rest = w[:, j + 1:, j] - np.einsum("nik,nk->ni", out[:, j + 1:, :j], out[:, j, :j])
            out[:, j + 1:, j] = rest / out[:, j, j][:, None]
    if np.any(fail >= 0):
        k = int(np.argmax(fail >= 0))
        return out, (k, int(fail[k]))
    return out, (-1, -1)


def cho_solve_stack(l, b):
    """Solve ``L L^T y = b`` for every block."""
    l = np.asarray(l, dtype=np.float64)
    y = np.array(b, dtype=np.float64)
    d = l.shape[1]
    for i in range(d):
        y[:, i] = (y[:, i] - np.einsum("nk,nk->n", l[:, i, :i], y[:, :i])) / l[:, i, i]
    for i in range(d - 1, -1, -1):
        y[:, i] = (y[:, i] - np.einsum("nk,nk->n", l[:, i + 1:, i], y[:, i + 1:])) / l[:, i, i]
    return y
