"""Method of Moving Asymptotes (Svanberg), subproblem solved by a primal-dual
interior point method.

Problem form::

    min  f0(x) + a0 z + sum_i (c_i y_i + d_i y_i^2 / 2)
    s.t. f_i(x) - a_i z - y_i <= 0,  xmin <= x <= xmax,  y, z >= 0
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve


class MmaError(RuntimeError):
    pass


@dataclass
class MmaState:
    n: int
    m: int
    move: float = 0.1
    asyinit: float = 0.5
    asyincr: float = 1.2
    asydecr: float = 0.7
    albefa: float = 0.1
    a0: float = 1.0
    a: np.ndarray = None
    c: np.ndarray = None
    d: np.ndarray = None
    iteration: int = 0
    xold1: np.ndarray = None
    xold2: np.ndarray = None
    low: np.ndarray = None
    upp: np.ndarray = None
    history: list = field(default_factory=list)

    def __post_init__(self):
        if not 0 < self.move <= 1:
            raise ValueError(f"move limit must be in (0, 1], got {self.move}")
        if self.a is None:
            self.a = np.zeros(self.m)
        if self.c is None:
            self.c = np.full(self.m, 1000.0)
        if self.d is None:
            self.d = np.ones(self.m)


def mma_update(state, x, f0, df0, g, dg, xmin=0.0, xmax=1.0):
    """One MMA iteration; returns the new design and updates ``state`` in place."""
    x = np.asarray(x, dtype=float)
    n, m = state.n, state.m
    g = np.atleast_1d(np.asarray(g, dtype=float))
    dg = np.atleast_2d(np.asarray(dg, dtype=float))
    df0 = np.asarray(df0, dtype=float)
    if x.shape != (n,) or df0.shape != (n,) or g.shape != (m,) or dg.shape != (m, n):
        raise ValueError("inconsistent MMA dimensions")
    xmin = np.broadcast_to(np.asarray(xmin, dtype=float), (n,))
    xmax = np.broadcast_to(np.asarray(xmax, dtype=float), (n,))
    state.iteration += 1
    k = state.iteration
    xold1 = x.copy() if state.xold1 is None else state.xold1
    xold2 = x.copy() if state.xold2 is None else state.xold2

    span = xmax - xmin
    if k <= 2 or state.low is None:
        low = x - state.asyinit * span
        upp = x + state.asyinit * span
    else:
        zzz = (x - xold1) * (xold1 - xold2)
        factor = np.ones(n)
        factor[zzz > 0] = state.asyincr
        factor[zzz < 0] = state.asydecr
        low = x - factor * (xold1 - state.low)
        upp = x + factor * (state.upp - xold1)
        low = np.clip(low, x - 10 * span, x - 0.01 * span)
        upp = np.clip(upp, x + 0.01 * span, x + 10 * span)

    alfa = np.maximum.reduce([low + state.albefa * (x - low), x - state.move * span, xmin])
    beta = np.minimum.reduce([upp - state.albefa * (upp - x), x + state.move * span, xmax])

    ux1 = upp - x
    xl1 = x - low
    ux2, xl2 = ux1 ** 2, xl1 ** 2
    raa0 = 1e-5
    xmami = np.maximum(span, 1e-5)
    xmamiinv = 1.0 / xmami

    p0 = np.maximum(df0, 0.0)
    q0 = np.maximum(-df0, 0.0)
    pq0 = 0.001 * (p0 + q0) + raa0 * xmamiinv
    p0 = (p0 + pq0) * ux2
    q0 = (q0 + pq0) * xl2

    P = np.maximum(dg, 0.0)
    Q = np.maximum(-dg, 0.0)
    PQ = 0.001 * (P + Q) + raa0 * xmamiinv[None, :]
    P = (P + PQ) * ux2[None, :]
    Q = (Q + PQ) * xl2[None, :]
    b = P @ (1.0 / ux1) + Q @ (1.0 / xl1) - g

    xnew = _subsolv(m, n, state.a0, state.a, b, state.c, state.d, low, upp, alfa, beta, p0, q0, P, Q)
    state.xold2 = xold1.copy()
    state.xold1 = x.copy()
    state.low, state.upp = low, upp
    return xnew


def _subsolv(m, n, a0, a, b, c, d, low, upp, alfa, beta, p0, q0, P, Q, epsimin=1e-9, max_outer=200):
    een = np.ones(n)
    eem = np.ones(m)
    epsi = 1.0
    x = 0.5 * (alfa + beta)
    y = eem.copy()
    z = 1.0
    lam = eem.copy()
    xsi = np.maximum(een / (x - alfa), een)
    eta = np.maximum(een / (beta - x), een)
    mu = np.maximum(eem, 0.5 * c)
    zet = 1.0
    s = eem.copy()

    def residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi):
        ux1 = upp - x
        xl1 = x - low
        plam = p0 + P.T @ lam
        qlam = q0 + Q.T @ lam
        gvec = P @ (1 / ux1) + Q @ (1 / xl1)
        rex = plam / ux1 ** 2 - qlam / xl1 ** 2 - xsi + eta
        rey = c + d * y - mu - lam
        rez = a0 - zet - a @ lam
        relam = gvec - a * z - y + s - b
        rexsi = xsi * (x - alfa) - epsi
        reeta = eta * (beta - x) - epsi
        remu = mu * y - epsi
        rezet = zet * z - epsi
        res = lam * s - epsi
        r = np.concatenate([rex, rey, [rez], relam, rexsi, reeta, remu, [rezet], res])
        return np.linalg.norm(r), np.max(np.abs(r))

    outer = 0
    while epsi > epsimin:
        outer += 1
        if outer > max_outer:
            raise MmaError("MMA subproblem did not converge")
        resinorm, resimax = residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
        inner = 0
        while resimax > 0.9 * epsi and inner < 200:
            inner += 1
            ux1 = upp - x
            xl1 = x - low
            ux2, xl2 = ux1 ** 2, xl1 ** 2
            ux3, xl3 = ux1 * ux2, xl1 * xl2
            uxinv1, xlinv1 = 1 / ux1, 1 / xl1
            uxinv2, xlinv2 = 1 / ux2, 1 / xl2
            plam = p0 + P.T @ lam
            qlam = q0 + Q.T @ lam
            gvec = P @ uxinv1 + Q @ xlinv1
            GG = P * uxinv2[None, :] - Q * xlinv2[None, :]
            dpsidx = plam / ux2 - qlam / xl2
            delx = dpsidx - epsi / (x - alfa) + epsi / (beta - x)
            dely = c + d * y - lam - epsi / y
            delz = a0 - a @ lam - epsi / z
            dellam = gvec - a * z - y - b + epsi / lam
            diagx = 2 * (plam / ux3 + qlam / xl3) + xsi / (x - alfa) + eta / (beta - x)
            diagy = d + mu / y
            diagyinv = 1 / diagy
            diaglam = s / lam
            diaglamyi = diaglam + diagyinv
            if m < n:
                blam = dellam + dely / diagy - GG @ (delx / diagx)
                bb = np.concatenate([blam, [delz]])
                Alam = np.diag(diaglamyi) + (GG / diagx[None, :]) @ GG.T
                AA = np.block([[Alam, a[:, None]], [a[None, :], np.array([[-zet / z]])]])
                sol = np.linalg.solve(AA, bb)
                dlam = sol[:m]
                dz = sol[m]
                dx = -delx / diagx - (GG.T @ dlam) / diagx
            else:
                diaglamyiinv = 1 / diaglamyi
                dellamyi = dellam + dely / diagy
                Axx = sp.diags(diagx) + sp.csr_matrix(GG.T * diaglamyiinv[None, :]) @ sp.csr_matrix(GG)
                azz = zet / z + a @ (a / diaglamyi)
                axz = -GG.T @ (a / diaglamyi)
                bx = delx + GG.T @ (dellamyi / diaglamyi)
                bz = delz - a @ (dellamyi / diaglamyi)
                AA = sp.bmat([[Axx, axz[:, None]], [axz[None, :], np.array([[azz]])]]).tocsc()
                sol = spsolve(AA, -np.concatenate([bx, [bz]]))
                dx = sol[:n]
                dz = sol[n]
                dlam = (GG @ dx) / diaglamyi - dz * (a / diaglamyi) + dellamyi / diaglamyi
            dy = -dely / diagy + dlam / diagy
            dxsi = -xsi + epsi / (x - alfa) - (xsi * dx) / (x - alfa)
            deta = -eta + epsi / (beta - x) + (eta * dx) / (beta - x)
            dmu = -mu + epsi / y - (mu * dy) / y
            dzet = -zet + epsi / z - zet * dz / z
            ds = -s + epsi / lam - (s * dlam) / lam

            xx = np.concatenate([y, [z], lam, xsi, eta, mu, [zet], s])
            dxx = np.concatenate([dy, [dz], dlam, dxsi, deta, dmu, [dzet], ds])
            stepxx = -1.01 * dxx / xx
            stmxx = np.max(stepxx)
            stepalfa = -1.01 * dx / (x - alfa)
            stmalfa = np.max(stepalfa)
            stepbeta = 1.01 * dx / (beta - x)
            stmbeta = np.max(stepbeta)
            stminv = max(stmxx, stmalfa, stmbeta, 1.0)
            steg = 1.0 / stminv

            xold, yold, zold, lamold = x, y, z, lam
            xsiold, etaold, muold, zetold, sold = xsi, eta, mu, zet, s
            resinew = 2 * resinorm
            itto = 0
            while resinew > resinorm and itto < 50:
                itto += 1
                x = xold + steg * dx
                y = yold + steg * dy
                z = zold + steg * dz
                lam = lamold + steg * dlam
                xsi = xsiold + steg * dxsi
                eta = etaold + steg * deta
                mu = muold + steg * dmu
                zet = zetold + steg * dzet
                s = sold + steg * ds
                resinew, _ = residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
                steg /= 2
            resinorm = resinew
            _, resimax = residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
        epsi *= 0.1
    if not np.all(np.isfinite(x)):
        raise MmaError("non-finite MMA subproblem solution")
    return x


def kkt_residual(x, df0, g, dg, lam, xmin=0.0, xmax=1.0):
    """Max-norm KKT residual of the original problem for given multipliers (diagnostics)."""
    grad = df0 + dg.T @ lam
    r = np.where(x <= xmin + 1e-9, np.minimum(grad, 0), np.where(x >= xmax - 1e-9, np.maximum(grad, 0), grad))
    return max(np.max(np.abs(r)), np.max(np.abs(lam * g)) if np.size(g) else 0.0)
