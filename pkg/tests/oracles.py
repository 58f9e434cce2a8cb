"""Independent reference implementations used only by the tests.

None of these import the package's numerics: element matrices come from
numerical Gauss integration, assembly is a dense double loop, the
Gauss-Legendre rule is found by Newton iteration on the three-term
recurrence, and the SIMP reference is a straight-line transcription of the
classic 88-line loop (column-major node numbering, its own filter and OC).
"""
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

# unit square, counter-clockwise from lower-left, y up
Q4_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def _shape_grads(s, t):
    """dN/dx, dN/dy on the unit square at reference point (s, t) in [-1, 1]^2."""
    dn_ds = 0.25 * np.array([-(1 - t), (1 - t), (1 + t), -(1 + t)])
    dn_dt = 0.25 * np.array([-(1 - s), -(1 + s), (1 + s), (1 - s)])
    # unit square: x = (s+1)/2, y = (t+1)/2
    return 2 * dn_ds, 2 * dn_dt


def gauss_q4_stiffness(e=1.0, nu=0.3):
    d = e / (1 - nu ** 2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])
    g = 1 / np.sqrt(3)
    ke = np.zeros((8, 8))
    for s in (-g, g):
        for t in (-g, g):
            dx, dy = _shape_grads(s, t)
            b = np.zeros((3, 8))
            b[0, 0::2] = dx
            b[1, 1::2] = dy
            b[2, 0::2] = dy
            b[2, 1::2] = dx
            ke += b.T @ d @ b * 0.25  # det J = 1/4
    return ke


def gauss_q4_conductivity(k=1.0):
    g = 1 / np.sqrt(3)
    ke = np.zeros((4, 4))
    for s in (-g, g):
        for t in (-g, g):
            dx, dy = _shape_grads(s, t)
            ke += k * (np.outer(dx, dx) + np.outer(dy, dy)) * 0.25
    return ke


def dense_assemble(theta, dofs_per_node, ke, penalty, prop0, prop_min):
    """Dense global matrix by looping over elements; node ids from corner
    coordinates so no connectivity table is shared with the package."""
    ny, nx = theta.shape
    n = (nx + 1) * (ny + 1) * dofs_per_node
    k = np.zeros((n, n))
    for r in range(ny):
        for c in range(nx):
            nodes = []
            for x, y in Q4_CORNERS:
                row = r + 1 - int(y)  # y up, rows grow downward
                col = c + int(x)
                nodes.append(row * (nx + 1) + col)
            if dofs_per_node == 2:
                dofs = [d for nd in nodes for d in (2 * nd, 2 * nd + 1)]
            else:
                dofs = nodes
            e = prop_min + theta[r, c] ** penalty * (prop0 - prop_min)
            for i, a in enumerate(dofs):
                for j, b in enumerate(dofs):
                    k[a, b] += e * ke[i, j]
    return k


def newton_gauss_legendre(m, iters=100):
    """Nodes and weights on [-1, 1] via Newton on P_m."""
    nodes = np.empty(m)
    weights = np.empty(m)
    for i in range(m):
        x = np.cos(np.pi * (i + 0.75) / (m + 0.5))
        for _ in range(iters):
            p0, p1 = 1.0, x
            for k in range(2, m + 1):
                p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
            dp = m * (x * p1 - p0) / (x * x - 1)
            dx = p1 / dp
            x -= dx
            if abs(dx) < 1e-16:
                break
        p0, p1 = 1.0, x
        for k in range(2, m + 1):
            p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
        dp = m * (x * p1 - p0) / (x * x - 1)
        nodes[i] = x
        weights[i] = 2 / ((1 - x * x) * dp * dp)
    order = np.argsort(nodes)
    return nodes[order], weights[order]


def top88_cantilever(nelx, nely, volfrac, penal, rmin, xmin=1e-3, emin=1e-9, maxiter=200, tol=0.01):
    """Straight-line SIMP with column-major numbering (node = col*(nely+1)+row).

    Left edge clamped; unit downward load at the mid-height node of the right
    edge.  Returns (x, compliance).
    """
    e0, nu = 1.0, 0.3
    a11 = np.array([[12, 3, -6, -3], [3, 12, 3, 0], [-6, 3, 12, -3], [-3, 0, -3, 12]])
    a12 = np.array([[-6, -3, 0, 3], [-3, -6, -3, -6], [0, -3, -6, 3], [3, -6, 3, -6]])
    b11 = np.array([[-4, 3, -2, 9], [3, -4, -9, 4], [-2, -9, -4, -3], [9, 4, -3, -4]])
    b12 = np.array([[2, -3, 4, -9], [-3, 2, 9, -2], [4, 9, 2, 3], [-9, -2, 3, 2]])
    ke = 1 / (1 - nu ** 2) / 24 * (np.block([[a11, a12], [a12.T, a11]]) + nu * np.block([[b11, b12], [b12.T, b11]]))
    ndof = 2 * (nelx + 1) * (nely + 1)
    edof = np.zeros((nelx * nely, 8), dtype=int)
    for elx in range(nelx):
        for ely in range(nely):
            el = ely + elx * nely
            n1 = (nely + 1) * elx + ely
            n2 = (nely + 1) * (elx + 1) + ely
            edof[el] = [2 * n1 + 2, 2 * n1 + 3, 2 * n2 + 2, 2 * n2 + 3, 2 * n2, 2 * n2 + 1, 2 * n1, 2 * n1 + 1]
    ik = np.kron(edof, np.ones((8, 1), dtype=int)).ravel()
    jk = np.kron(edof, np.ones((1, 8), dtype=int)).ravel()
    # filter
    rows, cols, vals = [], [], []
    for i1 in range(nelx):
        for j1 in range(nely):
            e1 = i1 * nely + j1
            for i2 in range(max(i1 - int(np.ceil(rmin)) + 1, 0), min(i1 + int(np.ceil(rmin)), nelx)):
                for j2 in range(max(j1 - int(np.ceil(rmin)) + 1, 0), min(j1 + int(np.ceil(rmin)), nely)):
                    e2 = i2 * nely + j2
                    w = max(0.0, rmin - np.hypot(i1 - i2, j1 - j2))
                    if w > 0:
                        rows.append(e1)
                        cols.append(e2)
                        vals.append(w)
    h = sp.csr_matrix((vals, (rows, cols)), shape=(nelx * nely, nelx * nely))
    hs = np.asarray(h.sum(1)).ravel()
    # loads and supports
    load_node = (nely + 1) * nelx + nely // 2
    f = np.zeros(ndof)
    f[2 * load_node + 1] = -1.0
    fixed = np.arange(2 * (nely + 1))
    free = np.setdiff1d(np.arange(ndof), fixed)
    x = np.full(nelx * nely, volfrac)
    c = None
    for _ in range(maxiter):
        sk = (ke.ravel()[None, :] * (emin + x[:, None] ** penal * (e0 - emin))).ravel()
        k = sp.coo_matrix((sk, (ik, jk)), shape=(ndof, ndof)).tocsc()
        k = k[free][:, free]
        u = np.zeros(ndof)
        u[free] = spla.spsolve(k, f[free])
        ce = np.einsum("ij,jk,ik->i", u[edof], ke, u[edof])
        c = float(((emin + x ** penal * (e0 - emin)) * ce).sum())
        dc = -penal * x ** (penal - 1) * (e0 - emin) * ce
        dc = (h @ (x * dc)) / hs / np.maximum(1e-3, x)
        l1, l2, move = 0.0, 1e9, 0.2
        while (l2 - l1) / (l1 + l2) > 1e-9:
            lmid = 0.5 * (l2 + l1)
            xnew = np.clip(x * np.sqrt(-dc / lmid), np.maximum(xmin, x - move), np.minimum(1.0, x + move))
            if xnew.mean() > volfrac:
                l1 = lmid
            else:
                l2 = lmid
        change = np.abs(xnew - x).max()
        x = xnew
        if change < tol:
            break
    sk = (ke.ravel()[None, :] * (emin + x[:, None] ** penal * (e0 - emin))).ravel()
    k = sp.coo_matrix((sk, (ik, jk)), shape=(ndof, ndof)).tocsc()[free][:, free]
    u = np.zeros(ndof)
    u[free] = spla.spsolve(k, f[free])
    c = float(f @ u)
    # back to row-major (ny, nx) images
    return x.reshape(nelx, nely).T, c
