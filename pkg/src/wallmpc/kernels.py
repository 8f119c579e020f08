"""Numeric kernels for the hot inner loops.

Plain float64 array functions written in the numpy subset numba compiles.
Whether they actually run jitted is decided in :mod:`wallmpc.accel`
(``WALLMPC_DISABLE_NUMBA=1`` selects the pure-numpy path). No validation
happens here; the public wrappers in the owning modules do that.

Conventions used throughout: tangent block order is (position, rotation,
velocity); rotations are body-to-world matrices perturbed on the right,
R * exp(skew(delta)); plane frames map world coordinates to the wall frame
whose x axis is the outward wall normal.
"""

import numpy as np

from .accel import jit_kernel

# series switchover for small rotation angles
SMALL_ANGLE = 1e-6


@jit_kernel
def skew3(w):
    W = np.zeros((3, 3))
    W[0, 1] = -w[2]
    W[0, 2] = w[1]
    W[1, 0] = w[2]
    W[1, 2] = -w[0]
    W[2, 0] = -w[1]
    W[2, 1] = w[0]
    return W


@jit_kernel
def so3_exp(theta):
    t2 = theta[0] * theta[0] + theta[1] * theta[1] + theta[2] * theta[2]
    t = np.sqrt(t2)
    W = skew3(theta)
    if t < SMALL_ANGLE:
        a = 1.0 - t2 / 6.0
        b = 0.5 - t2 / 24.0
    else:
        a = np.sin(t) / t
        b = (1.0 - np.cos(t)) / t2
    return np.eye(3) + a * W + b * (W @ W)


@jit_kernel
def so3_log(R):
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    c = 0.5 * (tr - 1.0)
    if c > 1.0:
        c = 1.0
    if c < -1.0:
        c = -1.0
    theta = np.arccos(c)
    v = np.empty(3)
    v[0] = R[2, 1] - R[1, 2]
    v[1] = R[0, 2] - R[2, 0]
    v[2] = R[1, 0] - R[0, 1]
    if theta < SMALL_ANGLE:
        # theta/(2 sin(theta)) expanded to second order
        return (0.5 * (1.0 + theta * theta / 6.0)) * v
    if theta > np.pi - 1e-3:
        # Near pi the antisymmetric part cancels; recover the axis from the
        # well-conditioned symmetric outer product n n^T, and the angle from
        # |vee(R - R^T)| = 2 sin(theta), which arccos cannot resolve here.
        s = 0.5 * np.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
        if s > 1.0:
            s = 1.0
        theta = np.pi - np.arcsin(s)
        nnT = (0.5 * (R + R.T) - c * np.eye(3)) / (1.0 - c)
        j = 0
        if nnT[1, 1] > nnT[j, j]:
            j = 1
        if nnT[2, 2] > nnT[j, j]:
            j = 2
        n = nnT[:, j].copy()
        nj = np.sqrt(max(nnT[j, j], 0.0))
        if nj > 0.0:
            n /= nj
        nn = np.sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2])
        if nn > 0.0:
            n /= nn
        d = n[0] * v[0] + n[1] * v[1] + n[2] * v[2]
        if d < 0.0:
            n = -n
        elif d == 0.0:
            # angle exactly pi: pick the canonical sign
            k = 0
            if abs(n[1]) > abs(n[k]):
                k = 1
            if abs(n[2]) > abs(n[k]):
                k = 2
            if n[k] < 0.0:
                n = -n
        return theta * n
    return (theta / (2.0 * np.sin(theta))) * v


@jit_kernel
def so3_jr_inv(phi):
    """Inverse right Jacobian of SO(3) at rotation vector phi (|phi| < pi)."""
    t2 = phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2]
    t = np.sqrt(t2)
    W = skew3(phi)
    if t < SMALL_ANGLE:
        c = 1.0 / 12.0 + t2 / 720.0
    else:
        c = 1.0 / t2 - (1.0 + np.cos(t)) / (2.0 * t * np.sin(t))
    return np.eye(3) + 0.5 * W + c * (W @ W)


@jit_kernel
def boxplus(p, R, v, delta):
    dth = delta[3:6].copy()
    return p + delta[0:3], R @ so3_exp(dth), v + delta[6:9]


@jit_kernel
def boxminus(py, Ry, vy, px, Rx, vx):
    d = np.empty(9)
    d[0:3] = py - px
    d[3:6] = so3_log(Rx.T @ Ry)
    d[6:9] = vy - vx
    return d


@jit_kernel
def accel_world(R, v, thrust, Fs, m, Ddiag, g):
    """World-frame acceleration: gravity, thrust, drag and wall force."""
    vb = R.T @ v
    fb = Ddiag * vb
    fb[2] += thrust
    a = (R @ fb + Fs) / m
    a[2] -= g
    return a


@jit_kernel
def propagate_step(p, R, v, thrust, omega, Fs, dt, m, Ddiag, g):
    a = accel_world(R, v, thrust, Fs, m, Ddiag, g)
    p2 = p + dt * v + (0.5 * dt * dt) * a
    R2 = R @ so3_exp(omega * dt)
    v2 = v + dt * a
    return p2, R2, v2


@jit_kernel
def rotor_plane_x(p, R, Rwp, twp, offsets):
    """Signed wall-frame x coordinate (wall distance) of each rotor."""
    n = offsets.shape[0]
    xs = np.empty(n)
    for j in range(n):
        prw = R @ offsets[j] + p
        xs[j] = Rwp[0, 0] * prw[0] + Rwp[0, 1] * prw[1] + Rwp[0, 2] * prw[2] + twp[0]
    return xs


@jit_kernel
def suction_force_plane(p, R, Rwp, twp, offsets, ks, dthr):
    """World-frame wall force from one plane.

    Each rotor closer than dthr contributes ks*(|x| - dthr) along the
    outward wall normal, i.e. a pull toward the wall.
    """
    xs = rotor_plane_x(p, R, Rwp, twp, offsets)
    s = 0.0
    for j in range(xs.shape[0]):
        ax = abs(xs[j])
        if ax < dthr:
            s += ax - dthr
    # outward normal in world coordinates is the first row of Rwp
    F = np.empty(3)
    F[0] = Rwp[0, 0] * ks * s
    F[1] = Rwp[0, 1] * ks * s
    F[2] = Rwp[0, 2] * ks * s
    return F


@jit_kernel
def suction_force_total(p, R, Rwps, twps, offsets, ks, dthr):
    """Sum of plane forces over a stack of plane frames (K,3,3)/(K,3)."""
    F = np.zeros(3)
    for k in range(Rwps.shape[0]):
        F += suction_force_plane(p, R, Rwps[k], twps[k], offsets, ks, dthr)
    return F


@jit_kernel
def suction_force_and_gradients(p, R, Rwps, twps, offsets, ks, dthr):
    """Wall force plus its derivatives w.r.t. position and attitude.

    Returns (F, dF/dp, dF/dtheta) with the attitude derivative taken
    against the right perturbation R -> R exp(skew(delta)). Piecewise
    constant gradients; the active set is the same strict |x| < dthr
    used by the force itself.
    """
    F = np.zeros(3)
    dFdp = np.zeros((3, 3))
    dFdth = np.zeros((3, 3))
    for k in range(Rwps.shape[0]):
        n = Rwps[k, 0, :].copy()
        nb = R.T @ n
        s = 0.0
        gp = np.zeros(3)
        gth = np.zeros(3)
        for j in range(offsets.shape[0]):
            prw = R @ offsets[j] + p
            x = n[0] * prw[0] + n[1] * prw[1] + n[2] * prw[2] + twps[k, 0]
            ax = abs(x)
            if ax < dthr:
                s += ax - dthr
                sg = 1.0 if x >= 0.0 else -1.0
                gp += sg * n
                # d x_j / d delta = (offset x R^T n)^T under R -> R exp(skew(delta))
                gth += sg * (skew3(offsets[j]) @ nb)
        F += (ks * s) * n
        for a in range(3):
            for b in range(3):
                dFdp[a, b] += ks * n[a] * gp[b]
                dFdth[a, b] += ks * n[a] * gth[b]
    return F, dFdp, dFdth


@jit_kernel
def dyn_residual(p0, R0, v0, p1, R1, v1, thrust, omega, Fs, dt, m, Ddiag, g):
    """Body-frame dynamics residual between a state pair and an input.

    Zero exactly when (p1, R1, v1) is the discrete propagation of
    (p0, R0, v0) under (thrust, omega) with wall force Fs held at step k.
    """
    Rt = R0.T
    hdt2 = 0.5 * dt * dt
    pp = p1 - p0 - dt * v0 - (hdt2 / m) * Fs
    pp[2] += g * hdt2
    pv = v1 - v0 - (dt / m) * Fs
    pv[2] += g * dt
    vb = Rt @ v0
    drag = Ddiag * vb

    r = np.empty(9)
    ep = Rt @ pp - (hdt2 / m) * drag
    ep[2] -= (hdt2 / m) * thrust
    r[0:3] = ep
    r[3:6] = so3_log(Rt @ R1) - dt * omega
    ev = Rt @ pv - (dt / m) * drag
    ev[2] -= (dt / m) * thrust
    r[6:9] = ev
    return r


@jit_kernel
def dyn_residual_jacobians(p0, R0, v0, p1, R1, v1, thrust, omega, Fs, dt, m, Ddiag, g):
    """Residual plus exact Jacobians w.r.t. the tangent perturbations.

    Returns (r, J_x0, J_x1, J_u). Fs is treated as a constant of the
    linearization point (its dependence on x0 is not differentiated).
    """
    Rt = R0.T
    hdt2 = 0.5 * dt * dt
    pp = p1 - p0 - dt * v0 - (hdt2 / m) * Fs
    pp[2] += g * hdt2
    pv = v1 - v0 - (dt / m) * Fs
    pv[2] += g * dt
    vb = Rt @ v0
    drag = Ddiag * vb
    Rt_pp = Rt @ pp
    Rt_pv = Rt @ pv
    M = Rt @ R1
    phi = so3_log(M)

    r = np.empty(9)
    r[0:3] = Rt_pp - (hdt2 / m) * drag
    r[2] -= (hdt2 / m) * thrust
    r[3:6] = phi - dt * omega
    r[6:9] = Rt_pv - (dt / m) * drag
    r[8] -= (dt / m) * thrust

    D = np.zeros((3, 3))
    D[0, 0] = Ddiag[0]
    D[1, 1] = Ddiag[1]
    D[2, 2] = Ddiag[2]
    DRt = D @ Rt
    Svb = skew3(vb)
    Jrinv = so3_jr_inv(phi)

    J0 = np.zeros((9, 9))
    J0[0:3, 0:3] = -Rt
    J0[0:3, 3:6] = skew3(Rt_pp) - (hdt2 / m) * (D @ Svb)
    J0[0:3, 6:9] = -dt * Rt - (hdt2 / m) * DRt
    J0[3:6, 3:6] = -Jrinv @ M.T
    J0[6:9, 3:6] = skew3(Rt_pv) - (dt / m) * (D @ Svb)
    J0[6:9, 6:9] = -Rt - (dt / m) * DRt

    J1 = np.zeros((9, 9))
    J1[0:3, 0:3] = Rt
    J1[3:6, 3:6] = Jrinv
    J1[6:9, 6:9] = Rt

    Ju = np.zeros((9, 4))
    Ju[2, 0] = -hdt2 / m
    Ju[3, 1] = -dt
    Ju[4, 2] = -dt
    Ju[5, 3] = -dt
    Ju[8, 0] = -dt / m
    return r, J0, J1, Ju


@jit_kernel
def dyn_residual_jacobians_wall(p0, R0, v0, p1, R1, v1, thrust, omega,
                                dt, m, Ddiag, g, Rwps, twps, offsets, ks, dthr):
    """Dynamics factor linearization with the wall force evaluated at x_k.

    Unlike dyn_residual_jacobians (which holds the force constant), this
    folds the force's position/attitude gradients into J_x0 so the
    Gauss-Newton model stays accurate next to the wall, where the force
    changes steeply with the state.
    """
    Fs, dFdp, dFdth = suction_force_and_gradients(p0, R0, Rwps, twps, offsets, ks, dthr)
    r, J0, J1, Ju = dyn_residual_jacobians(
        p0, R0, v0, p1, R1, v1, thrust, omega, Fs, dt, m, Ddiag, g)
    Rt = R0.T
    cp = -(0.5 * dt * dt / m)
    cv = -(dt / m)
    Gp = Rt @ dFdp
    Gth = Rt @ dFdth
    J0[0:3, 0:3] += cp * Gp
    J0[0:3, 3:6] += cp * Gth
    J0[6:9, 0:3] += cv * Gp
    J0[6:9, 3:6] += cv * Gth
    return r, J0, J1, Ju


@jit_kernel
def reference_residual(p, R, v, pr, Rr, vr):
    r = np.empty(9)
    r[0:3] = p - pr
    r[3:6] = so3_log(R.T @ Rr)
    r[6:9] = v - vr
    return r


@jit_kernel
def reference_residual_jacobian(p, R, v, pr, Rr, vr):
    M = R.T @ Rr
    phi = so3_log(M)
    r = np.empty(9)
    r[0:3] = p - pr
    r[3:6] = phi
    r[6:9] = v - vr
    J = np.zeros((9, 9))
    J[0, 0] = 1.0
    J[1, 1] = 1.0
    J[2, 2] = 1.0
    J[3:6, 3:6] = -so3_jr_inv(phi) @ M.T
    J[6, 6] = 1.0
    J[7, 7] = 1.0
    J[8, 8] = 1.0
    return r, J


@jit_kernel
def limit_residual(u, umin, umax):
    r = np.empty(u.shape[0])
    for i in range(u.shape[0]):
        hi = u[i] - umax[i]
        lo = umin[i] - u[i]
        r[i] = (hi if hi > 0.0 else 0.0) + (lo if lo > 0.0 else 0.0)
    return r


@jit_kernel
def limit_residual_jacobian(u, umin, umax):
    n = u.shape[0]
    r = np.empty(n)
    J = np.zeros((n, n))
    for i in range(n):
        hi = u[i] - umax[i]
        lo = umin[i] - u[i]
        r[i] = (hi if hi > 0.0 else 0.0) + (lo if lo > 0.0 else 0.0)
        if hi > 0.0:
            J[i, i] = 1.0
        elif lo > 0.0:
            J[i, i] = -1.0
        # zero on the boundary and inside the box
    return r, J


@jit_kernel
def plant_tick(p, R, v, thrust, omega, n_sub, dt, m, Ddiag, g,
               Rwps, twps, offsets, ks, dthr, dmin):
    """Advance the plant n_sub substeps under a held input.

    The wall force is re-evaluated every substep. If any rotor reaches a
    wall-frame distance <= dmin the body is pushed back along the outward
    normal until the nearest rotor sits at dmin, the inward velocity
    component is dropped, and the tick is flagged as a collision. Returns
    (p, R, v, collided, max_penetration).
    """
    collided = False
    max_pen = 0.0
    n_planes = Rwps.shape[0]
    for _ in range(n_sub):
        Fs = suction_force_total(p, R, Rwps, twps, offsets, ks, dthr)
        p, R, v = propagate_step(p, R, v, thrust, omega, Fs, dt, m, Ddiag, g)
        for k in range(n_planes):
            xs = rotor_plane_x(p, R, Rwps[k], twps[k], offsets)
            mn = xs[0]
            for j in range(1, xs.shape[0]):
                if xs[j] < mn:
                    mn = xs[j]
            if mn <= dmin:
                pen = dmin - mn
                if pen > max_pen:
                    max_pen = pen
                collided = True
                nw = Rwps[k, 0, :].copy()
                p = p + pen * nw
                vn = v[0] * nw[0] + v[1] * nw[1] + v[2] * nw[2]
                if vn < 0.0:
                    v = v - vn * nw
    return p, R, v, collided, max_pen


@jit_kernel
def mpc_fused_cost(ps, Rs, vs, us, ref_p, ref_R, ref_v,
                   sqrtWd, sqrtQ, sqrtQN, sqrtG, sqrtQl, umin, umax,
                   dt, m, Ddiag, g, Rwps, twps, offsets, ks, dthr, suction_on):
    """Total weighted cost of the horizon graph (residual-only pass).

    Same factor set as mpc_fused_linearize; kept separate so the step
    accept/reject test stays cheap.
    """
    N = us.shape[0]
    cost = 0.0
    for k in range(N):
        if suction_on:
            Fs = suction_force_total(ps[k], Rs[k], Rwps, twps, offsets, ks, dthr)
        else:
            Fs = np.zeros(3)
        r = dyn_residual(ps[k], Rs[k], vs[k], ps[k + 1], Rs[k + 1], vs[k + 1],
                         us[k, 0], us[k, 1:4], Fs, dt, m, Ddiag, g)
        rw = sqrtWd @ r
        cost += 0.5 * (rw @ rw)

        boxed = True
        for i in range(4):
            if us[k, i] > umax[i] or us[k, i] < umin[i]:
                boxed = False
        if not boxed:
            rl = limit_residual(us[k], umin, umax)
            rlw = sqrtQl @ rl
            cost += 0.5 * (rlw @ rlw)

        if k >= 1:
            rr = reference_residual(ps[k], Rs[k], vs[k], ref_p[k], ref_R[k], ref_v[k])
            rrw = sqrtQ @ rr
            cost += 0.5 * (rrw @ rrw)
        if k <= N - 2:
            ru = us[k] - us[k + 1]
            ruw = sqrtG @ ru
            cost += 0.5 * (ruw @ ruw)
    rr = reference_residual(ps[N], Rs[N], vs[N], ref_p[N], ref_R[N], ref_v[N])
    rrw = sqrtQN @ rr
    cost += 0.5 * (rrw @ rrw)
    return cost


@jit_kernel
def mpc_fused_linearize(ps, Rs, vs, us, ref_p, ref_R, ref_v,
                        sqrtWd, sqrtQ, sqrtQN, sqrtG, sqrtQl, umin, umax,
                        dt, m, Ddiag, g, Rwps, twps, offsets, ks, dthr, suction_on):
    """Normal equations (H, grad, cost) of the horizon graph in one pass.

    Variable layout in the solve space: u_k at 13k, x_k (k >= 1) at
    13k - 9; x_0 is fixed and skipped. Produces the same numbers as the
    generic per-factor path, just assembled in compiled loops.
    """
    N = us.shape[0]
    dim = 13 * N
    H = np.zeros((dim, dim))
    grad = np.zeros(dim)
    cost = 0.0
    # loop invariants: the input Jacobian is constant across the horizon
    GtG = sqrtG.T @ sqrtG
    Ju = np.zeros((9, 4))
    hdt2m = 0.5 * dt * dt / m
    Ju[2, 0] = -hdt2m
    Ju[3, 1] = -dt
    Ju[4, 2] = -dt
    Ju[5, 3] = -dt
    Ju[8, 0] = -dt / m
    Juw = sqrtWd @ Ju
    JuwT_Juw = Juw.T @ Juw
    for k in range(N):
        ou = 13 * k
        ox0 = 13 * k - 9
        ox1 = 13 * k + 4

        if suction_on:
            r, J0, J1, _ = dyn_residual_jacobians_wall(
                ps[k], Rs[k], vs[k], ps[k + 1], Rs[k + 1], vs[k + 1],
                us[k, 0], us[k, 1:4], dt, m, Ddiag, g,
                Rwps, twps, offsets, ks, dthr)
        else:
            r, J0, J1, _ = dyn_residual_jacobians(
                ps[k], Rs[k], vs[k], ps[k + 1], Rs[k + 1], vs[k + 1],
                us[k, 0], us[k, 1:4], np.zeros(3), dt, m, Ddiag, g)
        rw = sqrtWd @ r
        J1w = sqrtWd @ J1
        cost += 0.5 * (rw @ rw)
        grad[ou:ou + 4] += Juw.T @ rw
        grad[ox1:ox1 + 9] += J1w.T @ rw
        H[ou:ou + 4, ou:ou + 4] += JuwT_Juw
        H[ox1:ox1 + 9, ox1:ox1 + 9] += J1w.T @ J1w
        bu1 = Juw.T @ J1w
        H[ou:ou + 4, ox1:ox1 + 9] += bu1
        H[ox1:ox1 + 9, ou:ou + 4] += bu1.T
        if k >= 1:
            J0w = sqrtWd @ J0
            grad[ox0:ox0 + 9] += J0w.T @ rw
            H[ox0:ox0 + 9, ox0:ox0 + 9] += J0w.T @ J0w
            b0u = J0w.T @ Juw
            H[ox0:ox0 + 9, ou:ou + 4] += b0u
            H[ou:ou + 4, ox0:ox0 + 9] += b0u.T
            b01 = J0w.T @ J1w
            H[ox0:ox0 + 9, ox1:ox1 + 9] += b01
            H[ox1:ox1 + 9, ox0:ox0 + 9] += b01.T

        boxed = True
        for i in range(4):
            if us[k, i] > umax[i] or us[k, i] < umin[i]:
                boxed = False
        if not boxed:
            rl, Jl = limit_residual_jacobian(us[k], umin, umax)
            rlw = sqrtQl @ rl
            Jlw = sqrtQl @ Jl
            cost += 0.5 * (rlw @ rlw)
            grad[ou:ou + 4] += Jlw.T @ rlw
            H[ou:ou + 4, ou:ou + 4] += Jlw.T @ Jlw

        if k >= 1:
            rr, Jr = reference_residual_jacobian(
                ps[k], Rs[k], vs[k], ref_p[k], ref_R[k], ref_v[k])
            rrw = sqrtQ @ rr
            Jrw = sqrtQ @ Jr
            cost += 0.5 * (rrw @ rrw)
            grad[ox0:ox0 + 9] += Jrw.T @ rrw
            H[ox0:ox0 + 9, ox0:ox0 + 9] += Jrw.T @ Jrw

        if k <= N - 2:
            ou1 = 13 * (k + 1)
            ru = us[k] - us[k + 1]
            ruw = sqrtG @ ru
            cost += 0.5 * (ruw @ ruw)
            grad[ou:ou + 4] += GtG @ ru
            grad[ou1:ou1 + 4] -= GtG @ ru
            H[ou:ou + 4, ou:ou + 4] += GtG
            H[ou1:ou1 + 4, ou1:ou1 + 4] += GtG
            H[ou:ou + 4, ou1:ou1 + 4] -= GtG
            H[ou1:ou1 + 4, ou:ou + 4] -= GtG

    oxN = 13 * N - 9
    rr, Jr = reference_residual_jacobian(ps[N], Rs[N], vs[N], ref_p[N], ref_R[N], ref_v[N])
    rrw = sqrtQN @ rr
    Jrw = sqrtQN @ Jr
    cost += 0.5 * (rrw @ rrw)
    grad[oxN:oxN + 9] += Jrw.T @ rrw
    H[oxN:oxN + 9, oxN:oxN + 9] += Jrw.T @ Jrw
    return H, grad, cost


@jit_kernel
def id_residual_jacobian(ps, vs, Rs, accs, thrusts, ks, dthr,
                         Rwps, twps, offsets, m, Ddiag, g):
    """Batched force residual and its derivatives in (ks, dthr).

    Residual per sample: m*a + m*g*e3 - R*(e3*T + drag) - F_wall(ks, dthr).
    Returns (r (M,3), d_ks (M,3), d_dthr (M,3), active (M,) rotor counts).
    """
    nsamp = ps.shape[0]
    r = np.empty((nsamp, 3))
    jk = np.zeros((nsamp, 3))
    jd = np.zeros((nsamp, 3))
    active = np.zeros(nsamp, dtype=np.int64)
    for i in range(nsamp):
        R = Rs[i]
        vb = R.T @ vs[i]
        fb = Ddiag * vb
        fb[2] += thrusts[i]
        base = m * accs[i] - R @ fb
        base[2] += m * g
        for k in range(Rwps.shape[0]):
            xs = rotor_plane_x(ps[i], R, Rwps[k], twps[k], offsets)
            s = 0.0
            n_act = 0
            for j in range(xs.shape[0]):
                ax = abs(xs[j])
                if ax < dthr:
                    s += ax - dthr
                    n_act += 1
            if n_act > 0:
                nw = Rwps[k, 0, :]
                base = base - (ks * s) * nw
                # d r / d ks = -dF/dks, d r / d dthr = -dF/ddthr
                jk[i] = jk[i] - s * nw
                jd[i] = jd[i] + (ks * n_act) * nw
                active[i] += n_act
        r[i] = base
    return r, jk, jd, active
