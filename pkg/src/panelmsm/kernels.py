"""Closed-form transition probability matrices for the 2-, 3- and 4-state
sub-processes, plus an independent matrix-exponential oracle.

The closed forms are rational expressions in the transition intensities and
are exact but numerically unstable near coincident eigenvalues; elements
whose denominators fall below a relative tolerance are routed to the
scaling-and-squaring oracle instead.  All public functions broadcast over
leading dimensions of their rate/time arguments and return row-stochastic
matrices with entries clamped to [0, 1].
"""

import warnings

import numpy as np
from numba import njit, prange

# Relative tolerance below which a closed-form denominator is considered
# degenerate and the element is recomputed via the matrix exponential.
DEGENERACY_RTOL = 1e-6

# Largest row-sum residual that is silently renormalized away; anything
# bigger (after the fallback) is an internal-consistency failure.
ROWSUM_TOL = 1e-10

_STATUS_CLOSED = 0
_STATUS_FALLBACK = 1
_STATUS_BAD = 2


class KernelConsistencyError(ArithmeticError):
    """A transition kernel failed row-stochasticity beyond tolerance."""


# --------------------------------------------------------------------------
# Scaling-and-squaring matrix exponential (truncated Taylor core)
# --------------------------------------------------------------------------


@njit(cache=True)
def _renormalize_rows(p):
    """Project onto nonnegative rows summing to one.

    exp of a conservative generator is exactly row-stochastic; projecting
    after the series and after every squaring keeps rounding errors from
    compounding geometrically (a row-sum deviation doubles per squaring).
    """
    n = p.shape[0]
    for i in range(n):
        s = 0.0
        for j in range(n):
            if p[i, j] < 0.0:
                p[i, j] = 0.0
            s += p[i, j]
        if s > 0.0:
            for j in range(n):
                p[i, j] /= s


@njit(cache=True)
def _expm_taylor(a):
    """exp(a) for a small conservative intensity matrix, by scaling and
    squaring with per-step stochastic projection."""
    n = a.shape[0]
    norm = 0.0
    for i in range(n):
        s = 0.0
        for j in range(n):
            s += abs(a[i, j])
        if s > norm:
            norm = s
    nsq = 0
    scaled = a.copy()
    while norm > 0.5 and nsq < 64:
        norm *= 0.5
        nsq += 1
    scale = 0.5 ** nsq
    for i in range(n):
        for j in range(n):
            scaled[i, j] = a[i, j] * scale

    result = np.eye(n)
    term = np.eye(n)
    for k in range(1, 40):
        new_term = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for m in range(n):
                    acc += term[i, m] * scaled[m, j]
                new_term[i, j] = acc / k
        term = new_term
        tnorm = 0.0
        for i in range(n):
            for j in range(n):
                result[i, j] += term[i, j]
                if abs(term[i, j]) > tnorm:
                    tnorm = abs(term[i, j])
        if tnorm < 1e-18:
            break

    _renormalize_rows(result)
    for _ in range(nsq):
        sq = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for m in range(n):
                    acc += result[i, m] * result[m, j]
                sq[i, j] = acc
        result = sq
        _renormalize_rows(result)
    return result


@njit(cache=True)
def _q_four(l12, l13, l21, l24, l34, l43):
    q = np.zeros((4, 4))
    q[0, 1] = l12
    q[0, 2] = l13
    q[0, 0] = -l12 - l13
    q[1, 0] = l21
    q[1, 3] = l24
    q[1, 1] = -l21 - l24
    q[2, 3] = l34
    q[2, 2] = -l34
    q[3, 2] = l43
    q[3, 3] = -l43
    return q


@njit(cache=True)
def _q_three(l12, l13, l21, l23):
    q = np.zeros((3, 3))
    q[0, 1] = l12
    q[0, 2] = l13
    q[0, 0] = -l12 - l13
    q[1, 0] = l21
    q[1, 2] = l23
    q[1, 1] = -l21 - l23
    return q


# --------------------------------------------------------------------------
# Scalar closed forms
# --------------------------------------------------------------------------


@njit(cache=True)
def _four_state_row(l12, l13, l21, l24, l34, l43, t, out):
    """Closed-form first row (p11, p12, p13, p14) of the 4-state kernel.

    Returns False when a denominator is degenerate and the caller should
    fall back to the matrix exponential.
    """
    lam = l12 + l13 + l21 + l24
    lam1 = l12 + l13 - l21 - l24
    lam2 = l34 + l43
    scale = lam + lam2
    if scale <= 0.0:
        # all six rates are zero: identity row
        out[0] = 1.0
        out[1] = 0.0
        out[2] = 0.0
        out[3] = 0.0
        return True
    rad = lam * lam - 4.0 * (l12 * l24 + l13 * (l21 + l24))
    if rad < 0.0:
        return False
    gam = np.sqrt(rad)
    if gam <= DEGENERACY_RTOL * lam:
        return False
    em = np.exp(-(lam - gam) * t / 2.0)
    ep = np.exp(-(lam + gam) * t / 2.0)
    p11 = ((lam1 + gam) * ep + (gam - lam1) * em) / (2.0 * gam)

    if l12 == 0.0:
        p12 = 0.0
    else:
        rad1 = l12 * l12 + 2.0 * l12 * (l13 + l21 - l24) + (-l13 + l21 + l24) ** 2
        if rad1 < 0.0:
            return False
        gam1 = np.sqrt(rad1)
        if gam1 <= DEGENERACY_RTOL * lam:
            return False
        p12 = l12 / gam1 * (np.exp(-(lam - gam1) * t / 2.0) - np.exp(-(lam + gam1) * t / 2.0))

    if lam2 <= DEGENERACY_RTOL * scale:
        if l13 == 0.0 and l24 == 0.0 and lam2 == 0.0:
            p13 = 0.0
        else:
            return False
    else:
        num0 = l13 * l34 * (l21 + l24 - lam2) - l12 * l24 * l43
        # residue of the activity-block resolvent at the damage-block
        # eigenvalue; degenerate when the two blocks share an eigenvalue
        den0 = (l12 + l13 - lam2) * (l21 + l24 - lam2) - l12 * l21
        den0_scale = (
            abs((l12 + l13 - lam2) * (l21 + l24 - lam2)) + abs(l12 * l21)
        )
        if abs(den0) <= DEGENERACY_RTOL * max(den0_scale, lam2 * lam2):
            return False
        gam3 = lam2 * (l21 + l24) + l13 * l21 + (l12 + l13) * (l24 + lam2)
        gam4 = lam2 * (l13 * l21 + l24 * (l12 + l13))
        cross = l43 * (l12 * l24 + l13 * l34)
        brm = l13 * (
            l12 * l21 + (l12 + l13) * (lam1 - gam) / 2.0 + l43 * (-lam1 + gam - 2.0 * l34) / 2.0
        ) + cross
        brp = l13 * (
            l12 * l21 + (l12 + l13) * (lam1 + gam) / 2.0 + l43 * (-lam1 - gam - 2.0 * l34) / 2.0
        ) + cross
        wm = lam - gam
        wp = lam + gam
        denm = -wm ** 3 / 2.0 + 3.0 * wm ** 2 * (lam + lam2) / 4.0 - wm * gam3 + gam4
        denp = -wp ** 3 / 2.0 + 3.0 * wp ** 2 * (lam + lam2) / 4.0 - wp * gam3 + gam4
        den_scale = wp ** 3 / 2.0 + 3.0 * wp ** 2 * (lam + lam2) / 4.0 + wp * gam3 + abs(gam4)
        if abs(denm) <= DEGENERACY_RTOL * den_scale or abs(denp) <= DEGENERACY_RTOL * den_scale:
            return False
        c2 = num0 / (lam2 * den0)
        cm = brm / denm
        cp = brp / denp
        # p13 lives in [0, 1]; the rounding error of each partial-fraction
        # term is roughly eps * |coefficient| * (denominator cancellation
        # ratio), so estimate it and use the oracle when it is material
        err_est = 2.3e-16 * (
            abs(c2) * (1.0 + den0_scale / abs(den0))
            + abs(cm) * (1.0 + den_scale / abs(denm))
            + abs(cp) * (1.0 + den_scale / abs(denp))
        )
        if err_est > 1e-11:
            return False
        p13 = l43 / lam2 + np.exp(-lam2 * t) * c2 + em * cm + ep * cp

    out[0] = p11
    out[1] = p12
    out[2] = p13
    out[3] = 1.0 - p11 - p12 - p13
    return True


@njit(cache=True)
def _finalize_rows(p):
    """Clamp to [0, 1] and renormalize rows; True when residuals were small."""
    n = p.shape[0]
    ok = True
    for i in range(n):
        s = 0.0
        for j in range(n):
            if p[i, j] < 0.0:
                if p[i, j] < -1e-8:
                    ok = False
                p[i, j] = 0.0
            elif p[i, j] > 1.0:
                if p[i, j] > 1.0 + 1e-8:
                    ok = False
                p[i, j] = 1.0
            s += p[i, j]
        if abs(s - 1.0) > ROWSUM_TOL:
            ok = False
        if s > 0.0:
            for j in range(n):
                p[i, j] /= s
    return ok


@njit(cache=True)
def _four_state_single(l12, l13, l21, l24, l34, l43, t, p):
    """Fill a 4x4 kernel; returns a _STATUS_* code."""
    status = _STATUS_CLOSED
    row = np.empty(4)
    ok = _four_state_row(l12, l13, l21, l24, l34, l43, t, row)
    if ok:
        for j in range(4):
            p[0, j] = row[j]
        # symmetry of the structure: row 2 is row 1 with the activity and
        # damage rate pairs swapped
        ok = _four_state_row(l21, l24, l12, l13, l43, l34, t, row)
    if ok:
        p[1, 0] = row[1]
        p[1, 1] = row[0]
        p[1, 3] = row[2]
        p[1, 2] = row[3]
        lam2 = l34 + l43
        if lam2 == 0.0:
            p34 = 0.0
            p43 = 0.0
        else:
            decay = (1.0 - np.exp(-lam2 * t)) / lam2
            p34 = l34 * decay
            p43 = l43 * decay
        p[2, 0] = 0.0
        p[2, 1] = 0.0
        p[2, 2] = 1.0 - p34
        p[2, 3] = p34
        p[3, 0] = 0.0
        p[3, 1] = 0.0
        p[3, 2] = p43
        p[3, 3] = 1.0 - p43
        if not _finalize_rows(p):
            ok = False
    if not ok:
        status = _STATUS_FALLBACK
        q = _q_four(l12, l13, l21, l24, l34, l43)
        e = _expm_taylor(q * t)
        for i in range(4):
            for j in range(4):
                p[i, j] = e[i, j]
        if not _finalize_rows(p):
            status = _STATUS_BAD
    return status


@njit(cache=True)
def _three_state_single(l12, l13, l21, l23, t, p):
    status = _STATUS_CLOSED
    lam11 = -l12 - l13
    lam22 = -l21 - l23
    scale = -lam11 - lam22
    disc = (lam11 - lam22) ** 2 + 4.0 * l12 * l21
    ok = True
    if disc < 0.0 or l21 <= DEGENERACY_RTOL * max(scale, 1e-300):
        ok = False
    else:
        root = np.sqrt(disc)
        if root <= DEGENERACY_RTOL * max(scale, 1e-300):
            ok = False
        else:
            r1 = (lam11 + lam22 + root) / 2.0
            r2 = (lam11 + lam22 - root) / 2.0
            x1 = (r1 - lam22) / l21
            x2 = (r2 - lam22) / l21
            dx = x1 - x2
            e1 = np.exp(r1 * t)
            e2 = np.exp(r2 * t)
            p11 = (x1 * e1 - x2 * e2) / dx
            p12 = x1 * x2 * (e2 - e1) / dx
            p21 = (e1 - e2) / dx
            p22 = (x1 * e2 - x2 * e1) / dx
            p[0, 0] = p11
            p[0, 1] = p12
            p[0, 2] = 1.0 - p11 - p12
            p[1, 0] = p21
            p[1, 1] = p22
            p[1, 2] = 1.0 - p21 - p22
            p[2, 0] = 0.0
            p[2, 1] = 0.0
            p[2, 2] = 1.0
            if not _finalize_rows(p):
                ok = False
    if not ok:
        status = _STATUS_FALLBACK
        q = _q_three(l12, l13, l21, l23)
        e = _expm_taylor(q * t)
        for i in range(3):
            for j in range(3):
                p[i, j] = e[i, j]
        if not _finalize_rows(p):
            status = _STATUS_BAD
    return status


@njit(cache=True)
def _two_state_single(lab, lba, t, p):
    tot = lab + lba
    if tot == 0.0:
        p[0, 0] = 1.0
        p[0, 1] = 0.0
        p[1, 0] = 0.0
        p[1, 1] = 1.0
        return _STATUS_CLOSED
    decay = (1.0 - np.exp(-tot * t)) / tot
    pab = lab * decay
    pba = lba * decay
    p[0, 0] = 1.0 - pab
    p[0, 1] = pab
    p[1, 0] = pba
    p[1, 1] = 1.0 - pba
    if not _finalize_rows(p):
        return _STATUS_BAD
    return _STATUS_CLOSED


# --------------------------------------------------------------------------
# Batch drivers
# --------------------------------------------------------------------------


@njit(cache=True, parallel=True)
def _four_state_batch(l12, l13, l21, l24, l34, l43, t, out, status):
    for k in prange(l12.shape[0]):
        status[k] = _four_state_single(
            l12[k], l13[k], l21[k], l24[k], l34[k], l43[k], t[k], out[k]
        )


@njit(cache=True, parallel=True)
def _three_state_batch(l12, l13, l21, l23, t, out, status):
    for k in prange(l12.shape[0]):
        status[k] = _three_state_single(l12[k], l13[k], l21[k], l23[k], t[k], out[k])


@njit(cache=True, parallel=True)
def _two_state_batch(lab, lba, t, out, status):
    for k in prange(lab.shape[0]):
        status[k] = _two_state_single(lab[k], lba[k], t[k], out[k])


def _broadcast_flat(*args):
    arrays = np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in args])
    shape = arrays[0].shape
    flat = [np.ascontiguousarray(a).reshape(-1) for a in arrays]
    return shape, flat


def _check_domain(rates, t):
    for r in rates:
        if np.any(np.asarray(r) < 0):
            raise ValueError("transition intensities must be nonnegative")
    if np.any(np.asarray(t) < 0):
        raise ValueError("elapsed time must be nonnegative")


def _run_batch(batch_fn, size, shape, flat):
    n = flat[0].shape[0]
    out = np.empty((n, size, size))
    status = np.empty(n, dtype=np.int64)
    batch_fn(*flat, out, status)
    if np.any(status == _STATUS_BAD):
        bad = int(np.sum(status == _STATUS_BAD))
        raise KernelConsistencyError(
            f"{bad} kernel(s) failed row-stochasticity beyond tolerance"
        )
    n_fallback = int(np.sum(status == _STATUS_FALLBACK))
    if n_fallback:
        warnings.warn(
            f"{n_fallback} degenerate kernel element(s) routed to the matrix "
            "exponential fallback",
            RuntimeWarning,
            stacklevel=3,
        )
    return out.reshape(shape + (size, size))


def two_state_tpm(lam_ab, lam_ba, t) -> np.ndarray:
    """2x2 transition probability matrix of the reversible two-state chain.

    With both rates zero the chain never moves and the identity is
    returned.  Broadcasts over leading dimensions.
    """
    _check_domain((lam_ab, lam_ba), t)
    shape, flat = _broadcast_flat(lam_ab, lam_ba, t)
    return _run_batch(_two_state_batch, 2, shape, flat)


def three_state_tpm(lam12, lam13, lam21, lam23, t) -> np.ndarray:
    """3x3 kernel of the progressive illness-death structure (state 3 absorbing)."""
    _check_domain((lam12, lam13, lam21, lam23), t)
    shape, flat = _broadcast_flat(lam12, lam13, lam21, lam23, t)
    return _run_batch(_three_state_batch, 3, shape, flat)


def four_state_tpm(lam12, lam13, lam21, lam24, lam34, lam43, t) -> np.ndarray:
    """4x4 kernel of the joint activity/damage structure.

    States 1-2 are the undamaged activity states, 3-4 the damaged ones;
    rows 3 and 4 put no mass on columns 1 and 2 (damage is absorbing).
    """
    _check_domain((lam12, lam13, lam21, lam24, lam34, lam43), t)
    shape, flat = _broadcast_flat(lam12, lam13, lam21, lam24, lam34, lam43, t)
    return _run_batch(_four_state_batch, 4, shape, flat)


def expm_oracle(q: np.ndarray, t: float) -> np.ndarray:
    """exp(q*t) for a conservative intensity matrix, by scaling and squaring.

    Used as an independent cross-check of the closed-form kernels.
    """
    q = np.asarray(q, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise ValueError("q must be a square matrix")
    if t < 0:
        raise ValueError("elapsed time must be nonnegative")
    off = q - np.diag(np.diag(q))
    if np.any(off < -1e-12):
        raise ValueError("off-diagonal intensities must be nonnegative")
    scale = max(np.max(np.abs(q)), 1.0)
    if np.any(np.abs(q.sum(axis=1)) > 1e-10 * scale):
        raise ValueError("intensity matrix rows must sum to zero")
    p = _expm_taylor(np.ascontiguousarray(q) * t)
    p = np.clip(p, 0.0, 1.0)
    rowsums = p.sum(axis=1)
    if np.any(np.abs(rowsums - 1.0) > 1e-12):
        raise KernelConsistencyError("matrix exponential lost row-stochasticity")
    return p / rowsums[:, None]


def q_two_state(lam_ab, lam_ba) -> np.ndarray:
    return np.array([[-lam_ab, lam_ab], [lam_ba, -lam_ba]], dtype=float)


def q_three_state(lam12, lam13, lam21, lam23) -> np.ndarray:
    return np.array(
        [
            [-lam12 - lam13, lam12, lam13],
            [lam21, -lam21 - lam23, lam23],
            [0.0, 0.0, 0.0],
        ]
    )


def q_four_state(lam12, lam13, lam21, lam24, lam34, lam43) -> np.ndarray:
    return np.array(
        [
            [-lam12 - lam13, lam12, lam13, 0.0],
            [lam21, -lam21 - lam24, 0.0, lam24],
            [0.0, 0.0, -lam34, lam34],
            [0.0, 0.0, lam43, -lam43],
        ]
    )
