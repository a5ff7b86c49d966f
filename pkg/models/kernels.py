"""
Sample-rate loops compiled with numba.
The Python step functions in estimator_ukf / estimator_ref define the reference
behaviour; these kernels reproduce them one sample at a time without Python overhead.
Failures are reported by returning the offending sample index (-1 means success).
"""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def _cholesky3(m, out):
    """Lower Cholesky factor of a 3x3 matrix; False if not positive definite"""
    for i in range(3):
        for j in range(i + 1):
            s = m[i, j]
            for p in range(j):
                s -= out[i, p] * out[j, p]
            if i == j:
                if not s > 0.0:
                    return False
                out[i, i] = math.sqrt(s)
            else:
                out[i, j] = s / out[j, j]
        for j in range(i + 1, 3):
            out[i, j] = 0.0
    return True


@njit(cache=True)
def joint_ukf_kernel(y1, y2, start, omega, sqrt_p, r_meas, q_ab, q_phi,
                     lam, wm, wc, jitter, mean, cov, decimation, out_mean, out_var):
    """
    Joint [a, b, phi] tracking over a real dual-pol pilot record.
    mean (3,) and cov (3, 3) are updated in place. Every decimation-th posterior
    is written to out_mean / out_var.

    Returns:
        index of the failing sample, or -1
    """
    n = y1.shape[0]
    dim = 3
    spread = math.sqrt(dim + lam)
    chol = np.zeros((3, 3))
    shifted = np.empty((3, 3))
    sig = np.empty((7, 3))
    z = np.empty((7, 2))
    pxz = np.empty((3, 2))
    gain = np.empty((3, 2))
    row = 0

    for i in range(n):
        cov[0, 0] += q_ab
        cov[1, 1] += q_ab
        cov[2, 2] += q_phi

        for r in range(3):
            for c in range(3):
                shifted[r, c] = cov[r, c]
            shifted[r, r] += jitter
        if not _cholesky3(shifted, chol):
            return i

        for d in range(3):
            sig[0, d] = mean[d]
        for col in range(3):
            for d in range(3):
                sig[col + 1, d] = mean[d] + spread * chol[d, col]
                sig[col + 4, d] = mean[d] - spread * chol[d, col]

        base = omega * (start + i)
        zm0 = 0.0
        zm1 = 0.0
        for s in range(7):
            carrier = sqrt_p * math.cos(base + sig[s, 2])
            z[s, 0] = sig[s, 0] * carrier
            z[s, 1] = -sig[s, 1] * carrier
            zm0 += wm[s] * z[s, 0]
            zm1 += wm[s] * z[s, 1]

        s00 = r_meas
        s01 = 0.0
        s11 = r_meas
        pxz[:, :] = 0.0
        for s in range(7):
            d0 = z[s, 0] - zm0
            d1 = z[s, 1] - zm1
            s00 += wc[s] * d0 * d0
            s01 += wc[s] * d0 * d1
            s11 += wc[s] * d1 * d1
            for d in range(3):
                dx = sig[s, d] - sig[0, d]
                pxz[d, 0] += wc[s] * dx * d0
                pxz[d, 1] += wc[s] * dx * d1

        det = s00 * s11 - s01 * s01
        if not (det > 0.0 and math.isfinite(det)):
            return i
        i00 = s11 / det
        i01 = -s01 / det
        i11 = s00 / det

        v0 = y1[i] - zm0
        v1 = y2[i] - zm1
        for d in range(3):
            gain[d, 0] = pxz[d, 0] * i00 + pxz[d, 1] * i01
            gain[d, 1] = pxz[d, 0] * i01 + pxz[d, 1] * i11
            mean[d] += gain[d, 0] * v0 + gain[d, 1] * v1

        # cov -= K S K^T, then symmetrize
        for r in range(3):
            ks0 = gain[r, 0] * s00 + gain[r, 1] * s01
            ks1 = gain[r, 0] * s01 + gain[r, 1] * s11
            for c in range(3):
                cov[r, c] -= ks0 * gain[c, 0] + ks1 * gain[c, 1]
        for r in range(3):
            for c in range(r + 1, 3):
                avg = 0.5 * (cov[r, c] + cov[c, r])
                cov[r, c] = avg
                cov[c, r] = avg

        if i % decimation == 0:
            for d in range(3):
                out_mean[row, d] = mean[d]
                out_var[row, d] = cov[d, d]
            row += 1

    return -1


@njit(cache=True)
def phase_ukf_kernel(y, start, omega, sqrt_p, r_meas, q_phi, lam, wm, wc, jitter,
                     phi, var, decimation, out_phi, out_var):
    """
    Scalar phase tracking on a real pilot record.

    Returns:
        (failing sample index or -1, final phi, final variance)
    """
    n = y.shape[0]
    spread = math.sqrt(1 + lam)
    sig = np.empty(3)
    z = np.empty(3)
    row = 0

    for i in range(n):
        var += q_phi
        shifted = var + jitter
        if not shifted > 0.0:
            return i, phi, var
        root = spread * math.sqrt(shifted)
        sig[0] = phi
        sig[1] = phi + root
        sig[2] = phi - root

        base = omega * (start + i)
        zm = 0.0
        for s in range(3):
            z[s] = sqrt_p * math.cos(base + sig[s])
            zm += wm[s] * z[s]

        s_zz = r_meas
        p_xz = 0.0
        for s in range(3):
            dz = z[s] - zm
            s_zz += wc[s] * dz * dz
            p_xz += wc[s] * (sig[s] - phi) * dz
        if not (s_zz > 0.0 and math.isfinite(s_zz)):
            return i, phi, var

        k_gain = p_xz / s_zz
        phi += k_gain * (y[i] - zm)
        var -= k_gain * k_gain * s_zz

        if i % decimation == 0:
            out_phi[row] = phi
            out_var[row] = var
            row += 1

    return -1, phi, var


@njit(cache=True)
def cma_kernel(px, py, w, mu, r_target, divergence_norm, constrain,
               segment, tail_fraction, stride, trajectory):
    """
    One-tap CMA over a dual-pol record, split into segments of `segment` samples.
    Row 1 follows the stochastic gradient of (r - |y1|^2)^2; row 2 is tied to
    [-conj(w12), conj(w11)]. With `constrain` row 1 is held at unit norm.
    w (2, 2) complex is updated in place; every stride-th matrix goes to trajectory.

    Returns:
        (failing sample index or -1, per-segment tail-averaged matrices)
    """
    n = px.shape[0]
    n_seg = (n + segment - 1) // segment
    averages = np.zeros((n_seg, 2, 2), dtype=np.complex128)
    row = 0

    for seg in range(n_seg):
        lo = seg * segment
        hi = min(lo + segment, n)
        tail = max(1, int(math.ceil(tail_fraction * (hi - lo))))
        tail_start = hi - tail
        for i in range(lo, hi):
            x1 = px[i]
            x2 = py[i]
            y1 = w[0, 0] * x1 + w[0, 1] * x2
            step = mu * (r_target - (y1.real * y1.real + y1.imag * y1.imag))
            if step != 0.0:
                w[0, 0] += step * y1 * np.conj(x1)
                w[0, 1] += step * y1 * np.conj(x2)
                if constrain:
                    norm = math.sqrt(abs(w[0, 0]) ** 2 + abs(w[0, 1]) ** 2)
                    if norm > 0.0 and math.isfinite(norm):
                        w[0, 0] /= norm
                        w[0, 1] /= norm
                w[1, 0] = -np.conj(w[0, 1])
                w[1, 1] = np.conj(w[0, 0])

            size = math.sqrt(2.0 * (abs(w[0, 0]) ** 2 + abs(w[0, 1]) ** 2))
            if not (size <= divergence_norm):
                return i, averages

            if i >= tail_start:
                for r in range(2):
                    for c in range(2):
                        averages[seg, r, c] += w[r, c]
            if i % stride == 0:
                for r in range(2):
                    for c in range(2):
                        trajectory[row, r, c] = w[r, c]
                row += 1
        for r in range(2):
            for c in range(2):
                averages[seg, r, c] /= tail

    return -1, averages
