"""
Security metrics
Channel parameter estimation, heterodyne mutual information, Holevo bound under
collective attacks (Gaussian covariance-matrix formalism) and the asymptotic
secret key fraction beta * I(A:B) - chi(B:E).

Covariance matrices are in SNU with quadratures ordered (x1, p1, x2, p2, ...).
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag
from scipy.special import xlogy

from config.settings import RECONCILIATION_EFFICIENCY, RECEIVER_MODEL
from utils.errors import ConfigError, InvalidEstimateError, SecurityError

logger = logging.getLogger(__name__)

RECEIVER_MODELS = ("trusted", "untrusted")
EIGENVALUE_TOL = 1e-9

SIGMA_Z = np.diag([1.0, -1.0])
I2 = np.eye(2)


@dataclass
class SecurityParams:
    v_mod: float
    tau: float
    v_el: float
    beta: float = RECONCILIATION_EFFICIENCY
    receiver_model: str = RECEIVER_MODEL

    def validate(self, path="security"):
        if not self.v_mod > 0:
            raise ConfigError(f"{path}.v_mod", "must be positive")
        if not 0 < self.tau <= 1:
            raise ConfigError(f"{path}.tau", "must lie in (0, 1]")
        if self.v_el < 0:
            raise ConfigError(f"{path}.v_el", "must be >= 0")
        if not 0 < self.beta <= 1:
            raise ConfigError(f"{path}.beta", "must lie in (0, 1]")
        if self.receiver_model not in RECEIVER_MODELS:
            raise ConfigError(f"{path}.receiver_model", f"expected one of {RECEIVER_MODELS}")


@dataclass
class ChannelEstimate:
    t_hat: float
    xi_hat: float
    n_symbols: int
    t_hat_raw: float = None
    clamped: bool = False

    @property
    def negative_xi(self):
        return self.xi_hat < 0


@dataclass
class FrameMetrics:
    t_hat: float
    xi_hat: float
    i_ab: float
    chi_be: float
    skf: float


def estimate_channel(frame, params):
    """
    Gain, transmittance and input-referred excess noise of one frame

    Args:
        frame: SymbolRecord with aligned tx/rx symbols in SNU
        params: SecurityParams

    Returns:
        ChannelEstimate (t_hat clamped to 1 and flagged; negative xi_hat kept)
    """
    tx = np.asarray(frame.tx_symbols)
    rx = np.asarray(frame.rx_symbols)
    quadratures = ((tx.real, rx.real), (tx.imag, rx.imag))

    gains = []
    for t_q, r_q in quadratures:
        var_t = np.var(t_q)
        if var_t <= 0:
            raise SecurityError("transmitted symbols have zero variance")
        gains.append(np.mean((t_q - t_q.mean()) * (r_q - r_q.mean())) / var_t)
    gain = float(np.mean(gains))

    t_raw = gain ** 2 / params.tau
    if not t_raw > 0:
        raise SecurityError(f"transmittance estimate {t_raw:.3g} is not positive")
    v_res = float(np.mean([np.var(r_q - gain * t_q) for t_q, r_q in quadratures]))
    xi = (v_res - 1 - params.v_el) / (params.tau * t_raw)

    clamped = t_raw > 1
    if clamped:
        logger.warning("transmittance estimate %.4f clamped to 1", t_raw)
    if xi < 0:
        logger.debug("negative excess noise estimate %.3e SNU", xi)
    return ChannelEstimate(min(t_raw, 1.0), float(xi), len(tx), t_raw, clamped)


def mutual_information(est, params):
    """Heterodyne I(A:B) in bits/symbol"""
    values = (est.t_hat, est.xi_hat, params.v_mod, params.tau, params.v_el)
    if not all(math.isfinite(v) for v in values):
        raise SecurityError("mutual information needs finite inputs")
    if est.t_hat < 0:
        raise SecurityError("transmittance must be >= 0")
    gain = params.tau * est.t_hat
    snr = (gain * params.v_mod / 2) / (1 + params.v_el + gain * est.xi_hat / 2)
    return float(np.log2(1 + snr))


def g_function(x):
    """Entropy of a thermal state with mean photon number x (bits); g(0) = 0"""
    x = np.asarray(x, dtype=float)
    if np.any(x < -EIGENVALUE_TOL):
        raise SecurityError("mean photon number must be >= 0")
    x = np.clip(x, 0.0, None)
    out = (xlogy(x + 1, x + 1) - xlogy(x, x)) / np.log(2)
    return out if out.ndim else float(out)


def symplectic_form(n_modes):
    return block_diag(*([np.array([[0.0, 1.0], [-1.0, 0.0]])] * n_modes))


def symplectic_eigenvalues(gamma):
    """Symplectic spectrum from the moduli of the eigenvalues of i*Omega*gamma"""
    gamma = np.asarray(gamma, dtype=float)
    n_modes = gamma.shape[0] // 2
    moduli = np.sort(np.abs(np.linalg.eigvals(1j * symplectic_form(n_modes) @ gamma)))
    return 0.5 * (moduli[0::2] + moduli[1::2])


def von_neumann_entropy(gamma):
    nu = symplectic_eigenvalues(gamma)
    if np.any(nu < 1 - EIGENVALUE_TOL):
        raise InvalidEstimateError(
            f"covariance matrix is unphysical (symplectic eigenvalue {nu.min():.6g} < 1)"
        )
    return float(np.sum(g_function((nu - 1) / 2)))


def entangled_covariance(v_mod, t, xi):
    """Alice-Bob covariance of the entanglement-based equivalent state"""
    v = v_mod + 1
    c = math.sqrt(t * (v ** 2 - 1))
    return np.block([
        [v * I2, c * SIGMA_Z],
        [c * SIGMA_Z, (t * v + 1 - t + t * xi) * I2],
    ])


def heterodyne_condition(gamma, measured):
    """
    Covariance of the remaining modes after heterodyne detection of mode `measured`

    gamma_rest - sigma (gamma_m + I)^-1 sigma^T
    """
    idx = [2 * measured, 2 * measured + 1]
    rest = [i for i in range(gamma.shape[0]) if i not in idx]
    sigma = gamma[np.ix_(rest, idx)]
    return gamma[np.ix_(rest, rest)] - sigma @ np.linalg.solve(gamma[np.ix_(idx, idx)] + I2, sigma.T)


def _trusted_purification(gamma_ab, tau, v_el):
    """Detector modelled as a beamsplitter (tau) fed by one arm of an EPR pair of variance nu"""
    if tau == 1:
        if v_el != 0:
            raise SecurityError("trusted receiver with tau = 1 requires v_el = 0")
        nu = 1.0
    else:
        nu = 1 + v_el / (1 - tau)
    c = math.sqrt(max(nu ** 2 - 1, 0.0))
    epr = np.block([[nu * I2, c * SIGMA_Z], [c * SIGMA_Z, nu * I2]])
    # modes: A, B, F0, G
    gamma = block_diag(gamma_ab, epr)

    s = np.eye(8)
    rt, rr = math.sqrt(tau), math.sqrt(1 - tau)
    b, g = slice(2, 4), slice(6, 8)
    s[b, b] = rt * I2
    s[b, g] = rr * I2
    s[g, b] = -rr * I2
    s[g, g] = rt * I2
    return s @ gamma @ s.T


def holevo_bound(est, params, xi=None):
    """
    chi(B:E) in bits/symbol

    The untrusted model does not condition on the channel-output mode directly. It folds
    the detector into the channel, T' = tau*T and xi' = xi + v_el/(tau*T), and conditions
    on an ideal heterodyne of that mode. At tau = 1 and v_el = 0 the two coincide.

    Args:
        est: ChannelEstimate
        params: SecurityParams (receiver_model selects the detector treatment)
        xi: optional excess noise overriding est.xi_hat

    Returns:
        Holevo information
    """
    t = est.t_hat
    xi = est.xi_hat if xi is None else xi
    if not 0 < t <= 1:
        raise InvalidEstimateError(f"transmittance {t:.6g} outside (0, 1]")

    if params.receiver_model == "untrusted":
        t_eff = params.tau * t
        xi_eff = xi + params.v_el / t_eff
        gamma_ab = entangled_covariance(params.v_mod, t_eff, xi_eff)
        return von_neumann_entropy(gamma_ab) - von_neumann_entropy(heterodyne_condition(gamma_ab, 1))

    gamma_ab = entangled_covariance(params.v_mod, t, xi)
    s_ab = von_neumann_entropy(gamma_ab)
    full = _trusted_purification(gamma_ab, params.tau, params.v_el)
    return s_ab - von_neumann_entropy(heterodyne_condition(full, 1))


def secret_key_fraction(i_ab, chi_be, beta):
    return beta * i_ab - chi_be


def frame_metrics(frame, params):
    """Estimate, mutual information, Holevo bound and key fraction of one frame"""
    est = estimate_channel(frame, params)
    i_ab = mutual_information(est, params)
    # negative estimates are kept for reporting; the covariance needs xi >= 0
    chi = holevo_bound(est, params, xi=max(est.xi_hat, 0.0))
    return FrameMetrics(est.t_hat, est.xi_hat, i_ab, chi, secret_key_fraction(i_ab, chi, params.beta))
