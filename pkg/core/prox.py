"""
Proximal operators, regularizer values, projections and weak-convexity moduli.

Every prox here follows one convention:

    prox_{beta f}(x) = argmin_y  f(y) + ||y - x||^2 / (2 beta)

`half_threshold` is the one exception and says so: it is the classical
half-thresholding operator for (y - x)^2 + lam |y|^{1/2}, and
prox_half_exact(x, beta) == half_threshold(x, 2 beta).
"""

from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, field_validator

from .errors import InvalidSetError, UnsupportedExponentError

ArrayLike = Union[np.ndarray, float]
SvdOracle = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray, np.ndarray]]

HALF_THRESHOLD_COEFF = 54.0 ** (1.0 / 3.0) / 4.0


class SmoothedPowerRegularizer(BaseModel):
    """w * sum_i r^q_eps(x_i): |x_i|^q outside [-eps, eps], a quadratic patch inside"""

    model_config = ConfigDict(frozen=True)

    q: float = 0.5
    epsilon: float = 0.01
    weight: float = 1.0

    @field_validator("q")
    @classmethod
    def validate_q(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError("exponent q must lie in (0, 1)")
        return v

    @field_validator("epsilon")
    @classmethod
    def validate_epsilon(cls, v: float) -> float:
        if v <= 0.0:
            raise ValueError("smoothing radius epsilon must be positive")
        return v

    @field_validator("weight")
    @classmethod
    def validate_weight(cls, v: float) -> float:
        if v < 0.0:
            raise ValueError("weight must be nonnegative")
        return v

    @property
    def patch_curvature(self) -> float:
        """q * eps^(q-2), the curvature of the quadratic patch"""
        return self.q * self.epsilon ** (self.q - 2.0)

    @property
    def floor(self) -> float:
        """((q-2)/2) eps^q, the minimum of each unweighted term"""
        return 0.5 * (self.q - 2.0) * self.epsilon ** self.q


class QuadraticFidelity(BaseModel):
    """||y - v||^2 / (2 delta_fid)"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    target: np.ndarray
    delta_fid: float

    @field_validator("target", mode="before")
    @classmethod
    def coerce_target(cls, v) -> np.ndarray:
        arr = np.asarray(v, dtype=float).ravel()
        arr.setflags(write=False)
        return arr

    @field_validator("delta_fid")
    @classmethod
    def validate_delta(cls, v: float) -> float:
        if v <= 0.0:
            raise ValueError("delta_fid must be positive")
        return v


# ---------------------------------------------------------------------------
# Smoothed power regularizer
# ---------------------------------------------------------------------------

def _smoothed_terms(a: np.ndarray, reg: SmoothedPowerRegularizer) -> np.ndarray:
    """Unweighted per-coordinate values at |x| = a"""
    inside = a <= reg.epsilon
    out = np.empty_like(a, dtype=float)
    out[~inside] = a[~inside] ** reg.q
    out[inside] = 0.5 * reg.patch_curvature * a[inside] ** 2 + reg.floor
    return out


def smoothed_power_value(x: ArrayLike, reg: SmoothedPowerRegularizer) -> float:
    a = np.abs(np.asarray(x, dtype=float)).ravel()
    return float(reg.weight * np.sum(_smoothed_terms(a, reg)))


def smoothed_power_grad(x: ArrayLike, reg: SmoothedPowerRegularizer) -> np.ndarray:
    """Elementwise derivative; bounded by w * q * eps^(q-1)"""
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    inside = a <= reg.epsilon
    g = np.empty_like(x, dtype=float)
    g[inside] = reg.patch_curvature * x[inside]
    g[~inside] = reg.q * np.sign(x[~inside]) * a[~inside] ** (reg.q - 1.0)
    return reg.weight * g


def weak_convexity_modulus_smoothed(reg: SmoothedPowerRegularizer) -> float:
    """Most negative curvature of w * r^q_eps, attained just outside the patch"""
    return reg.weight * reg.q * (1.0 - reg.q) * reg.epsilon ** (reg.q - 2.0)


# ---------------------------------------------------------------------------
# Half thresholding
# ---------------------------------------------------------------------------

def _half_local_min(a: np.ndarray, lam: float) -> np.ndarray:
    """Nonzero local minimizer of (y - a)^2 + lam * sqrt(y) for a > (3/4) lam^(2/3)"""
    arg = (lam / 8.0) * (a / 3.0) ** (-1.5)
    assert np.all(arg <= 1.0 + 1e-12), "half-thresholding branch evaluated below its threshold"
    phi = np.arccos(np.clip(arg, -1.0, 1.0))
    return (2.0 / 3.0) * a * (1.0 + np.cos(2.0 * np.pi / 3.0 - (2.0 / 3.0) * phi))


def half_threshold(x: ArrayLike, lam: float) -> np.ndarray:
    """argmin_y (y - x)^2 + lam |y|^(1/2), elementwise. Ties at the threshold map to 0."""
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    out = np.zeros_like(x, dtype=float)
    keep = a > HALF_THRESHOLD_COEFF * lam ** (2.0 / 3.0)
    if np.any(keep):
        out[keep] = np.sign(x[keep]) * _half_local_min(a[keep], lam)
    return out


def prox_half_exact(x: ArrayLike, beta: float) -> np.ndarray:
    """prox of |.|^(1/2) at step beta; zero below 1.5 * beta^(2/3)"""
    return half_threshold(x, 2.0 * beta)


def prox_smoothed_power(x: ArrayLike, beta: float, reg: SmoothedPowerRegularizer) -> np.ndarray:
    """
    prox of w * r^q_eps at step beta.

    Computed on |x| and signed back (the prox is odd). Below (3/4)(2t)^(2/3),
    t = beta * w, the quadratic-patch minimizer is the answer; above it the result
    is the better of the patch minimizer and the nonzero local minimizer of the
    unsmoothed problem, which only has a closed form for q = 1/2.
    """
    x = np.asarray(x, dtype=float)
    t = beta * reg.weight
    if t == 0.0:
        return x.copy()

    a = np.atleast_1d(np.abs(x))
    patch = np.minimum(a / (1.0 + t * reg.patch_curvature), reg.epsilon)
    out = patch.copy()

    upper = a > 0.75 * (2.0 * t) ** (2.0 / 3.0)
    if np.any(upper):
        if reg.q != 0.5:
            raise UnsupportedExponentError(
                f"closed-form smoothed prox needs q = 1/2 beyond the quadratic region (got q = {reg.q})"
            )
        au = a[upper]
        cand = _half_local_min(au, 2.0 * t)
        r_cand = (cand - au) ** 2 / (2.0 * t) + _smoothed_terms(cand, reg)
        r_patch = (patch[upper] - au) ** 2 / (2.0 * t) + _smoothed_terms(patch[upper], reg)
        out[upper] = np.where(r_cand < r_patch, cand, patch[upper])

    return np.sign(x) * out.reshape(x.shape)


# ---------------------------------------------------------------------------
# Convex pieces
# ---------------------------------------------------------------------------

def prox_quadratic_fidelity(arg: ArrayLike, beta: float, fid: QuadraticFidelity) -> np.ndarray:
    arg = np.asarray(arg, dtype=float)
    return (fid.delta_fid * arg + beta * fid.target) / (fid.delta_fid + beta)


def quadratic_fidelity_value(y: ArrayLike, fid: QuadraticFidelity) -> float:
    r = np.asarray(y, dtype=float) - fid.target
    return float(r @ r) / (2.0 * fid.delta_fid)


def prox_l1(x: ArrayLike, beta: float, weight: float) -> np.ndarray:
    """Soft thresholding at beta * weight"""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - beta * weight, 0.0)


def project_box(x: ArrayLike, lo: Optional[ArrayLike] = None, hi: Optional[ArrayLike] = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    lo_arr = np.full_like(x, -np.inf) if lo is None else np.broadcast_to(np.asarray(lo, dtype=float), x.shape)
    hi_arr = np.full_like(x, np.inf) if hi is None else np.broadcast_to(np.asarray(hi, dtype=float), x.shape)
    if np.any(lo_arr > hi_arr):
        raise InvalidSetError("box constraint has lo > hi")
    return np.clip(x, lo_arr, hi_arr)


# ---------------------------------------------------------------------------
# Spectral functions
# ---------------------------------------------------------------------------

def dense_svd(M: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD with nonincreasing singular values"""
    return scipy.linalg.svd(M, full_matrices=False)


def prox_spectral_half(
    M: np.ndarray,
    beta: float,
    reg: SmoothedPowerRegularizer,
    svd: SvdOracle = dense_svd,
) -> np.ndarray:
    """prox of w * sum_i r^q_eps(sigma_i(M))"""
    M = np.asarray(M, dtype=float)
    if not np.any(M):
        return np.zeros_like(M)
    U, s, Vt = svd(M)
    return (U * prox_smoothed_power(s, beta, reg)) @ Vt


def prox_nuclear(M: np.ndarray, beta: float, weight: float, svd: SvdOracle = dense_svd) -> np.ndarray:
    """Singular value soft thresholding"""
    M = np.asarray(M, dtype=float)
    if not np.any(M):
        return np.zeros_like(M)
    U, s, Vt = svd(M)
    return (U * prox_l1(s, beta, weight)) @ Vt


def spectral_half_value(M: np.ndarray, reg: SmoothedPowerRegularizer) -> float:
    s = scipy.linalg.svdvals(np.asarray(M, dtype=float))
    return smoothed_power_value(s, reg)


def spectral_half_grad(M: np.ndarray, reg: SmoothedPowerRegularizer, svd: SvdOracle = dense_svd) -> np.ndarray:
    U, s, Vt = svd(np.asarray(M, dtype=float))
    return (U * smoothed_power_grad(s, reg)) @ Vt


def nuclear_value(M: np.ndarray, weight: float = 1.0) -> float:
    return float(weight * np.sum(scipy.linalg.svdvals(np.asarray(M, dtype=float))))


def nuclear_subgrad(M: np.ndarray, weight: float = 1.0, svd: SvdOracle = dense_svd, tol: float = 1e-12) -> np.ndarray:
    """Canonical element U_+ V_+^T over the nonzero singular values"""
    U, s, Vt = svd(np.asarray(M, dtype=float))
    keep = s > tol
    return weight * (U[:, keep] @ Vt[keep, :])


# ---------------------------------------------------------------------------
# Unsmoothed half quasi-norm
# ---------------------------------------------------------------------------

def half_value(x: ArrayLike, weight: float = 1.0) -> float:
    return float(weight * np.sum(np.sqrt(np.abs(np.asarray(x, dtype=float)))))


def half_subgrad(x: ArrayLike, weight: float = 1.0) -> np.ndarray:
    """Gradient away from 0 and the element 0 at 0"""
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    g = np.zeros_like(x)
    nz = a > 0
    g[nz] = 0.5 * np.sign(x[nz]) / np.sqrt(a[nz])
    return weight * g


def prox_half(x: ArrayLike, beta: float, weight: float = 1.0) -> np.ndarray:
    """prox of w |.|^(1/2) at step beta"""
    if beta * weight == 0.0:
        return np.asarray(x, dtype=float).copy()
    return prox_half_exact(x, beta * weight)


def prox_spectral_half_exact(M: np.ndarray, beta: float, weight: float = 1.0, svd: SvdOracle = dense_svd) -> np.ndarray:
    """Singular value half thresholding; zeroes every singular value below 1.5 (beta w)^(2/3)"""
    M = np.asarray(M, dtype=float)
    if not np.any(M):
        return np.zeros_like(M)
    U, s, Vt = svd(M)
    return (U * prox_half(s, beta, weight)) @ Vt


def spectral_half_exact_value(M: np.ndarray, weight: float = 1.0) -> float:
    return half_value(scipy.linalg.svdvals(np.asarray(M, dtype=float)), weight)


def spectral_half_exact_subgrad(M: np.ndarray, weight: float = 1.0, svd: SvdOracle = dense_svd) -> np.ndarray:
    U, s, Vt = svd(np.asarray(M, dtype=float))
    return (U * half_subgrad(s, weight)) @ Vt
