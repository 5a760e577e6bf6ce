"""Constitutive layer of the hybrid phase-field fracture model.

Damage degrades the stress multiplicatively through g(d) = (1 - d)^2 + eps,
while the damage driving force is the tensile part of the strain energy from
the spectral split of Miehe et al. (2010), accumulated into a cellwise
running maximum so cracks cannot heal.  Stress itself stays isotropic
(undecomposed), the pairing introduced by Ambati et al. (2015), which keeps
both subproblems of the staggered scheme linear.

All functions are pure and accept batched inputs: a strain argument of shape
(..., dim, dim) returns results with matching leading dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "MaterialParams",
    "lame_from_E_nu",
    "degradation",
    "macaulay",
    "strain_from_displacement",
    "isotropic_energy",
    "spectral_split",
    "tensile_energy",
    "update_history",
    "hybrid_stress",
]


def lame_from_E_nu(E: float, nu: float) -> tuple[float, float]:
    """Lame parameters (lam, mu) from Young's modulus and Poisson's ratio."""
    if E <= 0.0:
        raise ValueError("Young's modulus must be positive")
    if not -1.0 < nu < 0.5:
        raise ValueError("Poisson's ratio must lie in (-1, 0.5)")
    lam = nu * E / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return lam, mu


@dataclass(frozen=True)
class MaterialParams:
    """Constitutive constants.

    Gc : critical energy release rate (kN/mm)
    l0 : crack regularization length (mm)
    lam, mu : Lame parameters (kN/mm^2)
    eps_residual : residual stiffness keeping the operator invertible at d=1
    """

    Gc: float
    l0: float
    lam: float
    mu: float
    eps_residual: float = 1e-10

    def __post_init__(self):
        if self.Gc <= 0.0:
            raise ValueError("Gc must be positive")
        if self.l0 <= 0.0:
            raise ValueError("l0 must be positive")
        if self.mu <= 0.0 or self.lam + 2.0 * self.mu <= 0.0:
            raise ValueError("need mu > 0 and lam + 2 mu > 0")
        if not 0.0 <= self.eps_residual < 1.0:
            raise ValueError("eps_residual must be small and non-negative")

    @classmethod
    def from_young_poisson(
        cls, E: float, nu: float, Gc: float, l0: float, eps_residual: float = 1e-10
    ) -> "MaterialParams":
        lam, mu = lame_from_E_nu(E, nu)
        return cls(Gc=Gc, l0=l0, lam=lam, mu=mu, eps_residual=eps_residual)


def degradation(d, eps_residual: float = 0.0):
    """Stiffness multiplier g(d) = (1 - d)^2 + eps and its derivative."""
    d = np.asarray(d, dtype=np.float64)
    g = (1.0 - d) ** 2 + eps_residual
    dg = -2.0 * (1.0 - d)
    return g, dg


def macaulay(x):
    """Positive/negative parts (x + |x|)/2 and (x - |x|)/2; they sum to x."""
    x = np.asarray(x, dtype=np.float64)
    a = np.abs(x)
    return 0.5 * (x + a), 0.5 * (x - a)


def strain_from_displacement(cell_disp: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """Cellwise-constant symmetric gradient of a P1 displacement field.

    Parameters
    ----------
    cell_disp : (..., dim + 1, dim) nodal displacements per cell
    grads : (..., dim + 1, dim) basis gradients per cell

    Returns
    -------
    (..., dim, dim) strain tensors, exactly symmetric.
    """
    grad_u = np.einsum("...ia,...ib->...ab", cell_disp, grads)
    return 0.5 * (grad_u + np.swapaxes(grad_u, -1, -2))


def isotropic_energy(eps: np.ndarray, lam: float, mu: float):
    """Undecomposed strain energy density lam/2 tr(e)^2 + mu e:e."""
    eps = np.asarray(eps, dtype=np.float64)
    tr = np.trace(eps, axis1=-2, axis2=-1)
    return 0.5 * lam * tr**2 + mu * np.einsum("...ij,...ij->...", eps, eps)


def _eigh_2x2(eps: np.ndarray) -> np.ndarray:
    """Closed-form eigenvalues of symmetric 2x2 tensors, ascending."""
    a = eps[..., 0, 0]
    c = eps[..., 1, 1]
    b = eps[..., 0, 1]
    half = 0.5 * (a + c)
    r = np.sqrt((0.5 * (a - c)) ** 2 + b**2)
    return np.stack([half - r, half + r], axis=-1)


def _split_tensors_2d(eps: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tensile/compressive tensor parts in 2D without explicit eigenvectors.

    With distinct eigenvalues the spectral projectors are rational in eps;
    a (near-)repeated pair means eps is (near-)isotropic and the split is
    the Macaulay split of the multiple eigenvalue times the identity.
    """
    lo, hi = w[..., 0], w[..., 1]
    gap = hi - lo
    eye = np.broadcast_to(np.eye(2), eps.shape)
    scale = np.maximum(np.abs(lo), np.abs(hi)) + 1.0
    close = gap <= 1e-14 * scale
    safe_gap = np.where(close, 1.0, gap)
    p_hi = (eps - lo[..., None, None] * eye) / safe_gap[..., None, None]
    p_lo = eye - p_hi
    lo_p, lo_m = macaulay(lo)
    hi_p, hi_m = macaulay(hi)
    plus = lo_p[..., None, None] * p_lo + hi_p[..., None, None] * p_hi
    minus = lo_m[..., None, None] * p_lo + hi_m[..., None, None] * p_hi
    if np.any(close):
        iso_p, iso_m = macaulay(hi)
        plus = np.where(close[..., None, None], iso_p[..., None, None] * eye, plus)
        minus = np.where(close[..., None, None], iso_m[..., None, None] * eye, minus)
    return plus, minus


def spectral_split(eps: np.ndarray, lam: float, mu: float):
    """Spectral tension/compression split of the strain energy.

    Decomposes eps into eps_plus + eps_minus through the Macaulay brackets of
    its eigenvalues and returns the corresponding energy densities

        e_pm = lam/2 <tr eps>_pm^2 + mu tr(eps_pm^2).

    2D uses the closed-form trace/determinant eigenvalues; 3D uses LAPACK's
    iterative symmetric solver.  Repeated eigenvalues are harmless: the
    split tensors are basis independent under degeneracy.

    Returns
    -------
    (e_plus, e_minus, eps_plus, eps_minus)
    """
    eps = np.asarray(eps, dtype=np.float64)
    dim = eps.shape[-1]
    if dim == 2:
        w = _eigh_2x2(eps)
        eps_plus, eps_minus = _split_tensors_2d(eps, w)
    else:
        w, vecs = np.linalg.eigh(eps)
        wp, wm = macaulay(w)
        eps_plus = np.einsum("...k,...ik,...jk->...ij", wp, vecs, vecs)
        eps_minus = np.einsum("...k,...ik,...jk->...ij", wm, vecs, vecs)
        eps_plus = 0.5 * (eps_plus + np.swapaxes(eps_plus, -1, -2))
        eps_minus = 0.5 * (eps_minus + np.swapaxes(eps_minus, -1, -2))
    tr_p, tr_m = macaulay(np.trace(eps, axis1=-2, axis2=-1))
    wp, wm = macaulay(w)
    e_plus = 0.5 * lam * tr_p**2 + mu * np.sum(wp**2, axis=-1)
    e_minus = 0.5 * lam * tr_m**2 + mu * np.sum(wm**2, axis=-1)
    return e_plus, e_minus, eps_plus, eps_minus


def tensile_energy(eps: np.ndarray, lam: float, mu: float):
    """Tensile energy density of the spectral split (eigenvalues only)."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape[-1] == 2:
        w = _eigh_2x2(eps)
    else:
        w = np.linalg.eigvalsh(eps)
    tr_p, _ = macaulay(np.trace(eps, axis1=-2, axis2=-1))
    wp, _ = macaulay(w)
    return 0.5 * lam * tr_p**2 + mu * np.sum(wp**2, axis=-1)


def update_history(H: np.ndarray, e_plus: np.ndarray) -> np.ndarray:
    """Elementwise running maximum of the tensile energy density."""
    H = np.asarray(H, dtype=np.float64)
    e_plus = np.asarray(e_plus, dtype=np.float64)
    if H.shape != e_plus.shape:
        raise ValueError("history and energy arrays must have the same shape")
    return np.maximum(H, e_plus)


def hybrid_stress(eps: np.ndarray, d, params: MaterialParams):
    """Degraded isotropic stress and its tangent moduli.

    sigma = g(d) [lam tr(eps) I + 2 mu eps].  The tangent is isotropic with
    effective moduli (g lam, g mu), returned as that pair, which fully
    determines the fourth-order operator.
    """
    eps = np.asarray(eps, dtype=np.float64)
    g, _ = degradation(d, params.eps_residual)
    tr = np.trace(eps, axis1=-2, axis2=-1)
    dim = eps.shape[-1]
    eye = np.eye(dim)
    sigma = np.asarray(g)[..., None, None] * (
        params.lam * tr[..., None, None] * eye + 2.0 * params.mu * eps
    )
    return sigma, (g * params.lam, g * params.mu)
