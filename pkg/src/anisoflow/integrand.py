"""Anisotropic area integrands on the dual space and their level-set geometry.

Covectors are plain numpy arrays whose last axis holds the coordinates
``(v0, v1, ..., vn)`` in the basis ``phi^0, ..., phi^n``; index 0 is the
``phi^0`` component, so a graph normal is ``(-1, u_1, ..., u_n)``. All
evaluators broadcast over leading axes.

Derivatives are returned as dense symmetric arrays: rank 1 ``(..., d)``,
rank 2 ``(..., d, d)`` and rank 3 ``(..., d, d, d)`` with ``d = n + 1``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import ConfigError, DomainError

ZERO_FLOOR = 1e-12
PERTURBATION_LIMIT = 0.1

FAMILIES = ("euclidean", "ellipsoid", "perturbed", "odd_perturbed")


def _as_covector(v: ArrayLike, dim: int) -> NDArray[np.float64]:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != dim + 1:
        raise DomainError(f"covector has {v.shape[-1]} coordinates, expected {dim + 1}")
    norms = np.linalg.norm(v, axis=-1)
    if np.any(norms < ZERO_FLOOR):
        raise DomainError("integrand is not differentiable at the zero covector")
    return v


def _sym3(mat: NDArray, vec: NDArray) -> NDArray:
    """X_ij y_k + X_ik y_j + X_jk y_i, batched."""
    return (
        mat[..., :, :, None] * vec[..., None, None, :]
        + mat[..., :, None, :] * vec[..., None, :, None]
        + mat[..., None, :, :] * vec[..., :, None, None]
    )


def _ipow(r: NDArray, k: int) -> NDArray:
    # integer power by repeated multiplication; np.power is slow for arrays
    base = r if k >= 0 else 1.0 / r
    out = np.ones_like(r)
    for _ in range(abs(k)):
        out = out * base
    return out


def _radial_power(v: NDArray, p: int, order: int) -> list[NDArray]:
    # jet of |v|^p up to the given order
    r = np.sqrt(np.einsum("...i,...i->...", v, v))
    out = [_ipow(r, p)]
    if order >= 1:
        c1 = p * _ipow(r, p - 2)
        out.append(c1[..., None] * v)
    if order >= 2:
        vv = v[..., :, None] * v[..., None, :]
        c2 = p * (p - 2) * _ipow(r, p - 4)
        hess = c2[..., None, None] * vv
        idx = np.arange(v.shape[-1])
        hess[..., idx, idx] += c1[..., None]
        out.append(hess)
    if order >= 3:
        eye = np.broadcast_to(np.eye(v.shape[-1]), v.shape + (v.shape[-1],))
        vvv = vv[..., None] * v[..., None, None, :]
        c3 = p * (p - 2) * (p - 4) * _ipow(r, p - 6)
        out.append(c2[..., None, None, None] * _sym3(eye, v) + c3[..., None, None, None] * vvv)
    return out


def _product(a: list[NDArray], b: list[NDArray]) -> list[NDArray]:
    """Leibniz rule for jets of two scalar functions."""
    order = len(a) - 1
    out = [a[0] * b[0]]
    if order >= 1:
        out.append(a[1] * b[0][..., None] + a[0][..., None] * b[1])
    if order >= 2:
        cross = a[1][..., :, None] * b[1][..., None, :]
        out.append(
            a[2] * b[0][..., None, None]
            + cross
            + np.swapaxes(cross, -1, -2)
            + a[0][..., None, None] * b[2]
        )
    if order >= 3:
        out.append(
            a[3] * b[0][..., None, None, None]
            + _sym3(a[2], b[1])
            + _sym3(b[2], a[1])
            + a[0][..., None, None, None] * b[3]
        )
    return out


@dataclass(frozen=True)
class Integrand:
    """Base class: a positive, convex, degree-one homogeneous ``F: V* -> R``.

    Subclasses implement :meth:`_jet`, returning ``[F, DF, D2F, D3F]``
    truncated at the requested order.
    """

    dim: int

    family = "abstract"

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError("dimension n must be at least 1")

    def _jet(self, v: NDArray, order: int) -> list[NDArray]:
        raise NotImplementedError

    def jet(self, v: ArrayLike, order: int = 3) -> list[NDArray]:
        if order not in (0, 1, 2, 3):
            raise ValueError("order must be 0, 1, 2 or 3")
        return self._jet(_as_covector(v, self.dim), order)

    def value(self, v: ArrayLike) -> NDArray:
        return self.jet(v, 0)[0]

    def grad(self, v: ArrayLike) -> NDArray:
        return self.jet(v, 1)[1]

    def hess(self, v: ArrayLike) -> NDArray:
        return self.jet(v, 2)[2]

    def third(self, v: ArrayLike) -> NDArray:
        return self.jet(v, 3)[3]

    def params(self) -> dict:
        return {"family": self.family, "dim": self.dim}

    @property
    def apex(self) -> NDArray:
        """The covector ``-phi^0``."""
        e = np.zeros(self.dim + 1)
        e[0] = -1.0
        return e

    def apex_value(self) -> float:
        """``F(-phi^0)``, the smallest admissible barrier floor."""
        return float(self.value(self.apex))

    def graph_coefficients(self, grad_u: NDArray) -> NDArray:
        """``F D^2F`` at ``Du - phi^0`` restricted to ``phi^1..phi^n``.

        Components lead: ``grad_u`` has shape ``(n, ...)`` and the result
        ``(n, n, ...)``, so each entry is a contiguous grid-shaped array.
        Subclasses override this with closed forms that skip the full jet.
        """
        grad_u = np.asarray(grad_u, dtype=np.float64)
        nu = np.empty(grad_u.shape[1:] + (self.dim + 1,))
        nu[..., 0] = -1.0
        nu[..., 1:] = np.moveaxis(grad_u, 0, -1)
        f, _, d2 = self.jet(nu, 2)
        return np.ascontiguousarray(np.moveaxis(f[..., None, None] * d2[..., 1:, 1:], (-2, -1), (0, 1)))


@dataclass(frozen=True)
class Euclidean(Integrand):
    family = "euclidean"

    def _jet(self, v, order):
        return _radial_power(v, 1, order)

    def graph_coefficients(self, grad_u):
        # delta_ij - u_i u_j / (1 + |Du|^2)
        p = np.asarray(grad_u, dtype=np.float64)
        inv = 1.0 / (1.0 + np.einsum("i...,i...->...", p, p))
        out = np.empty((self.dim,) + p.shape)
        for i in range(self.dim):
            pi = p[i] * inv
            for j in range(i, self.dim):
                out[i, j] = -pi * p[j]
                out[j, i] = out[i, j]
            out[i, i] += 1.0
        return out

@dataclass(frozen=True)
class Ellipsoid(Integrand):
    """``F(v) = sqrt(v^T B v)`` for a symmetric positive definite ``B``."""

    matrix: NDArray = field(default=None)

    family = "ellipsoid"

    def __post_init__(self) -> None:
        super().__post_init__()
        b = np.asarray(self.matrix, dtype=np.float64)
        d = self.dim + 1
        if b.shape != (d, d):
            raise ValueError(f"ellipsoid matrix must be {d}x{d}")
        if not np.allclose(b, b.T, rtol=0, atol=1e-14):
            raise ValueError("ellipsoid matrix must be symmetric")
        if np.linalg.eigvalsh(b).min() <= 0:
            raise ValueError("ellipsoid matrix must be positive definite")
        b = b.copy()
        b.setflags(write=False)
        object.__setattr__(self, "matrix", b)

    def _jet(self, v, order):
        w = v @ self.matrix
        f = np.sqrt(np.einsum("...i,...i->...", v, w))
        out = [f]
        if order >= 1:
            out.append(w / f[..., None])
        if order >= 2:
            ww = w[..., :, None] * w[..., None, :]
            out.append(self.matrix / f[..., None, None] - ww / f[..., None, None] ** 3)
        if order >= 3:
            bb = np.broadcast_to(self.matrix, w.shape + (w.shape[-1],))
            www = w[..., :, None, None] * w[..., None, :, None] * w[..., None, None, :]
            f3 = f[..., None, None, None]
            out.append(-_sym3(bb, w) / f3**3 + 3.0 * www / f3**5)
        return out

    def graph_coefficients(self, grad_u):
        # B_ij - w_i w_j / (v^T B v) with w = (vB)_i, v = (-1, Du)
        p = np.asarray(grad_u, dtype=np.float64)
        b = self.matrix
        w = np.tensordot(b[1:, 1:], p, axes=(1, 0)) - b[1:, 0].reshape((-1,) + (1,) * (p.ndim - 1))
        f2 = b[0, 0] - np.tensordot(b[0, 1:], p, axes=(0, 0)) + np.einsum("i...,i...->...", p, w)
        inv = 1.0 / f2
        out = np.empty((self.dim,) + p.shape)
        for i in range(self.dim):
            wi = w[i] * inv
            for j in range(i, self.dim):
                out[i, j] = b[i + 1, j + 1] - wi * w[j]
                out[j, i] = out[i, j]
        return out

    def params(self) -> dict:
        return {**super().params(), "matrix": self.matrix.tolist()}


@dataclass(frozen=True)
class Perturbed(Integrand):
    """``F(v) = |v| + delta * sum_i v_i^4 / |v|^3``, even in every coordinate."""

    delta: float = 0.0

    family = "perturbed"

    def _jet(self, v, order):
        base = _radial_power(v, 1, order)
        v2 = v * v
        quartic = [np.einsum("...i,...i->...", v2, v2)]
        if order >= 1:
            quartic.append(4.0 * v2 * v)
        if order >= 2:
            d = v.shape[-1]
            diag2 = np.zeros(v.shape + (d,))
            diag2[..., np.arange(d), np.arange(d)] = 12.0 * v2
            quartic.append(diag2)
        if order >= 3:
            d = v.shape[-1]
            diag3 = np.zeros((d, d, d))
            diag3[np.arange(d), np.arange(d), np.arange(d)] = 1.0
            quartic.append(24.0 * v[..., :, None, None] * diag3)
        pert = _product(quartic, _radial_power(v, -3, order))
        return [b + self.delta * g for b, g in zip(base, pert)]

    def graph_coefficients(self, grad_u):
        p = np.asarray(grad_u, dtype=np.float64)
        n = self.dim
        p2 = p * p
        r2 = 1.0 + p2.sum(axis=0)
        quart = 1.0 + (p2 * p2).sum(axis=0)
        inv_r2 = 1.0 / r2
        inv_r = np.sqrt(inv_r2)
        inv_r3 = inv_r * inv_r2
        dq = self.delta * quart * inv_r2
        f = (r2 + dq) * inv_r
        # F D^2F = f * (c_ij p_i p_j + d_i delta_ij)
        c_common = inv_r3 * (15.0 * dq * inv_r2 - 1.0)
        c_quart = -12.0 * self.delta * inv_r3 * inv_r2
        d_common = inv_r - 3.0 * dq * inv_r3
        out = np.empty((n,) + p.shape)
        for i in range(n):
            fpi = f * p[i]
            for j in range(i, n):
                out[i, j] = (c_common + c_quart * (p2[i] + p2[j])) * fpi * p[j]
                out[j, i] = out[i, j]
            out[i, i] += f * (d_common + 12.0 * self.delta * p2[i] * inv_r3)
        return out

    def params(self) -> dict:
        return {**super().params(), "delta": self.delta}


@dataclass(frozen=True)
class OddPerturbed(Integrand):
    """``F(v) = |v| + delta * v0^3 / |v|^2``; breaks the phi^0 reflection symmetry."""

    delta: float = 0.0

    family = "odd_perturbed"

    def _jet(self, v, order):
        d = v.shape[-1]
        base = _radial_power(v, 1, order)
        v0 = v[..., 0]
        cubic = [v0**3]
        if order >= 1:
            g = np.zeros_like(v)
            g[..., 0] = 3.0 * v0**2
            cubic.append(g)
        if order >= 2:
            h = np.zeros(v.shape + (d,))
            h[..., 0, 0] = 6.0 * v0
            cubic.append(h)
        if order >= 3:
            t = np.zeros(v.shape + (d, d))
            t[..., 0, 0, 0] = 6.0
            cubic.append(t)
        pert = _product(cubic, _radial_power(v, -2, order))
        return [b + self.delta * g for b, g in zip(base, pert)]

    def params(self) -> dict:
        return {**super().params(), "delta": self.delta}


def from_config(section: Mapping[str, str]) -> Integrand:
    """Build an integrand from an ``[integrand]`` config section."""
    known = {"family", "dim", "matrix", "delta"}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)}", "[integrand]")
    family = section.get("family", "").strip()
    if family not in FAMILIES:
        raise ConfigError(f"unknown family {family!r}", "[integrand] family")
    try:
        dim = int(section.get("dim", "1"))
    except ValueError as exc:
        raise ConfigError(str(exc), "[integrand] dim") from None
    if dim < 1:
        raise ConfigError("dim must be >= 1", "[integrand] dim")
    if family == "euclidean":
        return Euclidean(dim)
    if family == "ellipsoid":
        raw = section.get("matrix")
        if raw is None:
            raise ConfigError("ellipsoid requires 'matrix'", "[integrand] matrix")
        try:
            vals = [float(x) for x in raw.replace(",", " ").split()]
            mat = np.array(vals).reshape(dim + 1, dim + 1)
            return Ellipsoid(dim, mat)
        except ValueError as exc:
            raise ConfigError(str(exc), "[integrand] matrix") from None
    try:
        delta = float(section.get("delta", "0"))
    except ValueError as exc:
        raise ConfigError(str(exc), "[integrand] delta") from None
    if abs(delta) > PERTURBATION_LIMIT:
        raise ConfigError(f"|delta| must be <= {PERTURBATION_LIMIT}", "[integrand] delta")
    if family == "perturbed":
        return Perturbed(dim, delta)
    return OddPerturbed(dim, delta)


# -- operations -------------------------------------------------------------


def evaluate(F: Integrand, v: ArrayLike) -> NDArray:
    return F.value(v)


def derivative(F: Integrand, v: ArrayLike, order: int) -> NDArray:
    """Analytic ``DF``, ``D^2F`` or ``D^3F`` at ``v``."""
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    return F.jet(v, order)[order]


def hat(F: Integrand, nu: ArrayLike, v: ArrayLike) -> NDArray:
    """Project ``v`` onto the tangent space of the level set through ``nu``."""
    f, df = F.jet(nu, 1)
    nu = np.asarray(nu, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    ratio = np.einsum("...i,...i->...", df, v) / f
    return v - ratio[..., None] * nu


def metric_g(F: Integrand, nu: ArrayLike, p: ArrayLike, q: ArrayLike) -> NDArray:
    """``G_nu(p, q) = F(nu) D^2F|_nu(p, q)``."""
    f, _, d2 = F.jet(nu, 2)
    return f * np.einsum("...ij,...i,...j->...", d2, np.asarray(p, float), np.asarray(q, float))


def metric_matrix(F: Integrand, nu: ArrayLike) -> NDArray:
    """Full ``(d, d)`` matrix of ``G_nu``."""
    f, _, d2 = F.jet(nu, 2)
    return f[..., None, None] * d2


def cartan_q(F: Integrand, nu: ArrayLike, p: ArrayLike, q: ArrayLike, r: ArrayLike) -> NDArray:
    """Cartan tensor ``Q_nu(p, q, r) = F(nu)^2 D^3F|_nu(p, q, r)``."""
    f, _, _, d3 = F.jet(nu, 3)
    p, q, r = (np.asarray(x, dtype=np.float64) for x in (p, q, r))
    return f**2 * np.einsum("...ijk,...i,...j,...k->...", d3, p, q, r)


def d_metric(F: Integrand, nu: ArrayLike) -> NDArray:
    """``D(F D^2F)|_nu`` with the differentiation slot first: ``[c, a, b]``."""
    f, d1, d2, d3 = F.jet(nu, 3)
    return d1[..., :, None, None] * d2[..., None, :, :] + f[..., None, None, None] * d3


def tangent_basis(F: Integrand, nu: ArrayLike) -> NDArray:
    """Euclidean-orthonormal basis of ``ker DF|_nu``, shape ``(..., d, n)``."""
    df = F.grad(nu)
    _, _, vh = np.linalg.svd(df[..., None, :])
    return np.swapaxes(vh[..., 1:, :], -1, -2)


def tangent_metric(F: Integrand, nu: ArrayLike) -> NDArray:
    """``G_nu`` restricted to the level-set tangent space, ``(..., n, n)``."""
    e = tangent_basis(F, nu)
    g = metric_matrix(F, nu)
    return np.swapaxes(e, -1, -2) @ g @ e


# -- finite-difference oracle -------------------------------------------------


def _central_product(F: Integrand, v: NDArray, h: NDArray, order: int) -> NDArray:
    d = v.shape[-1]
    out = np.zeros(v.shape[:-1] + (d,) * order)
    signs = np.array(list(itertools.product((1.0, -1.0), repeat=order)))
    weights = signs.prod(axis=1)
    eye = np.eye(d)
    for idx in itertools.combinations_with_replacement(range(d), order):
        shifts = signs @ eye[list(idx)]
        pts = v[..., None, :] + h[..., None, None] * shifts
        vals = F.value(pts)
        est = (vals @ weights) / (2.0 * h) ** order
        for perm in set(itertools.permutations(idx)):
            out[(Ellipsis,) + perm] = est
    return out


def fd_oracle(F: Integrand, v: ArrayLike, order: int, rel_step: float = 1e-3) -> NDArray:
    """Central-difference derivative of order 1-3 with one Richardson level.

    Uses only ``F.value``; steps are ``h = rel_step * |v|`` and ``h / 2``.
    """
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    v = _as_covector(v, F.dim)
    h = rel_step * np.linalg.norm(v, axis=-1)
    coarse = _central_product(F, v, h, order)
    fine = _central_product(F, v, h / 2.0, order)
    return (4.0 * fine - coarse) / 3.0


# -- structural checks ------------------------------------------------------


@dataclass
class StructureReport:
    homogeneity_err: float
    euler1_err: float
    euler2_err: float
    euler3_err: float
    min_tangent_eigenvalue: float
    symmetry_err: float
    symmetry_identity_err: float
    passes: dict[str, bool]
    samples: int
    seed: int
    tol: float

    @property
    def all_pass(self) -> bool:
        return all(self.passes.values())

    @property
    def symmetric(self) -> bool:
        return self.passes["symmetry"] and self.passes["symmetry_identities"]

    def to_dict(self) -> dict:
        return {
            "homogeneity_err": self.homogeneity_err,
            "euler1_err": self.euler1_err,
            "euler2_err": self.euler2_err,
            "euler3_err": self.euler3_err,
            "min_tangent_eigenvalue": self.min_tangent_eigenvalue,
            "symmetry_err": self.symmetry_err,
            "symmetry_identity_err": self.symmetry_identity_err,
            "passes": dict(self.passes),
            "all_pass": self.all_pass,
            "samples": self.samples,
            "seed": self.seed,
            "tol": self.tol,
        }


def sample_covectors(dim: int, samples: int, rng: np.random.Generator) -> NDArray:
    """Random nonzero covectors with log-uniform magnitude in [e^-1, e]."""
    x = rng.standard_normal((samples, dim + 1))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x * np.exp(rng.uniform(-1.0, 1.0, size=(samples, 1)))


def check_structure(F: Integrand, samples: int = 1000, seed: int = 0, tol: float = 1e-8) -> StructureReport:
    """Sample the homogeneity, Euler, convexity and symmetry identities.

    Residuals are scale-free: the homogeneity residual is relative to
    ``F(v)``; the Euler residuals are degree-zero quantities.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    v = sample_covectors(F.dim, samples, rng)
    f, d1, d2, d3 = F.jet(v, 3)

    hom = 0.0
    for lam in (0.5, 2.0, 10.0):
        hom = max(hom, float(np.max(np.abs(F.value(lam * v) - lam * f) / f)))
    e1 = float(np.max(np.abs(np.einsum("si,si->s", d1, v) - f) / f))
    e2 = float(np.max(np.abs(np.einsum("sij,sj->si", d2, v))))
    dg = d1[:, :, None, None] * d2[:, None, :, :] + f[:, None, None, None] * d3
    e3 = float(np.max(np.abs(np.einsum("scab,sc->sab", dg, v))))
    min_eig = float(np.linalg.eigvalsh(tangent_metric(F, v)).min())

    # covectors p in span{phi^1..phi^n}
    p = v.copy()
    p[:, 0] = 0.0
    p[np.linalg.norm(p, axis=1) < 1e-6, 1] = 1.0
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    plus = p.copy()
    plus[:, 0] = 1.0
    minus = p.copy()
    minus[:, 0] = -1.0
    sym = float(np.max(np.abs(F.value(plus) - F.value(minus))))
    _, g1, g2, g3 = F.jet(p, 3)
    ident = max(
        float(np.max(np.abs(g1[:, 0]))),
        float(np.max(np.abs(g2[:, 0, 1:]))),
        float(np.max(np.abs(g3[:, 0, 1:, 1:]))),
        float(np.max(np.abs(g3[:, 0, 0, 0]))),
    )
    passes = {
        "homogeneity": hom <= tol,
        "euler1": e1 <= tol,
        "euler2": e2 <= tol,
        "euler3": e3 <= tol,
        "convexity": min_eig > tol,
        "symmetry": sym <= tol,
        "symmetry_identities": ident <= tol,
    }
    return StructureReport(hom, e1, e2, e3, min_eig, sym, ident, passes, samples, seed, tol)
