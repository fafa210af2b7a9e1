"""Per-frequency realization of the linear solution operator.

On the frequency line z_k = rho + i xi_k the first-order system becomes a
family of sparse solves

    (z_k M(z_k) + A) u_hat_k = g_hat_k,
    M(z) = diag(eps(z) per edge, mu per face),

followed by the inverse transform.  When the Hermitian part of z M(z) is
bounded below by c on the line (the scan certificate), the solve inherits
the norm bound |u|_rho <= (1/c)|g|_rho, the operator is causal, and
solutions for data living in two weighted spaces at once coincide.

Factorizations are reused across right-hand sides at a fixed frequency; the
frequency loop dominates runtime and the fixed-point solvers call the same
factors every iteration.  A singular frequency is never skipped or
interpolated over: material-law poles on the solve line violate the solution
theory and must surface as FrequencySingular.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import FrequencySingular
from .materials import PiecewiseMaterial, line_certificate
from .operators import OperatorBundle
from .signals import (
    SpectralSignal,
    TimeGrid,
    WeightedSignal,
    fourier_laplace,
    inverse_fourier_laplace,
    weighted_norm,
)

COND_LIMIT = 1e14
FACTOR_CACHE_DOF_LIMIT = 1500   # cache LU factors below this state size


def _is_hermitian_spectrum(ghat: np.ndarray, tol: float = 1e-12) -> bool:
    n = ghat.shape[0]
    mirror = ghat[(-np.arange(n)) % n]
    scale = np.abs(ghat).max()
    if scale == 0.0:
        return True
    return bool(np.abs(ghat - mirror.conj()).max() <= tol * scale)


def _hermitian_project(uhat: np.ndarray) -> np.ndarray:
    n = uhat.shape[0]
    mirror = uhat[(-np.arange(n)) % n]
    return 0.5 * (uhat + mirror.conj())


@dataclass(frozen=True)
class LinearProblem:
    """One linear forward or stability solve: operators, law, weight, data."""

    bundle: OperatorBundle
    material: PiecewiseMaterial
    rho: float
    rhs: WeightedSignal
    check_wraparound: bool = True

    def __post_init__(self):
        if self.rhs.state_dim != self.bundle.n_state:
            raise ValueError(
                f"rhs state_dim {self.rhs.state_dim} != bundle dofs {self.bundle.n_state}"
            )
        if self.rhs.rho != self.rho:
            raise ValueError("rhs weight differs from the solve weight")


@dataclass
class SolveReport:
    """Certificate-facing record of one linear solve."""

    rho: float
    c_min_line: float
    norm_ratio: float
    max_rel_residual: float
    max_growth: float
    wraparound_residual: float
    causality_margin: float | None = None

    def bound_ok(self, slack: float = 0.02) -> bool:
        if self.c_min_line <= 0:
            return True  # no certificate claimed on this line
        return self.norm_ratio <= (1.0 + slack) / self.c_min_line

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "c_min_line": self.c_min_line,
            "norm_ratio": self.norm_ratio,
            "max_rel_residual": self.max_rel_residual,
            "max_growth": self.max_growth,
            "wraparound_residual": self.wraparound_residual,
            "causality_margin": self.causality_margin,
        }


class SolutionOperator:
    """g -> (z M(z) + A)^{-1} g per frequency, with factor reuse.

    Instances are bound to (bundle, material, rho, grid).  apply() maps a
    spectral right-hand side array (n_freq, n_state) to the solution array;
    solve() goes signal to signal.
    """

    def __init__(self, bundle: OperatorBundle, material: PiecewiseMaterial,
                 rho: float, grid: TimeGrid, certificate_required: bool = True):
        self.bundle = bundle
        self.material = material
        self.rho = rho
        self.grid = grid
        self.z = rho + 1j * grid.xi
        self.c_min = line_certificate(material, rho, grid.xi)
        if certificate_required and self.c_min <= 0.0:
            raise ValueError(
                f"no accretivity certificate on the line Re z = {rho} "
                f"(c_min = {self.c_min:.3e}); pass certificate_required=False to override"
            )
        emask = bundle.edge_region_mask()
        fmask = bundle.face_region_mask()
        self._mu = np.where(fmask, material.mu1, material.mu2)
        self._emask = emask
        self._cache: dict = {}
        self._use_cache = bundle.n_state <= FACTOR_CACHE_DOF_LIMIT
        self._A = bundle.A.tocsc()

    def _matrix(self, k: int) -> sparse.csc_matrix:
        z = self.z[k]
        eps = self.material.eps_values(z, self._emask)
        diag = np.concatenate([z * eps, z * self._mu])
        return (sparse.diags(diag) + self._A).tocsc()

    def _factor(self, k: int):
        if self._use_cache and k in self._cache:
            return self._cache[k]
        mat = self._matrix(k)
        try:
            lu = splu(mat)
        except RuntimeError as exc:
            raise FrequencySingular(complex(self.z[k]), np.inf) from exc
        if self._use_cache:
            self._cache[k] = (lu, mat)
            return self._cache[k]
        return lu, mat

    def apply_spectral(self, ghat: np.ndarray, collect: dict | None = None) -> np.ndarray:
        """Solve every frequency; ghat and result have shape (n_freq, n_state).

        When the input spectrum is conjugate-symmetric (real time data), the
        output is projected back onto that symmetry class: the law satisfies
        M(conj z) = conj M(z), so the true solution lives there, and the
        projection removes the self-conjugate Nyquist bin's asymmetry, which
        the e^{rho t} unweighting would otherwise amplify.
        """
        n_freq = ghat.shape[0]
        out = np.empty_like(ghat, dtype=np.complex128)
        max_rel_res = 0.0
        max_growth = 0.0
        for k in range(n_freq):
            g = ghat[k]
            if not np.any(g):
                out[k] = 0.0
                continue
            lu, mat = self._factor(k)
            u = lu.solve(g)
            gn = np.linalg.norm(g)
            un = np.linalg.norm(u)
            res = np.linalg.norm(mat @ u - g) / gn
            if res > 1e-10:
                # one step of iterative refinement before giving up
                u = u + lu.solve(g - mat @ u)
                res = np.linalg.norm(mat @ u - g) / gn
            growth = un / gn
            scale = abs(self.z[k]) * max(abs(self.material.mu1), abs(self.material.mu2), 1.0)
            if not np.isfinite(un) or growth * scale > COND_LIMIT:
                raise FrequencySingular(complex(self.z[k]), growth * scale)
            max_rel_res = max(max_rel_res, res)
            max_growth = max(max_growth, growth)
            out[k] = u
        if collect is not None:
            collect["max_rel_residual"] = max_rel_res
            collect["max_growth"] = max_growth
        if _is_hermitian_spectrum(ghat):
            out = _hermitian_project(out)
        return out

    def apply(self, g: WeightedSignal, collect: dict | None = None) -> WeightedSignal:
        G = fourier_laplace(g, check=False)
        U = self.apply_spectral(G.values, collect)
        return inverse_fourier_laplace(SpectralSignal(self.grid, self.rho, U, g.wrap_tol))


def solve_linear(problem: LinearProblem, certificate_required: bool = True):
    """Solve the first-order system; returns (u, SolveReport)."""
    g = problem.rhs
    if problem.check_wraparound:
        g.check_wraparound()
    op = SolutionOperator(problem.bundle, problem.material, problem.rho, g.grid,
                          certificate_required=certificate_required)
    stats: dict = {}
    u = op.apply(g, collect=stats)
    gn = weighted_norm(g)
    un = weighted_norm(u)
    report = SolveReport(
        rho=problem.rho,
        c_min_line=op.c_min,
        norm_ratio=(un / gn if gn > 0 else 0.0),
        max_rel_residual=stats.get("max_rel_residual", 0.0),
        max_growth=stats.get("max_growth", 0.0),
        wraparound_residual=u.wraparound_measure(),
    )
    return u, report


def verify_causality(problem: LinearProblem, a: float) -> float:
    """Pre-support mass of the response to data supported in [a, inf).

    Returns max |u(t)| over t < a relative to the peak; the solution operator
    is causal, so the margin measures only windowing artifacts.
    """
    u, _ = solve_linear(problem)
    mags = np.abs(u.values).max(axis=1)
    peak = mags.max()
    if peak == 0.0:
        return 0.0
    before = mags[u.times < a - 0.5 * u.grid.dt]
    return float(before.max() / peak) if before.size else 0.0


def verify_rho_independence(problem: LinearProblem, rho1: float, rho2: float,
                            t_hi: float | None = None) -> float:
    """Relative L2 gap between solves at two admissible weights.

    The data must genuinely live in both weighted spaces on the window;
    compactly supported data does.  The gap is plain (unweighted) L2 on the
    common window up to t_hi.  The final stretch of the window is excluded by
    default: there the unweighting e^{rho t} amplifies the representation
    floor past any fixed tolerance, so no reconstruction is trustworthy in
    unweighted terms (the weighted solutions themselves agree).
    """
    g = problem.rhs
    g1 = WeightedSignal(g.grid, rho1, g.values, g.wrap_tol)
    g2 = WeightedSignal(g.grid, rho2, g.values, g.wrap_tol)
    u1, _ = solve_linear(LinearProblem(problem.bundle, problem.material, rho1, g1))
    u2, _ = solve_linear(LinearProblem(problem.bundle, problem.material, rho2, g2))
    if t_hi is None:
        t_hi = g.grid.t_end - 0.25 * (g.grid.t_end - g.grid.t_start)
    keep = g.times <= t_hi
    num = np.linalg.norm(u1.values[keep] - u2.values[keep])
    den = max(np.linalg.norm(u1.values[keep]), np.linalg.norm(u2.values[keep]))
    return float(num / den) if den > 0 else 0.0


def verify_time_regularity(problem: LinearProblem) -> float:
    """Gap between solve(d/dt g) and d/dt solve(g), both spectral derivatives."""
    g = problem.rhs
    G = fourier_laplace(g, check=False)
    op = SolutionOperator(problem.bundle, problem.material, problem.rho, g.grid)
    zcol = op.z[:, None]
    u_of_dg = op.apply_spectral(G.values * zcol)
    du = op.apply_spectral(G.values) * zcol
    num = np.linalg.norm(u_of_dg - du)
    den = max(np.linalg.norm(du), 1e-300)
    return float(num / den)


@dataclass(frozen=True)
class SecondOrderProblem:
    """E-field wave form: (z^2 eps(z) + C mu^{-1} C0) E_hat = g_hat.

    The right-hand side is z Phi_hat + C mu^{-1} Psi_hat, so Phi, Psi must be
    once differentiable in time on the grid for the data to be admissible.
    """

    bundle: OperatorBundle
    material: PiecewiseMaterial
    rho: float
    phi: WeightedSignal
    psi: WeightedSignal


def second_order_solve(problem: SecondOrderProblem,
                       certificate_required: bool = True) -> WeightedSignal:
    """Solve the E-field second-order formulation per frequency."""
    b = problem.bundle
    m = problem.material
    fmask = b.face_region_mask()
    mu = np.where(fmask, m.mu1, m.mu2)
    K = (b.C @ sparse.diags(1.0 / mu) @ b.C0).tocsc()
    emask = b.edge_region_mask()

    Phi = fourier_laplace(problem.phi, check=False)
    Psi = fourier_laplace(problem.psi, check=False)
    z = problem.rho + 1j * problem.phi.grid.xi
    Cmat = b.C @ sparse.diags(1.0 / mu)

    out = np.empty((len(z), b.n_edges), dtype=np.complex128)
    for k, zk in enumerate(z):
        ghat = zk * Phi.values[k] + Cmat @ Psi.values[k]
        if not np.any(ghat):
            out[k] = 0.0
            continue
        eps = m.eps_values(zk, emask)
        mat = (sparse.diags(zk * zk * eps) + K).tocsc()
        try:
            lu = splu(mat)
        except RuntimeError as exc:
            raise FrequencySingular(complex(zk), np.inf) from exc
        u = lu.solve(ghat)
        if not np.all(np.isfinite(u)):
            raise FrequencySingular(complex(zk), np.inf)
        out[k] = u
    if _is_hermitian_spectrum(Phi.values) and _is_hermitian_spectrum(Psi.values):
        out = _hermitian_project(out)
    spec = SpectralSignal(problem.phi.grid, problem.rho, out, problem.phi.wrap_tol)
    return inverse_fourier_laplace(spec)


def stack_rhs(bundle: OperatorBundle, phi: WeightedSignal, psi: WeightedSignal) -> WeightedSignal:
    """Combine (Phi, Psi) block signals into one (E,H)-state right-hand side."""
    phi._check_compatible(psi)
    if phi.state_dim != bundle.n_edges or psi.state_dim != bundle.n_faces:
        raise ValueError("Phi/Psi dimensions do not match the bundle")
    return phi.with_values(np.concatenate([phi.values, psi.values], axis=1))
