"""Closed-form solution of the assembled swing system.

The homogeneous part is z_G = Phi u(t) where u stacks exponentials of the
real eigenvalues of T and exponentially-enveloped cosine/sine pairs of the
complex ones; du/dt = D u with D the real block-diagonal spectrum matrix.
Phi must satisfy the Sylvester equation Phi D - T Phi = 0, and because D
carries the eigenvalues of T the usual Bartels-Stewart reduction is not
applicable (the eigen-spaces coincide): the solution space is instead the
null space of (I kron T - D^T kron I), revealed by a rank-revealing QR
factorization. The initial condition picks the combination coefficients by
least squares, and an affine offset (-L^-1 l; 0; -Lt^-1 lt) turns the
homogeneous solution into the particular one.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import EigenError, EmptyBasisError, NoAsymptoteError

EXP_CLIP = 700.0  # exponent at which e^x is declared divergent


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues of T arranged as a real block-diagonal generator."""
    lam_real: np.ndarray     # (n_re,) real eigenvalues, ascending
    lam_pairs: np.ndarray    # (n_pair, 2) columns (re, im>0), sorted
    d: np.ndarray            # block-diagonal generator, du/dt = d @ u

    @property
    def dim(self):
        return self.lam_real.size + 2 * self.lam_pairs.shape[0]

    def eigenvalues(self):
        """Full complex multiset in block order."""
        out = list(self.lam_real.astype(complex))
        for re, im in self.lam_pairs:
            out.extend([complex(re, im), complex(re, -im)])
        return np.array(out)

    @property
    def max_real_part(self):
        parts = []
        if self.lam_real.size:
            parts.append(self.lam_real.max())
        if self.lam_pairs.size:
            parts.append(self.lam_pairs[:, 0].max())
        return float(max(parts))

    def basis_functions(self, tau):
        """u(tau) and a divergence flag; exponents clip at +-EXP_CLIP."""
        u, div = self.basis_functions_many(np.array([tau]))
        return u[:, 0], bool(div[0])

    def basis_functions_many(self, taus):
        """Columns u(tau) for an array of offsets; vectorized."""
        taus = np.asarray(taus, float)
        nr = self.lam_real.size
        u = np.empty((self.dim, taus.size))
        expo_r = np.outer(self.lam_real, taus)
        div = np.any(expo_r > EXP_CLIP, axis=0) if nr else np.zeros(taus.size, bool)
        u[:nr] = np.exp(np.clip(expo_r, -EXP_CLIP, EXP_CLIP))
        if self.lam_pairs.size:
            expo_p = np.outer(self.lam_pairs[:, 0], taus)
            div |= np.any(expo_p > EXP_CLIP, axis=0)
            env = np.exp(np.clip(expo_p, -EXP_CLIP, EXP_CLIP))
            ang = np.outer(self.lam_pairs[:, 1], taus)
            u[nr::2] = env * np.cos(ang)
            u[nr + 1::2] = env * np.sin(ang)
        return u, div


def real_block_spectrum(t_mat: np.ndarray) -> Spectrum:
    """Eigen-decompose a real square matrix into the block form.

    Real eigenvalues land on a diagonal block; each conjugate pair becomes
    a 2x2 rotation-scaled block [[re, -im], [im, re]]. The eigenvalue
    multiset of the result equals that of the input.
    """
    if not np.all(np.isfinite(t_mat)):
        raise EigenError("matrix contains non-finite entries")
    try:
        lam = np.linalg.eigvals(t_mat)
    except np.linalg.LinAlgError as exc:
        raise EigenError(f"eigenvalue iteration failed: {exc}") from None

    reals, pairs = [], []
    used = np.zeros(lam.size, bool)
    for i, v in enumerate(lam):
        if used[i]:
            continue
        if v.imag == 0.0:
            reals.append(v.real)
            used[i] = True
            continue
        # LAPACK emits exact conjugate pairs; find the partner robustly
        partner = None
        for j in range(i + 1, lam.size):
            if not used[j] and lam[j] == v.conjugate():
                partner = j
                break
        if partner is None:
            scale = max(1.0, abs(v))
            cand = [j for j in range(lam.size) if not used[j] and j != i
                    and abs(lam[j] - v.conjugate()) < 1e-9 * scale]
            if not cand:
                raise EigenError(f"unpaired complex eigenvalue {v}")
            partner = cand[0]
        used[i] = used[partner] = True
        pairs.append((v.real, abs(v.imag)))

    lam_real = np.sort(np.array(reals))
    lam_pairs = np.array(sorted(pairs)) if pairs else np.zeros((0, 2))

    n = lam.size
    d = np.zeros((n, n))
    nr = lam_real.size
    d[:nr, :nr] = np.diag(lam_real)
    for p, (re, im) in enumerate(lam_pairs):
        i0 = nr + 2 * p
        d[i0, i0] = re
        d[i0, i0 + 1] = -im
        d[i0 + 1, i0] = im
        d[i0 + 1, i0 + 1] = re
    return Spectrum(lam_real=lam_real, lam_pairs=lam_pairs, d=d)


@dataclass(frozen=True)
class BasisSet:
    """Matrices spanning the solutions of Psi D - T Psi = 0."""
    psi: tuple               # matrices, unit Frobenius norm each
    rank_tol: float
    residuals: tuple         # ||Psi D - T Psi||_F per member

    def __len__(self):
        return len(self.psi)


def sylvester_basis(t_mat: np.ndarray, spectrum: Spectrum,
                    rank_tol: float = 1e-10) -> BasisSet:
    """Span the null space of (I kron T - D^T kron I).

    A pivoted QR of the operator's transpose exposes the rank; the trailing
    orthonormal columns reshape (column-major) into the basis matrices.
    For a simple spectrum the count equals the state dimension; repeated
    eigenvalues enlarge it and every direction is kept.
    """
    d = spectrum.d
    n = t_mat.shape[0]
    kron_op = np.kron(np.eye(n), t_mat) - np.kron(d.T, np.eye(n))
    q, r, _ = scipy.linalg.qr(kron_op.T, pivoting=True)
    diag = np.abs(np.diag(r))
    ref = diag[0] if diag.size and diag[0] > 0 else 1.0
    rank = int(np.sum(diag > rank_tol * ref))
    if rank >= n * n:
        raise EmptyBasisError("empty Sylvester null space at the configured "
                              f"rank tolerance {rank_tol:g}")
    t_norm = np.linalg.norm(t_mat, "fro")
    psi, residuals = [], []
    for col in range(rank, n * n):
        mat = q[:, col].reshape(n, n, order="F")
        res = np.linalg.norm(mat @ d - t_mat @ mat, "fro")
        if res <= 1e-10 * max(t_norm, 1.0) * np.linalg.norm(mat, "fro"):
            psi.append(mat)
            residuals.append(float(res))
        else:
            warnings.warn(f"discarding spurious null-space direction "
                          f"(residual {res:.2e})", stacklevel=2)
    if not psi:
        raise EmptyBasisError("no null-space direction passed the residual check")
    return BasisSet(psi=tuple(psi), rank_tol=rank_tol, residuals=tuple(residuals))


@dataclass(frozen=True)
class AnalyticSolution:
    """Everything needed to evaluate the closed-form trajectory."""
    spectrum: Spectrum
    basis: BasisSet
    beta: np.ndarray
    phi: np.ndarray            # sum(beta_l Psi_l), full coefficient matrix
    theta: np.ndarray          # top 2NI rows of phi
    w_offset: np.ndarray       # -L^-1 l
    wt_offset: np.ndarray      # -Lt^-1 lt
    t_origin: float
    fit_residual: float
    vmap: object               # VoltageMap for bus-voltage evaluation
    ni: int
    nd: int
    offset_exact: bool

    @property
    def n(self):
        return self.phi.shape[0]

    def offset_vector(self):
        z = np.zeros(self.n)
        z[:2 * self.ni] = self.w_offset
        if self.nd:
            z[4 * self.ni:] = self.wt_offset
        return z

    def theta_norm(self):
        return float(np.linalg.norm(self.theta, "fro"))

    def _source_perm(self):
        ni, nd = self.ni, self.nd
        return np.concatenate([np.arange(ni), 4 * ni + np.arange(nd),
                               ni + np.arange(ni), 4 * ni + nd + np.arange(nd)])


@dataclass(frozen=True)
class EvalPoint:
    w: np.ndarray
    dw: np.ndarray
    wtilde: np.ndarray
    v_k: np.ndarray            # real stacked (2NK,)
    v_m: np.ndarray
    divergent: bool


def fit_initial_conditions(basis: BasisSet, spectrum: Spectrum,
                           z0: np.ndarray, system, vmap,
                           t_origin: float = 0.0) -> AnalyticSolution:
    """Pick combination coefficients to meet the initial state.

    Solves min_beta || [xi_1 ... xi_K] beta - target ||_2 with
    xi_l = Psi_l u(0) and target (w0 + L^-1 l; dw0; -Lt wt0 - lt). A
    rank-deficient stack falls back to the minimum-norm solution with a
    warning.
    """
    ni, nd = system.ni, system.nd
    w0 = z0[:2 * ni]
    dw0 = z0[2 * ni:4 * ni]
    wt0 = z0[4 * ni:]

    offset_exact = True
    try:
        w_off, wt_off = system.offsets()
        bad = not np.all(np.isfinite(w_off)) or (
            np.max(np.abs(system.l_mat @ w_off + system.l_vec))
            > 1e-8 * (1.0 + np.max(np.abs(system.l_vec))))
    except np.linalg.LinAlgError:
        bad = True
    if bad:
        offset_exact = False
        w_off = -np.linalg.lstsq(system.l_mat, system.l_vec, rcond=None)[0]
        wt_off = (-np.linalg.lstsq(system.lt_mat, system.lt_vec, rcond=None)[0]
                  if nd else np.zeros(0))
        warnings.warn("singular L: constant offset taken in the minimum-norm "
                      "sense (asymptote unreliable)", stacklevel=2)

    # third block: the homogeneous part of wtilde itself (wt0 - offset);
    # fitting the first-derivative expression there instead would hand the
    # load block a wrong initial value whenever it starts off-equilibrium
    target = np.concatenate([w0 - w_off, dw0, wt0 - wt_off])
    u0, _ = spectrum.basis_functions(0.0)
    xi = np.column_stack([psi @ u0 for psi in basis.psi])
    beta, _, rank, _ = np.linalg.lstsq(xi, target, rcond=None)
    if rank < xi.shape[1]:
        warnings.warn(f"rank-deficient coefficient stack (rank {rank} of "
                      f"{xi.shape[1]}): minimum-norm fit", stacklevel=2)
    phi = np.einsum("l,lij->ij", beta, np.stack(basis.psi))
    resid = float(np.linalg.norm(xi @ beta - target))
    return AnalyticSolution(spectrum=spectrum, basis=basis, beta=beta,
                            phi=phi, theta=phi[:2 * ni].copy(),
                            w_offset=w_off, wt_offset=wt_off,
                            t_origin=t_origin, fit_residual=resid,
                            vmap=vmap, ni=ni, nd=nd, offset_exact=offset_exact)


def solve_system(system, z0: np.ndarray, vmap, t_origin: float = 0.0,
                 rank_tol: float = 1e-10) -> AnalyticSolution:
    """spectrum -> basis -> fit, in one call."""
    spec = real_block_spectrum(system.t)
    basis = sylvester_basis(system.t, spec, rank_tol)
    return fit_initial_conditions(basis, spec, z0, system, vmap, t_origin)


def evaluate(sol: AnalyticSolution, t: float) -> EvalPoint:
    """Evaluate the trajectory at absolute time t >= t_origin."""
    tau = t - sol.t_origin
    if tau < -1e-12:
        raise ValueError(f"t={t} precedes the solution origin {sol.t_origin}")
    u, divergent = sol.spectrum.basis_functions(max(tau, 0.0))
    z = sol.phi @ u + sol.offset_vector()
    ni = sol.ni
    w = z[:2 * ni]
    dw = z[2 * ni:4 * ni]
    wt = z[4 * ni:]
    w_src = z[sol._source_perm()]
    v_k, v_m = sol.vmap.voltages(w_src)
    return EvalPoint(w=w, dw=dw, wtilde=wt, v_k=v_k, v_m=v_m,
                     divergent=divergent)


def evaluate_many(sol: AnalyticSolution, ts: np.ndarray):
    """Vectorized evaluation; returns (Z, V_K, V_M, divergent_mask).

    Z has one state column per time sample; voltages are real stacked.
    """
    taus = np.asarray(ts, float) - sol.t_origin
    if np.any(taus < -1e-12):
        raise ValueError("a sample precedes the solution origin")
    u_mat, div = sol.spectrum.basis_functions_many(np.maximum(taus, 0.0))
    z = sol.phi @ u_mat + sol.offset_vector()[:, None]
    w_src = z[sol._source_perm(), :]
    v_k = sol.vmap.h_k @ w_src + sol.vmap.v_k_off[:, None]
    v_m = sol.vmap.h_m @ w_src + sol.vmap.v_m_off[:, None]
    return z, v_k, v_m, div


def asymptote(sol: AnalyticSolution, system):
    """Long-time limit (w_inf, v_K_inf, v_M_inf); needs a strictly stable
    spectrum and an exactly invertible L."""
    if sol.spectrum.max_real_part >= 0.0:
        raise NoAsymptoteError(
            f"no asymptote: max Re(lambda) = {sol.spectrum.max_real_part:.3e} >= 0")
    if not sol.offset_exact:
        raise NoAsymptoteError("no asymptote: singular L flagged during fit")
    w_inf = sol.w_offset
    nd = sol.nd
    w_src = np.concatenate([w_inf[:sol.ni], sol.wt_offset[:nd],
                            w_inf[sol.ni:], sol.wt_offset[nd:]])
    v_k, v_m = sol.vmap.voltages(w_src)
    return w_inf, v_k, v_m
