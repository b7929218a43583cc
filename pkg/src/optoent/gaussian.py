"""Linear dynamics of a single optomechanical transducer node and the
adiabatic elimination that turns it into an effective qubit dephasing and
measurement channel.

Quadratures are ordered ``(x_opt, p_opt, x_mech, p_mech)`` with
``x = (a + a^dag)/sqrt(2)``, ``p = -i (a - a^dag)/sqrt(2)``.  Covariances use
the symmetrised convention ``Gamma_ij = <{dr_i, dr_j}>`` so the vacuum has
``Gamma = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import ConfigurationError, SolverError
from .params import PhysicalParams, mechanical_dephasing, measurement_rate

SYMPLECTIC = np.kron(np.eye(2), np.array([[0.0, 1.0], [-1.0, 0.0]]))
RESIDUAL_TOL = 1e-9


@dataclass(frozen=True)
class GaussianSystem:
    A: np.ndarray
    N: np.ndarray
    c: np.ndarray
    m: np.ndarray
    s: np.ndarray
    sigma: np.ndarray = SYMPLECTIC

    def is_hurwitz(self) -> bool:
        return bool(np.all(np.linalg.eigvals(self.A).real < 0))

    @property
    def innovation_offset(self):
        return self.sigma @ self.m


@dataclass(frozen=True)
class GaussianState:
    mean: np.ndarray
    cov: np.ndarray

    def physicality_margin(self) -> float:
        """Smallest eigenvalue of ``cov + i sigma`` (>= 0 for a physical state)."""
        return float(np.linalg.eigvalsh(self.cov + 1j * SYMPLECTIC).min())


@dataclass(frozen=True)
class EliminationResult:
    """Coefficients of the effective single-qubit equation.

    ``dephasing_rate`` multiplies D[sigma_z] and is read off the
    double-commutator term; it splits by linearity of the Lyapunov equation
    into the part driven by optical vacuum noise (``backaction_dephasing``)
    and by the thermal mechanical bath (``thermal_dephasing``).  The
    measurement term is H[amplitude * sigma_z] with ``measurement_rate =
    |amplitude|^2``.
    """

    Lambda: np.ndarray
    Q: np.ndarray
    amplitude: complex
    measurement_rate: float
    dephasing_rate: float
    thermal_dephasing: float
    backaction_dephasing: float
    anticommutator_coefficient: float


def build_system(p: PhysicalParams, phi: float = math.pi / 2) -> GaussianSystem:
    k, g, w, gm = p.kappa, p.g, p.omega_m, p.gamma
    A = np.array([
        [-k / 2, 0.0, 0.0, 0.0],
        [0.0, -k / 2, -2 * g, 0.0],
        [0.0, 0.0, -gm / 2, w],
        [-2 * g, 0.0, -w, -gm / 2],
    ])
    th = gm * (p.n_bar + 0.5)
    N = np.diag([k / 2, k / 2, th, th])
    # homodyne current I = sqrt(2 kappa) <x cos(phi) - p sin(phi)> + dW
    amp = math.sqrt(k / 2)
    cs = np.array([math.cos(phi), math.sin(phi)])
    cs[np.abs(cs) < 1e-15] = 0.0  # e.g. cos(pi/2); subnormals upset CARE balancing
    c = amp * np.array([cs[0], -cs[1], 0.0, 0.0])
    m = amp * np.array([cs[1], cs[0], 0.0, 0.0])
    s = np.array([0.0, 0.0, math.sqrt(2) * p.chi, 0.0])
    return GaussianSystem(A=A, N=N, c=c, m=m, s=s)


def lyapunov_residual(sys: GaussianSystem, G) -> float:
    R = sys.A @ G + G @ sys.A.T + 2 * sys.N
    return float(np.linalg.norm(R) / np.linalg.norm(2 * sys.N))


def riccati_rhs(sys: GaussianSystem, G):
    v = G @ sys.c - sys.innovation_offset
    return sys.A @ G + G @ sys.A.T + 2 * sys.N - 2 * np.outer(v, v)


def riccati_residual(sys: GaussianSystem, G) -> float:
    return float(np.linalg.norm(riccati_rhs(sys, G)) / np.linalg.norm(2 * sys.N))


def _require_hurwitz(sys: GaussianSystem):
    if not sys.is_hurwitz():
        eig = np.linalg.eigvals(sys.A)
        raise SolverError("drift matrix is not Hurwitz; no steady state", eigenvalues=eig)


def _sym(G):
    return 0.5 * (G + G.T)


def solve_lyapunov_steady(sys: GaussianSystem) -> GaussianState:
    """Unconditional steady state, A G + G A^T + 2N = 0."""
    _require_hurwitz(sys)
    G = _sym(sla.solve_continuous_lyapunov(sys.A, -2 * sys.N))
    res = lyapunov_residual(sys, G)
    if res > RESIDUAL_TOL:
        raise SolverError("Lyapunov residual above tolerance", residual=res)
    return GaussianState(mean=np.zeros(4), cov=G)


def _riccati_pieces(sys: GaussianSystem):
    # expand the rank-one term: standard filtering form
    #   At G + G At^T - G (2 c c^T) G + Qt = 0
    sm = sys.innovation_offset
    At = sys.A + 2 * np.outer(sm, sys.c)
    Qt = 2 * sys.N - 2 * np.outer(sm, sm)
    return At, Qt


def solve_riccati_steady(sys: GaussianSystem, *, max_newton=50) -> GaussianState:
    """Conditional steady state of the Riccati equation.

    An initial stabilising solution comes from the Hamiltonian-pencil CARE
    solver; Newton-Kleinman iterations then polish the residual.
    """
    _require_hurwitz(sys)
    At, Qt = _riccati_pieces(sys)
    if not np.any(sys.c):
        G = _sym(sla.solve_continuous_lyapunov(At, -Qt))
        return GaussianState(mean=np.zeros(4), cov=G)
    try:
        G = sla.solve_continuous_are(At.T, sys.c[:, None], Qt, np.array([[0.5]]))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"CARE solver failed: {exc}") from exc
    G = _sym(G)
    C2 = 2 * np.outer(sys.c, sys.c)
    res = riccati_residual(sys, G)
    for _ in range(max_newton):
        if res <= RESIDUAL_TOL:
            break
        Acl = At - G @ C2
        R = At @ G + G @ At.T - G @ C2 @ G + Qt
        G_new = _sym(G + sla.solve_continuous_lyapunov(Acl, -R))
        res_new = riccati_residual(sys, G_new)
        if not res_new < res:
            break
        G, res = G_new, res_new
    if res > RESIDUAL_TOL:
        raise SolverError("Riccati iteration did not converge", residual=res)
    return GaussianState(mean=np.zeros(4), cov=G)


def propagate_covariance(sys: GaussianSystem, G0: GaussianState, dt: float, T: float, *,
                         conditional: bool = True) -> GaussianState:
    """Integrate the (conditional) covariance equation with fixed-step RK4.

    The mean follows the deterministic drift ``A``.  ``dt`` must resolve the
    fastest drift eigenvalue: ``dt <= 0.1 / max|eig(A)|``.
    """
    lim = 0.1 / np.abs(np.linalg.eigvals(sys.A)).max()
    if dt > lim * (1 + 1e-12):
        raise ConfigurationError(f"dt={dt:g} exceeds stability bound {lim:g}")
    if T < 0:
        raise ConfigurationError("T must be non-negative")
    n = int(round(T / dt))
    if n == 0:
        return G0

    def f(G):
        if conditional:
            return riccati_rhs(sys, G)
        return sys.A @ G + G @ sys.A.T + 2 * sys.N

    G = np.array(G0.cov, dtype=float)
    x = np.array(G0.mean, dtype=float)
    h = T / n
    Ph = sla.expm(sys.A * h)
    scale = max(1.0, np.linalg.norm(G))
    for i in range(n):
        k1 = f(G)
        k2 = f(G + 0.5 * h * k1)
        k3 = f(G + 0.5 * h * k2)
        k4 = f(G + h * k3)
        G = _sym(G + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4))
        x = Ph @ x
        nrm = np.linalg.norm(G)
        if not np.isfinite(nrm) or nrm > 1e8 * scale:
            raise SolverError("covariance integration diverged", step=i, norm=nrm)
    return GaussianState(mean=x, cov=G)


def eliminate(sys: GaussianSystem, Gc: GaussianState, Gu: GaussianState) -> EliminationResult:
    """Effective qubit coefficients from the transducer steady states."""
    A, sig, c = sys.A, sys.sigma, sys.c
    try:
        Ainv = np.linalg.inv(A)
        v = Gc.cov @ c - sys.innovation_offset
        Q = A - 2 * np.outer(v, c)
        Lam = (Gc.cov - 1j * sig) @ np.linalg.solve(Q.T, c) + Ainv @ v
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"singular matrix in elimination: {exc}") from exc
    s = sys.s
    amp = complex(1j * Lam @ s)
    # s_i = s_i sigma_z, so [s_i,[s_k,rho]] = -2 s_i s_k D[sigma_z] rho
    dephasing = float(-s @ Ainv @ Gu.cov @ s)
    th = np.diag(np.diag(sys.N) * np.array([0, 0, 1, 1]))
    G_th = sla.solve_continuous_lyapunov(A, -2 * th)
    thermal = float(-s @ Ainv @ G_th @ s)
    return EliminationResult(
        Lambda=Lam,
        Q=Q,
        amplitude=amp,
        measurement_rate=abs(amp) ** 2,
        dephasing_rate=dephasing,
        thermal_dephasing=thermal,
        backaction_dephasing=dephasing - thermal,
        # multiplies [sigma_z, {sigma_z, rho}], which vanishes identically
        anticommutator_coefficient=float(s @ Ainv @ sig @ s),
    )


def eliminate_params(p: PhysicalParams, phi: float = math.pi / 2):
    """Full pipeline: build, solve both steady states, eliminate."""
    sys = build_system(p, phi)
    Gu = solve_lyapunov_steady(sys)
    Gc = solve_riccati_steady(sys)
    return sys, Gc, Gu, eliminate(sys, Gc, Gu)


def closed_form_deltas(p: PhysicalParams, res: EliminationResult) -> dict:
    """Relative deviations of the eliminated rates from the closed forms."""
    gm, gd = measurement_rate(p), mechanical_dephasing(p)

    def rel(x, ref):
        # undefined against a vanishing closed form
        return x / ref - 1 if ref > 0 else None

    return {"thermal_dephasing": rel(res.thermal_dephasing, gd),
            "measurement_rate": rel(res.measurement_rate, gm),
            "dephasing_rate": rel(res.dephasing_rate, gm + gd)}


def diagnostic_report(p: PhysicalParams, sys: GaussianSystem, Gc: GaussianState,
                      Gu: GaussianState, res: EliminationResult) -> dict:
    """JSON-serialisable dump of one elimination run.

    Keys: ``ordering`` (quadrature labels), ``A``, ``N``, ``c``, ``m``, ``s``
    (lists), ``Gamma_c``/``Gamma_u`` (4x4 lists), ``residuals``
    (``riccati``, ``lyapunov``), ``physicality`` (min eigenvalue of
    ``Gamma + i sigma`` for each), ``Lambda`` (pairs ``[re, im]``),
    ``rates`` (rad/s) and ``closed_form_delta`` (relative deviations).
    """
    return {
        "ordering": ["x_opt", "p_opt", "x_mech", "p_mech"],
        "A": sys.A.tolist(), "N": sys.N.tolist(),
        "c": sys.c.tolist(), "m": sys.m.tolist(), "s": sys.s.tolist(),
        "Gamma_c": Gc.cov.tolist(), "Gamma_u": Gu.cov.tolist(),
        "residuals": {"riccati": riccati_residual(sys, Gc.cov),
                      "lyapunov": lyapunov_residual(sys, Gu.cov)},
        "physicality": {"conditional": Gc.physicality_margin(),
                        "unconditional": Gu.physicality_margin()},
        "Lambda": [[z.real, z.imag] for z in res.Lambda],
        "rates": {
            "measurement_rate": res.measurement_rate,
            "dephasing_rate": res.dephasing_rate,
            "thermal_dephasing": res.thermal_dephasing,
            "backaction_dephasing": res.backaction_dephasing,
            "closed_form_measurement_rate": measurement_rate(p),
            "closed_form_mechanical_dephasing": mechanical_dephasing(p),
        },
        "closed_form_delta": closed_form_deltas(p, res),
    }
