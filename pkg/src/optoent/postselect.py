"""Postselection on the accumulated homodyne signal and concurrence statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import ConfigurationError
from .sme import Ensemble

SY = np.array([[0, -1j], [1j, 0]])
YY = np.kron(SY, SY)

# populations of |+>|+> in the S = +1, 0, -1 subspaces
PLUS_PLUS_WEIGHTS = (0.25, 0.5, 0.25)


def concurrence(rho, atol=1e-8):
    """Wootters concurrence of a two-qubit state (or a stack of states).

    The lambdas are the square roots of the eigenvalues of
    sqrt(rho) rho~ sqrt(rho) with rho~ = (Y x Y) rho* (Y x Y).  They are
    taken as the singular values of sqrt(rho) (Y x Y) sqrt(rho)*, which
    avoids squaring and keeps pure states accurate to rounding.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape[-2:] != (4, 4):
        raise ConfigurationError("concurrence needs 4x4 density matrices")
    rho = 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))
    w, v = np.linalg.eigh(rho)
    if w.min() < -atol:
        raise ConfigurationError(f"state is not positive semidefinite (min eigenvalue {w.min():.3g})")
    sq = np.sqrt(np.clip(w, 0, None))
    root = (v * sq[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))
    lam = np.linalg.svd(root @ YY @ np.conj(root), compute_uv=False)
    c = lam[..., 0] - lam[..., 1] - lam[..., 2] - lam[..., 3]
    c = np.clip(c, 0.0, 1.0)
    return float(c) if c.ndim == 0 else c


@dataclass(frozen=True)
class PostselectionConfig:
    """Selection rule ``|J(T)| <= nu``.

    ``nu`` is either given or derived from ``p_succ_target``: with
    ``calibration="model"`` from the three-Gaussian signal model
    (:func:`calibrate_cutoff`), with ``"empirical"`` as the smallest cutoff
    that keeps at least that fraction of the ensemble.
    """

    T: float
    nu: float | None = None
    p_succ_target: float | None = None
    calibration: str = "model"

    def __post_init__(self):
        if (self.nu is None) == (self.p_succ_target is None):
            raise ConfigurationError("give exactly one of nu and p_succ_target")
        if self.nu is not None and not self.nu >= 0:
            raise ConfigurationError("nu must be >= 0")
        if self.p_succ_target is not None and not 0 < self.p_succ_target <= 1:
            raise ConfigurationError("p_succ_target must lie in (0, 1]")
        if self.calibration not in ("model", "empirical"):
            raise ConfigurationError(f"unknown calibration {self.calibration!r}")

    @property
    def mode(self):
        return "fixed-cutoff" if self.nu is not None else "target-success-probability"


@dataclass
class PostselectionReport:
    T: float
    nu: float
    kept_fraction: float
    n_kept: int
    n_total: int
    mean_state: np.ndarray | None
    mean_concurrence: float
    mean_concurrence_se: float
    concurrence_of_mean: float
    empty: bool = False

    def as_dict(self):
        d = dict(self.__dict__)
        if self.mean_state is not None:
            d["mean_state"] = {"re": self.mean_state.real.tolist(), "im": self.mean_state.imag.tolist()}
        d["nu"] = _finite_or_str(self.nu)
        return d


def _finite_or_str(x):
    return x if math.isfinite(x) else "inf"


def mixture_success(nu, mean_unit, sd, weights=PLUS_PLUS_WEIGHTS):
    """P(|J| <= nu) for J drawn from the mixture sum_S w_S N(S * mean_unit, sd^2),
    S = +1, 0, -1."""
    if math.isinf(nu):
        return float(sum(weights))
    if sd == 0:
        return float(sum(w for w, S in zip(weights, (1, 0, -1)) if abs(S * mean_unit) <= nu))
    p = 0.0
    for w, S in zip(weights, (1, 0, -1)):
        mu = S * mean_unit
        p += w * (ndtr((nu - mu) / sd) - ndtr((-nu - mu) / sd))
    return float(p)


def solve_mixture_cutoff(target, mean_unit, sd, weights=PLUS_PLUS_WEIGHTS, tol=1e-12):
    """Smallest nu with mixture_success(nu) = target, by bisection."""
    if not 0 < target <= 1:
        raise ConfigurationError("target success probability must lie in (0, 1]")
    total = sum(weights)
    if target > total * (1 + 1e-15):
        raise ConfigurationError("target success probability unreachable")
    if target == 1:
        return math.inf
    if sd == 0:
        return 0.0
    lo, hi = 0.0, abs(mean_unit) + sd
    while mixture_success(hi, mean_unit, sd, weights) < target:
        hi *= 2
        if hi > 1e6 * (abs(mean_unit) + sd):
            raise ConfigurationError("target success probability unreachable")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mixture_success(mid, mean_unit, sd, weights) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            break
    r_lo = abs(mixture_success(lo, mean_unit, sd, weights) - target)
    r_hi = abs(mixture_success(hi, mean_unit, sd, weights) - target)
    return lo if r_lo < r_hi else hi


def signal_mean_unit(Gamma_eff, T, eta=1.0, tau=1.0):
    """Mean of J(T) per unit of S_z: 4 sqrt(tau eta Gamma) T."""
    return 4 * math.sqrt(tau * eta * Gamma_eff) * T


def calibrate_cutoff(p_succ_target, Gamma_eff, T, eta=1.0, tau=1.0, weights=PLUS_PLUS_WEIGHTS):
    """Cutoff on |J(T)| that the Gaussian signal model expects to keep a
    fraction ``p_succ_target`` of runs started in |+>|+>.

    ``Gamma_eff`` is the single-node measurement rate; the detected
    amplitude is ``sqrt(tau * eta * Gamma_eff)``.  Returns ``inf`` for a
    target of one and ``0`` at ``T = 0`` where J vanishes identically.
    """
    if T < 0:
        raise ConfigurationError("T must be non-negative")
    return solve_mixture_cutoff(p_succ_target, signal_mean_unit(Gamma_eff, T, eta, tau),
                                math.sqrt(T), weights)


def _snapshot_index(ens: Ensemble, T):
    times = ens.snapshot_times
    k = int(np.argmin(np.abs(times - T)))
    dt = ens.times[1] - ens.times[0] if len(ens.times) > 1 else 0.0
    if abs(times[k] - T) > 0.5 * dt + 1e-15 * max(1.0, abs(T)):
        raise ConfigurationError(f"no state snapshot at T={T:g}")
    return k


def empirical_cutoff(J, p_succ_target):
    """Smallest ``nu`` with at least ``ceil(p * n)`` samples in ``|J| <= nu``."""
    a = np.sort(np.abs(np.asarray(J)))
    k = max(1, math.ceil(p_succ_target * len(a) - 1e-9))
    return float(a[k - 1])


def resolve_cutoff(cfg: PostselectionConfig, ens: Ensemble, k=None):
    if cfg.nu is not None:
        return cfg.nu
    if cfg.calibration == "empirical":
        if k is None:
            k = _snapshot_index(ens, cfg.T)
        return empirical_cutoff(ens.J_at(k), cfg.p_succ_target)
    r = ens.config.rates
    return calibrate_cutoff(cfg.p_succ_target, r.gamma_meas, cfg.T, r.eta, r.tau)


def select(ens: Ensemble, cfg: PostselectionConfig, concurrences=None) -> PostselectionReport:
    """Keep trajectories with |J(T)| <= nu and aggregate their states.

    ``concurrences`` may hold precomputed per-trajectory values at the
    snapshot for ``cfg.T``.
    """
    k = _snapshot_index(ens, cfg.T)
    nu = resolve_cutoff(cfg, ens, k)
    J = ens.J_at(k)
    keep = np.abs(J) <= nu
    n_kept, n_total = int(keep.sum()), len(J)
    if n_kept == 0:
        return PostselectionReport(T=float(ens.snapshot_times[k]), nu=nu, kept_fraction=0.0,
                                   n_kept=0, n_total=n_total, mean_state=None,
                                   mean_concurrence=0.0, mean_concurrence_se=0.0,
                                   concurrence_of_mean=0.0, empty=True)
    states = ens.states[keep, k]
    if concurrences is None:
        cs = concurrence(states)
    else:
        cs = np.asarray(concurrences)[keep]
    cs = np.atleast_1d(cs)
    mean_state = states.mean(axis=0)
    se = float(cs.std(ddof=1) / math.sqrt(n_kept)) if n_kept > 1 else 0.0
    return PostselectionReport(
        T=float(ens.snapshot_times[k]), nu=nu, kept_fraction=n_kept / n_total,
        n_kept=n_kept, n_total=n_total, mean_state=mean_state,
        mean_concurrence=float(cs.mean()), mean_concurrence_se=se,
        concurrence_of_mean=concurrence(mean_state),
    )


CURVE_COLUMNS = ("T", "C_mean", "C_mean_se", "C_of_mean", "kept_fraction", "nu", "origin")


def concurrence_vs_time(ens: Ensemble, *, p_succ_target=None, nu=None, calibration="model"):
    """Selection at every snapshot time; one row per time (see CURVE_COLUMNS)."""
    conc = concurrence(ens.states)
    conc = conc.reshape(ens.states.shape[:2])
    rows = []
    for k, T in enumerate(ens.snapshot_times):
        cfg = PostselectionConfig(T=float(T), nu=nu, p_succ_target=p_succ_target,
                                  calibration=calibration)
        rep = select(ens, cfg, concurrences=conc[:, k])
        rows.append({
            "T": rep.T, "C_mean": rep.mean_concurrence, "C_mean_se": rep.mean_concurrence_se,
            "C_of_mean": rep.concurrence_of_mean, "kept_fraction": rep.kept_fraction,
            "nu": rep.nu, "origin": "trajectory",
        })
    return rows


def optimize_over_time(curve, key="C_mean"):
    """``(T_opt, C_opt)`` maximising ``key``; ties go to the earliest time."""
    if not curve:
        raise ConfigurationError("empty curve")
    rows = sorted(curve, key=lambda r: r["T"])
    best = rows[0]
    for r in rows[1:]:
        if r[key] > best[key]:
            best = r
    return best["T"], best[key]


def optimum_row(curve, key="C_mean"):
    T, _ = optimize_over_time(curve, key)
    return next(r for r in curve if r["T"] == T)
