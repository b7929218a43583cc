"""Conditional two-qubit (and single-qubit) dynamics under continuous homodyne
detection of sigma_z^1 +- sigma_z^2.

Basis ordering is |00>, |01>, |10>, |11> with sigma_z|0> = +|0> and
relaxation sigma_- = |0><1|.  With D[O]rho = O rho O^dag - {O^dag O, rho}/2,
a rate ``r`` in front of D[sigma_z] damps single-qubit coherences as
``exp(-2 r t)``.

Every operator except the relaxation jumps is diagonal in this basis, so the
stepping kernels act elementwise on batches of density matrices of shape
``(n_traj, d, d)``.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, TrajectoryError
from .params import SIGN_MODES, EffectiveRates

STABILITY_BOUND = 1e-2
TRACE_FLOOR = 1e-6
SCHEMES = ("kraus", "euler")

SZ = np.array([1.0, -1.0])


def z_diagonals(n_qubits):
    """Diagonals of sigma_z^j on n qubits, shape (n_qubits, 2**n_qubits)."""
    out = []
    for j in range(n_qubits):
        ops = [np.ones(2)] * n_qubits
        ops[j] = SZ
        d = ops[0]
        for o in ops[1:]:
            d = np.kron(d, o)
        out.append(d)
    return np.array(out)


def measured_diagonal(sign_mode="total-spin"):
    z1, z2 = z_diagonals(2)
    if sign_mode == "total-spin":
        return z1 + z2
    if sign_mode == "spin-difference":
        return z1 - z2
    raise ConfigurationError(f"unknown sign_mode {sign_mode!r}")


# --- states ------------------------------------------------------------

def ket(*bits):
    v = np.zeros(2 ** len(bits), dtype=complex)
    v[int("".join(str(b) for b in bits), 2)] = 1
    return v


def projector(v):
    v = np.asarray(v, dtype=complex)
    return np.outer(v, v.conj())


PLUS = np.array([1, 1], dtype=complex) / math.sqrt(2)
PSI_PLUS = (ket(0, 1) + ket(1, 0)) / math.sqrt(2)
PHI_PLUS = (ket(0, 0) + ket(1, 1)) / math.sqrt(2)


def plus_plus():
    """|+>|+>, the standard initial state."""
    return projector(np.kron(PLUS, PLUS))


def check_density_matrix(rho, atol=1e-8):
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1] or rho.shape[0] not in (2, 4):
        raise ConfigurationError(f"density matrix must be 2x2 or 4x4, got shape {rho.shape}")
    if not np.allclose(rho, rho.conj().T, atol=1e-12):
        raise ConfigurationError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1) > 1e-9:
        raise ConfigurationError("density matrix does not have unit trace")
    if np.linalg.eigvalsh(rho).min() < -atol:
        raise ConfigurationError("density matrix is not positive semidefinite")
    return rho


# --- model -------------------------------------------------------------

@dataclass(frozen=True)
class QubitModel:
    """Diagonal dephasing + relaxation + one measured diagonal operator.

    The measured channel is ``sqrt(gamma) * diag(l)`` detected with
    efficiency ``eta``; ``deph[j]`` multiplies D[sigma_z^j] and ``relax``
    multiplies D[sigma_-^j] for every qubit.
    """

    l: np.ndarray
    gamma: float
    eta: float
    deph: tuple
    relax: float = 0.0

    @property
    def n_qubits(self):
        return len(self.deph)

    @property
    def dim(self):
        return 2 ** self.n_qubits

    @property
    def rate_sum(self):
        return self.gamma + sum(self.deph) + self.n_qubits * self.relax

    @classmethod
    def two_qubit(cls, rates: EffectiveRates, sign_mode="total-spin"):
        return cls(l=measured_diagonal(sign_mode), gamma=rates.joint, eta=rates.eta,
                   deph=(rates.dephasing_1, rates.dephasing_2), relax=rates.gamma_relax)

    @classmethod
    def single_qubit(cls, rates: EffectiveRates):
        """sigma_z readout of one node: measured at ``gamma_meas`` with extra
        dephasing from the mechanics, loss and intrinsic T2."""
        return cls(l=SZ.copy(), gamma=rates.gamma_meas, eta=rates.eta,
                   deph=(rates.dephasing_1,), relax=rates.gamma_relax)

    def tables(self):
        d, nq = self.dim, self.n_qubits
        z = z_diagonals(nq)
        excited = (1 - z) / 2
        deph = np.asarray(self.deph)
        zz = np.einsum("j,ja,jb->ab", deph, z, z)
        anti = self.gamma * self.l**2 + deph.sum() + self.relax * excited.sum(axis=0)
        jumps = []
        for j in range(nq):
            src = np.flatnonzero(excited[j])
            dst = src - 2 ** (nq - 1 - j)
            jumps.append((src, dst))
        return dict(d=d, zz=zz, anti=anti, jumps=jumps, ll=np.outer(self.l, self.l),
                    dl2=(self.l[:, None] - self.l[None, :]) ** 2,
                    lsum=self.l[:, None] + self.l[None, :], zz_minus=zz - deph.sum())


@dataclass(frozen=True)
class SmeConfig:
    rates: EffectiveRates
    dt: float
    T: float
    sign_mode: str = "total-spin"
    seed: int = 0
    n_traj: int = 1
    snapshot_every: int = 0
    scheme: str = "kraus"

    def __post_init__(self):
        if self.sign_mode not in SIGN_MODES:
            raise ConfigurationError(f"unknown sign_mode {self.sign_mode!r}")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if not (self.dt > 0 and self.T >= 0):
            raise ConfigurationError("need dt > 0 and T >= 0")
        if self.dt * self.rates.total > STABILITY_BOUND * (1 + 1e-12):
            raise ConfigurationError(
                f"dt * total rate = {self.dt * self.rates.total:.3g} exceeds {STABILITY_BOUND}")
        if self.n_traj < 1:
            raise ConfigurationError("n_traj must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")

    @property
    def n_steps(self):
        return int(math.ceil(self.T / self.dt - 1e-9))

    @property
    def step(self):
        """Actual step size: T split into ``n_steps`` equal intervals."""
        n = self.n_steps
        return self.T / n if n else self.dt

    def snapshot_steps(self):
        n = self.n_steps
        every = self.snapshot_every
        steps = list(range(0, n + 1, every)) if every > 0 else [0]
        if steps[-1] != n:
            steps.append(n)
        return np.array(steps)

    def model(self):
        return QubitModel.two_qubit(self.rates, self.sign_mode)


def default_dt(rates: EffectiveRates, T, safety=0.5):
    """Largest step below ``safety * STABILITY_BOUND / rates.total`` dividing T evenly."""
    target = safety * STABILITY_BOUND / max(rates.total, 1e-300)
    n = max(1, int(math.ceil(T / target)))
    return T / n


# --- random streams ----------------------------------------------------

def stream(seed, traj_index):
    """Counter-based generator owned by one trajectory."""
    ss = np.random.SeedSequence(seed, spawn_key=(int(traj_index),))
    return np.random.Generator(np.random.Philox(ss))


def stream_id(seed, traj_index):
    return f"philox:{seed}:{traj_index}"


def wiener_increments(seed, indices, n_steps, dt):
    out = np.empty((len(indices), n_steps))
    sq = math.sqrt(dt)
    for r, i in enumerate(indices):
        out[r] = stream(seed, i).standard_normal(n_steps) * sq
    return out


# --- kernels -----------------------------------------------------------

def _normalize(new):
    tr = np.einsum("bii->b", new).real
    if tr.min() < TRACE_FLOOR:
        bad = int(np.argmin(tr))
        raise TrajectoryError("trace collapsed before renormalisation", trajectory=bad,
                              trace=float(tr[bad]))
    return new / tr[:, None, None]


def _step_kraus(rho, dW, dt, model, tab):
    """First-order completely positive update:
    rho -> M rho M^dag + dt * (unmonitored jumps), renormalised, with
    M = 1 - dt/2 sum_k c_k^dag c_k + sqrt(eta) c dY."""
    g, eta, l = model.gamma, model.eta, model.l
    pop = np.einsum("bii->bi", rho).real
    expl = pop @ l
    dY = 2 * math.sqrt(eta * g) * expl * dt + dW
    m = 1 - 0.5 * dt * tab["anti"][None, :] + math.sqrt(eta * g) * l[None, :] * dY[:, None]
    new = m[:, :, None] * rho * m[:, None, :]
    new += dt * ((1 - eta) * g * tab["ll"] + tab["zz"]) * rho
    if model.relax:
        for src, dst in tab["jumps"]:
            new[:, dst[:, None], dst[None, :]] += dt * model.relax * rho[:, src[:, None], src[None, :]]
    return _normalize(new), dY


def _step_euler(rho, dW, dt, model, tab):
    """Plain Euler-Maruyama on the normalised nonlinear SME."""
    g, eta, l = model.gamma, model.eta, model.l
    pop = np.einsum("bii->bi", rho).real
    expl = pop @ l
    dY = 2 * math.sqrt(eta * g) * expl * dt + dW
    drift = (-0.5 * g * tab["dl2"] + tab["zz_minus"]) * rho
    if model.relax:
        e = (1 - z_diagonals(model.n_qubits)) / 2
        esum = e.sum(axis=0)
        drift -= 0.5 * model.relax * (esum[:, None] + esum[None, :]) * rho
        for src, dst in tab["jumps"]:
            drift[:, dst[:, None], dst[None, :]] += model.relax * rho[:, src[:, None], src[None, :]]
    noise = (tab["lsum"][None] - 2 * expl[:, None, None]) * rho
    new = rho + dt * drift + math.sqrt(eta * g) * dW[:, None, None] * noise
    new = 0.5 * (new + np.conj(np.swapaxes(new, 1, 2)))
    return _normalize(new), dY


_KERNELS = {"kraus": _step_kraus, "euler": _step_euler}


def step(rho, cfg: SmeConfig, dW):
    """One update of a single state; returns ``(rho_next, I_dt)``."""
    model = cfg.model()
    r, dY = _KERNELS[cfg.scheme](np.asarray(rho, dtype=complex)[None], np.array([float(dW)]),
                                 cfg.step, model, model.tables())
    return r[0], float(dY[0])


def integrate_batch(rho0, model: QubitModel, dW, dt, snapshot_steps, scheme="kraus"):
    """Advance ``len(dW)`` copies of ``rho0`` through the increments ``dW``.

    Returns ``(current, states)`` with ``current`` of shape (B, n_steps) and
    ``states`` of shape (B, n_snapshots, d, d).
    """
    B, n = dW.shape
    kernel = _KERNELS[scheme]
    tab = model.tables()
    rho = np.broadcast_to(np.asarray(rho0, dtype=complex), (B, model.dim, model.dim)).copy()
    current = np.empty((B, n))
    states = np.empty((B, len(snapshot_steps), model.dim, model.dim), dtype=complex)
    snap = {int(s): k for k, s in enumerate(snapshot_steps)}
    if 0 in snap:
        states[:, snap[0]] = rho
    for i in range(n):
        rho, dY = kernel(rho, dW[:, i], dt, model, tab)
        current[:, i] = dY / dt
        k = snap.get(i + 1)
        if k is not None:
            states[:, k] = rho
    return current, states


# --- records -----------------------------------------------------------

@dataclass
class TrajectoryRecord:
    times: np.ndarray
    current: np.ndarray
    J: np.ndarray
    snapshot_times: np.ndarray
    states: np.ndarray
    dW_stream_id: str

    @property
    def final_state(self):
        return self.states[-1]


@dataclass
class Ensemble(Sequence):
    """Batch of trajectories sharing one configuration.

    Arrays are indexed by trajectory first; ``J[:, k]`` is the accumulated
    signal at ``times[k]`` and ``states[:, s]`` the state at
    ``snapshot_times[s]``.
    """

    times: np.ndarray
    current: np.ndarray
    J: np.ndarray
    snapshot_steps: np.ndarray
    states: np.ndarray
    seed: int
    traj_indices: np.ndarray
    config: SmeConfig | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.traj_indices)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        return TrajectoryRecord(
            times=self.times, current=self.current[i], J=self.J[i],
            snapshot_times=self.snapshot_times, states=self.states[i],
            dW_stream_id=stream_id(self.seed, int(self.traj_indices[i])),
        )

    @property
    def snapshot_times(self):
        return self.times[self.snapshot_steps]

    def J_at(self, k):
        """Accumulated signal at snapshot ``k`` for every trajectory."""
        return self.J[:, self.snapshot_steps[k]]

    def mean_state(self, k=-1):
        return self.states[:, k].mean(axis=0)

    @property
    def stream_ids(self):
        return [stream_id(self.seed, int(i)) for i in self.traj_indices]


def accumulate(current, dt):
    J = np.zeros((current.shape[0], current.shape[1] + 1))
    J[:, 1:] = np.cumsum(current * dt, axis=1)
    return J


def _run_chunk(args):
    rho0, model, seed, indices, n, dt, snaps, scheme = args
    dW = wiener_increments(seed, indices, n, dt)
    return integrate_batch(rho0, model, dW, dt, snaps, scheme)


def run_ensemble(rho0, cfg: SmeConfig, *, model: QubitModel | None = None, first_index=0,
                 chunk=512, workers=None) -> Ensemble:
    """Integrate ``cfg.n_traj`` independent trajectories.

    Trajectory ``k`` draws its noise from ``stream(cfg.seed, first_index + k)``,
    so results do not depend on chunking or on the number of workers.
    """
    rho0 = check_density_matrix(rho0)
    model = model or cfg.model()
    if rho0.shape[0] != model.dim:
        raise ConfigurationError("initial state dimension does not match the model")
    n, dt = cfg.n_steps, cfg.step
    snaps = cfg.snapshot_steps()
    indices = np.arange(first_index, first_index + cfg.n_traj)
    jobs = [(rho0, model, cfg.seed, indices[i:i + chunk], n, dt, snaps, cfg.scheme)
            for i in range(0, len(indices), chunk)]
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]
    current = np.concatenate([p[0] for p in parts])
    states = np.concatenate([p[1] for p in parts])
    return Ensemble(times=np.arange(n + 1) * dt, current=current, J=accumulate(current, dt),
                    snapshot_steps=snaps, states=states, seed=cfg.seed,
                    traj_indices=indices, config=cfg)


def run_trajectory(rho0, cfg: SmeConfig, traj_index=0) -> TrajectoryRecord:
    return run_ensemble(rho0, replace(cfg, n_traj=1), first_index=traj_index)[0]


def single_qubit_mode(rho0, rates: EffectiveRates, *, dt, T, seed=0, traj_index=0,
                      snapshot_every=0, scheme="kraus") -> TrajectoryRecord:
    """Trajectory of one qubit read out by a single transducer node."""
    rho0 = check_density_matrix(rho0)
    if rho0.shape != (2, 2):
        raise ConfigurationError("single-qubit mode needs a 2x2 state")
    model = QubitModel.single_qubit(rates)
    if dt * model.rate_sum > STABILITY_BOUND * (1 + 1e-12):
        raise ConfigurationError("dt too large for the single-qubit rates")
    cfg = SmeConfig(rates=EffectiveRates(gamma_meas=0.0), dt=dt, T=T, seed=seed,
                    snapshot_every=snapshot_every, scheme=scheme)
    return run_ensemble(rho0, cfg, model=model, first_index=traj_index)[0]
