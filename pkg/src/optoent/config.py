"""Experiment configuration: strict JSON schema, resolution and hashing.

A config file is a JSON object validated by :class:`ExperimentConfig`.
Unknown keys are rejected at every level.  :func:`resolve` turns a config
into a fully explicit one (preset values expanded, time steps fixed) that
is written verbatim into every manifest; resolving a resolved config is
the identity, so a manifest can be fed back through ``--config``.

Units are SI throughout: rates in rad/s, times in s.  Reduced rate sets
(``rate_sets``) are dimensionless multiples of the joint measurement rate.
"""

from __future__ import annotations

import hashlib
import json
import math
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigurationError
from .params import (ChannelParams, EffectiveRates, PhysicalParams, derive_rates, get_preset)
from .sme import STABILITY_BOUND

CONFIG_SCHEMA = "optoent.config/1"
MANIFEST_SCHEMA = "optoent.manifest/1"

Command = Literal["rates", "eliminate", "simulate", "postselect", "analytic",
                  "figure3", "figure5", "figure6", "sweep"]
PHYSICAL_FIELDS = ("chi", "omega_m", "gamma", "n_bar", "g", "kappa", "T1", "T2",
                   "g0", "lambda_opt", "m_eff", "x_zpf")


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class NodeSpec(Strict):
    """Transducer node: a preset, optionally overridden, or explicit values."""

    preset: str | None = None
    overrides: dict[str, float] = Field(default_factory=dict)
    physical: dict[str, float | None] | None = None
    t2_convention: Literal["rate", "coherence"] = "rate"

    @field_validator("overrides", "physical")
    @classmethod
    def _known_fields(cls, v):
        if v:
            bad = set(v) - set(PHYSICAL_FIELDS)
            if bad:
                raise ValueError(f"unknown physical parameter(s) {sorted(bad)}")
        return v

    @model_validator(mode="after")
    def _one_source(self):
        if self.preset is None and self.physical is None:
            raise ValueError("node needs a preset or explicit physical values")
        return self

    def params(self) -> PhysicalParams:
        if self.physical is not None:
            vals = dict(self.physical)
        else:
            vals = {k: getattr(get_preset(self.preset).physical(), k) for k in PHYSICAL_FIELDS}
        vals.update(self.overrides)
        return PhysicalParams(**vals)


class ChannelSpec(Strict):
    tau: float = 1.0
    eta: float = 1.0
    phi: float = 1.5707963267948966

    def params(self, sign_mode="total-spin", **changes) -> ChannelParams:
        d = dict(tau=self.tau, eta=self.eta, phi=self.phi, sign_mode=sign_mode)
        d.update(changes)
        return ChannelParams(**d)


class RateSet(Strict):
    """Reduced rates in units of the joint measurement rate Gamma."""

    name: str
    gamma_minus: float = 0.0
    gamma_1: float = 0.0
    gamma_2: float = 0.0
    eta: float = 1.0
    Gamma: float = 1.0
    p_succ: list[float] | None = None

    def rates(self) -> EffectiveRates:
        return EffectiveRates.normalized(self.Gamma, self.gamma_minus, self.gamma_1,
                                         self.gamma_2, self.eta)


MAX_STEPS = 5_000_000
# commands that never integrate in time and so need no step size
STATIC_COMMANDS = ("rates", "eliminate")


class SimulationSpec(Strict):
    """Trajectory settings.  ``T`` defaults to five measurement times."""

    T: float | None = None
    dt: float | None = None
    dt_safety: float = 0.5
    snapshot_interval: float | None = None
    n_traj: int = 2000
    scheme: Literal["kraus", "euler"] = "kraus"
    sign_modes: list[Literal["total-spin", "spin-difference"]] = ["total-spin"]
    initial_state: Literal["plus-plus"] = "plus-plus"
    workers: int = 1

    @model_validator(mode="after")
    def _positive(self):
        if self.T is not None and not self.T > 0:
            raise ValueError("simulation.T must be > 0")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("simulation.dt must be > 0")
        if not 0 < self.dt_safety <= 1:
            raise ValueError("simulation.dt_safety must lie in (0, 1]")
        if self.n_traj < 1 or self.workers < 1:
            raise ValueError("n_traj and workers must be >= 1")
        return self


class PostselectionSpec(Strict):
    p_succ: list[float] = [0.1]
    nu: float | None = None
    T: float | None = None
    trajectory_calibration: Literal["model", "empirical"] = "empirical"
    analytic_calibration: Literal["mixture", "exact"] = "exact"

    @field_validator("p_succ")
    @classmethod
    def _in_unit(cls, v):
        if not v or any(not 0 < p <= 1 for p in v):
            raise ValueError("p_succ values must lie in (0, 1]")
        return v


class SweepSpec(Strict):
    tau: list[float] = [1.0]
    eta: list[float] = [1.0]
    g_over_kappa: list[float] = []


class PanelSpec(Strict):
    """One figure panel.

    ``kind="curve"`` emits concurrence against measurement time,
    ``"optimum"`` the time-optimised concurrence for every (tau, eta) pair.
    Panels either name reduced ``rate_sets`` or use the config's node with
    the listed transmissions and efficiencies.
    """

    name: str
    kind: Literal["curve", "optimum"] = "curve"
    rate_sets: list[str] = []
    tau: list[float] = [1.0]
    eta: list[float] = [1.0]
    p_succ: list[float] = [0.1]
    sign_modes: list[Literal["total-spin", "spin-difference"]] = ["total-spin"]
    analytic: bool = True

    @field_validator("p_succ", "tau", "eta")
    @classmethod
    def _in_unit(cls, v):
        if not v or any(not 0 < x <= 1 for x in v):
            raise ValueError("p_succ, tau and eta values must lie in (0, 1]")
        return v


class ExperimentConfig(Strict):
    schema_: Literal["optoent.config/1"] = Field(CONFIG_SCHEMA, alias="schema")
    command: Command
    description: str = ""
    seed: int = 0
    node: NodeSpec | None = None
    presets: list[str] = []
    channel: ChannelSpec = ChannelSpec()
    rate_sets: list[RateSet] = []
    simulation: SimulationSpec = SimulationSpec()
    postselection: PostselectionSpec = PostselectionSpec()
    sweep: SweepSpec = SweepSpec()
    panels: list[PanelSpec] = []
    resolved: bool = False

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    @field_validator("seed")
    @classmethod
    def _seed(cls, v):
        if not 0 <= v < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        return v

    def to_json_dict(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)

    def canonical(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a config document, or the ``config`` block of a manifest."""
    if not isinstance(doc, dict):
        raise ConfigurationError("config must be a JSON object")
    if doc.get("schema") == MANIFEST_SCHEMA:
        doc = doc["config"]
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigurationError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return parse_config(doc)


def resolve(cfg: ExperimentConfig) -> ExperimentConfig:
    """Make every implicit choice explicit; idempotent."""
    if cfg.resolved:
        return cfg
    upd = {"resolved": True}
    if cfg.node is not None:
        p = cfg.node.params()
        upd["node"] = cfg.node.model_copy(update={
            "overrides": {}, "physical": {k: getattr(p, k) for k in PHYSICAL_FIELDS}})
    if cfg.command in STATIC_COMMANDS:
        return cfg.model_copy(update=upd)
    sim = cfg.simulation
    if sim.T is None:
        sim = sim.model_copy(update={"T": 5.0 / _slowest_joint_rate(cfg)})
    if sim.snapshot_interval is None:
        sim = sim.model_copy(update={"snapshot_interval": sim.T / 20})
    if sim.dt is None:
        sim = sim.model_copy(update={"dt": _resolve_dt(cfg, sim)})
    upd["simulation"] = sim
    ps = cfg.postselection
    if ps.T is None:
        upd["postselection"] = ps.model_copy(update={"T": sim.T})
    return cfg.model_copy(update=upd)


def _slowest_joint_rate(cfg: ExperimentConfig) -> float:
    rates = [rs.rates().joint for rs in cfg.rate_sets]
    if cfg.node is not None:
        p = cfg.node.params()
        rates.append(derive_rates(p, cfg.channel.params(), t2_convention=cfg.node.t2_convention).joint)
    rates = [r for r in rates if r > 0]
    return min(rates) if rates else 1.0


def _resolve_dt(cfg: ExperimentConfig, sim: SimulationSpec) -> float:
    """Step that suits every rate set the command will integrate."""
    totals = [rs.rates().total for rs in cfg.rate_sets]
    if cfg.node is not None:
        p = cfg.node.params()
        taus = {cfg.channel.tau, *cfg.sweep.tau}
        for panel in cfg.panels:
            taus.update(panel.tau)
        for tau in sorted(taus):
            totals.append(derive_rates(p, cfg.channel.params(tau=tau),
                                       t2_convention=cfg.node.t2_convention).total)
    if not totals:
        totals = [1.0]
    m = round(sim.T / sim.snapshot_interval)
    if m < 1 or abs(m * sim.snapshot_interval - sim.T) > 1e-9 * sim.T:
        raise ConfigurationError("simulation.T must be a whole multiple of snapshot_interval")
    per_snap = math.ceil(sim.snapshot_interval * max(totals) / (sim.dt_safety * STABILITY_BOUND))
    if m * per_snap > MAX_STEPS:
        raise ConfigurationError(
            f"{m * per_snap} time steps needed; shorten simulation.T (limit {MAX_STEPS})")
    return sim.T / (m * per_snap)
