"""Experiment pipelines behind the command-line front end.

Every pipeline takes a resolved :class:`~optoent.config.ExperimentConfig`
and returns a :class:`RunResult` made of plain tables, so that writing
files stays in :mod:`optoent.cli`.  Time columns are in seconds for node
sources and in units of ``1/Gamma`` for reduced rate sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .analytic import analytic_curve
from .config import ExperimentConfig, PanelSpec
from .errors import ConfigurationError
from .gaussian import diagnostic_report, eliminate_params
from .params import (EffectiveRates, cooperativity, derive_rates, driving_power,
                     force_sensitivity, load_presets, measurement_time, mechanical_dephasing,
                     measurement_rate, per_2pi)
from .postselect import PostselectionConfig, concurrence, concurrence_vs_time, select
from .sme import SmeConfig, plus_plus, run_ensemble, stream_id

CURVE_FIELDS = ("T", "C_mean", "C_mean_se", "C_of_mean", "kept_fraction", "nu")


@dataclass
class Table:
    name: str
    columns: tuple
    rows: list = field(default_factory=list)

    def records(self):
        return [dict(zip(self.columns, r)) for r in self.rows]


@dataclass
class RunResult:
    tables: list
    streams: list = field(default_factory=list)
    report: dict = field(default_factory=dict)

    def table(self, name) -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)


# --- rates and elimination ---------------------------------------------

def _rel(value, ref):
    if value is None or ref is None or ref == 0:
        return None
    return value / ref - 1


def _optional(fn, p):
    try:
        return fn(p)
    except ConfigurationError:
        return None


def run_rates(cfg: ExperimentConfig) -> RunResult:
    """Derived rates of each preset next to the tabulated values."""
    catalog = load_presets()
    if cfg.presets:
        unknown = [n for n in cfg.presets if n not in catalog]
        if unknown:
            raise ConfigurationError(f"unknown preset(s) {unknown}; available: {sorted(catalog)}")
        sources = [(n, catalog[n].physical(), catalog[n].table) for n in cfg.presets]
    elif cfg.node is not None:
        name = cfg.node.preset or "custom"
        table = catalog[name].table if name in catalog else {}
        sources = [(name, cfg.node.params(), table)]
    else:
        raise ConfigurationError("rates needs a preset")
    t2 = cfg.node.t2_convention if cfg.node is not None else "rate"
    ch = cfg.channel.params()
    eff_cols = tuple(EffectiveRates.__dataclass_fields__)
    cols = ("preset", "Gamma_meas_2pi_Hz", "Gamma_meas_table_2pi_Hz", "Gamma_meas_rel_delta",
            "C", "C_table", "C_rel_delta", "Gamma_mech_2pi_Hz", "tau_meas_s",
            "P_W", "P_table_W", "P_rel_delta", "S_F_N_per_rtHz", "S_F_table_N_per_rtHz",
            "S_F_rel_delta") + tuple(f"eff_{c}" for c in eff_cols)
    rows = []
    for name, p, tab in sources:
        gm = per_2pi(measurement_rate(p))
        C = _optional(cooperativity, p)
        P = _optional(driving_power, p)
        SF = _optional(force_sensitivity, p)
        eff = derive_rates(p, ch, t2_convention=t2).as_dict()
        gm_t, C_t, P_t, SF_t = (tab.get(k) for k in ("Gamma_meas/2pi", "C", "P", "S_F"))
        rows.append((name, gm, gm_t, _rel(gm, gm_t), C, C_t, _rel(C, C_t),
                     per_2pi(mechanical_dephasing(p)), measurement_time(p),
                     P, P_t, _rel(P, P_t), SF, SF_t, _rel(SF, SF_t))
                    + tuple(eff[c] for c in eff_cols))
    return RunResult(tables=[Table("rates", cols, rows)])


def run_eliminate(cfg: ExperimentConfig) -> RunResult:
    """Numerical elimination at the nominal point and along a g/kappa sweep."""
    if cfg.node is None:
        raise ConfigurationError("eliminate needs a node")
    p = cfg.node.params()
    ratios = [p.g / p.kappa] + [r for r in cfg.sweep.g_over_kappa]
    cols = ("g_over_kappa", "Gamma_meas_numeric", "Gamma_meas_closed", "Gamma_meas_rel_delta",
            "dephasing_numeric", "dephasing_closed", "dephasing_rel_delta",
            "thermal_numeric", "Gamma_mech_closed", "thermal_rel_delta",
            "backaction_numeric", "riccati_residual", "lyapunov_residual",
            "physicality_conditional", "physicality_unconditional")
    rows, report = [], {}
    for i, r in enumerate(ratios):
        pr = p if i == 0 else p.replace(g=r * p.kappa)
        sys, Gc, Gu, res = eliminate_params(pr, cfg.channel.phi)
        diag = diagnostic_report(pr, sys, Gc, Gu, res)
        if i == 0:
            report = diag
        gm, gd = measurement_rate(pr), mechanical_dephasing(pr)
        d = diag["closed_form_delta"]
        rows.append((r, res.measurement_rate, gm, d["measurement_rate"],
                     res.dephasing_rate, gm + gd, d["dephasing_rate"],
                     res.thermal_dephasing, gd, d["thermal_dephasing"],
                     res.backaction_dephasing, diag["residuals"]["riccati"],
                     diag["residuals"]["lyapunov"], diag["physicality"]["conditional"],
                     diag["physicality"]["unconditional"]))
    return RunResult(tables=[Table("elimination", cols, rows)], report={"nominal": report})


# --- ensembles -----------------------------------------------------------

@dataclass(frozen=True)
class Source:
    name: str
    rates: EffectiveRates
    tau: float
    eta: float


def _rate_set_sources(cfg: ExperimentConfig, names=None):
    by_name = {rs.name: rs for rs in cfg.rate_sets}
    if names is None:
        names = list(by_name)
    missing = [n for n in names if n not in by_name]
    if missing:
        raise ConfigurationError(f"unknown rate set(s) {missing}")
    return [Source(n, by_name[n].rates(), 1.0, by_name[n].eta) for n in names]


def _node_source(cfg: ExperimentConfig, tau, eta):
    if cfg.node is None:
        raise ConfigurationError("this command needs a node or rate_sets")
    p = cfg.node.params()
    r = derive_rates(p, cfg.channel.params(tau=tau, eta=eta), t2_convention=cfg.node.t2_convention)
    return Source(cfg.node.preset or "custom", r, tau, eta)


def _sources(cfg: ExperimentConfig):
    if cfg.rate_sets:
        return _rate_set_sources(cfg)
    return [_node_source(cfg, cfg.channel.tau, cfg.channel.eta)]


def _sme_config(cfg: ExperimentConfig, rates, sign_mode) -> SmeConfig:
    sim = cfg.simulation
    every = max(1, round(sim.snapshot_interval / sim.dt))
    return SmeConfig(rates=rates, dt=sim.dt, T=sim.T, sign_mode=sign_mode, seed=cfg.seed,
                     n_traj=sim.n_traj, snapshot_every=every, scheme=sim.scheme)


def _ensemble(cfg: ExperimentConfig, src: Source, sign_mode):
    ens = run_ensemble(plus_plus(), _sme_config(cfg, src.rates, sign_mode),
                       workers=cfg.simulation.workers)
    n = len(ens)
    stream = {"source": src.name, "tau": src.tau, "eta": src.eta, "sign_mode": sign_mode,
              "generator": "philox", "seed": cfg.seed,
              "first": stream_id(cfg.seed, int(ens.traj_indices[0])),
              "last": stream_id(cfg.seed, int(ens.traj_indices[n - 1])), "n_traj": n}
    return ens, stream


def _snapshot_grid(cfg: ExperimentConfig):
    sim = cfg.simulation
    m = round(sim.T / sim.snapshot_interval)
    return np.linspace(0.0, sim.T, m + 1)


def _curve_rows(prefix, curve):
    return [prefix + tuple(r[k] for k in CURVE_FIELDS) for r in curve]


def run_simulate(cfg: ExperimentConfig) -> RunResult:
    """Raw trajectory output: signal, concurrence and populations at every snapshot."""
    cols = ("source", "sign_mode", "traj", "stream_id", "T", "J", "concurrence",
            "p00", "p01", "p10", "p11")
    rows, streams = [], []
    for src in _sources(cfg):
        for mode in cfg.simulation.sign_modes:
            ens, st = _ensemble(cfg, src, mode)
            streams.append(st)
            conc = concurrence(ens.states).reshape(ens.states.shape[:2])
            pops = np.real(np.einsum("nkii->nki", ens.states))
            times = ens.snapshot_times
            for i in range(len(ens)):
                sid = stream_id(ens.seed, int(ens.traj_indices[i]))
                for k, T in enumerate(times):
                    rows.append((src.name, mode, int(ens.traj_indices[i]), sid, float(T),
                                 float(ens.J[i, ens.snapshot_steps[k]]), float(conc[i, k]))
                                + tuple(float(x) for x in pops[i, k]))
    return RunResult(tables=[Table("trajectories", cols, rows)], streams=streams)


def run_postselect(cfg: ExperimentConfig) -> RunResult:
    """Postselected concurrence against time plus one report at ``postselection.T``."""
    ps = cfg.postselection
    curve_cols = ("source", "sign_mode", "p_succ") + CURVE_FIELDS
    sel_cols = ("source", "sign_mode", "p_succ", "T", "nu", "kept_fraction", "n_kept",
                "n_total", "mean_concurrence", "mean_concurrence_se", "concurrence_of_mean")
    curve_rows, sel_rows, streams = [], [], []
    targets = [None] if ps.nu is not None else ps.p_succ
    for src in _sources(cfg):
        for mode in cfg.simulation.sign_modes:
            ens, st = _ensemble(cfg, src, mode)
            streams.append(st)
            for P in targets:
                curve = concurrence_vs_time(ens, p_succ_target=P, nu=ps.nu,
                                            calibration=ps.trajectory_calibration)
                curve_rows += _curve_rows((src.name, mode, P), curve)
                rep = select(ens, PostselectionConfig(T=ps.T, nu=ps.nu, p_succ_target=P,
                                                      calibration=ps.trajectory_calibration))
                sel_rows.append((src.name, mode, P, rep.T, rep.nu, rep.kept_fraction, rep.n_kept,
                                 rep.n_total, rep.mean_concurrence, rep.mean_concurrence_se,
                                 rep.concurrence_of_mean))
    return RunResult(tables=[Table("curve", curve_cols, curve_rows),
                             Table("selection", sel_cols, sel_rows)], streams=streams)


def run_analytic(cfg: ExperimentConfig) -> RunResult:
    """Trajectory-free postselected concurrence on the snapshot grid."""
    ps = cfg.postselection
    if ps.nu is not None:
        raise ConfigurationError("the analytic model is calibrated by success probability; set p_succ")
    cols = ("source", "sign_mode", "p_succ") + CURVE_FIELDS
    rows = []
    grid = _snapshot_grid(cfg)
    for src in _sources(cfg):
        for mode in cfg.simulation.sign_modes:
            for P in ps.p_succ:
                curve = analytic_curve(plus_plus(), src.rates, P, grid, mode,
                                       calibration=ps.analytic_calibration)
                rows += _curve_rows((src.name, mode, P), curve)
    return RunResult(tables=[Table("analytic", cols, rows)])


# --- figure panels and sweeps -------------------------------------------

PANEL_CURVE_COLUMNS = ("panel", "source", "tau", "eta", "sign_mode", "p_succ", "origin") + CURVE_FIELDS
PANEL_OPTIMUM_COLUMNS = ("panel", "source", "tau", "eta", "sign_mode", "p_succ", "origin",
                         "T_opt", "C_opt", "C_opt_se", "kept_fraction")


def _panel_sources(cfg: ExperimentConfig, panel: PanelSpec):
    if panel.rate_sets:
        return _rate_set_sources(cfg, panel.rate_sets)
    return [_node_source(cfg, tau, eta) for tau in panel.tau for eta in panel.eta]


def _best(curve):
    rows = sorted(curve, key=lambda r: r["T"])
    best = rows[0]
    for r in rows[1:]:
        if r["C_mean"] > best["C_mean"]:
            best = r
    return best


def run_panels(cfg: ExperimentConfig, panels=None) -> RunResult:
    """Evaluate figure panels; each trajectory ensemble is simulated once.

    Ensembles are keyed by (source, tau, eta, sign mode) and shared between
    panels and success probabilities.  All ensembles use the master seed,
    so curves at different parameters are driven by the same noise
    realisations.
    """
    panels = list(panels if panels is not None else cfg.panels)
    if not panels:
        raise ConfigurationError("no panels configured")
    ps = cfg.postselection
    grid = _snapshot_grid(cfg)
    needs = {}
    for panel in panels:
        for src in _panel_sources(cfg, panel):
            for mode in panel.sign_modes:
                key = (src.name, src.tau, src.eta, mode)
                entry = needs.setdefault(key, {"src": src, "p": set(), "analytic": set()})
                entry["p"].update(panel.p_succ)
                if panel.analytic:
                    entry["analytic"].update(panel.p_succ)
    curves, streams = {}, []
    for key, entry in needs.items():
        ens, st = _ensemble(cfg, entry["src"], key[3])
        streams.append(st)
        for P in sorted(entry["p"]):
            curves[key + (P, "trajectory")] = concurrence_vs_time(
                ens, p_succ_target=P, calibration=ps.trajectory_calibration)
        del ens
        for P in sorted(entry["analytic"]):
            curves[key + (P, "analytic")] = analytic_curve(
                plus_plus(), entry["src"].rates, P, grid, key[3], calibration=ps.analytic_calibration)
    tables, summary = [], {}
    for panel in panels:
        origins = ("trajectory", "analytic") if panel.analytic else ("trajectory",)
        cols = PANEL_CURVE_COLUMNS if panel.kind == "curve" else PANEL_OPTIMUM_COLUMNS
        rows = []
        for src in _panel_sources(cfg, panel):
            for mode in panel.sign_modes:
                for P in panel.p_succ:
                    for origin in origins:
                        curve = curves[(src.name, src.tau, src.eta, mode, P, origin)]
                        prefix = (panel.name, src.name, src.tau, src.eta, mode, P, origin)
                        b = _best(curve)
                        summary.setdefault(panel.name, []).append(
                            dict(zip(PANEL_OPTIMUM_COLUMNS, prefix + (b["T"], b["C_mean"]))))
                        if panel.kind == "curve":
                            rows += _curve_rows(prefix, curve)
                        else:
                            rows.append(prefix + (b["T"], b["C_mean"], b["C_mean_se"],
                                                  b["kept_fraction"]))
        tables.append(Table(panel.name, cols, rows))
    return RunResult(tables=tables, streams=streams, report={"optima": summary})


def run_sweep(cfg: ExperimentConfig) -> RunResult:
    """Time-optimised concurrence over the configured tau, eta and P_succ axes."""
    panel = PanelSpec(name="sweep", kind="optimum",
                      rate_sets=[] if cfg.node is not None else [rs.name for rs in cfg.rate_sets],
                      tau=cfg.sweep.tau, eta=cfg.sweep.eta, p_succ=cfg.postselection.p_succ,
                      sign_modes=cfg.simulation.sign_modes)
    return run_panels(cfg, [panel])


PIPELINES = {
    "rates": run_rates,
    "eliminate": run_eliminate,
    "simulate": run_simulate,
    "postselect": run_postselect,
    "analytic": run_analytic,
    "figure3": run_panels,
    "figure5": run_panels,
    "figure6": run_panels,
    "sweep": run_sweep,
}


def run(cfg: ExperimentConfig) -> RunResult:
    if not cfg.resolved:
        raise ConfigurationError("pipelines expect a resolved config")
    return PIPELINES[cfg.command](cfg)

