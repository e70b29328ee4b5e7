"""Command-line front end: configuration, sweeps and CSV/JSON emission.

Every subcommand evaluates a set of sweep points and writes one table row
per point. Parameters come from an optional JSON config and from flags, with
flags taking precedence. Any parameter value may be a grid (``a,b,c``,
``start:stop:count`` or ``start:stop:logK`` for ``K`` points per decade),
which turns it into a sweep axis; several axes form a Cartesian product.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import itertools
import json
import math
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import merging, oracle, protocols, zeno
from .dynamics import IntegrationError, build_model

SCHEMA_VERSION = 1
OUTPUT_DIR_ENV = "WGHERALD_OUTPUT_DIR"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


# --- grids --------------------------------------------------------------------

def parse_grid(text: str, field_name: str = "grid") -> list[float]:
    """Parse a grid specification into a strictly monotone list of floats."""
    text = str(text).strip()
    try:
        if ":" in text:
            parts = text.split(":")
            if len(parts) != 3:
                raise ValueError
            start, stop = float(parts[0]), float(parts[1])
            spec = parts[2].strip()
            if spec.startswith("log"):
                per_decade = int(spec[3:])
                if start <= 0 or stop <= 0 or per_decade < 1:
                    raise ValueError
                count = int(round(abs(math.log10(stop / start)) * per_decade)) + 1
                values = list(np.geomspace(start, stop, max(count, 2)))
            else:
                count = int(spec)
                if count < 1:
                    raise ValueError
                values = list(np.linspace(start, stop, count)) if count > 1 else [start]
        else:
            values = [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise ConfigError(f"field {field_name!r}: cannot parse grid {text!r}") from None
    if not values:
        raise ConfigError(f"field {field_name!r}: grid is empty")
    diffs = np.diff(values)
    if len(values) > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise ConfigError(f"field {field_name!r}: grid must be strictly monotone")
    return [float(v) for v in values]


def _is_grid(value: Any) -> bool:
    return isinstance(value, (list, tuple)) or (isinstance(value, str) and ("," in value or ":" in value))


# --- parameter declarations ---------------------------------------------------

@dataclass(frozen=True)
class Param:
    name: str
    kind: type
    default: Any = None
    help: str = ""
    sweepable: bool = True


PHYSICAL = (
    Param("N", int, 100, "target atoms"),
    Param("P1d", float, 100.0, "Purcell factor"),
    Param("m", int, 0, "excitations already stored"),
    Param("Nd", int, 1, "detector atoms"),
    Param("eta", float, 1.0, "detector efficiency"),
    Param("alpha", float, None, "closed-transition leakage (default 1/sqrt(P1d))"),
    Param("x", float, 0.1, "weak-drive amplitude"),
    Param("pump", float, 1.0, "repump free-space coefficient"),
)
_PHYS_FIELDS = {"N": "n", "P1d": "purcell", "m": "m", "Nd": "n_d", "eta": "eta", "alpha": "alpha",
                "x": "x", "pump": "pump_coefficient"}

ZENO = (
    Param("k", int, 0, "excitations already in the goal level"),
    Param("Nb", int, 100, "atoms in the driven ensemble"),
    Param("P1d", float, 100.0, "Purcell factor"),
    Param("omega", float, None, "Rabi frequency (default: optimal)"),
    Param("T", float, None, "pulse length (default: optimal)"),
)


@dataclass(frozen=True)
class Option:
    name: str
    kind: type
    default: Any = None
    help: str = ""
    choices: tuple | None = None


def _physical(values: dict) -> protocols.PhysicalParams:
    kw = {_PHYS_FIELDS[k]: v for k, v in values.items() if k in _PHYS_FIELDS and v is not None}
    return protocols.PhysicalParams(**kw)


def _zeno_params(values: dict) -> zeno.ZenoParams:
    return zeno.ZenoParams.from_purcell(values["k"], values["Nb"], values["P1d"],
                                        omega=values.get("omega"), duration=values.get("T"))


# --- per-point evaluators -------------------------------------------------------

def _accumulation(row: dict, rep: protocols.AccumulationReport) -> dict:
    row.update(rep.as_row())
    return row


def _eval_protocol1(v: dict, o: dict, seed) -> list[dict]:
    par = _physical(v)
    row = {f"analytic_{k}": x for k, x in protocols.protocol1_step(par, o["same_level"]).as_row().items()}
    if o["numeric"]:
        row.update({f"numeric_{k}": x for k, x in protocols.protocol1_numeric(par, o["same_level"]).as_row().items()})
    if o["m_target"]:
        _accumulation(row, protocols.protocol1_accumulate(par, o["m_target"], o["same_level"]))
    return [row]


def _eval_protocol2(v: dict, o: dict, seed) -> list[dict]:
    par = _physical(v)
    step = protocols.protocol2_step(par)
    row = {"p_a": step.extras["p_a"], "p_b": step.extras["p_b"], "p": step.p, "I": step.infidelity}
    if o["numeric"]:
        num = protocols.protocol2_numeric(par)
        row.update({"numeric_p_a": num.extras["p_a"], "numeric_p_b": num.extras["p_b"], "numeric_p": num.p})
    if o["m_target"]:
        _accumulation(row, protocols.protocol2_accumulate(par, o["m_target"], exact=o["exact"]))
    return [row]


def _window(o: dict):
    w = o["window"]
    return w if w == "optimal" else float(w)


def _eval_protocol3(v: dict, o: dict, seed) -> list[dict]:
    par = _physical(v)
    row = {f"analytic_{k}": x for k, x in protocols.protocol3_step(par, o["repeat_b"], _window(o)).as_row().items()}
    if o["numeric"]:
        row.update({f"numeric_{k}": x for k, x in protocols.protocol3_numeric(par, o["repeat_b"], _window(o)).as_row().items()})
    return [row]


def _eval_protocol4(v: dict, o: dict, seed) -> list[dict]:
    par = _physical(v)
    row = protocols.protocol4_step(par, o["reference"]).as_row()
    if o["ratios"]:
        rows = []
        for r, p in protocols.protocol4_ratio_scan(par, parse_grid(o["ratios"], "ratios"), o["reoptimize"]):
            rows.append(dict(row, ratio=r, p_ratio=p))
        return rows
    return [row]


def _eval_zeno(v: dict, o: dict, seed) -> list[dict]:
    zp = _zeno_params(v)
    row = {
        "omega": zp.rabi, "T": zp.pulse_time,
        "p_closed": zeno.zeno_success_probability(zp.k, zp.n_b, zp.purcell),
        "p_numeric": zeno.zeno_numeric_success(zp),
        "bound_a": zeno.free_a_bound(zp), "bound_b": zeno.free_b_bound(zp),
        "T_dark_node": zeno.dark_node_time(zp),
    }
    row.update(zeno.zeno_jump_probabilities(zp).as_dict())
    return [row]


def _eval_pulse(v: dict, o: dict, seed) -> list[dict]:
    zp = _zeno_params(v)
    res = zeno.optimize_pulse_shape(zp, o["segments"], max_evals=o["max_evals"])
    return [{"segments": o["segments"], "p_pulse": res.success, "p_constant": res.reference, "ratio": res.ratio,
             "converged": res.converged, "amplitudes": ";".join(repr(float(a)) for a in res.shape.amplitudes),
             "durations": ";".join(repr(float(d)) for d in res.shape.durations)}]


def _eval_merge_plan(v: dict, o: dict, seed) -> list[dict]:
    m, p = int(v["m"]), float(v["p"])
    lo, hi = merging.one_by_one_bounds(m, p)
    dlo, dhi = merging.doubling_bounds(m, p) if m > 1 else (math.nan, math.nan)
    row = {"R_one_by_one": merging.one_by_one_Rm(m, p), "one_by_one_lower": lo, "one_by_one_upper": hi,
           "R_doubling": merging.doubling_Rm(m, p), "doubling_lower": dlo, "doubling_upper": dhi}
    counts = merging.worst_case_counts(64)
    levels = next(i for i, c in enumerate(counts) if c >= m)
    cs, rs = merging.number_resolved_Rm(levels, p)
    row.update({"number_resolved_size": cs[-1], "R_number_resolved": rs[-1]})
    if m & (m - 1) == 0:
        row["log_R_superposition"] = merging.superposition_log_Rm(m, p, o["alpha"])
    return [row]


def _eval_merge_sim(v: dict, o: dict, seed) -> list[dict]:
    strat = merging.MergeStrategy(o["strategy"], int(v["m"]), o["mode"])
    return [merging.scheduler_simulate(strat, float(v["p"]), o["trials"], seed).as_row()]


def _eval_detect(v: dict, o: dict, seed) -> list[dict]:
    m, gt = int(v["m"]), float(v["GT"])
    row = {"discrimination_error": merging.discrimination_error(m, 1.0, gt), "threshold": merging.ml_threshold(m, 1.0, gt),
           "mean_m": m * gt, "mean_m1": (m + 1) * gt}
    if not o["pmf"]:
        return [row]
    pm = merging.counting_pmf(merging.CountingModel(1.0, gt, m))
    pm1 = merging.counting_pmf(merging.CountingModel(1.0, gt, m + 1))
    n = max(len(pm), len(pm1))
    pm, pm1 = np.pad(pm, (0, n - len(pm))), np.pad(pm1, (0, n - len(pm1)))
    return [dict(row, count=c, pmf_m=float(a), pmf_m1=float(b)) for c, (a, b) in enumerate(zip(pm, pm1))]


def _eval_fig3(v: dict, o: dict, seed) -> list[dict]:
    n = int(v["N"]) if v.get("N") is not None else None
    p = protocols.fig3_probability(v["P1d"], n)
    return [{"p": p, "m": protocols.fig3_curve(v["R"], [v["P1d"]], n)[0]}]


def _eval_fig4(v: dict, o: dict, seed) -> list[dict]:
    nm, pur, m = int(v["Nm"]), float(v["P1d"]), int(o["m"])
    par = protocols.PhysicalParams(n=nm + m, purcell=pur, m=m)
    num = protocols.protocol3_numeric(par, o["repeat_b"], _window(o))
    ana = protocols.protocol3_step(par, o["repeat_b"], _window(o))
    return [{"p_numeric": num.p, "p_analytic": ana.p, "I_numeric": num.infidelity, "I_analytic": ana.infidelity}]


def _eval_sm_figs(v: dict, o: dict, seed) -> list[dict]:
    fig = o["figure"]
    pur = float(v["P1d"])
    if fig == "zeno-populations":
        zp = zeno.ZenoParams.from_purcell(0, int(v["Nb"]), pur)
        ts = np.linspace(0.0, zp.pulse_time, 41)
        a, n = zeno.zeno_analytic_populations(zp, ts), zeno.zeno_numeric_populations(zp, ts)
        return [{"t": float(t), "dark_analytic": a.dark[i], "goal_analytic": a.goal[i], "dark_numeric": n.dark[i],
                 "goal_numeric": n.goal[i], "bright_numeric": n.bright[i]} for i, t in enumerate(ts)]
    if fig == "step-b":
        ts = np.linspace(0.0, 3.0 / pur, 31)
        return [dict(zip(("t", "beta1_sq", "beta2_sq"), (float(t), *protocols.protocol3_step_b_analytic(t, pur))))
                for t in ts]
    if fig == "protocol4":
        par = protocols.PhysicalParams(n=int(v["Nb"]), purcell=pur)
        step = protocols.protocol4_step(par)
        return [{"p_closed": step.p, "p_numeric": step.extras["p_numeric"], **protocols.protocol4_jump_probabilities(par)}]
    if fig == "merge-costs":
        rows = []
        for m in range(1, 33):
            rows.append({"m": m, "R_one_by_one": merging.one_by_one_Rm(m, 1.0), "R_doubling": merging.doubling_Rm(m, 1.0)})
        return rows
    raise ConfigError(f"field 'figure': unknown figure {fig!r}")


def _eval_oracle(v: dict, o: dict, seed) -> list[dict]:
    rows = []
    cases = ("zeno", "protocol1", "control") if o["case"] == "all" else (o["case"],)
    for case in cases:
        if case in ("zeno", "control"):
            zp = zeno.ZenoParams.from_purcell(0, 2, float(v["P1d"]))
            system = zeno.zeno_system(zp)
            psi = zeno.zeno_states(build_model(system), zp)["psi1"]
            times = np.linspace(0.0, 1.5 * zp.pulse_time, 7)
            phases = {("b", 1): math.pi / 2} if case == "control" else None
        else:
            n_atoms = 3
            system = protocols.protocol1_system(n_atoms, float(v["P1d"]))
            basis = build_model(system).basis
            psi = np.zeros(basis.dim, dtype=complex)
            for j, a in enumerate(protocols.weak_drive_state(n_atoms, 0.05, 2)):
                psi[basis.index(basis.state((n_atoms - j, j, 0)))] = a
            times = np.linspace(0.0, 5.0 / float(v["P1d"]), 6)
            phases = None
        cmp = oracle.compare_dynamics(system, psi, times, phases)
        expect_small = case != "control"
        ok = cmp.max_deviation < 1e-8 if expect_small else cmp.max_deviation > 1e-3
        rows.append({"case": case, "max_trace_distance": cmp.max_deviation,
                     "max_leakage": float(cmp.leakage.max()), "pass": ok})
    return rows


# --- command table ------------------------------------------------------------

@dataclass(frozen=True)
class Command:
    evaluate: Callable[[dict, dict, Any], list[dict]]
    params: tuple[Param, ...]
    options: tuple[Option, ...] = ()
    stochastic: bool = False
    help: str = ""
    points: Callable[[dict], list[dict]] | None = None


def _fig4_points(values: dict) -> list[dict]:
    pts = [{"axis": "P1d", "Nm": values["N"], "P1d": p} for p in values["P1d"]]
    pts += [{"axis": "Nm", "Nm": int(round(n)), "P1d": values["P1d_fixed"]} for n in values["Nm"]]
    return pts


def _p3_opts():
    return (Option("numeric", bool, False, "also evaluate the master equation"),
            Option("repeat_b", int, 1, "step-b attempts per step-a success"),
            Option("window", str, "1.0", "step-b window in units of 1/(gamma_1d), or 'optimal'"))


COMMANDS: dict[str, Command] = {
    "protocol1": Command(_eval_protocol1, PHYSICAL, (
        Option("numeric", bool, False, "also evaluate the two-excitation jump series"),
        Option("same_level", bool, False, "accumulate all excitations in one level"),
        Option("m_target", int, 0, "report repetitions and infidelity up to this m")), help="weak-drive heralding"),
    "protocol2": Command(_eval_protocol2, PHYSICAL, (
        Option("numeric", bool, False, "also propagate the 3x3 generators"),
        Option("m_target", int, 0, "report repetitions up to this m"),
        Option("exact", bool, False, "use per-step probabilities instead of p_a^2")), help="Zeno transfer and Zeno heralding"),
    "protocol3": Command(_eval_protocol3, PHYSICAL, _p3_opts(), help="Zeno transfer and fast pi-pulse heralding"),
    "protocol4": Command(_eval_protocol4, PHYSICAL, (
        Option("reference", str, "g", "Purcell-factor reference mode", ("g", "s")),
        Option("ratios", str, None, "grid of gamma_s/gamma_g for a numeric ratio scan"),
        Option("reoptimize", bool, True, "re-optimise drive and time per ratio")), help="single-step protocol"),
    "zeno-step": Command(_eval_zeno, ZENO, help="one Zeno transfer step"),
    "pulse-shape": Command(_eval_pulse, ZENO[:3], (
        Option("segments", int, 10, "piecewise-constant segments"),
        Option("max_evals", int, None, "optimizer evaluation budget")), help="piecewise-constant drive optimisation"),
    "merge-plan": Command(_eval_merge_plan, (Param("m", int, 8, "target excitations"), Param("p", float, 1.0, "single-excitation success")), (
        Option("alpha", float, 0.0, "decay exponent of the central Fock weight for superposition targets"),),
                          help="expected operation counts of merge schedules"),
    "merge-sim": Command(_eval_merge_sim, (Param("m", int, 8, "target excitations"), Param("p", float, 0.5, "single-excitation success")), (
        Option("strategy", str, "doubling", "merge schedule", ("one-by-one", "doubling", "number-resolved")),
        Option("mode", str, "worst-case", "number-resolved bookkeeping", ("worst-case", "realistic")),
        Option("trials", int, 10000, "Monte Carlo trials")), stochastic=True, help="Monte Carlo of merge schedules"),
    "detect": Command(_eval_detect, (Param("m", int, 1, "stored excitations"), Param("GT", float, 10.0, "gamma_1d times window")), (
        Option("pmf", bool, False, "emit the counting distributions"),), help="photon-counting discrimination"),
    "fig3": Command(_eval_fig3, (Param("R", float, 1e4, "repetition budget"), Param("P1d", float, "10:10000:log4", "Purcell factor"),
                                 Param("N", int, None, "ensemble size (default: infinite)")), help="reachable m at fixed repetitions"),
    "fig4": Command(_eval_fig4, (Param("N", int, 100, "ground atoms for the Purcell sweep", False),
                                 Param("P1d", float, "10:1000:log5", "Purcell grid"),
                                 Param("Nm", float, "10:1000:log5", "ground-atom grid"),
                                 Param("P1d_fixed", float, 100.0, "Purcell factor for the ground-atom sweep", False)),
                    (Option("m", int, 1, "stored excitations"),) + _p3_opts()[1:], help="protocol-3 numeric vs analytic",
                    points=_fig4_points),
    "sm-figs": Command(_eval_sm_figs, (Param("P1d", float, 100.0, "Purcell factor"), Param("Nb", int, 100, "ensemble size")), (
        Option("figure", str, "zeno-populations", "which data set",
               ("zeno-populations", "step-b", "protocol4", "merge-costs")),), help="supplementary figure data"),
    "oracle-check": Command(_eval_oracle, (Param("P1d", float, 100.0, "Purcell factor"),), (
        Option("case", str, "all", "comparison", ("all", "zeno", "protocol1", "control")),), help="full-space validation"),
}

CONFIG_KEYS = {"command", "params", "options", "seed", "output", "json", "workers"}


# --- configuration ------------------------------------------------------------

@dataclass
class RunConfig:
    command: str
    values: dict
    options: dict
    seed: int | None = None
    output: str | None = None
    json_path: str | None = None
    workers: int = 1
    sweep_axes: tuple[str, ...] = field(default_factory=tuple)

    def digest(self) -> str:
        payload = {"command": self.command, "values": self.values, "options": self.options, "seed": self.seed}
        return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()


def _coerce(kind: type, value: Any, name: str):
    if value is None:
        return None
    try:
        if kind is bool:
            if isinstance(value, bool):
                return value
            if str(value).lower() in ("1", "true", "yes"):
                return True
            if str(value).lower() in ("0", "false", "no"):
                return False
            raise ValueError
        if kind is int:
            f = float(value)
            if f != int(f):
                raise ValueError
            return int(f)
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"field {name!r}: expected {kind.__name__}, got {value!r}") from None


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"field 'config': cannot read {path!r} ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"field 'config': invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(data, dict):
        raise ConfigError("field 'config': top level must be an object")
    unknown = set(data) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"field {sorted(unknown)[0]!r}: unknown config key")
    return data


def resolve(command: str, cli_values: dict, cli_options: dict, cli_meta: dict) -> RunConfig:
    """Merge config file and flags (flags win) and validate."""
    spec = COMMANDS[command]
    cfg = load_config(cli_meta.get("config"))
    if "command" in cfg and cfg["command"] != command:
        raise ConfigError(f"field 'command': config is for {cfg['command']!r}, not {command!r}")
    raw_params = dict(cfg.get("params", {}))
    raw_opts = dict(cfg.get("options", {}))
    known_p = {p.name for p in spec.params}
    known_o = {o.name for o in spec.options}
    for k in raw_params:
        if k not in known_p:
            raise ConfigError(f"field 'params.{k}': not a parameter of {command}")
    for k in raw_opts:
        if k not in known_o:
            raise ConfigError(f"field 'options.{k}': not an option of {command}")
    raw_params.update({k: v for k, v in cli_values.items() if v is not None})
    raw_opts.update({k: v for k, v in cli_options.items() if v is not None})

    values, axes = {}, []
    for p in spec.params:
        raw = raw_params.get(p.name, p.default)
        if _is_grid(raw):
            if not p.sweepable:
                raise ConfigError(f"field {p.name!r}: does not accept a grid")
            grid = [float(x) for x in raw] if isinstance(raw, (list, tuple)) else parse_grid(raw, p.name)
            if not grid:
                raise ConfigError(f"field {p.name!r}: grid is empty")
            if len(grid) > 1 and not (np.all(np.diff(grid) > 0) or np.all(np.diff(grid) < 0)):
                raise ConfigError(f"field {p.name!r}: grid must be strictly monotone")
            values[p.name] = [_coerce(p.kind, x, p.name) for x in grid]
            axes.append(p.name)
        else:
            values[p.name] = _coerce(p.kind, raw, p.name)
    options = {}
    for o in spec.options:
        val = _coerce(o.kind, raw_opts.get(o.name, o.default), o.name)
        if o.choices is not None and val not in o.choices:
            raise ConfigError(f"field {o.name!r}: must be one of {', '.join(o.choices)}")
        options[o.name] = val
    if "window" in options and options["window"] != "optimal":
        try:
            if float(options["window"]) <= 0:
                raise ValueError
        except ValueError:
            raise ConfigError("field 'window': must be a positive number or 'optimal'") from None

    seed = cli_meta.get("seed") if cli_meta.get("seed") is not None else cfg.get("seed")
    if seed is not None:
        seed = _coerce(int, seed, "seed")
        if seed < 0:
            raise ConfigError("field 'seed': must be >= 0")
    if spec.stochastic and seed is None:
        raise ConfigError("field 'seed': required for stochastic runs")
    workers = _coerce(int, cli_meta.get("workers") or cfg.get("workers") or 1, "workers")
    if workers < 1:
        raise ConfigError("field 'workers': must be >= 1")
    rc = RunConfig(command, values, options, seed, cli_meta.get("output") or cfg.get("output"),
                   cli_meta.get("json") or cfg.get("json"), workers, tuple(axes))
    _validate_points(rc)
    return rc


def sweep_points(rc: RunConfig) -> list[dict]:
    spec = COMMANDS[rc.command]
    if spec.points is not None:
        vals = {k: (v if isinstance(v, list) else ([v] if k in ("P1d", "Nm") else v)) for k, v in rc.values.items()}
        return spec.points(vals)
    grids = [rc.values[a] for a in rc.sweep_axes]
    pts = []
    for combo in itertools.product(*grids):
        v = dict(rc.values)
        v.update(dict(zip(rc.sweep_axes, combo)))
        pts.append(v)
    return pts


def _validate_points(rc: RunConfig) -> None:
    """Reject parameter combinations that are invalid before any work starts."""
    spec = COMMANDS[rc.command]
    for v in sweep_points(rc):
        try:
            if spec.params is PHYSICAL:
                _physical(v)
            elif spec.params in (ZENO, ZENO[:3]):
                _zeno_params(v)
            elif rc.command in ("merge-plan", "merge-sim"):
                if v["m"] < 1:
                    raise ValueError("m must be >= 1")
                if not 0 < v["p"] <= 1:
                    raise ValueError("p must lie in (0, 1]")
            elif rc.command == "detect":
                if v["m"] < 0 or v["GT"] < 0:
                    raise ValueError("m and GT must be >= 0")
        except ValueError as exc:
            raise ConfigError(f"invalid parameters: {exc}") from None
    for name, val in rc.options.items():
        if isinstance(val, int) and not isinstance(val, bool) and name in ("trials", "segments", "repeat_b") and val < 1:
            raise ConfigError(f"field {name!r}: must be >= 1")
    if rc.options.get("alpha", 0.0) < 0:
        raise ConfigError("field 'alpha': must be >= 0")


# --- execution ----------------------------------------------------------------

NUMERIC_ERRORS = (ArithmeticError, np.linalg.LinAlgError, IntegrationError, ValueError, RuntimeError)


def _point_seed(seed: int | None, index: int) -> int | None:
    if seed is None:
        return None
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _run_point(args: tuple) -> tuple[list[dict], str | None]:
    command, values, options, seed = args
    try:
        return COMMANDS[command].evaluate(values, options, seed), None
    except NUMERIC_ERRORS as exc:
        return [], f"{type(exc).__name__}: {exc}"


def run(rc: RunConfig) -> tuple[list[dict], int]:
    """Evaluate every sweep point; returns ordered rows and the failure count."""
    pts = sweep_points(rc)
    jobs = [(rc.command, v, rc.options, _point_seed(rc.seed, i)) for i, v in enumerate(pts)]
    if rc.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=rc.workers) as pool:
            results = list(pool.map(_run_point, jobs))
    else:
        results = [_run_point(j) for j in jobs]
    rows, failures = [], 0
    spec = COMMANDS[rc.command]
    shown = list(rc.sweep_axes) if spec.points is None else ["axis", "Nm", "P1d"]
    for i, (v, (out, err)) in enumerate(zip(pts, results)):
        prefix = {"index": i, **{k: v[k] for k in shown}}
        if err is not None:
            failures += 1
            rows.append({**prefix, "status": "failed", "error": err})
            continue
        for r in out:
            rows.append({**prefix, "status": "ok", **r})
    return rows, failures


def _git_hash() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], cwd=Path(__file__).resolve().parent,
                             capture_output=True, text=True, timeout=5)
        return out.stdout.strip() or "unknown" if out.returncode == 0 else "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _fmt(x: Any) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def header(rc: RunConfig) -> dict:
    return {
        "schema": f"wgherald/{rc.command}/{SCHEMA_VERSION}",
        "seed": "" if rc.seed is None else rc.seed,
        "config_sha256": rc.digest(),
        "git": _git_hash(),
        "generated": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


def render_csv(rows: list[dict], head: dict) -> str:
    columns: list[str] = []
    for r in rows:
        for k in r:
            if k not in columns:
                columns.append(k)
    buf = io.StringIO()
    for k, val in head.items():
        buf.write(f"# {k}={val}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def _json_safe(x):
    if isinstance(x, (np.floating, float)):
        return None if not math.isfinite(float(x)) else float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _destination(rc: RunConfig) -> Path | None:
    if rc.output:
        return Path(rc.output)
    env = os.environ.get(OUTPUT_DIR_ENV)
    if env:
        return Path(env) / f"{rc.command}.csv"
    return None


def write_outputs(rc: RunConfig, rows: list[dict]) -> None:
    head = header(rc)
    text = render_csv(rows, head)
    dest = _destination(rc)
    if dest is None:
        sys.stdout.write(text)
    else:
        dest.parent.mkdir(parents=True, exist_ok=True)
        dest.write_text(text)
    if rc.json_path:
        doc = {"header": head, "rows": [{k: _json_safe(v) for k, v in r.items()} for r in rows]}
        Path(rc.json_path).write_text(json.dumps(doc, indent=1) + "\n")


# --- argparse -----------------------------------------------------------------

def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wgherald", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, spec in COMMANDS.items():
        sp = sub.add_parser(name, help=spec.help, description=spec.help)
        sp.add_argument("--config", help="JSON config file (flags override it)")
        sp.add_argument("--output", "-o", help=f"CSV destination (default: ${OUTPUT_DIR_ENV}/<command>.csv or stdout)")
        sp.add_argument("--json", help="also write a JSON mirror here")
        sp.add_argument("--seed", help="base seed")
        sp.add_argument("--workers", help="parallel sweep workers")
        for p in spec.params:
            kw = dict(dest=f"p_{p.name}", default=None, help=f"{p.help} (default {p.default})")
            flags = [_flag(p.name)]
            if p.sweepable:
                flags.append(_flag(p.name) + "-grid")
            sp.add_argument(*flags, **kw)
        for o in spec.options:
            if o.kind is bool:
                sp.add_argument(_flag(o.name), dest=f"o_{o.name}", action=argparse.BooleanOptionalAction,
                                default=None, help=o.help)
            else:
                sp.add_argument(_flag(o.name), dest=f"o_{o.name}", default=None, choices=o.choices, help=o.help)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    ns = vars(args)
    values = {k[2:]: v for k, v in ns.items() if k.startswith("p_")}
    options = {k[2:]: v for k, v in ns.items() if k.startswith("o_")}
    meta = {k: ns.get(k) for k in ("config", "output", "json", "seed", "workers")}
    try:
        rc = resolve(args.command, values, options, meta)
    except ConfigError as exc:
        print(f"wgherald: config error: {exc}", file=sys.stderr)
        return 1
    rows, failures = run(rc)
    write_outputs(rc, rows)
    n_points = len({r["index"] for r in rows})
    if failures:
        print(f"wgherald: {failures} of {n_points} sweep points failed", file=sys.stderr)
    return 2 if n_points and failures == n_points else 0


if __name__ == "__main__":
    sys.exit(main())
