"""Experiment configuration files.

The format is one ``section.key = value`` assignment per line. ``#`` starts
a comment and blank lines are ignored. Example::

    model.kind = normalized
    normalized.gamma_r0 = 0.03
    controller.kind = mean
    controller.k1 = 0.01
    controller.k2 = 0.0007
    reference.mu = 3
    reference.mu.schedule = step 2000 5, ramp 6000 2 500

A schedule is a comma-separated list of ``step START TARGET`` or
``ramp START TARGET [DURATION]`` items. Every error names the file and line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .control import (
    DEFAULT_RAMP_DURATION,
    MimoPIGains,
    ReferenceSignal,
    RefSegment,
    ScalarPIGains,
)
from .moments import NormalizedPlantParams, PlantParams
from .sim import SolverSettings
from .stability import (
    ParameterBox,
    admissible_interval,
    admissible_region_check,
    normalized_admissible_check,
)

__all__ = ["ConfigError", "SsaOptions", "ExperimentConfig", "parse_config", "load_config"]


class ConfigError(ValueError):
    def __init__(self, source: str, line: Optional[int], message: str):
        where = f"{source}:{line}" if line else source
        super().__init__(f"{where}: {message}")
        self.source = source
        self.line = line


_PLANT_KEYS = ("k_r", "gamma_r", "k_p", "gamma_p")
_NORM_KEYS = ("gamma_r0", "gamma_p", "k_p", "b")
_BOX_KEYS = ("rel", "kp_lo", "kp_hi", "gp_lo", "gp_hi", "gr_lo", "gr_hi")

_KNOWN = (
    {"model.kind", "controller.kind", "disturbance.value", "disturbance.schedule",
     "reference.mu", "reference.mu.schedule", "reference.var", "reference.var.schedule",
     "sim.t_start", "sim.t_end", "sim.rtol", "sim.atol", "sim.max_step", "sim.n_points",
     "sim.dt_out", "ssa.n_traj", "ssa.seed", "ssa.t_end", "ssa.n_grid", "ssa.x0",
     "ssa.sync_interval", "output.dir"}
    | {f"plant.{k}" for k in _PLANT_KEYS}
    | {f"normalized.{k}" for k in _NORM_KEYS}
    | {f"controller.k{i}" for i in range(1, 9)}
    | {f"box.{k}" for k in _BOX_KEYS}
)


@dataclass(frozen=True)
class SsaOptions:
    n_traj: int = 10_000
    seed: int = 0
    t_end: Optional[float] = None
    n_grid: int = 20
    x0: tuple = (0, 0)
    sync_interval: Optional[float] = None


@dataclass
class ExperimentConfig:
    source: str
    model: Union[PlantParams, NormalizedPlantParams]
    kind: str
    gains: Union[ScalarPIGains, MimoPIGains]
    mu_ref: ReferenceSignal
    var_ref: Optional[ReferenceSignal]
    disturbance: ReferenceSignal
    t_span: tuple
    settings: SolverSettings
    ssa: SsaOptions
    box: Optional[ParameterBox]
    out_dir: Optional[str]
    lines: dict = field(default_factory=dict)

    @property
    def normalized(self) -> bool:
        return isinstance(self.model, NormalizedPlantParams)

    def line_of(self, key: str) -> Optional[int]:
        return self.lines.get(key)


class _Entries:
    def __init__(self, source: str, entries: dict):
        self.source = source
        self.entries = entries  # key -> (raw value, line)

    def error(self, key, message):
        line = self.entries[key][1] if key in self.entries else None
        return ConfigError(self.source, line, message)

    def has(self, key):
        return key in self.entries

    def raw(self, key, default=None):
        if key not in self.entries:
            return default
        return self.entries[key][0]

    def number(self, key, default=None, *, integer=False, required=False):
        if key not in self.entries:
            if required:
                raise ConfigError(self.source, None, f"missing required key '{key}'")
            return default
        raw = self.entries[key][0]
        try:
            v = int(raw) if integer else float(raw)
        except ValueError:
            kind = "an integer" if integer else "a number"
            raise self.error(key, f"'{key}' must be {kind}, got {raw!r}") from None
        if not integer and not math.isfinite(v):
            raise self.error(key, f"'{key}' must be finite, got {raw!r}")
        return v


def _tokenize(text: str, source: str) -> dict:
    entries = {}
    for n, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(source, n, f"expected 'key = value', got {body!r}")
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in _KNOWN:
            raise ConfigError(source, n, f"unknown key '{key}'")
        if key in entries:
            raise ConfigError(source, n, f"duplicate key '{key}' (first set on line {entries[key][1]})")
        if not value and not key.endswith(".schedule"):
            raise ConfigError(source, n, f"empty value for '{key}'")
        entries[key] = (value, n)
    return entries


def _schedule(cfg: _Entries, key: str, initial: float) -> ReferenceSignal:
    raw = cfg.raw(key)
    if not raw:
        # absent or empty: hold the initial value
        return ReferenceSignal.constant(initial)
    segs = []
    for item in raw.split(","):
        parts = item.split()
        if not parts:
            raise cfg.error(key, f"empty item in '{key}'")
        kind = parts[0]
        if kind not in ("step", "ramp") or not (3 <= len(parts) <= (4 if kind == "ramp" else 3)):
            raise cfg.error(key, f"bad schedule item {item.strip()!r}; "
                                 "use 'step START TARGET' or 'ramp START TARGET [DURATION]'")
        try:
            nums = [float(p) for p in parts[1:]]
        except ValueError:
            raise cfg.error(key, f"bad number in schedule item {item.strip()!r}") from None
        duration = nums[2] if len(nums) == 3 else (DEFAULT_RAMP_DURATION if kind == "ramp" else 0.0)
        try:
            segs.append(RefSegment(nums[0], kind, nums[1], duration))
        except ValueError as exc:
            raise cfg.error(key, f"{exc} in {item.strip()!r}") from None
    try:
        return ReferenceSignal(initial, tuple(segs))
    except ValueError as exc:
        raise cfg.error(key, str(exc)) from None


def _model(cfg: _Entries):
    kind = cfg.raw("model.kind", "plant")
    if kind not in ("plant", "normalized"):
        raise cfg.error("model.kind", f"model.kind must be 'plant' or 'normalized', got {kind!r}")
    other = "normalized" if kind == "plant" else "plant"
    for key in cfg.entries:
        if key.startswith(other + "."):
            raise cfg.error(key, f"'{key}' does not apply to model.kind = {kind}")
    try:
        if kind == "plant":
            vals = {k: cfg.number(f"plant.{k}", required=k != "k_r") for k in _PLANT_KEYS}
            vals["k_r"] = vals["k_r"] or 0.0
            return PlantParams(**vals)
        return NormalizedPlantParams(**{k: cfg.number(f"normalized.{k}", required=True) for k in _NORM_KEYS})
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        prefix = "plant." if kind == "plant" else "normalized."
        bad = next((k for k in cfg.entries if k.startswith(prefix) and k.split(".", 1)[1] in str(exc)),
                   "model.kind")
        raise cfg.error(bad, str(exc)) from None


def _gains(cfg: _Entries, kind: str):
    n = 2 if kind == "mean" else 8
    for i in range(n + 1, 9):
        if cfg.has(f"controller.k{i}"):
            raise cfg.error(f"controller.k{i}", f"controller.k{i} does not apply to the mean controller")
    # all gains are explicit, including zeros of the two-channel law
    ks = {f"k{i}": cfg.number(f"controller.k{i}", required=True) for i in range(1, n + 1)}
    return ScalarPIGains(**ks) if kind == "mean" else MimoPIGains(**ks)


def _box(cfg: _Entries, model):
    present = [k for k in _BOX_KEYS if cfg.has(f"box.{k}")]
    if not present:
        return None
    if isinstance(model, NormalizedPlantParams):
        raise cfg.error(f"box.{present[0]}", "parameter boxes need model.kind = plant")
    try:
        if "rel" in present:
            if len(present) > 1:
                raise cfg.error("box.rel", "give either box.rel or explicit box bounds, not both")
            return ParameterBox.around(model, cfg.number("box.rel"))
        return ParameterBox(**{k: cfg.number(f"box.{k}") for k in _BOX_KEYS if k != "rel"})
    except ConfigError:
        raise
    except ValueError as exc:
        raise cfg.error(f"box.{present[0]}", str(exc)) from None


def _ssa(cfg: _Entries):
    x0 = (0, 0)
    if cfg.has("ssa.x0"):
        try:
            x0 = tuple(int(v) for v in cfg.raw("ssa.x0").split(","))
        except ValueError:
            raise cfg.error("ssa.x0", "ssa.x0 must be comma-separated integers") from None
        if len(x0) != 2 or min(x0) < 0:
            raise cfg.error("ssa.x0", "ssa.x0 must be two nonnegative integers")
    opts = SsaOptions(
        n_traj=cfg.number("ssa.n_traj", 10_000, integer=True),
        seed=cfg.number("ssa.seed", 0, integer=True),
        t_end=cfg.number("ssa.t_end"),
        n_grid=cfg.number("ssa.n_grid", 20, integer=True),
        x0=x0,
        sync_interval=cfg.number("ssa.sync_interval"),
    )
    if opts.n_traj < 2:
        raise cfg.error("ssa.n_traj", "ssa.n_traj must be >= 2")
    if opts.seed < 0:
        raise cfg.error("ssa.seed", "ssa.seed must be >= 0")
    if opts.n_grid < 1:
        raise cfg.error("ssa.n_grid", "ssa.n_grid must be >= 1")
    for key, v in (("ssa.t_end", opts.t_end), ("ssa.sync_interval", opts.sync_interval)):
        if v is not None and not v > 0:
            raise cfg.error(key, f"{key} must be > 0")
    return opts


def _check_admissible(cfg: _Entries, model, mu_ref, var_ref, t0, t1):
    # the admissible set is a cone and references are piecewise linear, so
    # checking both one-sided limits at every breakpoint covers every time
    pts = {t0, t1}
    for b in mu_ref.breakpoints() + var_ref.breakpoints():
        if t0 <= b <= t1:
            pts.update((b, math.nextafter(b, -math.inf)))
    for t in sorted(p for p in pts if t0 <= p <= t1):
        mu, var = mu_ref(t), var_ref(t)
        if isinstance(model, NormalizedPlantParams):
            if normalized_admissible_check(model, mu, var):
                continue
            hint = (f"admissible normalized variance interval for mu={mu:.6g} is "
                    f"({mu / model.alpha:.6g}, {mu:.6g}) with positive inputs")
        else:
            if admissible_region_check(model, mu, var):
                continue
            lo, hi = admissible_interval(model, mu)
            hint = f"admissible variance interval for mu={mu:.6g} is ({lo:.6g}, {hi:.6g})"
        key = next((k for k in ("reference.var.schedule", "reference.var", "reference.mu.schedule")
                    if cfg.has(k)), "reference.mu")
        raise cfg.error(key, f"setpoint (mu={mu:.6g}, var={var:.6g}) at t={t:.6g} is inadmissible; {hint}")


_TEXT_KEYS = {"model.kind", "controller.kind", "ssa.x0", "output.dir",
              "reference.mu.schedule", "reference.var.schedule", "disturbance.schedule"}
_INT_KEYS = {"sim.n_points", "ssa.n_traj", "ssa.seed", "ssa.n_grid"}


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    cfg = _Entries(source, _tokenize(text, source))
    # type-check numbers in file order so the first bad line is the one reported
    for key in sorted(cfg.entries, key=lambda k: cfg.entries[k][1]):
        if key not in _TEXT_KEYS:
            cfg.number(key, integer=key in _INT_KEYS)
    model = _model(cfg)

    kind = cfg.raw("controller.kind")
    if kind is None:
        raise ConfigError(source, None, "missing required key 'controller.kind'")
    if kind not in ("mean", "mean_var"):
        raise cfg.error("controller.kind", f"controller.kind must be 'mean' or 'mean_var', got {kind!r}")
    try:
        gains = _gains(cfg, kind)
    except ConfigError:
        raise
    except ValueError as exc:
        raise cfg.error("controller.kind", str(exc)) from None

    mu0 = cfg.number("reference.mu", required=True)
    if mu0 < 0:
        raise cfg.error("reference.mu", "reference.mu must be >= 0")
    mu_ref = _schedule(cfg, "reference.mu.schedule", mu0)
    var_ref = None
    if kind == "mean_var":
        var0 = cfg.number("reference.var", required=True)
        var_ref = _schedule(cfg, "reference.var.schedule", var0)
    else:
        for key in ("reference.var", "reference.var.schedule"):
            if cfg.has(key):
                raise cfg.error(key, f"'{key}' needs controller.kind = mean_var")
    if kind == "mean_var" and (cfg.has("disturbance.value") or cfg.has("disturbance.schedule")):
        key = "disturbance.value" if cfg.has("disturbance.value") else "disturbance.schedule"
        raise cfg.error(key, "disturbances are supported for the mean controller only")
    disturbance = _schedule(cfg, "disturbance.schedule", cfg.number("disturbance.value", 0.0))

    t0 = cfg.number("sim.t_start", 0.0)
    t1 = cfg.number("sim.t_end", 1000.0)
    if not t1 > t0:
        raise cfg.error("sim.t_end", "sim.t_end must exceed sim.t_start")
    try:
        settings = SolverSettings(
            rtol=cfg.number("sim.rtol", 1e-8),
            atol=cfg.number("sim.atol", 1e-10),
            max_step=cfg.number("sim.max_step", math.inf),
            n_points=cfg.number("sim.n_points", 2000, integer=True),
            dt_out=cfg.number("sim.dt_out"),
        )
    except ValueError as exc:
        key = next((k for k in cfg.entries if k.startswith("sim.")), "sim.t_end")
        raise cfg.error(key, str(exc)) from None

    if var_ref is not None:
        _check_admissible(cfg, model, mu_ref, var_ref, t0, t1)

    return ExperimentConfig(
        source=source, model=model, kind=kind, gains=gains, mu_ref=mu_ref, var_ref=var_ref,
        disturbance=disturbance, t_span=(t0, t1), settings=settings, ssa=_ssa(cfg),
        box=_box(cfg, model), out_dir=cfg.raw("output.dir"),
        lines={k: v[1] for k, v in cfg.entries.items()},
    )


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(str(path), None, f"cannot read config: {exc.strerror}") from None
    return parse_config(text, str(path))
