"""Command-line front end: ``momentpi {simulate,stability,validate-ssa}``.

Exit codes are 0 on success, 1 on a runtime failure and 2 on a bad
configuration or command line.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .control import (
    MimoPIGains,
    NonUniqueEquilibriumError,
    ScalarPIGains,
    Setpoint,
    mimo_closed_loop_equilibrium,
)
from .moments import (
    NormalizedPlantParams,
    PlantParams,
    build_affine_moment_system,
    gene_expression_network,
)
from .sim import SolverSettings, integrate, plateau_report, simulate_mean_control, simulate_mean_var_control
from .ssa import ensemble_moments, ssa_closed_loop_ensemble
from . import stability as st

# ensembles smaller than this give a report but no verdict
MIN_VALIDATION_TRAJ = 100
Z_LIMIT = 4.0
SETTLING_BAND = 0.01


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_report(out: Path, name: str, lines: list) -> str:
    text = "\n".join(lines) + "\n"
    (out / name).write_text(text)
    return text


def _write_row(path: Path, row: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(row))
        w.writerow([_fmt(v) for v in row.values()])


# ------------------------------------------------------------------ simulate

def _settling(traj, column, a, b, target):
    """Time after ``a`` from which ``column`` stays within the band around ``target``."""
    mask = (traj.t >= a) & (traj.t <= b)
    t, y = traj.t[mask], traj[column][mask]
    if t.size == 0:
        return None
    scale = abs(target) if target != 0 else 1.0
    outside = np.flatnonzero(np.abs(y - target) / scale > SETTLING_BAND)
    if outside.size == 0:
        return 0.0
    if outside[-1] == t.size - 1:
        return None
    return float(t[outside[-1] + 1] - a)


def _plateau_lines(traj, ref, column, label, cuts=()):
    lines, worst = [], 0.0
    rows = plateau_report(traj, ref, column, cuts)
    for i, r in enumerate(rows, start=1):
        s = _settling(traj, column, r["t_start"], r["t_end"], r["target"])
        worst = max(worst, r["rel_error"])
        lines.append(
            f"{label}_plateau_{i}: t=[{r['t_start']:g}, {r['t_end']:g}) target={r['target']:.10g} "
            f"value={r['value']:.10g} rel_error={r['rel_error']:.3e} "
            f"settling={'none' if s is None else f'{s:.6g}'}"
        )
    return lines, worst


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> int:
    if cfg.kind == "mean":
        traj = simulate_mean_control(cfg.model, cfg.gains, cfg.mu_ref, cfg.disturbance,
                                     t_span=cfg.t_span, settings=cfg.settings)
    else:
        traj = simulate_mean_var_control(cfg.model, cfg.gains, (cfg.mu_ref, cfg.var_ref),
                                         t_span=cfg.t_span, settings=cfg.settings)
    traj.to_csv(out / "trajectory.csv")
    lines = [
        f"config: {cfg.source}",
        f"kind: {cfg.kind}",
        f"model: {'normalized' if cfg.normalized else 'plant'}",
        f"t_span: {cfg.t_span[0]:g} {cfg.t_span[1]:g}",
        f"points: {len(traj)}",
    ]
    body, worst = _plateau_lines(traj, cfg.mu_ref, "x2", "mean", cfg.disturbance.breakpoints())
    lines += body
    if cfg.var_ref is not None:
        body, w2 = _plateau_lines(traj, cfg.var_ref, "x5", "var")
        lines += body
        worst = max(worst, w2)
    u_min = min(float(traj[n].min()) for n in traj.input_names)
    lines += [
        f"max_steady_state_rel_error: {worst:.3e}",
        f"min_input: {u_min:.6g}",
        "final: " + " ".join(f"{k}={v:.10g}" for k, v in traj.final().items()),
        "trajectory_csv: trajectory.csv",
    ]
    print(_write_report(out, "summary.txt", lines), end="")
    return 0


# ----------------------------------------------------------------- stability

def _equivalent_mean_loop(cfg: ExperimentConfig):
    """Plant and gains analysed for a mean-control config.

    The normalized mean loop is the plant loop with ``gamma_r = gamma_r0``
    seen through an input gain ``b gamma_p / k_p`` plus a constant basal
    input, which moves the equilibrium but not the loop dynamics.
    """
    m, g = cfg.model, cfg.gains
    if isinstance(m, NormalizedPlantParams):
        scale = m.b * m.gamma_p / m.k_p
        plant = PlantParams(k_r=0.0, gamma_r=m.gamma_r0, k_p=m.k_p, gamma_p=m.gamma_p)
        return plant, ScalarPIGains(g.k1 * scale, g.k2 * scale), scale
    return m, g, 1.0


def _mean_stability(cfg: ExperimentConfig) -> dict:
    plant, g, scale = _equivalent_mean_loop(cfg)
    mu = cfg.mu_ref.initial
    rep = {
        "kind": "mean",
        "model": "normalized" if cfg.normalized else "plant",
        "gamma_r": plant.gamma_r, "k_p": plant.k_p, "gamma_p": plant.gamma_p,
        "k1": cfg.gains.k1, "k2": cfg.gains.k2, "gain_scale": scale,
        "k1_effective": g.k1, "k2_effective": g.k2,
    }
    verdicts = ("local_nominal", "local_robust", "global_nominal", "global_robust", "popov")
    if not g.k2 > 0:
        for v in verdicts:
            rep[v] = False
        rep["reason"] = "k2>0 required"
    else:
        rep["local_nominal_threshold_k1"] = st.local_nominal_threshold(plant, g.k2)
        rep["local_nominal"] = st.local_nominal_condition(plant, g)
        rep["local_robust"] = st.local_robust_condition(cfg.box, g) if cfg.box else "n/a"
        rep["global_nominal_threshold_k1"] = g.k2 / plant.gamma_p
        rep["global_nominal"] = st.global_nominal_condition(plant, g)
        rep["global_robust"] = st.global_robust_condition(cfg.box, g) if cfg.box else "n/a"
        cert = st.popov_certificate(plant, g)
        rep["popov"] = bool(cert and cert.ok)
        if cert is not None:
            rep.update(popov_q=cert.q, popov_z0=cert.z0, popov_z1=cert.z1,
                       popov_grid_min=cert.grid_min)
        lam = st.eigenvalues(st.mean_loop_matrix(plant, g))
        rep["max_real_eigenvalue"] = float(lam.real.max())
    rep["mu"] = mu
    if isinstance(cfg.model, NormalizedPlantParams):
        rep["disturbance_bound"] = st.normalized_disturbance_bound(cfg.model, mu)
    else:
        rep["disturbance_bound"] = st.disturbance_bound(plant, mu)
        if cfg.box and None not in (cfg.box.gp_hi, cfg.box.gr_hi, cfg.box.kp_lo):
            rep["robust_disturbance_bound"] = st.robust_disturbance_bound(cfg.box, mu)
    if mu > 0:
        rep["coefficient_of_variation"] = st.coefficient_of_variation(plant, mu)
    return rep


def _mean_var_stability(cfg: ExperimentConfig) -> dict:
    plant, g = cfg.model, cfg.gains
    sp = Setpoint(cfg.mu_ref.initial, cfg.var_ref.initial)
    lo, hi = st.admissible_interval(plant, sp.mu)
    rep = {
        "kind": "mean_var", "model": "plant", "k_p": plant.k_p, "gamma_p": plant.gamma_p,
        "mu": sp.mu, "var": sp.var, "admissible": st.admissible_region_check(plant, sp.mu, sp.var),
        "admissible_var_lo": lo, "admissible_var_hi": hi,
        "coupling_determinant": g.coupling_determinant,
    }
    try:
        eq = mimo_closed_loop_equilibrium(plant, sp, g)
        rep["equilibrium"] = "unique"
        rep["equilibrium_x"] = " ".join(f"{v:.10g}" for v in eq["x"])
        rep["u1"], rep["u2"] = eq["u1"], eq["u2"]
    except NonUniqueEquilibriumError:
        rep["equilibrium"] = "not unique (k2*k8 - k4*k6 = 0)"
    jr = st.jacobian_matrix(plant, sp, g)
    rep["eigenvalues"] = " ".join(f"{z.real:.6e}{z.imag:+.6e}j" for z in jr.eigenvalues)
    rep["max_real_eigenvalue"] = jr.max_real
    rep["stable"] = jr.stable and jr.representative
    rep["determinant"] = jr.determinant
    rep["determinant_closed_form"] = jr.determinant_closed_form
    rep["determinant_rel_error"] = jr.determinant_rel_error
    rep["representative"] = jr.representative
    if jr.notes:
        rep["notes"] = "; ".join(jr.notes)
    rep["direction_ratio"] = st.direction_ratio(plant, sp.mu, sp.var)
    rep["direction_bound"] = st.universal_direction_bound(plant)
    rep["direction_stabilizing"] = st.direction_is_stabilizing(plant, sp, g.k2, g.k8)
    return rep


def cmd_stability(cfg: ExperimentConfig, out: Path) -> int:
    if cfg.kind == "mean_var" and cfg.normalized:
        raise ConfigError(cfg.source, cfg.line_of("model.kind"),
                          "stability analysis of the mean/variance loop needs model.kind = plant")
    rep = _mean_stability(cfg) if cfg.kind == "mean" else _mean_var_stability(cfg)
    rep = {"config": cfg.source, **rep}
    lines = [f"{k}: {_fmt(v)}" for k, v in rep.items()]
    _write_row(out / "stability.csv", rep)
    print(_write_report(out, "stability.txt", lines), end="")
    return 0


# -------------------------------------------------------------- validate-ssa

_MOMENTS = ("x1", "x2", "x3", "x4", "x5")


def cmd_validate_ssa(cfg: ExperimentConfig, out: Path) -> int:
    if cfg.normalized:
        raise ConfigError(cfg.source, cfg.line_of("model.kind"),
                          "validate-ssa needs molecule counts, i.e. model.kind = plant")
    plant, opts = cfg.model, cfg.ssa
    t_end = opts.t_end or 5.0 / min(plant.gamma_r, plant.gamma_p)
    net = gene_expression_network(plant)
    x0 = np.array(opts.x0, dtype=float)
    settings = SolverSettings(dt_out=t_end / opts.n_grid)
    ode = integrate(build_affine_moment_system(net), np.r_[x0, 0.0, 0.0, 0.0], (0.0, t_end), settings)
    grid = ode.t[1:]
    reference = ode.data[1:, :5]
    em = ensemble_moments(net, opts.x0, grid, opts.n_traj, opts.seed)
    z = em.z_scores(reference)
    vals, ses = em.packed()
    max_z = float(np.max(np.abs(z)))
    if opts.n_traj < MIN_VALIDATION_TRAJ:
        verdict = "INCONCLUSIVE"
    else:
        verdict = "PASS" if max_z < Z_LIMIT else "FAIL"

    with open(out / "ssa_validation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"{p}_{m}" for p in ("ssa", "ode", "se", "z") for m in _MOMENTS])
        for k, t in enumerate(grid):
            w.writerow([repr(float(v)) for v in (t, *vals[k], *reference[k], *ses[k], *z[k])])

    lines = [
        f"config: {cfg.source}",
        f"plant: k_r={plant.k_r:g} gamma_r={plant.gamma_r:g} k_p={plant.k_p:g} gamma_p={plant.gamma_p:g}",
        f"n_traj: {opts.n_traj}",
        f"seed: {opts.seed}",
        f"t_end: {t_end:g}",
        f"grid_points: {len(grid)}",
        f"{'t':>10s} " + " ".join(f"{'z_' + m:>10s}" for m in _MOMENTS),
    ]
    for k, t in enumerate(grid):
        lines.append(f"{t:>10g} " + " ".join(f"{v:+10.4f}" for v in z[k]))
    lines += [f"max_abs_z: {max_z:.4f}", f"z_limit: {Z_LIMIT:g}"]
    if verdict == "INCONCLUSIVE":
        lines.append(f"note: n_traj below {MIN_VALIDATION_TRAJ}, no verdict")

    if opts.sync_interval is not None:
        lines += _closed_loop_demo(cfg, out, t_end)
    lines.append(f"verdict: {verdict}")
    print(_write_report(out, "validate_ssa.txt", lines), end="")
    return 0 if verdict != "FAIL" else 1


def _closed_loop_demo(cfg: ExperimentConfig, out: Path, t_end: float) -> list:
    """Run the ensemble-coupled loop; results are reported, not judged."""
    opts = cfg.ssa
    sp = Setpoint(cfg.mu_ref.initial, None if cfg.var_ref is None else cfg.var_ref.initial)
    plant = cfg.model
    if isinstance(cfg.gains, MimoPIGains):
        # the bilinear loop drives k_r and gamma_r entirely through the inputs
        net = gene_expression_network(replace(plant, k_r=0.0)).with_propensity(
            W=np.array([[0, 0], [0, 0], [plant.k_p, 0], [0, plant.gamma_p]], dtype=float))
    else:
        net = gene_expression_network(replace(plant, k_r=0.0))
    res = ssa_closed_loop_ensemble(net, cfg.gains, sp, opts.sync_interval, opts.n_traj, t_end,
                                   opts.seed, x0=opts.x0)
    res.to_csv(out / "ssa_closed_loop.csv")
    m = res.moments
    last = -1
    lines = [
        "closed_loop_demo: ensemble-coupled PI loop (reported, not asserted)",
        f"closed_loop_sync_interval: {opts.sync_interval:g}",
        f"closed_loop_final_mean: {m.mean[last, 1]:.6g} (se {m.se_mean[last, 1]:.3g}, target {sp.mu:g})",
    ]
    if sp.var is not None:
        lines.append(f"closed_loop_final_var: {m.cov[last, 1, 1]:.6g} "
                     f"(se {m.se_cov[last, 1, 1]:.3g}, target {sp.var:g})")
    return lines


# ---------------------------------------------------------------------- main

_COMMANDS = {"simulate": cmd_simulate, "stability": cmd_stability, "validate-ssa": cmd_validate_ssa}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="momentpi", description="PI control of protein mean and variance.")
    p.add_argument("command", choices=sorted(_COMMANDS))
    p.add_argument("--config", required=True, help="experiment config file")
    p.add_argument("--out", help="output directory (default: output.dir from the config, else .)")
    p.add_argument("--seed", type=int, help="override ssa.seed")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed", None, "seed must be >= 0")
            cfg.ssa = replace(cfg.ssa, seed=args.seed)
        out = Path(args.out or cfg.out_dir or ".")
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # every other failure is a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
