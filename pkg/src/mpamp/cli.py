"""Experiment harness.

Verbs:
    run <config>        simulate one configuration, write trace + summary
    se <config>         offline state-evolution trajectory only
    allocate <config>   rate plan only (DP tables or offline back-tracking)
    table1 <config-dir> totals table over a directory of configurations

Configs are JSON; `--set dotted.key=value` overrides file keys.  All
outputs are deterministic given the config (no timestamps), so reruns
are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .allocation import (
    AllocationPlan,
    BTPolicy,
    PlanningContext,
    bt_step,
    dp_allocate,
    f1,
    plan_to_ecsq,
    serialize_plan,
)
from .denoiser import se_trajectory, sigma2_initial
from .model import ProblemConfig, SignalPrior, build_instance
from .sim import run_centralized, run_mp

TRACE_HEADER = "t,rate_bits,HQ_bits,sigma2_C,sigma2_D_pred,sigma2_D_emp,sdr_C_db,sdr_D_db,cum_bits"

# Reference totals for the bundled benchmark grid (indexed by epsilon):
# (dp_rd, dp_ecsq, bt_rd, bt_ecsq)
TABLE1_REFERENCE = {
    0.03: (16.0, 18.04, 33.82, 36.09),
    0.05: (20.0, 22.55, 46.43, 49.19),
    0.10: (40.0, 45.10, 96.16, 101.50),
}

MODES = ("centralized", "mp-uncompressed", "bt", "dp")
CODERS = ("ideal", "ecsq")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    problem: ProblemConfig
    prior: SignalPrior
    mode: str
    coder: str
    T: object                # int or "auto"
    bt: BTPolicy
    dp_R_total: object       # float or "2T"
    dp_delta_R: float
    output_dir: Path
    numerics: dict
    raw: dict


_NUMERIC_DEFAULTS = {
    "gh_nodes": 63,
    "ba_points": 2001,
    "family_points": 1201,
    "family_pilots": 33,
    "steady_tol_db": 0.1,
    "T_max": 60,
}


def _req(d, key, typ, ctx=""):
    path = f"{ctx}.{key}" if ctx else key
    if key not in d:
        raise ConfigError(f"missing required field {path!r}")
    v = d[key]
    if typ is float and isinstance(v, int):
        v = float(v)
    if not isinstance(v, typ):
        raise ConfigError(f"{path!r} must be {typ.__name__}, got {type(v).__name__}")
    return v


def load_config(path: Path, overrides=()) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, _, val = item.partition("=")
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = json.loads(val) if _looks_json(val) else val
    return _parse_config(raw)


def _looks_json(s: str) -> bool:
    try:
        json.loads(s)
        return True
    except json.JSONDecodeError:
        return False


def _parse_config(raw: dict) -> ExperimentConfig:
    prob = _req(raw, "problem", dict)
    prior_d = _req(prob, "prior", dict, "problem")
    try:
        prior = SignalPrior(
            epsilon=_req(prior_d, "epsilon", float, "problem.prior"),
            mu_s=float(prior_d.get("mu_s", 0.0)),
            sigma_s=float(prior_d.get("sigma_s", 1.0)),
        )
        problem = ProblemConfig(
            N=_req(prob, "N", int, "problem"),
            M=_req(prob, "M", int, "problem"),
            P=_req(prob, "P", int, "problem"),
            snr_db=_req(prob, "snr_db", float, "problem"),
            seed=int(prob.get("seed", 0)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    mode = raw.get("mode", "centralized")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    coder = raw.get("coder", "ecsq")
    if coder not in CODERS:
        raise ConfigError(f"coder must be one of {CODERS}, got {coder!r}")

    T = raw.get("T", "auto")
    if T != "auto" and (not isinstance(T, int) or T < 1):
        raise ConfigError(f"T must be a positive integer or 'auto', got {T!r}")

    bt_d = raw.get("bt", {})
    try:
        bt = BTPolicy(gamma=float(bt_d.get("gamma", 1.1)),
                      rate_cap_bits=float(bt_d.get("rate_cap_bits", 6.0)))
    except ValueError as exc:
        raise ConfigError(f"bt: {exc}") from exc

    dp_d = raw.get("dp", {})
    R_total = dp_d.get("R_total", "2T")
    if R_total != "2T" and not isinstance(R_total, (int, float)):
        raise ConfigError(f"dp.R_total must be a number or '2T', got {R_total!r}")
    delta_R = float(dp_d.get("delta_R", 0.1))

    numerics = dict(_NUMERIC_DEFAULTS)
    numerics.update(raw.get("numerics", {}))

    return ExperimentConfig(
        problem=problem, prior=prior, mode=mode, coder=coder, T=T, bt=bt,
        dp_R_total=R_total, dp_delta_R=delta_R,
        output_dir=Path(raw.get("output_dir", "out")),
        numerics=numerics, raw=raw,
    )


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _resolve_T(cfg: ExperimentConfig):
    kappa = cfg.problem.kappa
    s2e = cfg.problem.sigma2_e(cfg.prior)
    se = se_trajectory(cfg.prior, kappa, s2e,
                       T_max=int(cfg.numerics["T_max"]),
                       steady_tol_db=float(cfg.numerics["steady_tol_db"]),
                       nodes=int(cfg.numerics["gh_nodes"]))
    if cfg.T == "auto":
        if se.steady_state_t is None:
            raise ConfigError("T='auto' but no steady state within T_max iterations")
        return se.steady_state_t, se
    return int(cfg.T), se


def _make_ctx(cfg: ExperimentConfig) -> PlanningContext:
    return PlanningContext(
        prior=cfg.prior,
        kappa=cfg.problem.kappa,
        sigma2_e=cfg.problem.sigma2_e(cfg.prior),
        P=cfg.problem.P,
        rd_pilots=int(cfg.numerics["family_pilots"]),
        rd_points=int(cfg.numerics["family_points"]),
        gh_nodes=int(cfg.numerics["gh_nodes"]),
    )


def _dp_plan(cfg: ExperimentConfig, T: int, ctx: PlanningContext) -> AllocationPlan:
    R_total = 2.0 * T if cfg.dp_R_total == "2T" else float(cfg.dp_R_total)
    plan, _ = dp_allocate(ctx.sigma2_0, R_total, T, cfg.dp_delta_R, ctx)
    return plan


def _bt_offline(cfg: ExperimentConfig, T: int, ctx: PlanningContext, se,
                rate_measure: str) -> AllocationPlan:
    """Predicted back-tracking trajectory (no simulation)."""
    s2 = ctx.sigma2_0
    rates, pred = [], []
    for t in range(T):
        r, s2q = bt_step(s2, float(se.sigma2_seq[t + 1]), cfg.bt, ctx,
                         rate_measure=rate_measure)
        s2 = float(ctx.se_from_channel(s2 + ctx.P * s2q))
        rates.append(r)
        pred.append(s2)
    rates = np.array(rates)
    return AllocationPlan(rates=rates, predicted_sigma2=np.array(pred),
                          total_bits=float(rates.sum()))


def _write_trace(path: Path, main_traces, centr_traces):
    rows = [TRACE_HEADER]
    for tr, ct in zip(main_traces, centr_traces):
        rows.append(",".join([
            str(tr.t), _fmt(tr.rate_bits), _fmt(tr.hq_bits), _fmt(tr.sigma2_C),
            _fmt(tr.sigma2_D_pred), _fmt(tr.sigma2_D_emp),
            _fmt(ct.sdr_emp_db), _fmt(tr.sdr_emp_db), _fmt(tr.cum_bits),
        ]))
    path.write_text("\n".join(rows) + "\n")


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Execute one config; returns the summary dict (also written to disk)."""
    T, se = _resolve_T(cfg)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    instance = build_instance(cfg.problem, cfg.prior)
    nodes = int(cfg.numerics["gh_nodes"])

    centr = run_centralized(instance, T, nodes=nodes)
    plan = None
    if cfg.mode == "centralized":
        main = centr
    elif cfg.mode == "mp-uncompressed":
        main = run_mp(instance, "uncompressed", T, coder=cfg.coder, nodes=nodes)
    elif cfg.mode == "bt":
        ctx = _make_ctx(cfg)
        main = run_mp(instance, "bt", T, coder=cfg.coder, policy=cfg.bt,
                      ctx=ctx, nodes=nodes)
    else:  # dp
        ctx = _make_ctx(cfg)
        plan = _dp_plan(cfg, T, ctx)
        main = run_mp(instance, "dp", T, coder=cfg.coder, plan=plan,
                      ctx=ctx, nodes=nodes)
        (out / "plan.csv").write_text(serialize_plan(plan))
        (out / "plan_ecsq.csv").write_text(serialize_plan(plan_to_ecsq(plan)))

    _write_trace(out / "trace.csv", main, centr)

    measured_total = main[-1].cum_bits
    if cfg.mode == "dp":
        headline = plan_to_ecsq(plan).total_bits if cfg.coder == "ecsq" else plan.total_bits
    else:
        headline = measured_total
    summary = {
        "version": __version__,
        "mode": cfg.mode,
        "coder": cfg.coder,
        "T": T,
        "steady_state_t": se.steady_state_t,
        "final_sdr_centralized_db": centr[-1].sdr_emp_db,
        "final_sdr_db": main[-1].sdr_emp_db,
        "total_bits": headline,
        "measured_total_bits": measured_total,
        "per_iteration_rates": [tr.rate_bits for tr in main],
        "diverged": any(tr.diverged for tr in main),
        "config": cfg.raw,
    }
    if plan is not None:
        summary["plan_rates"] = plan.rates.tolist()
    (out / "summary.json").write_text(
        json.dumps(_sanitize(summary), sort_keys=True, indent=2) + "\n")
    return summary


def _sanitize(obj):
    """Strict-JSON form: numpy scalars to Python, non-finite floats to 'inf'."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set or ())
    if args.output_dir:
        cfg.output_dir = Path(args.output_dir)
    summary = run_experiment(cfg)
    print(f"mode={summary['mode']} coder={summary['coder']} T={summary['T']} "
          f"total_bits={summary['total_bits']:.4g} "
          f"final_sdr={summary['final_sdr_db']:.3f} dB "
          f"(centralized {summary['final_sdr_centralized_db']:.3f} dB)")
    return 0


def cmd_se(args) -> int:
    cfg = load_config(args.config, args.set or ())
    if args.output_dir:
        cfg.output_dir = Path(args.output_dir)
    T, se = _resolve_T(cfg)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    rows = ["t,sigma2,sdr_db"]
    for t, (s2, sdr) in enumerate(zip(se.sigma2_seq, se.sdr_seq)):
        rows.append(f"{t},{_fmt(s2)},{_fmt(sdr)}")
    (out / "se.csv").write_text("\n".join(rows) + "\n")
    print(f"steady_state_t={se.steady_state_t} (tol {cfg.numerics['steady_tol_db']} dB), "
          f"resolved T={T}, final SDR {se.sdr_seq[-1]:.3f} dB")
    return 0


def cmd_allocate(args) -> int:
    cfg = load_config(args.config, args.set or ())
    if args.output_dir:
        cfg.output_dir = Path(args.output_dir)
    T, se = _resolve_T(cfg)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    ctx = _make_ctx(cfg)
    if cfg.mode == "dp":
        plan = _dp_plan(cfg, T, ctx)
        (out / "plan.csv").write_text(serialize_plan(plan))
        (out / "plan_ecsq.csv").write_text(serialize_plan(plan_to_ecsq(plan)))
        print(f"dp plan over T={T}: total {plan.total_bits:.4g} bits "
              f"(ecsq convention {plan_to_ecsq(plan).total_bits:.4g}), "
              f"final predicted sigma2 {plan.predicted_sigma2[-1]:.6g}")
    elif cfg.mode == "bt":
        plan = _bt_offline(cfg, T, ctx, se, rate_measure="ecsq")
        (out / "plan.csv").write_text(serialize_plan(plan))
        print(f"bt offline plan over T={T}: total {plan.total_bits:.4g} bits, "
              f"final predicted sigma2 {plan.predicted_sigma2[-1]:.6g}")
    else:
        print(f"mode {cfg.mode!r} has no rate plan", file=sys.stderr)
        return 2
    return 0


def cmd_table1(args) -> int:
    cfg_dir = Path(args.config_dir)
    paths = sorted(cfg_dir.glob("*.json"))
    if not paths:
        print(f"no .json configs in {cfg_dir}", file=sys.stderr)
        return 2
    out_path = Path(args.output) if args.output else cfg_dir / "table1.csv"
    cols, col_names = [], []
    for path in paths:
        eps = None
        try:
            cfg = load_config(path, args.set or ())
            eps = cfg.prior.epsilon
            col_names.append(f"eps={eps:g}")
            T, se = _resolve_T(cfg)
            ctx = _make_ctx(cfg)
            plan = _dp_plan(cfg, T, ctx)
            dp_rd = plan.total_bits
            dp_ecsq = plan_to_ecsq(plan).total_bits
            bt_rd = _bt_offline(cfg, T, ctx, se, rate_measure="rd").total_bits
            if args.skip_sim:
                bt_ecsq = None
            else:
                instance = build_instance(cfg.problem, cfg.prior)
                traces = run_mp(instance, "bt", T, coder="ecsq", policy=cfg.bt,
                                ctx=ctx, nodes=int(cfg.numerics["gh_nodes"]))
                bt_ecsq = traces[-1].cum_bits
            ref = TABLE1_REFERENCE.get(round(eps, 6))
            cols.append((eps, (bt_rd, bt_ecsq, dp_rd, dp_ecsq), ref))
        except Exception as exc:  # keep the table partial on failures
            print(f"{path.name}: {exc}", file=sys.stderr)
            if eps is None:
                col_names.append(path.stem)
            ref = None if eps is None else TABLE1_REFERENCE.get(round(eps, 6))
            cols.append((eps, (None, None, None, None), ref))
    labels = ("bt_rd_prediction", "bt_ecsq_simulation", "dp_rd_prediction", "dp_ecsq_convention")
    rows = ["row," + ",".join(col_names) + "," + ",".join(c + "_ref" for c in col_names)]
    for i, label in enumerate(labels):
        vals = [("" if c[1][i] is None else _fmt(c[1][i])) for c in cols]
        refs = [("" if c[2] is None else _fmt(c[2][(2, 3, 0, 1)[i]])) for c in cols]
        rows.append(f"{label}," + ",".join(vals) + "," + ",".join(refs))
    out_path.write_text("\n".join(rows) + "\n")
    print(f"wrote {out_path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mpamp",
                                     description="multi-processor AMP experiments")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("config", type=Path)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field (dotted path)")
        p.add_argument("-o", "--output-dir", default=None)

    p_run = sub.add_parser("run", help="simulate one configuration")
    common(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_se = sub.add_parser("se", help="offline state-evolution trajectory")
    common(p_se)
    p_se.set_defaults(fn=cmd_se)

    p_al = sub.add_parser("allocate", help="compute the rate plan only")
    common(p_al)
    p_al.set_defaults(fn=cmd_allocate)

    p_t1 = sub.add_parser("table1", help="totals table over a config directory")
    p_t1.add_argument("config_dir", type=Path)
    p_t1.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_t1.add_argument("--output", default=None)
    p_t1.add_argument("--skip-sim", action="store_true",
                      help="omit the simulated back-tracking row")
    p_t1.set_defaults(fn=cmd_table1)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
