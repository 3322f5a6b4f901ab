"""Experiment runner: train, eval, verify, plot-data, gen-model.

Configs are TOML files with [env], [train], [eval] (and optional [verify])
sections; unknown keys are rejected before any compute. Every command is
deterministic given identical config and seed: floats are written with
repr round-trip precision and the wall-clock CSV column stays 0 unless
--wall-clock is passed (real timings always go to stderr).

Exit codes: 0 ok, 1 validation error, 2 compute error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import scipy

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import __version__, evaluation as ev, oracle, verify as vf
from . import beliefs as bel
from .errors import ModelLoadError, ParameterError, PompgError
from .internal_state import make_window_spec
from .model import EnvParams, build_env, save_model
from .policy import load_policy, policy_to_json
from .training import TrainConfig, TrainRecord, train


@dataclass(frozen=True)
class EvalConfig:
    method: str = "auto"
    budget: int = 4096
    belief_horizon: int = 4


@dataclass(frozen=True)
class VerifyConfig:
    instances: int = 12
    belief_horizon: int = 3
    train_iterations: int = 40
    seed: int = 7


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvParams
    t_w: int
    train: TrainConfig
    eval: EvalConfig
    verify: VerifyConfig
    seed: int
    raw: dict


_ENV_KEYS = {"id", "listen_accuracy", "arrival_probs", "collision_obs_accuracy",
             "grid_width", "grid_height", "sight_range", "cooperative_lift",
             "lift_reward", "episode_horizon", "discount", "state_cap",
             "model_path"}
_TRAIN_KEYS = {"iterations", "step_size", "advantage_source", "mc_samples",
               "mc_horizon", "mc_workers", "t_w", "init", "init_scale",
               "metric_cadence", "eval_cadence", "compute_gap", "compute_db",
               "belief_horizon", "gap_method", "gap_budget", "chain_cap"}
_EVAL_KEYS = {"method", "budget", "belief_horizon"}
_VERIFY_KEYS = {"instances", "belief_horizon", "train_iterations", "seed"}


def _reject_unknown(section: str, table: dict, allowed: set):
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ParameterError(
            f"unknown keys in [{section}]: {', '.join(unknown)}")


def load_config(path, seed_override=None, threads=None) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ParameterError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ParameterError(f"config {path} is not valid TOML: {exc}") from exc
    _reject_unknown("top level", doc,
                    {"env", "train", "eval", "verify", "seed"})

    env_tab = dict(doc.get("env", {}))
    _reject_unknown("env", env_tab, _ENV_KEYS)
    if "id" in env_tab:
        env_tab["env_id"] = env_tab.pop("id")
    if "arrival_probs" in env_tab:
        env_tab["arrival_probs"] = tuple(env_tab["arrival_probs"])
    env = EnvParams(**env_tab).validate()

    train_tab = dict(doc.get("train", {}))
    _reject_unknown("train", train_tab, _TRAIN_KEYS)
    t_w = int(train_tab.pop("t_w", 0))
    if train_tab.get("step_size") == "theorem":
        train_tab["step_size"] = None
    seed = int(seed_override if seed_override is not None
               else doc.get("seed", 0))
    train_tab.setdefault("iterations", 100)
    if threads is not None:
        train_tab.setdefault("mc_workers", max(1, int(threads)))
    train_cfg = TrainConfig(seed=seed, **train_tab).validate()

    eval_tab = dict(doc.get("eval", {}))
    _reject_unknown("eval", eval_tab, _EVAL_KEYS)
    eval_cfg = EvalConfig(**eval_tab)

    verify_tab = dict(doc.get("verify", {}))
    _reject_unknown("verify", verify_tab, _VERIFY_KEYS)
    verify_cfg = VerifyConfig(**verify_tab)

    return ExperimentConfig(env=env, t_w=t_w, train=train_cfg, eval=eval_cfg,
                            verify=verify_cfg, seed=seed, raw=doc)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


CSV_BASE = ["iter", "potential"]
CSV_TAIL = ["ne_gap", "a", "d_b", "min_occupancy", "max_abs_adv", "wall_ms"]


def records_to_csv(records, n_agents: int, wall_clock: bool = False) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = CSV_BASE + [f"j_agent_{i}" for i in range(n_agents)] + CSV_TAIL
    writer.writerow(header)
    for r in records:
        row = [r.t, _fmt(r.potential)]
        row += [_fmt(j) for j in r.j_agents]
        row += [_fmt(r.ne_gap), _fmt(r.a), _fmt(r.d_b), _fmt(r.min_occupancy),
                _fmt(max(r.max_abs_adv) if r.max_abs_adv else 0.0),
                _fmt(r.wall_ms if wall_clock else 0.0)]
        writer.writerow(row)
    return buf.getvalue()


def csv_to_records(path) -> tuple[list[TrainRecord], int]:
    text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    header = rows[0]
    agents = [h for h in header if h.startswith("j_agent_")]
    col = {name: header.index(name) for name in header}

    def fval(row, name):
        s = row[col[name]]
        return None if s == "" else float(s)

    records = []
    for row in rows[1:]:
        records.append(TrainRecord(
            t=int(row[col["iter"]]),
            potential=float(row[col["potential"]]),
            j_agents=tuple(float(row[col[a]]) for a in agents),
            ne_gap=fval(row, "ne_gap"), a=fval(row, "a"), d_b=fval(row, "d_b"),
            min_occupancy=fval(row, "min_occupancy"),
            max_abs_adv=(fval(row, "max_abs_adv") or 0.0,),
            wall_ms=fval(row, "wall_ms") or 0.0))
    return records, len(agents)


def _manifest(config: ExperimentConfig) -> str:
    doc = {
        "config": config.raw,
        "seed": config.seed,
        "versions": {
            "pompg": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    return json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n"


def cmd_train(config: ExperimentConfig, out_dir: Path,
              wall_clock: bool = False) -> int:
    model = build_env(config.env)
    spec = make_window_spec(model, config.t_w)
    policy, records = train(model, spec, config.train)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.csv").write_text(
        records_to_csv(records, model.n_agents, wall_clock=wall_clock),
        encoding="utf-8")
    (out_dir / "policy.json").write_text(policy_to_json(policy, spec, model),
                                         encoding="utf-8")
    (out_dir / "manifest.json").write_text(_manifest(config), encoding="utf-8")
    last = records[-1]
    print(f"trained {config.train.iterations} iterations; "
          f"final potential {last.potential:.6f}", file=sys.stderr)
    if records and records[-1].wall_ms:
        print(f"wall clock {records[-1].wall_ms:.0f} ms", file=sys.stderr)
    print(str(out_dir / "metrics.csv"))
    return 0


def cmd_eval(config: ExperimentConfig, policy_path: Path,
             out_dir: Path | None) -> int:
    model = build_env(config.env)
    spec = make_window_spec(model, config.t_w)
    policy = load_policy(policy_path, spec, model)
    space = oracle.enumerate_chain_space(model, spec)
    chain = oracle.build_chain(model, spec, policy, space=space)
    values = oracle.solve_values(chain, "all")
    occ = oracle.compute_occupancy(chain)
    advs = [oracle.marginal_advantage(chain, values, occ, i)
            for i in range(model.n_agents)]
    j_agents, phi = oracle.exact_objective(chain, values)
    gap = ev.ne_gap(model, spec, policy, method=config.eval.method,
                    budget=config.eval.budget, space=space)
    d_b = bel.distance_db(bel.exact_beliefs(
        model, spec, config.eval.belief_horizon, policy)).d_b
    result = {
        "potential": phi,
        "j_agents": list(j_agents),
        "ne_gap": gap.ne_gap,
        "gaps": list(gap.gaps),
        "a": ev.compute_a(policy, advs),
        "d_b": d_b,
        "belief_horizon": config.eval.belief_horizon,
    }
    text = json.dumps(result, indent=2, sort_keys=True) + "\n"
    print(text, end="")
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "eval.json").write_text(text, encoding="utf-8")
    return 0


def cmd_verify(config: ExperimentConfig, out_dir: Path | None,
               run_dir: Path | None) -> int:
    model = build_env(config.env)
    spec = make_window_spec(model, config.t_w)
    if run_dir is not None:
        records, _ = csv_to_records(run_dir / "metrics.csv")
    else:
        tc = replace(config.train,
                     iterations=config.verify.train_iterations,
                     metric_cadence=1, eval_cadence=1,
                     compute_gap=True, compute_db=True)
        _, records = train(model, spec, tc)
    gap_records = [r for r in records if r.ne_gap is not None
                   and r.d_b is not None]
    report = vf.full_report(model, spec, config.verify.instances,
                            config.verify.belief_horizon, config.verify.seed,
                            records=gap_records or None,
                            gap_method=config.eval.method,
                            gap_budget=config.eval.budget)
    text = json.dumps(report, indent=2, sort_keys=True, default=float) + "\n"
    print(text, end="")
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "verify.json").write_text(text, encoding="utf-8")
    return 0 if report["pass"] else 3


def cmd_plotdata(run_dirs: list[Path], out_dir: Path | None) -> int:
    if not run_dirs:
        raise ParameterError("plot-data needs at least one run directory")
    all_series = []
    for rd in run_dirs:
        metrics = rd / "metrics.csv"
        if not metrics.exists():
            raise ParameterError(f"{rd} has no metrics.csv")
        records, n_agents = csv_to_records(metrics)
        if not records:
            raise ParameterError(f"{metrics} contains no records")
        target = out_dir if out_dir is not None else rd
        target.mkdir(parents=True, exist_ok=True)
        stem = rd.name
        pot_rows = [f"{r.t},{_fmt(r.potential)}" for r in records]
        (target / f"{stem}_potential.csv").write_text(
            "iter,potential\n" + "\n".join(pot_rows) + "\n", encoding="utf-8")
        gap_rows = [f"{r.t},{_fmt(r.ne_gap)}" for r in records
                    if r.ne_gap is not None]
        if gap_rows:
            (target / f"{stem}_ne_gap.csv").write_text(
                "iter,ne_gap\n" + "\n".join(gap_rows) + "\n", encoding="utf-8")
        counted = [r for r in records
                   if r.ne_gap is not None and r.a is not None
                   and r.min_occupancy is not None and r.d_b is not None]
        if counted:
            model = None
            manifest = rd / "manifest.json"
            if manifest.exists():
                cfg = json.loads(manifest.read_text(encoding="utf-8"))
                env_tab = dict(cfg["config"].get("env", {}))
                if "id" in env_tab:
                    env_tab["env_id"] = env_tab.pop("id")
                if "arrival_probs" in env_tab:
                    env_tab["arrival_probs"] = tuple(env_tab["arrival_probs"])
                model = build_env(EnvParams(**env_tab))
            if model is not None:
                rows = []
                for k in range(1, len(counted) + 1):
                    bound = ev.theorem_bound_check(counted[:k], model)
                    rows.append(f"{counted[k - 1].t},{_fmt(bound.rhs)}")
                (target / f"{stem}_bound.csv").write_text(
                    "iter,bound_rhs\n" + "\n".join(rows) + "\n",
                    encoding="utf-8")
        all_series.append((stem, {r.t: r.potential for r in records}))

    if len(all_series) > 1:
        target = out_dir if out_dir is not None else run_dirs[0]
        iters = sorted(set().union(*(s[1].keys() for s in all_series)))
        header = "iter," + ",".join(f"potential_{s[0]}" for s in all_series)
        lines = [header]
        for t in iters:
            cells = [str(t)]
            for _, series in all_series:
                cells.append(_fmt(series.get(t)))
            lines.append(",".join(cells))
        (target / "comparison.csv").write_text("\n".join(lines) + "\n",
                                               encoding="utf-8")
    return 0


def cmd_genmodel(config: ExperimentConfig, out_path: Path) -> int:
    model = build_env(config.env)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out_path)
    print(str(out_path))
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ParameterError(message)


def build_parser() -> _Parser:
    p = _Parser(prog="pompg", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", type=Path, help="TOML experiment config")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--threads", type=int, default=None,
                   help="worker count for Monte-Carlo sampling")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", help="train and write metrics/policy/manifest")
    pe = sub.add_parser("eval", help="evaluate a saved policy")
    pe.add_argument("policy", type=Path)
    pv = sub.add_parser("verify", help="lemma sweeps and the bound check")
    pv.add_argument("--run", type=Path, default=None,
                    help="reuse a finished run directory instead of training")
    pp = sub.add_parser("plot-data", help="emit plot-ready series from runs")
    pp.add_argument("runs", type=Path, nargs="+")
    pg = sub.add_parser("gen-model", help="write a built-in model JSON")
    pg.add_argument("path", type=Path)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        needs_config = args.command in ("train", "eval", "verify", "gen-model")
        config = None
        if needs_config:
            if args.config is None:
                raise ParameterError(f"{args.command} requires --config")
            config = load_config(args.config, seed_override=args.seed,
                                 threads=args.threads)
        if args.command == "train":
            out = args.out if args.out is not None else Path("runs/latest")
            return cmd_train(config, out)
        if args.command == "eval":
            return cmd_eval(config, args.policy, args.out)
        if args.command == "verify":
            return cmd_verify(config, args.out, args.run)
        if args.command == "plot-data":
            return cmd_plotdata(list(args.runs), args.out)
        if args.command == "gen-model":
            return cmd_genmodel(config, args.path)
        raise ParameterError(f"unknown command {args.command!r}")
    except (ParameterError, ModelLoadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PompgError as exc:
        print(f"compute error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
