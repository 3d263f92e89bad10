"""Command-line front end.

Subcommands
-----------
``gallery``     list the built-in games
``solve-pde``   grid solve, writes value_grid.csv / value_grid.bin
``solve-bsde``  path-space solve for one revelation policy
``optimize``    policy search, writes search_report.json / policy.json
``play``        closed-loop play against a named opponent
``check``       run the acceptance batch

Every run that writes outputs also writes ``manifest.json`` (command,
package version, config hash, seeds, wall time).  Exit codes: 0 success,
2 invalid input or configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:                       # python < 3.11
    import tomli as tomllib

from . import __version__
from .acceptance import run_all
from .belief_policy import (constant_policy, load_policy, one_shot_split,
                            sample_belief_paths, save_policy)
from .bsde_solver import BsdeProblem, solve_backward
from .errors import NumericalError, ValidationError
from .gallery import GALLERY, gallery_game
from .game_model import GameSpec, as_belief
from .hji_solver import ValueGrid, complete_info_solve, solve_obstacle_hji
from .play_harness import (OPPONENT_FORMS, extract_strategy, reweighted_play,
                           simulate_play)
from .sde_engine import TimeGrid, simulate_uncontrolled
from .value_search import OneShotFamily, TwoStageFamily, minimize_over_policies


def _load_game(args) -> tuple[GameSpec, dict]:
    """Game from --game or from the TOML config; flag wins over file."""
    config: dict = {}
    if args.config:
        with open(args.config, "rb") as fh:
            config = tomllib.load(fh)
    name = args.game or config.get("game")
    if not name:
        raise ValidationError(
            "no game selected: pass --game NAME or put game = \"NAME\" in "
            "the config file")
    overrides = config.get("overrides", {})
    if not isinstance(overrides, dict):
        raise ValidationError("[overrides] must be a TOML table")
    return gallery_game(name, **overrides), {"game": name,
                                             "overrides": overrides}


def _config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _write_manifest(out: Path, command: str, payload: dict, outputs: list,
                    wall: float) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config_hash": _config_hash(payload),
        "config": payload,
        "outputs": outputs,
        "wall_time_s": round(wall, 3),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _prior(args, spec: GameSpec):
    q = float(args.prior)
    if spec.n_scenarios != 2:
        raise ValidationError("--prior covers two-scenario games only")
    if not 0.0 <= q <= 1.0:
        raise ValidationError("--prior must lie in [0, 1]")
    return as_belief((q, 1.0 - q))


def _policy_for(args, spec: GameSpec, grid: TimeGrid):
    if getattr(args, "policy", None):
        policy = load_policy(args.policy)
        policy.require_valid()
        return policy
    prior = _prior(args, spec)
    if getattr(args, "reveal", False):
        return one_shot_split(tuple(prior), [(1.0, 0.0), (0.0, 1.0)],
                              [float(prior[0]), float(prior[1])], grid)
    return constant_policy(tuple(prior), grid)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gallery(args) -> int:
    for name in sorted(GALLERY):
        spec = gallery_game(name)
        doc = (GALLERY[name].__doc__ or "").strip().splitlines()[0]
        print(f"{name:14s} d={spec.d} scenarios={spec.n_scenarios} "
              f"T={spec.horizon:g}  {doc}")
    return 0


def cmd_solve_pde(args) -> int:
    start = time.monotonic()
    spec, payload = _load_game(args)
    out = _out_dir(args)
    kwargs = dict(nx=args.nx, n_p=args.np_, nt=args.nt,
                  x_lo=args.x_lo, x_hi=args.x_hi)
    if args.scenario is not None:
        vg = complete_info_solve(spec, args.scenario,
                                 **{k: v for k, v in kwargs.items()
                                    if k != "n_p"})
    else:
        vg = solve_obstacle_hji(spec, **kwargs).value
    vg.save_csv(out / "value_grid.csv")
    vg.save_binary(out / "value_grid.bin")
    payload.update(nx=args.nx, np=args.np_, nt=args.nt,
                   scenario=args.scenario)
    _write_manifest(out, "solve-pde", payload,
                    ["value_grid.csv", "value_grid.bin"],
                    time.monotonic() - start)
    print(f"value grid: {len(vg.t)} x {len(vg.x)} x {len(vg.p)} nodes, "
          f"start value {vg.interp(vg.t[0], float(args.x0), float(args.prior)):.6f} "
          f"at x0={args.x0:g}, prior={args.prior:g}")
    return 0


def cmd_solve_bsde(args) -> int:
    start = time.monotonic()
    spec, payload = _load_game(args)
    out = _out_dir(args)
    grid = TimeGrid(0.0, spec.horizon, args.n_steps)
    policy = _policy_for(args, spec, grid)
    bundle = simulate_uncontrolled(spec, 0.0, args.x0, grid, args.m, args.seed)
    wb = sample_belief_paths(policy, bundle, args.seed)
    sol = solve_backward(BsdeProblem.from_game(spec), wb)
    report = {"y0": sol.y0, "y0_se": sol.y0_se, "m": args.m,
              "n_steps": args.n_steps, "seed": args.seed,
              "identity_defect": sol.diagnostics["identity_defect"]}
    with open(out / "bsde_report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    payload.update(m=args.m, n_steps=args.n_steps, seed=args.seed,
                   x0=args.x0, prior=args.prior)
    _write_manifest(out, "solve-bsde", payload, ["bsde_report.json"],
                    time.monotonic() - start)
    print(f"value {sol.y0:.6f} +- {sol.y0_se:.6f} "
          f"(m={args.m}, n_steps={args.n_steps}, seed={args.seed})")
    return 0


_FAMILIES = {
    "one-shot": lambda args: OneShotFamily(time_index=0),
    "two-stage": lambda args: TwoStageFamily(first_time=0,
                                             second_time=args.n_steps // 2),
}


def cmd_optimize(args) -> int:
    start = time.monotonic()
    spec, payload = _load_game(args)
    out = _out_dir(args)
    grid = TimeGrid(0.0, spec.horizon, args.n_steps)
    prior = _prior(args, spec)
    family = _FAMILIES[args.family](args)
    result = minimize_over_policies(spec, family, tuple(prior), args.x0,
                                    grid, args.m, args.seed,
                                    budget=args.budget,
                                    confirm_seed=args.seed + 1)
    result.save_json(out / "search_report.json")
    save_policy(result.best_policy, out / "policy.json")
    payload.update(m=args.m, n_steps=args.n_steps, seed=args.seed,
                   budget=args.budget, family=args.family, x0=args.x0,
                   prior=args.prior)
    _write_manifest(out, "optimize", payload,
                    ["search_report.json", "policy.json"],
                    time.monotonic() - start)
    conf = result.confirmation or {}
    print(f"best value {result.best_value:.6f} +- {result.best_se:.6f} "
          f"after {result.n_evals} evaluations; confirmation "
          f"{conf.get('value', float('nan')):.6f} on seed {conf.get('seed')}")
    return 0


def cmd_play(args) -> int:
    start = time.monotonic()
    spec, payload = _load_game(args)
    out = _out_dir(args)
    if args.value_grid:
        vg = ValueGrid.load_binary(args.value_grid)
    else:
        vg = solve_obstacle_hji(spec).value
    strategy = extract_strategy(spec, vg)
    grid = TimeGrid(0.0, spec.horizon, args.n_steps)
    policy = _policy_for(args, spec, grid)
    report = simulate_play(spec, strategy, policy, args.x0, args.m, args.seed,
                           opponent=args.opponent, reference=vg)
    if args.reweighted:
        rw = reweighted_play(spec, strategy, policy, args.x0, args.m,
                             args.seed, opponent=args.opponent)
        report.control_usage["reweighted_aggregate"] = rw.aggregate
        report.control_usage["reweighted_se"] = rw.aggregate_se
    report.save_json(out / "payoff_report.json")
    payload.update(m=args.m, n_steps=args.n_steps, seed=args.seed,
                   opponent=args.opponent, x0=args.x0, prior=args.prior)
    _write_manifest(out, "play", payload, ["payoff_report.json"],
                    time.monotonic() - start)
    gap = "n/a" if report.gap is None else f"{report.gap:+.4f}"
    print(f"realized {report.aggregate:.6f} +- {report.aggregate_se:.6f} vs "
          f"opponent {args.opponent}; gap to grid value {gap}")
    return 0


def cmd_check(args) -> int:
    results = run_all(fast=args.fast, stream=sys.stdout)
    if args.out:
        out = _out_dir(args)
        doc = [{"index": r.index, "name": r.name, "passed": r.passed,
                "details": r.details, "elapsed_s": round(r.elapsed, 2)}
               for r in results]
        with open(out / "acceptance.json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} criteria passed")
    return 0 if n_fail == 0 else 1


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, out_required: bool = True):
    p.add_argument("--game", help="gallery game name")
    p.add_argument("--config", help="TOML config with game/overrides")
    p.add_argument("--out", required=out_required, default="out",
                   help="output directory")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for path generation")


def _add_mc(p: argparse.ArgumentParser):
    p.add_argument("--m", type=int, default=20000, help="number of paths")
    p.add_argument("--n-steps", type=int, default=32, dest="n_steps")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x0", type=float, default=0.0, help="start state")
    p.add_argument("--prior", type=float, default=0.5,
                   help="prior probability of scenario 0")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="infogame",
        description="solvers for zero-sum diffusion games with an informed player")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("gallery", help="list built-in games")

    p = sub.add_parser("solve-pde", help="grid solve of the obstacle equation")
    _add_common(p)
    p.add_argument("--nx", type=int, default=201)
    p.add_argument("--np", type=int, default=51, dest="np_")
    p.add_argument("--nt", type=int, default=None,
                   help="time steps (default: largest stable)")
    p.add_argument("--x-lo", type=float, default=None)
    p.add_argument("--x-hi", type=float, default=None)
    p.add_argument("--scenario", type=int, default=None,
                   help="complete-information solve for one scenario")
    p.add_argument("--x0", type=float, default=0.0)
    p.add_argument("--prior", type=float, default=0.5)

    p = sub.add_parser("solve-bsde", help="path-space solve for one policy")
    _add_common(p)
    _add_mc(p)
    p.add_argument("--policy", help="policy JSON (default: no revelation)")
    p.add_argument("--reveal", action="store_true",
                   help="use full immediate revelation instead")

    p = sub.add_parser("optimize", help="search for the best revelation policy")
    _add_common(p)
    _add_mc(p)
    p.add_argument("--family", choices=sorted(_FAMILIES), default="one-shot")
    p.add_argument("--budget", type=int, default=200,
                   help="max policy evaluations")

    p = sub.add_parser("play", help="closed-loop play against an opponent")
    _add_common(p)
    _add_mc(p)
    p.add_argument("--policy", help="policy JSON (default: no revelation)")
    p.add_argument("--reveal", action="store_true")
    p.add_argument("--opponent", default="myopic-max",
                   help=f"one of: {', '.join(OPPONENT_FORMS)}")
    p.add_argument("--value-grid", help="value_grid.bin from solve-pde")
    p.add_argument("--reweighted", action="store_true",
                   help="also run the change-of-measure estimate")

    p = sub.add_parser("check", help="run the acceptance batch")
    p.add_argument("--fast", action="store_true", help="smoke-size run")
    p.add_argument("--out", default=None, help="write acceptance.json here")

    return ap


_DISPATCH = {
    "gallery": cmd_gallery,
    "solve-pde": cmd_solve_pde,
    "solve-bsde": cmd_solve_bsde,
    "optimize": cmd_optimize,
    "play": cmd_play,
    "check": cmd_check,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None):
        os.environ["INFOGAME_THREADS"] = str(args.threads)
    try:
        return _DISPATCH[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
