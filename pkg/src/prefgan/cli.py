"""Command line entry points: run, evaluate, report, serve-labels."""

from __future__ import annotations

import argparse
import json
import sys
import threading

from . import orchestrator
from .config import RunConfig, config_from_dict, load_config


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out is not None:
        updates["out_dir"] = args.out
    if args.schedule is not None:
        updates["schedule"] = args.schedule
    if args.episodes is not None:
        updates["episodes"] = args.episodes
    if args.env is not None:
        updates["env"] = args.env
    if args.oracle:
        updates["oracle"] = True
    if not updates:
        return cfg
    import dataclasses

    return dataclasses.replace(cfg, **updates)


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return _apply_overrides(cfg, args)


def _add_common(p):
    p.add_argument("--config", help="JSON config file mirroring RunConfig")
    p.add_argument("--seed", type=int, help="root seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--schedule", help="query schedule name")
    p.add_argument("--episodes", type=int, help="episode budget")
    p.add_argument("--env", help="environment name (pointgoal, pendulum)")
    p.add_argument(
        "--oracle", action="store_true",
        help="answer scheduled human queries with the synthetic oracle",
    )


def cmd_run(args) -> int:
    cfg = _load(args)
    state = orchestrator.run(cfg, resume=args.resume)
    report = orchestrator.human_saving_report(state)
    print(f"run finished: {state.episode} episodes, stop reason {state.stop_reason}")
    print(f"labels consumed: {json.dumps(report['consumed'])}")
    if cfg.out_dir:
        print(f"outputs in {cfg.out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    if not args.out:
        print("evaluate needs --out pointing at a finished run", file=sys.stderr)
        return 2
    state = orchestrator.load_run_state(args.out)
    score = orchestrator.evaluate(state, args.eval_episodes)
    print(f"mean true return over {args.eval_episodes} episodes: {score}")
    return 0


def cmd_report(args) -> int:
    if not args.out:
        print("report needs --out pointing at a finished run", file=sys.stderr)
        return 2
    state = orchestrator.load_run_state(args.out)
    print(json.dumps(orchestrator.human_saving_report(state), indent=2))
    return 0


def cmd_serve_labels(args) -> int:
    import uvicorn

    from .envs import make_env
    from .gateway import HumanChannel, LabelGateway, build_app, state_status_provider

    cfg = _load(args)
    env = make_env(cfg.env)
    gateway = LabelGateway()
    channel = HumanChannel(gateway, env, cfg.label_timeout_s)
    state = orchestrator.init_run_state(cfg, human_channel=channel)
    gateway.status_provider = lambda: state_status_provider(state)

    def train():
        try:
            while state.stop_reason is None:
                orchestrator.run_iteration(state)
            print(f"run finished: stop reason {state.stop_reason}")
        except Exception as exc:  # surfaced in the server log
            print(f"run aborted: {exc}", file=sys.stderr)

    thread = threading.Thread(target=train, daemon=True)
    thread.start()
    uvicorn.run(build_app(gateway), host=args.host, port=args.port, log_level="warning")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="prefgan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a training run")
    _add_common(p_run)
    p_run.add_argument("--resume", action="store_true", help="continue from out_dir's checkpoint")
    p_run.set_defaults(fn=cmd_run)

    p_eval = sub.add_parser("evaluate", help="score a saved policy on true reward")
    _add_common(p_eval)
    p_eval.add_argument("--eval-episodes", type=int, default=10)
    p_eval.set_defaults(fn=cmd_evaluate)

    p_rep = sub.add_parser("report", help="label budget report for a saved run")
    _add_common(p_rep)
    p_rep.set_defaults(fn=cmd_report)

    p_srv = sub.add_parser("serve-labels", help="run with a live human label gateway")
    _add_common(p_srv)
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=int, default=8765)
    p_srv.set_defaults(fn=cmd_serve_labels)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
