"""``obfusbench`` command line: train, record, quantize, evaluate, rank, inspect."""
from __future__ import annotations

import argparse
import functools
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path


from . import agents, chainworld, evaluation, obfuscator, quantize, spaces, wrappers
from .errors import ObfusbenchError

log = logging.getLogger("obfusbench")

DEFAULT_OBS_ZDIM = 32
DEFAULT_ACT_ZDIM = 16
DEFAULT_OBS_STEPS = 200_000  # about 200 s on one core
DEFAULT_ACT_STEPS = 20_000


class StageError(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage


# -- helpers shared by commands --------------------------------------------

def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def build_env(config: chainworld.WorldConfig, obs_model, act_model):
    return wrappers.wrap_obfuscated(chainworld.ChainWorld(config), obs_model, act_model)


def load_policy_bundle(path):
    """Policy plus the obfuscation models it was trained against."""
    policy, refs = agents.load_policy(path)
    if not refs["obs_model"] or not refs["act_model"]:
        raise ObfusbenchError(f"{path}: policy does not reference its obfuscation models")
    return policy, obfuscator.load_model(refs["obs_model"]), obfuscator.load_model(refs["act_model"])


def run_evaluation(config, policy_path, seeds, policy_id=None):
    policy, obs_model, act_model = load_policy_bundle(policy_path)
    return evaluation.evaluate(
        lambda: build_env(config, obs_model, act_model), policy, seeds,
        policy_id=policy_id or Path(policy_path).stem,
    )


# -- commands ---------------------------------------------------------------

def cmd_make_space(args) -> int:
    space = {"observation": chainworld.OBSERVATION_SPACE, "action": chainworld.ACTION_SPACE}[args.kind]
    spaces.save_space(space, args.out)
    return 0


def cmd_make_config(args) -> int:
    cfg = chainworld.WorldConfig(grid_size=args.grid_size, placement_seed=args.placement_seed,
                                 max_episode_steps=args.max_steps)
    chainworld.save_config(chainworld.randomize_domain(cfg, args.round2_seed), args.out)
    return 0


def cmd_train_obfuscator(args) -> int:
    space = spaces.load_space(args.space)
    cfg = obfuscator.ObfuscationTrainConfig(
        steps=args.steps, batch_size=args.batch_size, hinge_weight=args.hinge_weight,
        learning_rate=args.lr,
    )
    t0 = time.perf_counter()
    model = obfuscator.train_obfuscation(space, args.zdim, cfg, args.seed)
    obfuscator.save_model(model, args.out)
    log.info("trained obfuscator for %s in %.1fs, final loss %.3g", args.space, time.perf_counter() - t0,
             model.final_loss)
    return 0


def cmd_record_demos(args) -> int:
    config = chainworld.load_config(args.env) if args.env else chainworld.WorldConfig()
    seeds = range(args.seed, args.seed + args.episodes)
    chainworld.record_demonstrations(config, chainworld.submitted_expert, args.episodes, args.out, seeds)
    return 0


def cmd_quantize(args) -> int:
    act_model = obfuscator.load_model(args.act_model)
    obs_model = obfuscator.load_model(args.obs_model)
    cs, ds = quantize.quantize_demo_actions(args.demos, act_model, args.k, args.seed, obs_model)
    quantize.save_centroids(cs, args.out)
    dataset_out = args.dataset_out or str(Path(args.out).with_suffix("")) + ".dataset.json"
    quantize.save_dataset(ds, dataset_out)
    return 0


def cmd_train_agent(args) -> int:
    ds = quantize.load_dataset(args.dataset)
    cs = quantize.load_centroids(args.centroids)
    cfg = agents.BCTrainConfig(steps=args.steps, batch_size=args.batch_size, learning_rate=args.lr,
                               min_episode_score=args.min_episode_score)
    # behavioural cloning is offline: it draws zero frames from the training budget
    meter = wrappers.BudgetMeter(args.budget)
    policy = agents.bc_train(ds, cs, cfg, args.seed)
    agents.save_policy(policy, args.out, args.centroids, args.obs_model, args.act_model)
    log.info("bc accuracy %.3f, env frames used %d/%d", policy.train_accuracy_, meter.frames_used,
             meter.max_frames)
    return 0


def cmd_evaluate(args) -> int:
    config = chainworld.load_config(args.env)
    seeds = evaluation.read_seeds(args.seeds) if args.seeds else list(range(10_000, 10_000 + args.episodes))
    if len(seeds) != args.episodes:
        raise ObfusbenchError(f"seed file lists {len(seeds)} seeds but --episodes is {args.episodes}")
    report = run_evaluation(config, args.policy, seeds, args.policy_id)
    evaluation.save_report(report, args.out)
    print(evaluation.format_max_item_table(report), end="")
    return 0


def cmd_rank(args) -> int:
    reports = [evaluation.load_report(p) for p in args.reports]
    board = evaluation.format_leaderboard(reports)
    if args.out:
        Path(args.out).write_text(board)
    print(board, end="")
    return 0


def inspect_model(path, n: int = 1000, seed: int = 0) -> str:
    model = obfuscator.load_model(path)
    rep = obfuscator.round_trip_report(model, n, seed)
    lines = []
    if not model.trained:
        lines.append("WARNING: model is marked untrained")
    space = model.space
    lines += [
        f"space: {space.n_continuous} continuous dims, discrete parts {list(space.discrete)} (flat_dim {space.flat_dim})",
        f"z_dim: {model.z_dim}",
        f"final_loss: {model.final_loss:.6g}",
        f"round_trip_accuracy: {rep.point_accuracy:.4f}",
        f"discrete_accuracy: {rep.discrete_accuracy:.4f}",
        f"mean_continuous_error: {rep.mean_continuous_error:.6f}",
        f"encoded_in_box: {rep.encoded_in_box:.4f}",
        f"decoded_valid: {rep.decoded_valid:.4f}",
        f"mean_preclamp_hinge: {rep.mean_preclamp_hinge:.6f}",
    ]
    return "\n".join(lines) + "\n"


def cmd_inspect(args) -> int:
    print(inspect_model(args.model, args.samples, args.seed), end="")
    return 0


# -- pipeline ---------------------------------------------------------------

@dataclass
class PipelineConfig:
    workdir: Path
    env: chainworld.WorldConfig = field(default_factory=chainworld.WorldConfig)
    round2_seed: int = 1
    obs_zdim: int = DEFAULT_OBS_ZDIM
    act_zdim: int = DEFAULT_ACT_ZDIM
    obs_steps: int = DEFAULT_OBS_STEPS
    act_steps: int = DEFAULT_ACT_STEPS
    obs_space_file: Path | None = None
    act_space_file: Path | None = None
    obs_seed: int = 0
    act_seed: int = 1
    demo_episodes: int = 50
    demo_seed: int = 0
    k: int = 16
    kmeans_seed: int = 0
    bc_steps: int = 20000
    bc_seed: int = 0
    budget: int = 100_000
    eval_episodes: int = 100
    eval_seed: int = 100_000

    def path(self, name: str) -> Path:
        return self.workdir / name


def _stage(name, fn, timings=None):
    t0 = time.perf_counter()
    try:
        return fn()
    except Exception as exc:  # noqa: BLE001 - every stage failure is reported with its tag
        raise StageError(name, exc) from exc
    finally:
        if timings is not None:
            timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run every stage into ``cfg.workdir``.

    Returns the artifact paths, the summary, and per-stage wall-clock seconds
    (kept in memory only so that files stay byte-identical across runs).
    """
    cfg.workdir.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    stage = functools.partial(_stage, timings=timings)

    p = cfg.path
    chainworld.save_config(cfg.env, p("env.json"))
    randomized = chainworld.randomize_domain(cfg.env, cfg.round2_seed)
    chainworld.save_config(randomized, p("env_round2.json"))

    def stage_space(src, default, out):
        spaces.save_space(spaces.load_space(src) if src is not None else default, out)

    stage("train-obfuscator", lambda: stage_space(cfg.obs_space_file, chainworld.OBSERVATION_SPACE,
                                                   p("obs_space.json")))
    stage("train-obfuscator", lambda: stage_space(cfg.act_space_file, chainworld.ACTION_SPACE,
                                                   p("act_space.json")))

    def train(space_file, zdim, steps, seed, out):
        space = spaces.load_space(space_file)
        t0 = time.perf_counter()
        model = obfuscator.train_obfuscation(space, zdim, obfuscator.ObfuscationTrainConfig(steps=steps), seed)
        timings[out.stem] = time.perf_counter() - t0
        obfuscator.save_model(model, out)

    stage("train-obfuscator", lambda: train(p("obs_space.json"), cfg.obs_zdim, cfg.obs_steps, cfg.obs_seed,
                                             p("obs_model.json")))
    stage("train-obfuscator", lambda: train(p("act_space.json"), cfg.act_zdim, cfg.act_steps, cfg.act_seed,
                                             p("act_model.json")))
    stage("record-demos", lambda: chainworld.record_demonstrations(
        cfg.env, chainworld.submitted_expert, cfg.demo_episodes, p("demos.txt"),
        range(cfg.demo_seed, cfg.demo_seed + cfg.demo_episodes)))

    def do_quantize():
        cs, ds = quantize.quantize_demo_actions(p("demos.txt"), obfuscator.load_model(p("act_model.json")), cfg.k,
                                                cfg.kmeans_seed, obfuscator.load_model(p("obs_model.json")))
        quantize.save_centroids(cs, p("centroids.json"))
        quantize.save_dataset(ds, p("dataset.json"))

    stage("quantize", do_quantize)

    def do_train_agent():
        meter = wrappers.BudgetMeter(cfg.budget)
        policy = agents.bc_train(quantize.load_dataset(p("dataset.json")), quantize.load_centroids(p("centroids.json")),
                                 agents.BCTrainConfig(steps=cfg.bc_steps), cfg.bc_seed)
        agents.save_policy(policy, p("policy.json"), p("centroids.json"), p("obs_model.json"), p("act_model.json"))
        return meter

    meter = stage("train-agent", do_train_agent)
    seeds = list(range(cfg.eval_seed, cfg.eval_seed + cfg.eval_episodes))
    evaluation.write_seeds(seeds, p("seeds.txt"))
    rep1 = stage("evaluate", lambda: run_evaluation(cfg.env, p("policy.json"), seeds, "bc-round1"))
    evaluation.save_report(rep1, p("report_round1.json"))
    rep2 = stage("evaluate", lambda: run_evaluation(randomized, p("policy.json"), seeds, "bc-round2"))
    evaluation.save_report(rep2, p("report_round2.json"))
    board = stage("rank", lambda: evaluation.format_leaderboard(
        [evaluation.load_report(p("report_round1.json")), evaluation.load_report(p("report_round2.json"))]))
    p("leaderboard.txt").write_text(board)
    summary = {
        "round1_mean": rep1.mean_score,
        "round2_mean": rep2.mean_score,
        "training_frames_used": meter.frames_used,
        "training_frame_budget": meter.max_frames,
        "obs_final_loss": obfuscator.load_model(p("obs_model.json")).final_loss,
        "act_final_loss": obfuscator.load_model(p("act_model.json")).final_loss,
    }
    _write_json(p("summary.json"), summary)
    return {
        "reports": [p("report_round1.json"), p("report_round2.json")],
        "leaderboard": p("leaderboard.txt"),
        "summary": summary,
        "timings": timings,
    }


def cmd_pipeline(args) -> int:
    env = chainworld.load_config(args.env) if args.env else chainworld.WorldConfig()
    cfg = PipelineConfig(
        workdir=Path(args.workdir), env=env, round2_seed=args.round2_seed,
        obs_steps=args.obs_steps, act_steps=args.act_steps, demo_episodes=args.demo_episodes,
        k=args.k, bc_steps=args.bc_steps, budget=args.budget, eval_episodes=args.episodes,
        obs_seed=args.seed, act_seed=args.seed + 1, demo_seed=args.seed, kmeans_seed=args.seed,
        bc_seed=args.seed,
        obs_space_file=Path(args.obs_space) if args.obs_space else None,
        act_space_file=Path(args.act_space) if args.act_space else None,
    )
    out = run_pipeline(cfg)
    print(Path(out["leaderboard"]).read_text(), end="")
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="obfusbench", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-space", help="write the chainworld observation or action space document")
    p.add_argument("kind", choices=("observation", "action"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_space)

    p = sub.add_parser("make-config", help="write a chainworld config document")
    p.add_argument("--grid-size", type=int, default=8)
    p.add_argument("--placement-seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=500)
    p.add_argument("--round2-seed", type=int, default=0, help="0 keeps the identity randomization")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_config)

    p = sub.add_parser("train-obfuscator", help="train an encoder/decoder pair for a space")
    p.add_argument("--space", required=True)
    p.add_argument("--zdim", type=int, required=True)
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--hinge-weight", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_obfuscator)

    p = sub.add_parser("record-demos", help="record scripted expert trajectories")
    p.add_argument("--env", help="config file (default: built-in 8x8 board)")
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--seed", type=int, default=0, help="first episode seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_record_demos)

    p = sub.add_parser("quantize", help="k-means over encoded demo actions")
    p.add_argument("--demos", required=True)
    p.add_argument("--act-model", required=True)
    p.add_argument("--obs-model", required=True)
    p.add_argument("-k", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="centroid file")
    p.add_argument("--dataset-out", help="labelled dataset file (default: next to --out)")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("train-agent", help="behavioural cloning over centroid labels")
    p.add_argument("--dataset", required=True)
    p.add_argument("--centroids", required=True)
    p.add_argument("--obs-model", help="recorded in the policy file for evaluation")
    p.add_argument("--act-model", help="recorded in the policy file for evaluation")
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--min-episode-score", type=float, default=agents.DEFAULT_MIN_EPISODE_SCORE)
    p.add_argument("--budget", type=int, default=wrappers.COMPETITION_FRAME_BUDGET,
                   help="environment frame budget for training")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_agent)

    p = sub.add_parser("evaluate", help="score a policy over seeded episodes")
    p.add_argument("--env", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--episodes", type=int, default=evaluation.DEFAULT_EPISODES)
    p.add_argument("--seeds", help="file of whitespace-separated integer seeds")
    p.add_argument("--policy-id")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rank", help="sort reports into a leaderboard")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("inspect", help="summarise an obfuscation model")
    p.add_argument("model")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    p.add_argument("--workdir", required=True)
    p.add_argument("--env", help="config file (default: built-in 8x8 board)")
    p.add_argument("--round2-seed", type=int, default=1)
    p.add_argument("--obs-steps", type=int, default=DEFAULT_OBS_STEPS)
    p.add_argument("--act-steps", type=int, default=DEFAULT_ACT_STEPS)
    p.add_argument("--demo-episodes", type=int, default=50)
    p.add_argument("-k", type=int, default=16)
    p.add_argument("--bc-steps", type=int, default=20000)
    p.add_argument("--budget", type=int, default=100_000)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--obs-space", help="observation space file (default: built-in)")
    p.add_argument("--act-space", help="action space file (default: built-in)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pipeline)
    parser.epilog = _flag_summary(sub.choices)
    return parser


def _flag_summary(commands) -> str:
    lines = ["flags by command:"]
    for name, sp in commands.items():
        flags = []
        for action in sp._actions:
            if isinstance(action, argparse._HelpAction):
                continue
            flags.append(" / ".join(action.option_strings) if action.option_strings else f"<{action.dest}>")
        lines.append(f"  {name}: " + ", ".join(flags))
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ObfusbenchError, OSError) as exc:
        print(f"error: [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
