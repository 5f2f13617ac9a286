"""Seeded multi-episode evaluation, milestone scoring and leaderboard ranking.

Score of an episode: sum of rewards of the distinct milestones reached.
Report mean: arithmetic mean over episodes. Rank order: mean descending,
then the tie-break key ascending, then policy id.

Tie-break key: take the best milestone any episode reached, then the 1-based
position (seeds sorted ascending) of the first episode that reached it.
Smaller wins. Reports that never reach a milestone get ``n_episodes + 1``.
The rule lives in :func:`tie_break_key`.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .chainworld import MilestoneTable
from .errors import DuplicateSeeds, FormatError, IncomparableReports, UnknownMilestone, UnsupportedVersion

REPORT_FORMAT_VERSION = 1
DEFAULT_EPISODES = 200


def score_trajectory(table: MilestoneTable, events: Sequence[str]) -> float:
    seen = set()
    for name in events:
        if name not in table.names:
            raise UnknownMilestone(name)
        seen.add(name)
    return float(sum(table.rewards[table.index(n)] for n in seen))


@dataclass
class EpisodeResult:
    seed: int
    score: float
    milestones: list[tuple[str, int]]  # (name, 0-based step index) in order reached
    steps: int

    def top_milestone(self, table: MilestoneTable) -> str | None:
        if not self.milestones:
            return None
        return max((n for n, _ in self.milestones), key=table.index)


def run_episode(env, policy: Callable, seed: int, table: MilestoneTable | None = None) -> EpisodeResult:
    """Roll ``policy(observation, rng)`` on ``env`` until done.

    The policy rng is seeded from the episode seed, so a fixed (env, policy,
    seed) triple reproduces the same result.
    """
    table = table or MilestoneTable.canonical()
    rng = np.random.default_rng([seed, 11])
    obs = env.reset(seed)
    total, milestones, steps, done = 0.0, [], 0, False
    while not done:
        obs, reward, done, info = env.step(policy(obs, rng))
        total += reward
        if info.get("milestone"):
            milestones.append((info["milestone"], steps))
        steps += 1
    score = score_trajectory(table, [n for n, _ in milestones])
    if score != total:
        raise AssertionError(f"step rewards {total} disagree with milestone score {score}")
    return EpisodeResult(seed, score, milestones, steps)


@dataclass
class EvaluationReport:
    policy_id: str
    episodes: list[EpisodeResult]
    table: MilestoneTable = field(default_factory=MilestoneTable.canonical, repr=False)

    @property
    def n_episodes(self) -> int:
        return len(self.episodes)

    @property
    def seeds(self) -> list[int]:
        return [e.seed for e in self.episodes]

    @property
    def mean_score(self) -> float:
        # sorted summation keeps the mean bitwise independent of episode order
        return float(sum(sorted(e.score for e in self.episodes)) / len(self.episodes))

    @property
    def tie_break(self) -> int:
        return tie_break_key(self)

    def seed_digest(self) -> str:
        return seed_digest(self.seeds)


def seed_digest(seeds: Sequence[int]) -> str:
    text = ",".join(str(s) for s in sorted(seeds))
    return hashlib.sha256(text.encode()).hexdigest()


def tie_break_key(report: EvaluationReport) -> int:
    table = report.table
    ordered = sorted(report.episodes, key=lambda e: e.seed)
    tops = [e.top_milestone(table) for e in ordered]
    reached = [table.index(t) for t in tops if t is not None]
    if not reached:
        return len(ordered) + 1
    best = table.names[max(reached)]
    return next(i for i, t in enumerate(tops, 1) if t == best)


def evaluate(env_factory: Callable, policy: Callable, seeds: Sequence[int], policy_id: str = "policy",
             n_episodes: int | None = None, table: MilestoneTable | None = None) -> EvaluationReport:
    """Run one fresh environment per seed and collect an :class:`EvaluationReport`."""
    seeds = list(seeds)
    if n_episodes is not None and n_episodes != len(seeds):
        raise ValueError(f"expected {n_episodes} seeds, got {len(seeds)}")
    if len(set(seeds)) != len(seeds):
        raise DuplicateSeeds("evaluation seeds must be distinct")
    table = table or MilestoneTable.canonical()
    results = [run_episode(env_factory(), policy, s, table) for s in seeds]
    return EvaluationReport(policy_id, results, table)


def rank(reports: Sequence[EvaluationReport]) -> list[EvaluationReport]:
    if reports:
        digest, n = reports[0].seed_digest(), reports[0].n_episodes
        for r in reports[1:]:
            if r.seed_digest() != digest or r.n_episodes != n:
                raise IncomparableReports(f"{r.policy_id!r} was evaluated on different seeds")
    return sorted(reports, key=lambda r: (-r.mean_score, r.tie_break, r.policy_id))


def max_item_report(report: EvaluationReport) -> dict:
    """Per-milestone fraction of episodes reaching it, plus the best milestone overall."""
    if not report.episodes:
        raise ValueError("report has no episodes")
    table = report.table
    freqs = {}
    for name in table.names:
        hits = sum(any(n == name for n, _ in e.milestones) for e in report.episodes)
        freqs[name] = hits / report.n_episodes
    tops = [table.index(t) for t in (e.top_milestone(table) for e in report.episodes) if t is not None]
    return {"frequencies": freqs, "max_milestone": table.names[max(tops)] if tops else None}


def format_max_item_table(report: EvaluationReport) -> str:
    info = max_item_report(report)
    lines = [f"# max item report: {report.policy_id}", f"{'milestone':<16} {'fraction':>8}"]
    lines += [f"{name:<16} {frac:>8.3f}" for name, frac in info["frequencies"].items()]
    lines.append(f"max milestone: {info['max_milestone']}")
    return "\n".join(lines) + "\n"


# -- files ------------------------------------------------------------------

def report_to_document(report: EvaluationReport) -> dict:
    table = report.table
    return {
        "version": REPORT_FORMAT_VERSION,
        "policy_id": report.policy_id,
        "seed_digest": report.seed_digest(),
        "n_episodes": report.n_episodes,
        "mean_score": report.mean_score,
        "tie_break": report.tie_break,
        "episodes": [
            {
                "seed": e.seed,
                "score": e.score,
                "top_milestone": e.top_milestone(table),
                "steps": e.steps,
                "milestones": [[n, s] for n, s in e.milestones],
            }
            for e in report.episodes
        ],
    }


def report_from_document(doc: dict) -> EvaluationReport:
    if not isinstance(doc, dict) or "version" not in doc:
        raise FormatError("report document lacks a version tag")
    if doc["version"] != REPORT_FORMAT_VERSION:
        raise UnsupportedVersion(f"report document version {doc['version']!r}")
    try:
        episodes = [
            EpisodeResult(int(e["seed"]), float(e["score"]), [(str(n), int(s)) for n, s in e["milestones"]],
                          int(e["steps"]))
            for e in doc["episodes"]
        ]
        report = EvaluationReport(str(doc["policy_id"]), episodes)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed report document: {exc}") from exc
    if report.seed_digest() != doc.get("seed_digest"):
        raise FormatError("seed digest does not match the listed episodes")
    return report


def save_report(report: EvaluationReport, path) -> None:
    Path(path).write_text(json.dumps(report_to_document(report), indent=1) + "\n")


def load_report(path) -> EvaluationReport:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return report_from_document(doc)


def format_leaderboard(reports: Sequence[EvaluationReport]) -> str:
    ordered = rank(reports)
    lines = [f"{'rank':<5} {'policy':<24} {'mean_score':>12} {'tie_break':>9} {'episodes':>8}"]
    for i, r in enumerate(ordered, 1):
        lines.append(f"{i:<5} {r.policy_id:<24} {r.mean_score:>12.4f} {r.tie_break:>9d} {r.n_episodes:>8d}")
    return "\n".join(lines) + "\n"


def read_seeds(path) -> list[int]:
    try:
        return [int(tok) for tok in Path(path).read_text().split()]
    except ValueError as exc:
        raise FormatError(f"{path}: seeds must be integers ({exc})") from exc


def write_seeds(seeds: Sequence[int], path) -> None:
    Path(path).write_text("\n".join(str(s) for s in seeds) + "\n")
