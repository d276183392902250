"""Evaluation pipeline: seeded trials, binary pick/insert scoring, report tables.

A trial spawns a world from ``seed + trial_index``, runs one episode, and is
scored on decision quality alone: the first pick decision must name a gear
from a currently admissible goal pair, and the first insert decision must
name the shaft paired with the gear being held. Execution noise does not
change the score, matching the decision-level evaluation the report mirrors.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .backends import BackendConfig, build_backends
from .episode import EpisodeConfig, EpisodeRecord, run_episode
from .errors import ConfigurationError
from .grammar import SkillDecision, SkillName
from .prompts import default_template
from .skills import default_policies
from .world import ScenarioConfig, Shaft, WorldState, available_pairs, spawn_world


@dataclass(frozen=True)
class TrialScore:
    pick_correct: bool
    insert_correct: bool
    episode_outcome: str


@dataclass(frozen=True)
class PolicyConfig:
    noise_sigma: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class EvalReport:
    environment: str
    backend: str
    trials: int
    pick_successes: int
    insert_successes: int
    outcomes: dict[str, int] = field(default_factory=dict)
    elapsed_s: float = 0.0

    def __post_init__(self) -> None:
        if not (0 <= self.pick_successes <= self.trials and 0 <= self.insert_successes <= self.trials):
            raise ValueError("successes must be within 0..trials")


def _first_decision(record: EpisodeRecord, name: SkillName):
    for step in record.steps:
        if isinstance(step.decision, SkillDecision) and step.decision.skill.name is name:
            return step
    return None


def score_trial(record: EpisodeRecord, world_truth: WorldState) -> TrialScore:
    """Binary decision-level scoring against the spawned world's ground truth."""
    pick_step = _first_decision(record, SkillName.PICK)
    pick_correct = False
    if pick_step is not None:
        admissible = {gear for gear, _ in available_pairs(world_truth)}
        pick_correct = pick_step.decision.skill.marker_id in admissible

    insert_step = _first_decision(record, SkillName.INSERT)
    insert_correct = False
    if insert_step is not None and insert_step.holding_before is not None:
        wanted = dict(world_truth.goal.required_insertions).get(insert_step.holding_before)
        insert_correct = wanted is not None and insert_step.decision.skill.marker_id == 100 + wanted

    return TrialScore(pick_correct, insert_correct, record.outcome)


def run_trials(scenario: ScenarioConfig, backend_config: BackendConfig,
               policy_config: PolicyConfig, n_trials: int, seed: int,
               max_iterations: int | None = None, on_record=None,
               template=None, wrap_backends=None, on_step_factory=None) -> EvalReport:
    """Run ``n_trials`` seeded episodes and aggregate their scores.

    Trials are independent (world seed ``seed + i``, per-episode backend and
    policy RNG streams), so the report is reproducible for the oracle and
    faulty backends. ``wrap_backends`` and ``on_step_factory`` are hooks for
    recording and image capture.
    """
    if n_trials < 1:
        raise ConfigurationError("n_trials must be >= 1")
    location_labels = {
        s.label for s in scenario.objects if isinstance(s.kind, Shaft)
    }
    template = template or default_template()
    started = time.perf_counter()
    pick_hits = 0
    insert_hits = 0
    outcomes: dict[str, int] = {}
    for i in range(n_trials):
        world = spawn_world(scenario, seed + i)
        recognition, reasoning = build_backends(
            backend_config, episode_index=i, location_labels=location_labels
        )
        if wrap_backends is not None:
            recognition, reasoning = wrap_backends(i, recognition, reasoning)
        policies = default_policies(policy_config.noise_sigma, policy_config.seed + i)
        config = EpisodeConfig.for_scenario(scenario, seed=seed + i, max_iterations=max_iterations)
        on_step = on_step_factory(i) if on_step_factory is not None else None
        record = run_episode(world, recognition, reasoning, policies, template, config,
                             on_step=on_step)
        score = score_trial(record, world)
        pick_hits += score.pick_correct
        insert_hits += score.insert_correct
        outcomes[record.outcome] = outcomes.get(record.outcome, 0) + 1
        if on_record is not None:
            on_record(i, record, score)
    return EvalReport(
        environment=scenario.name,
        backend=getattr(backend_config, "kind", "custom"),
        trials=n_trials,
        pick_successes=pick_hits,
        insert_successes=insert_hits,
        outcomes=outcomes,
        elapsed_s=time.perf_counter() - started,
    )


def run_monolithic_baseline(scenario: ScenarioConfig, policy_config: PolicyConfig,
                            n_trials: int, seed: int) -> tuple[int, int]:
    """No-VLM baseline: one open-loop scripted policy attempts the whole task.

    Returns (episodes that completed the assembly, trials). Qualitative only;
    there is no decision-level score without a planner.
    """
    from .render import render
    from .skills import CHUNK_LENGTH, MonolithicAssemblyPolicy, PolicyInput, rollout_policy
    from .world import assembly_complete

    if n_trials < 1:
        raise ConfigurationError("n_trials must be >= 1")
    completed = 0
    for i in range(n_trials):
        world = spawn_world(scenario, seed + i)
        policy = MonolithicAssemblyPolicy(policy_config.noise_sigma, policy_config.seed + i)
        budget = CHUNK_LENGTH * (24 * max(1, len(scenario.goal.required_insertions)) + 8)
        policy_input = PolicyInput(
            camera_image=render(world, scenario.camera),
            robot_state=world.robot,
            target_pose=world.robot.tool_pose,
            sim_state=world,
        )
        result = rollout_policy(
            world, policy, policy_input, budget, scenario.camera,
            success_predicate=assembly_complete,
        )
        completed += result.succeeded
    return completed, n_trials


def format_cell(successes: int, trials: int) -> str:
    """Success-rate cell, e.g. '3/10 (30%)'; percent rounded to nearest integer."""
    percent = int(100.0 * successes / trials + 0.5) if trials else 0
    return f"{successes}/{trials} ({percent}%)"


def format_report(reports) -> str:
    """Markdown success table, one row per environment."""
    if isinstance(reports, EvalReport):
        reports = [reports]
    lines = [
        "| Env. | Backend | Pick | Insert |",
        "| --- | --- | --- | --- |",
    ]
    for report in reports:
        lines.append(
            "| {} | {} | {} | {} |".format(
                report.environment,
                report.backend,
                format_cell(report.pick_successes, report.trials),
                format_cell(report.insert_successes, report.trials),
            )
        )
    return "\n".join(lines) + "\n"


def report_to_dict(report: EvalReport) -> dict:
    return {
        "environment": report.environment,
        "backend": report.backend,
        "trials": report.trials,
        "pick_successes": report.pick_successes,
        "insert_successes": report.insert_successes,
        "outcomes": dict(sorted(report.outcomes.items())),
    }


def report_from_dict(data: dict) -> EvalReport:
    return EvalReport(
        environment=data["environment"],
        backend=data["backend"],
        trials=data["trials"],
        pick_successes=data["pick_successes"],
        insert_successes=data["insert_successes"],
        outcomes=dict(data.get("outcomes", {})),
    )
