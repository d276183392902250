"""gearbench: a desk-scale VLM-driven gear-assembly pipeline and evaluation harness.

A deterministic tabletop simulator, a two-stage recognition/marking/reasoning
pipeline with pluggable backends, parameterized primitive skills, an episode
orchestrator, and a success-table evaluation harness.
"""

from .episode import EpisodeConfig, EpisodeRecord, default_max_iterations, run_episode
from .geometry import Camera, Pose, View
from .grammar import Skill, SkillDecision, SkillName, format_decision, parse_decision
from .harness import EvalReport, PolicyConfig, format_report, run_trials, score_trial
from .marking import ImageTriplet, MarkStyle, PointAnnotation, mark_image, mark_triplet
from .raster import RasterImage
from .world import (
    Command,
    GoalSpec,
    ScenarioConfig,
    WorldState,
    apply_command,
    assembly_complete,
    check_insertion,
    spawn_world,
)

__version__ = "0.1.0"
