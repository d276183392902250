"""Command-line interface: run trials, format reports, record/replay episodes.

Exit codes: 0 success, 2 configuration error, 3 fatal backend error
(every trial died on a backend fault, or a replay diverged).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .backends import (
    FaultyConfig,
    HttpConfig,
    OracleConfig,
    RecordingBackend,
    ReplayConfig,
)
from .episode import record_to_jsonl
from .errors import ConfigurationError, GearbenchError, ReplayMismatch
from .harness import (
    PolicyConfig,
    format_cell,
    format_report,
    report_from_dict,
    report_to_dict,
    run_monolithic_baseline,
    run_trials,
)
from .raster import write_ppm
from .scenarios import get_scenario

_BACKEND_FATALS = {"backend_unavailable", "empty_reply", "malformed_points", "replay_mismatch"}


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scenario", help="scenario name (sim, real1, real2)")
    parser.add_argument("--backend", choices=["oracle", "faulty", "replay", "http"])
    parser.add_argument("--trials", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--pick-error", type=float, dest="pick_error")
    parser.add_argument("--insert-error", type=float, dest="insert_error")
    parser.add_argument("--policy-noise", type=float, dest="policy_noise")
    parser.add_argument("--max-iterations", type=int, dest="max_iterations")
    parser.add_argument("--config", help="JSON config file mirroring the flags")
    parser.add_argument("--save-images", action="store_true", default=None, dest="save_images")
    parser.add_argument("--record", action="store_true", default=None,
                        help="record backend request/response logs")
    parser.add_argument("--no-vlm", action="store_true", default=None, dest="no_vlm",
                        help="qualitative baseline: one monolithic scripted policy, no planner")
    parser.add_argument("--replay-file", dest="replay_file", help="recording for --backend replay")
    parser.add_argument("--http-base-url", dest="http_base_url")
    parser.add_argument("--http-model", dest="http_model")
    parser.add_argument("--http-api-key-env", dest="http_api_key_env")
    parser.add_argument("--http-timeout", type=float, dest="http_timeout")
    parser.add_argument("--http-retries", type=int, dest="http_retries")


_DEFAULTS = {
    "scenario": "sim",
    "backend": "oracle",
    "trials": 10,
    "seed": 1,
    "out": None,
    "pick_error": 0.0,
    "insert_error": 0.0,
    "policy_noise": 0.0,
    "max_iterations": None,
    "save_images": False,
    "record": False,
    "no_vlm": False,
    "replay_file": None,
    "http_base_url": None,
    "http_model": None,
    "http_api_key_env": "OPENAI_API_KEY",
    "http_timeout": 30.0,
    "http_retries": 2,
}


def _merge_config(args: argparse.Namespace) -> dict:
    """Defaults < config file < explicit flags."""
    merged = dict(_DEFAULTS)
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                file_config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config file {args.config}: {exc}") from exc
        unknown = set(file_config) - set(_DEFAULTS)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_config)
    for key in _DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _backend_config(options: dict):
    backend = options["backend"]
    if backend == "oracle":
        return OracleConfig()
    if backend == "faulty":
        return FaultyConfig(
            pick_error_rate=options["pick_error"],
            insert_error_rate=options["insert_error"],
            seed=options["seed"],
        )
    if backend == "replay":
        if not options["replay_file"]:
            raise ConfigurationError("--backend replay requires --replay-file")
        return ReplayConfig(path=options["replay_file"])
    if backend == "http":
        if not options["http_base_url"] or not options["http_model"]:
            raise ConfigurationError("--backend http requires --http-base-url and --http-model")
        return HttpConfig(
            base_url=options["http_base_url"],
            model_name=options["http_model"],
            api_key_env_var=options["http_api_key_env"],
            timeout_s=options["http_timeout"],
            max_retries=options["http_retries"],
        )
    raise ConfigurationError(f"unknown backend {backend!r}")


def _cmd_run(args: argparse.Namespace) -> int:
    options = _merge_config(args)
    scenario = get_scenario(options["scenario"])
    policy_config = PolicyConfig(noise_sigma=options["policy_noise"], seed=options["seed"])

    if options["no_vlm"]:
        completed, trials = run_monolithic_baseline(
            scenario, policy_config, options["trials"], options["seed"]
        )
        print(f"no-vlm baseline on {scenario.name}: assembly completed {format_cell(completed, trials)}")
        return 0

    out_dir = Path(options["out"]) if options["out"] else None
    episodes_dir = images_dir = recordings_dir = None
    if out_dir is not None:
        episodes_dir = out_dir / "episodes"
        episodes_dir.mkdir(parents=True, exist_ok=True)
        if options["save_images"]:
            images_dir = out_dir / "images"
            images_dir.mkdir(parents=True, exist_ok=True)
        if options["record"]:
            recordings_dir = out_dir / "recordings"
            recordings_dir.mkdir(parents=True, exist_ok=True)

    recorders: dict[int, RecordingBackend] = {}

    def wrap_backends(trial: int, recognition, reasoning):
        if recordings_dir is None:
            return recognition, reasoning
        if recognition is reasoning:
            recorder = RecordingBackend(recognition)
            recorders[trial] = recorder
            return recorder, recorder
        sink: list[dict] = []
        wrapped_recognition = RecordingBackend(recognition, sink)
        wrapped_reasoning = RecordingBackend(reasoning, sink)
        recorders[trial] = wrapped_recognition
        return wrapped_recognition, wrapped_reasoning

    def on_step_factory(trial: int):
        if images_dir is None:
            return None

        def on_step(step, world, triplet):
            if triplet is None:
                return
            for role in ("object", "current", "goal"):
                image = triplet.image_for(role)
                path = images_dir / f"{image.content_hash()[:16]}.ppm"
                if not path.exists():
                    write_ppm(path, image)

        return on_step

    fatal_kinds: list[str] = []

    def on_record(trial: int, record, score) -> None:
        if record.fatal_kind:
            fatal_kinds.append(record.fatal_kind)
        if episodes_dir is not None:
            (episodes_dir / f"trial_{trial:03d}.jsonl").write_text(
                record_to_jsonl(record), encoding="utf-8"
            )
        if recordings_dir is not None and trial in recorders:
            header = {
                "type": "header",
                "scenario": scenario.name,
                "seed": options["seed"] + trial,
                "policy_noise": options["policy_noise"],
                "policy_seed": options["seed"] + trial,
                "max_iterations": options["max_iterations"],
            }
            path = recordings_dir / f"trial_{trial:03d}.jsonl"
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(json.dumps(header, sort_keys=True) + "\n")
                for rec in recorders[trial].records:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")

    report = run_trials(
        scenario,
        _backend_config(options),
        policy_config,
        options["trials"],
        options["seed"],
        max_iterations=options["max_iterations"],
        on_record=on_record,
        wrap_backends=wrap_backends if recordings_dir is not None else None,
        on_step_factory=on_step_factory if images_dir is not None else None,
    )

    table = format_report(report)
    print(table, end="")
    print(f"outcomes: {dict(sorted(report.outcomes.items()))}  ({report.elapsed_s:.1f}s)")
    if out_dir is not None:
        (out_dir / "report.md").write_text(table, encoding="utf-8")
        (out_dir / "report.json").write_text(
            json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    if fatal_kinds and len(fatal_kinds) == report.trials and all(
        k in _BACKEND_FATALS for k in fatal_kinds
    ):
        print("every trial failed on a backend fault", file=sys.stderr)
        return 3
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    in_dir = Path(args.in_dir)
    report_path = in_dir / "report.json"
    if not report_path.exists():
        raise ConfigurationError(f"no report.json under {in_dir}")
    data = json.loads(report_path.read_text(encoding="utf-8"))
    reports = [report_from_dict(d) for d in (data if isinstance(data, list) else [data])]
    print(format_report(reports), end="")
    return 0


def _cmd_replay(args: argparse.Namespace) -> int:
    if bool(args.record_dir) == bool(args.playback):
        raise ConfigurationError("replay needs exactly one of --record or --playback")
    if args.record_dir:
        return _replay_record(args)
    return _replay_playback(args)


def _episode_setup(scenario_name: str, seed: int, policy_noise: float, policy_seed: int,
                   max_iterations):
    from .episode import EpisodeConfig
    from .skills import default_policies
    from .world import spawn_world

    scenario = get_scenario(scenario_name)
    world = spawn_world(scenario, seed)
    policies = default_policies(policy_noise, policy_seed)
    config = EpisodeConfig.for_scenario(scenario, seed=seed, max_iterations=max_iterations)
    return world, policies, config


def _replay_record(args: argparse.Namespace) -> int:
    from .backends import OracleBackend
    from .episode import run_episode

    out_dir = Path(args.record_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenario_name = args.scenario or "sim"
    seed = args.seed if args.seed is not None else 1
    world, policies, config = _episode_setup(scenario_name, seed, 0.0, seed, None)
    recorder = RecordingBackend(OracleBackend())
    record = run_episode(world, recorder, recorder, policies, None, config)
    header = {
        "type": "header",
        "scenario": scenario_name,
        "seed": seed,
        "policy_noise": 0.0,
        "policy_seed": seed,
        "max_iterations": None,
    }
    recording_path = out_dir / "recording.jsonl"
    with open(recording_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in recorder.records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    (out_dir / "episode.jsonl").write_text(record_to_jsonl(record), encoding="utf-8")
    print(f"recorded episode ({record.outcome}) to {recording_path}")
    return 0


def _replay_playback(args: argparse.Namespace) -> int:
    from .backends import ReplayBackend
    from .episode import run_episode

    path = Path(args.playback)
    if not path.exists():
        raise ConfigurationError(f"recording not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
    if header.get("type") != "header":
        raise ConfigurationError("recording file lacks a header line")
    world, policies, config = _episode_setup(
        header["scenario"], header["seed"], header.get("policy_noise", 0.0),
        header.get("policy_seed", header["seed"]), header.get("max_iterations"),
    )
    replay = ReplayBackend.from_file(path)
    record = run_episode(world, replay, replay, policies, None, config)
    if record.fatal_kind == "replay_mismatch":
        print("replay mismatch during episode", file=sys.stderr)
        return 3
    print(f"replayed episode: outcome={record.outcome}")
    episode_path = path.parent / "episode.jsonl"
    if episode_path.exists():
        recorded_hashes = [
            json.loads(line)["world_hash"]
            for line in episode_path.read_text(encoding="utf-8").splitlines()
            if line and json.loads(line).get("type") == "step"
        ]
        if recorded_hashes == record.step_hashes():
            print(f"step hashes match the recorded episode ({len(recorded_hashes)} steps)")
        else:
            print("step hashes DIVERGE from the recorded episode", file=sys.stderr)
            return 3
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gearbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="run evaluation trials")
    _add_run_options(run_parser)
    run_parser.set_defaults(func=_cmd_run)

    report_parser = sub.add_parser("report", help="re-render a report from an output directory")
    report_parser.add_argument("--in", dest="in_dir", required=True)
    report_parser.set_defaults(func=_cmd_report)

    replay_parser = sub.add_parser("replay", help="record or play back an episode")
    replay_parser.add_argument("--record", dest="record_dir")
    replay_parser.add_argument("--playback", dest="playback")
    replay_parser.add_argument("--scenario")
    replay_parser.add_argument("--seed", type=int)
    replay_parser.set_defaults(func=_cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except ReplayMismatch as exc:
        print(f"replay mismatch: {exc}", file=sys.stderr)
        return 3
    except GearbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
