"""Command line entry point and config-driven experiment runner.

Subcommands::

    rtrojan run --config PATH [--seeds 1,2,3] [--out DIR]
    rtrojan ingest --format amazon --in PATH [--meta PATH] --out DIR
    rtrojan synth --users N --items M --seed S --out DIR
    rtrojan eval-only --fakes FILE --victim NAME --data DIR

Exit codes: 0 success, 1 runtime failure (the failing stage is named), 2 invalid
configuration or arguments.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np
import torch

from .attack import AttackConfig, run_attack
from .baselines import BASELINES
from .config import ConfigError, ExperimentConfig, seed_stream
from .data import (
    Dataset,
    build_dataset,
    dataset_stats,
    leave_one_out_split,
    load_dataset_dir,
    load_item_metadata,
    load_review_corpus,
    write_dataset_dir,
)
from .detector import profiles_from_fakes
from .evaluation import EvaluationReport, evaluate_attack, export_representations, write_aggregate_csv
from .profiles import FakeProfileBatch
from .synthetic import generate_synthetic_dataset, pick_unpopular_target
from .text import build_training_corpus, make_backend

logger = logging.getLogger("rtrojan")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        logger.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, (StageError, ConfigError)):
            raise StageError(self.name, exc) from exc
        return False


def code_version() -> dict:
    """Package version plus a digest of the installed sources."""
    try:
        ver = version("artifact")
    except PackageNotFoundError:  # pragma: no cover - running from a checkout
        ver = "unknown"
    digest = hashlib.sha256()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return {"package": ver, "source_sha256": digest.hexdigest()}


# ------------------------------------------------------------------ pipeline pieces

def load_dataset(spec: dict, seed: int) -> Dataset:
    kind = spec.get("kind", "synthetic")
    scale = tuple(spec.get("scale", (1, 5)))
    if kind == "synthetic":
        return generate_synthetic_dataset(
            int(spec.get("users", 200)), int(spec.get("items", 100)), int(spec.get("clusters", 4)),
            float(spec.get("density", 0.05)), int(spec.get("seed", seed_stream(seed, "data"))), scale=scale,
        )
    if kind == "directory":
        return load_dataset_dir(spec["path"])
    raw = load_review_corpus(spec["path"], kind)
    attrs = load_item_metadata(spec["metadata"], kind) if spec.get("metadata") else []
    return build_dataset(raw, attrs, scale, min_user_interactions=int(spec.get("min_interactions", 1)))


def resolve_target(spec: dict, train: Dataset, seed: int) -> int:
    target = spec.get("target", "unpopular")
    if target == "unpopular":
        return pick_unpopular_target(train, seed_stream(seed, "target"))
    if isinstance(target, int):
        return target
    if target in train.item_index:
        return train.item_index[target]
    raise ConfigError({"dataset.target": f"unknown item {target!r}"})


def build_backend(spec: dict, train: Dataset, seed: int):
    params = {k: v for k, v in spec.items() if k not in ("kind", "epochs")}
    backend = make_backend(spec.get("kind", "deterministic-template"), **params)
    epochs = int(spec.get("epochs", 3))
    return backend.fine_tune(build_training_corpus(train), epochs=epochs, seed=seed_stream(seed, "backend"))


def _attack_config(cfg: ExperimentConfig, target: int, seed: int) -> AttackConfig:
    return AttackConfig(target_item=target, seed=seed_stream(seed, "attack"), **cfg.attack)


def run_seed(cfg: ExperimentConfig, seed: int, out: Path) -> tuple[list[EvaluationReport], list[str]]:
    """One seed of the pipeline; returns its reports and the names of failed stages."""
    seed_dir = out / f"seed_{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    with _Stage("ingest"):
        ds = load_dataset(cfg.dataset, seed)
    with _Stage("split"):
        split = leave_one_out_split(ds, seed_stream(seed, "split"))
        target = resolve_target(cfg.dataset, split.train, seed)
    with _Stage("backend"):
        backend = build_backend(cfg.backend, split.train, seed)
    dataset_name = str(cfg.dataset.get("name", cfg.dataset.get("kind")))
    reports, failed = [], []
    K = int(cfg.attack.get("K", 10))
    for attack in cfg.attacks:
        attack_dir = seed_dir / attack
        with _Stage(f"attack:{attack}"):
            acfg = _attack_config(cfg, target, seed)
            if attack == "rtrojan":
                result = run_attack(split, acfg, backend)
                result.save(attack_dir, split.train.item_ids)
                fakes, F = result.fake_profiles, result.config.filler_size
                state = result.state
                if state.detector is not None:
                    fake_prof = profiles_from_fakes(fakes, state.surrogate.vocab_, state.real_profiles.embeddings, acfg.doc_len)
                    export_representations(state.detector, state.real_profiles, fake_prof, attack_dir / "representations.csv")
            else:
                resolved = acfg.resolve(split.train)
                fakes = BASELINES[attack](split, resolved, acfg.seed, backend)
                F = resolved.filler_size
                attack_dir.mkdir(parents=True, exist_ok=True)
                fakes.to_jsonl(attack_dir / "fake_profiles.jsonl", split.train.item_ids)
        for victim in cfg.victims:
            stage = f"evaluate:{attack}:{victim}"
            try:
                with _Stage(stage):
                    rep = evaluate_attack(
                        split, fakes, victim, K=K, seed=seed_stream(seed, "victim"),
                        victim_params=cfg.victim_params.get(victim), dataset_name=dataset_name,
                        attack_name=attack, filler_size=F,
                    )
                    rep.seeds = [seed]
                    rep.to_json(seed_dir / f"report_{attack}_{victim}.json")
                    reports.append(rep)
            except StageError as err:
                # one victim failing must not take the others down
                logger.error("%s", err)
                failed.append(err.stage)
    return reports, failed


def run_experiment(config_path, seeds=None, out=None) -> int:
    """Validate, run every seed, then write the aggregate CSV and provenance manifest."""
    try:
        cfg = ExperimentConfig.from_file(config_path)
        if seeds is not None:
            cfg.seeds = list(seeds)
        if out is not None:
            cfg.output = str(out)
        cfg.validate()
    except ConfigError as err:
        for key, msg in sorted(err.errors.items()):
            print(f"config error: {key}: {msg}", file=sys.stderr)
        return 2

    out_dir = Path(cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(cfg.canonical(), encoding="utf-8")
    reports, failed = [], []
    try:
        for seed in cfg.seeds:
            r, f = run_seed(cfg, seed, out_dir)
            reports += r
            failed += [f"seed {seed}: {s}" for s in f]
        with _Stage("report"):
            write_aggregate_csv(reports, out_dir / "aggregate.csv")
            manifest = {
                "config_hash": cfg.hash(),
                "config": cfg.canonical(),
                "code_version": code_version(),
                "seeds": cfg.seeds,
                "seed_streams": {
                    str(s): {n: seed_stream(s, n) for n in ("data", "split", "target", "attack", "victim", "backend")}
                    for s in cfg.seeds
                },
                "runtime": {"python": platform.python_version(), "numpy": np.__version__, "torch": torch.__version__},
                "reports": sorted(f"seed_{r.seeds[0]}/report_{r.attack}_{r.victim}.json" for r in reports),
                "failed_stages": failed,
            }
            (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except ConfigError as err:
        for key, msg in sorted(err.errors.items()):
            print(f"config error: {key}: {msg}", file=sys.stderr)
        return 2
    except StageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    if failed:
        for s in failed:
            print(f"error: stage '{s}' failed", file=sys.stderr)
        return 1
    return 0


# ------------------------------------------------------------------ subcommands

def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None


def _parse_scale(text: str) -> tuple[int, int]:
    parts = [int(s) for s in text.split(",")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("scale must be 'min,max'")
    return parts[0], parts[1]


def cmd_run(args) -> int:
    return run_experiment(args.config, args.seeds, args.out)


def cmd_ingest(args) -> int:
    try:
        raw = load_review_corpus(args.input, args.format)
        attrs = load_item_metadata(args.meta, args.format) if args.meta else []
        ds = build_dataset(raw, attrs, args.scale, min_user_interactions=args.min_interactions)
    except (FileNotFoundError, ValueError) as err:
        print(f"error: stage 'ingest' failed: {err}", file=sys.stderr)
        return 1
    write_dataset_dir(ds, args.out)
    m, n, k, sparsity = dataset_stats(ds)
    print(json.dumps({"users": m, "items": n, "interactions": k, "sparsity": sparsity}))
    return 0


def cmd_synth(args) -> int:
    try:
        ds = generate_synthetic_dataset(args.users, args.items, args.clusters, args.density, args.seed)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    write_dataset_dir(ds, args.out)
    m, n, k, sparsity = dataset_stats(ds)
    print(json.dumps({"users": m, "items": n, "interactions": k, "sparsity": sparsity}))
    return 0


def infer_target(fakes: FakeProfileBatch, r_max: int) -> int:
    """The item every fake profile rates at ``r_max``; ambiguous or absent means an error."""
    common = np.flatnonzero((fakes.ratings == r_max).all(axis=0))
    if common.shape[0] != 1:
        raise ValueError(f"cannot infer the target item ({common.shape[0]} candidates); pass --target")
    return int(common[0])


def _run_context(fakes_path: Path, seed: int | None):
    """Locate the run directory holding ``fakes_path``: its config and the seed from a ``seed_N`` parent."""
    found_seed = None
    for parent in fakes_path.resolve().parents:
        if found_seed is None and parent.name.startswith("seed_") and parent.name[5:].lstrip("-").isdigit():
            found_seed = int(parent.name[5:])
        if (parent / "config.txt").is_file():
            cfg = ExperimentConfig.from_file(parent / "config.txt")
            return cfg, seed if seed is not None else (found_seed if found_seed is not None else 0)
    raise FileNotFoundError(f"no run config.txt above {fakes_path}; pass --data")


def cmd_eval_only(args) -> int:
    try:
        if args.data:
            seed = args.seed if args.seed is not None else 0
            ds = load_dataset_dir(args.data)
            spec, dataset_name, params, K = {}, Path(args.data).name, {}, 10
        else:
            cfg, seed = _run_context(Path(args.fakes), args.seed)
            ds = load_dataset(cfg.dataset, seed)
            spec, dataset_name = cfg.dataset, str(cfg.dataset.get("name", cfg.dataset.get("kind")))
            params, K = cfg.victim_params.get(args.victim, {}), int(cfg.attack.get("K", 10))
        split = leave_one_out_split(ds, seed_stream(seed, "split"))
        fakes = FakeProfileBatch.from_jsonl(args.fakes, ds.n_items, ds.item_index)
        if args.target is not None:
            t = ds.item_index[args.target] if args.target in ds.item_index else int(args.target)
        elif not args.data:
            t = resolve_target(spec, split.train, seed)
        else:
            t = infer_target(fakes, ds.scale[1])
        fakes = FakeProfileBatch(fakes.ratings, fakes.reviews, t, Path(args.fakes).parent.name if not args.data else Path(args.fakes).stem)
    except (FileNotFoundError, KeyError, ValueError) as err:
        print(f"error: stage 'ingest' failed: {err}", file=sys.stderr)
        return 1
    try:
        rep = evaluate_attack(
            split, fakes, args.victim, K=args.K if args.K is not None else K, seed=seed_stream(seed, "victim"),
            victim_params=params, dataset_name=dataset_name,
        )
    except ValueError as err:
        print(f"error: stage 'evaluate:{args.victim}' failed: {err}", file=sys.stderr)
        return 2 if "unknown victim" in str(err) else 1
    rep.seeds = [seed]
    text = json.dumps(rep.to_dict(), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rtrojan", description="Review-aware profile-injection attack experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a configured experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--seeds", type=_parse_seeds)
    run.add_argument("--out")
    run.set_defaults(func=cmd_run)

    ing = sub.add_parser("ingest", help="index a raw review dump into a dataset directory")
    ing.add_argument("--format", default="amazon", choices=["amazon", "amazon-json-lines", "yelp", "yelp-json"])
    ing.add_argument("--in", dest="input", required=True)
    ing.add_argument("--meta", help="item metadata file (titles, categories)")
    ing.add_argument("--out", required=True)
    ing.add_argument("--scale", type=_parse_scale, default=(1, 5))
    ing.add_argument("--min-interactions", type=int, default=1)
    ing.set_defaults(func=cmd_ingest)

    syn = sub.add_parser("synth", help="write a planted-cluster synthetic dataset")
    syn.add_argument("--users", type=int, required=True)
    syn.add_argument("--items", type=int, required=True)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--clusters", type=int, default=4)
    syn.add_argument("--density", type=float, default=0.05)
    syn.add_argument("--out", required=True)
    syn.set_defaults(func=cmd_synth)

    ev = sub.add_parser("eval-only", help="evaluate an existing fake-profile file against one victim")
    ev.add_argument("--fakes", required=True)
    ev.add_argument("--victim", required=True)
    ev.add_argument("--data", help="dataset directory written by ingest or synth (default: rebuild from the enclosing run)")
    ev.add_argument("--target", help="target item id (inferred from the fakes when omitted)")
    ev.add_argument("--seed", type=int, help="seed (default: from the enclosing seed_N directory, else 0)")
    ev.add_argument("--K", type=int, help="list length (default: the run's K, else 10)")
    ev.add_argument("--out")
    ev.set_defaults(func=cmd_eval_only)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
