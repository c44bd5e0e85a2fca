"""Command-line interface: score, weights, train, eval, analyze."""

from __future__ import annotations

import argparse
import json
import os
import sys
from glob import glob

import numpy as np

from .advantage import group_normalize, weighted_total_advantage
from .bench import build_suite, neg_corr_ratio, pass_concept, run_benchmark
from .config import ConfigError, RunConfig, config_from_dict, echo_config, load_config
from .io import load_checkpoint, load_reward_csv
from .policy import PolicyParams
from .rewards import score_concepts
from .scene import prompt_from_json, scene_from_json
from .trainer import PromptSource, train
from .weighting import concept_weights, difficulty_scores, pearson_corr_matrix


def _jsonify(obj):
    """Convert numpy values for JSON output; NaN becomes null."""
    if isinstance(obj, np.ndarray):
        return [_jsonify(x) for x in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return None if not np.isfinite(obj) else float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    return obj


def _load_run_config(path: str | None, seed: int | None) -> RunConfig:
    if path is None:
        return RunConfig() if seed is None else load_seeded_defaults(seed)
    return load_config(path, seed_override=seed)


def load_seeded_defaults(seed: int) -> RunConfig:
    cfg = RunConfig()
    cfg.seed = seed
    cfg.train.seed = seed
    return cfg


def cmd_score(args) -> int:
    cfg = _load_run_config(args.config, args.seed)
    codebook = cfg.scene.build_codebook()
    with open(args.scene) as f:
        scene = scene_from_json(json.load(f))
    with open(args.prompt) as f:
        prompt = prompt_from_json(json.load(f))
    rv = score_concepts(scene, prompt, codebook, cfg.rewards)
    breakdown = [
        {
            "type": spec.kind,
            "reward": rv.values[i],
            "valid": bool(rv.valid[i]),
            "pass": pass_concept(spec, rv.values[i], rv.details[i]),
            "detail": rv.details[i],
        }
        for i, spec in enumerate(prompt.concepts)
    ]
    print(json.dumps(_jsonify({"values": rv.values, "valid": rv.valid, "concepts": breakdown}),
                     indent=2))
    return 0


def cmd_weights(args) -> int:
    labels, matrix = load_reward_csv(args.rewards)
    corr = pearson_corr_matrix(matrix) if matrix.shape[0] >= 2 else None
    alpha = difficulty_scores(matrix)
    w = concept_weights(alpha, args.tau)
    out = {
        "labels": labels,
        "tau": args.tau,
        "alpha": alpha,
        "weights": w,
        "correlation": corr,
    }
    if args.advantages:
        A = group_normalize(matrix)
        total = weighted_total_advantage([(A, w)])[0]
        out["advantages"] = {"per_concept": A, "total": total}
    print(json.dumps(_jsonify(out), indent=2))
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(args.config, args.seed)
    out_dir = args.out if args.out else cfg.out_dir
    echo_config(cfg, out_dir)
    codebook = cfg.scene.build_codebook()
    source = PromptSource.from_config(codebook, cfg.train)
    result = train(
        cfg.train,
        source,
        out_dir,
        codebook,
        cfg.rewards,
        resume=args.resume,
        config_blob=cfg.to_dict(),
        progress_every=args.progress_every,
    )
    print(f"trained {result.iterations_run} iterations -> {result.metrics_path}")
    for path in result.checkpoint_paths[-1:]:
        print(f"checkpoint: {path}")
    return 0


def cmd_eval(args) -> int:
    params, _, iteration, blob = load_checkpoint(args.checkpoint)
    cfg = config_from_dict(blob)
    if args.seed is not None:
        cfg.seed = args.seed
    codebook = cfg.scene.build_codebook()
    suite = build_suite(
        args.kmax, args.per_k, codebook, seed=cfg.seed, n_slots=cfg.train.n_slots
    )
    report = run_benchmark(
        params,
        suite,
        codebook,
        cfg.train.sampler,
        cfg.rewards,
        images_per_prompt=args.images,
        seed=cfg.seed,
        deterministic=args.deterministic,
    )
    report.to_csv(args.out)
    print(f"evaluated checkpoint at iteration {iteration} -> {args.out}")
    for row in report.rows:
        print(
            f"k={row.k} full_mark={row.full_mark:.4f} fraction={row.fraction:.4f} "
            f"neg_corr={row.neg_corr_ratio:.4f}"
        )
    return 0


def cmd_analyze(args) -> int:
    paths = sorted(glob(os.path.join(args.rewards_dir, "*.csv")))
    if not paths:
        raise FileNotFoundError(f"no reward CSVs under {args.rewards_dir}")
    by_k: dict[int, list[np.ndarray]] = {}
    for path in paths:
        _, matrix = load_reward_csv(path)
        by_k.setdefault(matrix.shape[1], []).append(matrix)
    lines = ["k,groups,pairs,neg_corr_ratio"]
    for k in sorted(by_k):
        ratio, pairs = neg_corr_ratio(by_k[k])
        lines.append(f"{k},{len(by_k[k])},{pairs},{ratio:.10g}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multireward",
        description="Multi-reward policy optimization lab on synthetic scenes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score a scene JSON against a prompt JSON")
    p.add_argument("--scene", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("weights", help="difficulty scores and weights from a reward CSV")
    p.add_argument("--rewards", required=True, help="G x K CSV with a concept-label header")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--advantages", action="store_true")
    p.set_defaults(fn=cmd_weights)

    p = sub.add_parser("train", help="run the training loop")
    p.add_argument("--config", default=None, help="TOML run configuration")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--out", default=None, help="override the output directory")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--progress-every", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="benchmark a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--kmax", type=int, default=7)
    p.add_argument("--per-k", type=int, default=50, dest="per_k")
    p.add_argument("--images", type=int, default=10)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--out", default="report.csv")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("analyze", help="negative-correlation curves from stored reward CSVs")
    p.add_argument("--rewards-dir", required=True, dest="rewards_dir")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_analyze)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (ConfigError, ValueError, FileNotFoundError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
