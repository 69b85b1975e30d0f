"""
Command line entry point.

    mvfusion generate  --config C --seed S --out DIR     synthetic dataset + ground truth
    mvfusion train     --config C --out DIR [--data F]   cooperative training run
    mvfusion verify    --config C --out DIR              certification suites
    mvfusion report    --out DIR                         metrics and heatmaps of a run
    mvfusion cost      --config C [--data F]             fusion cost estimate

Exit codes: 0 success, 1 error, 2 a verified bound did not hold.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from mvfusion.config import dump_config, load_config
from mvfusion.errors import MvFusionError, VerificationFailed
from mvfusion.external.orchestrator import RunConfig, evaluate, initialize_run, run
from mvfusion.external.round_log import RoundLog, latest_checkpoint, load_checkpoint
from mvfusion.external.verification import run_verification_suite
from mvfusion.internal.data.dataset_io import (
    attach_ground_truth,
    load_dataset,
    save_dataset,
    save_ground_truth,
)
from mvfusion.internal.data.synth import generate_dataset, generate_ground_truth, split_dataset
from mvfusion.internal.encoder.mlp import forward
from mvfusion.internal.fusion.basis_fusion import fuse_round, identity_projectors
from mvfusion.internal.metrics.cost import fusion_cost_estimate, measure_fusion_time
from mvfusion.internal.metrics.evaluation import block_means, cosine_similarity_matrix, summarize
from mvfusion.internal.metrics.heatmap import export_heatmap, render_png
from mvfusion.internal.rate.coding_rate import RateConfig

logger = logging.getLogger("mvfusion")

DATASET_FILE = "dataset.mvds"
TRAIN_FILE = "train.mvds"
TEST_FILE = "test.mvds"
CONFIG_FILE = "config.yaml"


def _write_json(path, payload):
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=4)


def _resolve_config(args):
    overrides = {"run": {}}
    if args.seed is not None:
        overrides["run"]["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        overrides["run"]["mode"] = args.mode
    if getattr(args, "threads", None) is not None:
        overrides["run"]["threads"] = args.threads
    return load_config(args.config, overrides)


def dataset_from_config(config):
    data, seed = config["data"], config["run"]["seed"]
    k, d = data["classes"], data["ambient_dim"]
    class_dims = data["class_dims"] or [max(1, d // (2 * k))] * k
    agent_ranks = data["agent_ranks"] or [sum(class_dims)] * data["agents"]
    truth_seed, data_seed = np.random.SeedSequence(seed).spawn(2)
    gt = generate_ground_truth(
        d, k, class_dims, data["agents"], agent_ranks, truth_seed, data["beta_min"]
    )
    return generate_dataset(
        gt,
        data["objects_per_class"],
        data["view_dim"],
        data["noise_sigma"],
        data_seed,
        identity_views=data["identity_views"],
        class_view_rank=data["class_view_rank"],
    )


def _load_or_generate(args, config):
    if args.data is None:
        return dataset_from_config(config)
    dataset = load_dataset(args.data)
    sidecar = os.path.splitext(args.data)[0] + ".npz"
    if os.path.exists(sidecar):
        dataset = attach_ground_truth(dataset, sidecar)
    return dataset


def _save_with_truth(dataset, path):
    save_dataset(dataset, path)
    if dataset.ground_truth is not None:
        save_ground_truth(dataset, os.path.splitext(path)[0] + ".npz")


def cmd_generate(args):
    config = _resolve_config(args)
    dataset = dataset_from_config(config)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, DATASET_FILE)
    _save_with_truth(dataset, path)
    print(
        "wrote {}: {} agents, {} classes, {} samples per agent, beta {:.4f}".format(
            path,
            dataset.agent_count,
            dataset.class_count,
            dataset.views[0].sample_count,
            dataset.ground_truth.beta,
        )
    )
    return 0


def cmd_train(args):
    config = _resolve_config(args)
    cfg = RunConfig.from_dict(config)
    dataset = _load_or_generate(args, config)
    test = None
    if config["data"]["test_fraction"]:
        dataset, test = split_dataset(dataset, config["data"]["test_fraction"], cfg.seed)

    os.makedirs(args.out, exist_ok=True)
    dump_config(config, os.path.join(args.out, CONFIG_FILE))
    _save_with_truth(dataset, os.path.join(args.out, TRAIN_FILE))
    if test is not None:
        _save_with_truth(test, os.path.join(args.out, TEST_FILE))

    with RoundLog(args.out, cfg.checkpoint_every) as log:
        result = run(cfg, dataset, on_round=log)

    held_out = test if test is not None and cfg.mode == "encoder" else None
    summary = evaluate(result.state, held_out).as_dict()
    summary.update(
        {
            "rounds": result.state.round,
            "stopped_early": result.stopped_early,
            "bound_violations": result.bound_violations,
            "evaluated_on": "test" if held_out is not None else "train",
        }
    )
    _write_json(os.path.join(args.out, "summary.json"), summary)
    print(
        "rounds {rounds}  acc {acc:.4f}  sis {sis:.4f}  dis {dis:.4f}  fr {fisher_ratio:.4f}"
        "  bound violations {bound_violations}".format(**summary)
    )
    return 0


def cmd_verify(args):
    config = _resolve_config(args)
    cfg = RunConfig.from_dict(config)
    summary = run_verification_suite(
        config["verify"], cfg.seed, rate_cfg=RateConfig(cfg.epsilon_sq), threads=cfg.threads
    )
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "verify.jsonl"), "w") as f:
        for i, report in enumerate(summary.trace_reports):
            f.write(json.dumps(dict(report.as_dict(), kind="trace", instance=i), sort_keys=True))
            f.write("\n")
        for record in summary.consistency.trial_records:
            f.write(json.dumps(dict(record, kind="consistency"), sort_keys=True) + "\n")
    _write_json(os.path.join(args.out, "verify_summary.json"), summary.as_dict())

    consistency = summary.consistency
    rows = [
        ("suite", "instances", "violations"),
        ("trace bound", len(summary.trace_reports), summary.trace_violations),
        ("rate monotonicity", len(summary.monotonicity_reports), summary.monotonicity_violations),
        ("fusion consistency", consistency.distances.size, consistency.violations),
    ]
    for row in rows:
        print("{:<24}{:>12}{:>12}".format(*row))
    print(
        "consistency slope {:.4f}, beta {:.4f}, constant {:.4f}".format(
            consistency.slope, consistency.beta, consistency.constant
        )
    )
    if not summary.passed:
        raise VerificationFailed("at least one certified bound did not hold")
    return 0


def cmd_report(args):
    config = load_config(os.path.join(args.out, CONFIG_FILE))
    cfg = RunConfig.from_dict(config)
    path = latest_checkpoint(args.out)
    if path is None:
        raise MvFusionError("no checkpoints in {}".format(args.out))
    params, features, messages = load_checkpoint(path, cfg.agents)

    test_path = os.path.join(args.out, TEST_FILE)
    if cfg.mode == "encoder" and os.path.exists(test_path):
        dataset = load_dataset(test_path)
        features = [forward(p, v.samples).matrix for p, v in zip(params, dataset.views)]
    else:
        dataset = load_dataset(os.path.join(args.out, TRAIN_FILE))
        if cfg.mode == "encoder":
            features = [forward(p, v.samples).matrix for p, v in zip(params, dataset.views)]
    labels = [v.labels for v in dataset.views]
    object_ids = [v.object_ids for v in dataset.views]

    projectors, _ = fuse_round(
        messages,
        cfg.fusion_config(),
        cfg.agents,
        identity_projectors(cfg.feature_dim, cfg.classes),
    )
    summary = summarize(features, object_ids, labels, projectors)
    sim = cosine_similarity_matrix(features, labels, object_ids)
    within, across = block_means(sim)

    payload = dict(summary.as_dict(), within_class_cosine=within, across_class_cosine=across)
    _write_json(os.path.join(args.out, "report.json"), payload)
    base = os.path.join(args.out, "similarity")
    export_heatmap(sim, base)
    render_png(sim, base + ".png", title="cosine similarity")
    print(
        "acc {acc:.4f}  sis {sis:.4f}  dis {dis:.4f}  fr {fisher_ratio:.4f}  "
        "within {within:.4f}  across {across:.4f}".format(within=within, across=across, **payload)
    )
    return 0


def cmd_cost(args):
    config = _resolve_config(args)
    cfg = RunConfig.from_dict(config)
    dataset = _load_or_generate(args, config)
    estimate = fusion_cost_estimate(cfg.fusion_config(), dataset)
    if args.measure:
        state = initialize_run(cfg, dataset)
        seconds = measure_fusion_time(
            [a.features for a in state.agents],
            [a.partition for a in state.agents],
            cfg.fusion_config(),
            state.projectors,
        )
        estimate = replace(estimate, measured_seconds=seconds)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "cost.json"), estimate.as_dict())
    print("predicted_flops {}".format(estimate.predicted))
    for k, value in enumerate(estimate.per_class):
        print("class {} {}".format(k, value))
    if estimate.measured_seconds is not None:
        print("measured_seconds {:.6f}".format(estimate.measured_seconds))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mvfusion", description="Multi-agent class subspace learning with basis fusion"
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command")
    sub.required = True

    def common(p, data=False):
        p.add_argument("--config", default=None, help="YAML file overriding the defaults")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--mode", choices=("encoder", "direct"), default=None)
        p.add_argument("--threads", type=int, default=None, help="does not change results")
        if data:
            p.add_argument("--data", default=None, help="dataset file instead of generating")

    common(sub.add_parser("generate", help="write a synthetic dataset"))
    common(sub.add_parser("train", help="run cooperative training"), data=True)
    common(sub.add_parser("verify", help="run the certification suites"))
    report = sub.add_parser("report", help="metrics and heatmaps from a training run")
    report.add_argument("--out", default=".", help="training output directory")
    cost = sub.add_parser("cost", help="fusion cost estimate")
    common(cost, data=True)
    cost.add_argument("--measure", action="store_true", help="also time one fusion round")

    for name, fn in (
        ("generate", cmd_generate),
        ("train", cmd_train),
        ("verify", cmd_verify),
        ("report", cmd_report),
        ("cost", cmd_cost),
    ):
        sub.choices[name].set_defaults(func=fn)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except VerificationFailed as e:
        logger.error("%s", e)
        return 2
    except (MvFusionError, OSError) as e:
        logger.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
