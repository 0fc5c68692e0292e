"""Command-line surface.

Subcommands: generate, decode, reward, summarize, eval-detection,
eval-findings, train-toy. Every command that produces an output directory
writes a ``manifest.json`` last (command, resolved config, seed, inputs,
outputs, tool version, duration); re-running a command with the same inputs
and seed reproduces the data artifacts byte for byte.

Exit codes: 0 success, 2 usage error, 3 missing input file, 4 malformed
study/config file, 5 other runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .coherence import (
    STUDY_DECODE_MAX_NODES,
    DecoderConfig,
    decode_study,
    reward_value,
)
from .core.studyfile import FINDING_NAMES, Study, StudyFormatError, load_study, save_study
from .core.types import (
    BACKGROUND_CLASS,
    IMPLANT_CLASS,
    N_TEETH,
    fdi_for_slot,
    slot_for_fdi,
)
from .pipeline import (
    aggregate_detection_metrics,
    evaluate_study_detections,
    pr_staircase,
    summarize_with_decode,
)
from .summary import THRESHOLD_PROFILES, finding_roc_curves
from .synthgen import GenConfig, generate_study
from .weaksup import RLConfig, RLInstance, ToyPolicy, assignment_accuracy, train_toy

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_FORMAT = 4
EXIT_RUNTIME = 5


def fmt(x: float) -> str:
    """Fixed 6-significant-digit rendering for all numeric CLI output."""
    return f"{x:.6g}"


# -- config / manifest plumbing ------------------------------------------------


def _load_config_file(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise StudyFormatError(p, "<document>", f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise StudyFormatError(p, "<document>", "config must be a JSON object")
    # A run manifest doubles as a config file.
    if "config" in doc and "command" in doc:
        doc = doc["config"]
        if not isinstance(doc, dict):
            raise StudyFormatError(p, "config", "manifest config block must be an object")
    return doc


def _resolve(args: argparse.Namespace, file_config: dict[str, Any], keys: dict[str, Any]) -> dict[str, Any]:
    """Merge precedence: CLI flag > config file > built-in default."""
    out = {}
    for key, default in keys.items():
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            out[key] = cli_value
        elif key in file_config:
            out[key] = file_config[key]
        else:
            out[key] = default
    return out


def _write_manifest(
    out_dir: Path,
    command: str,
    config: dict[str, Any],
    seed: int | None,
    inputs: Sequence[str | Path],
    outputs: Sequence[str | Path],
    started: float,
) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "inputs": sorted(str(p) for p in inputs),
        "outputs": sorted(str(Path(p).name) for p in outputs),
        "duration_seconds": round(time.monotonic() - started, 3),
    }
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _decoder_config(resolved: dict[str, Any]) -> DecoderConfig:
    max_nodes = resolved.get("max_nodes", STUDY_DECODE_MAX_NODES)
    return DecoderConfig(
        quadratic_weight=resolved.get("quadratic_weight", 1.0),
        candidate_classes_per_object=resolved.get("top_k", 5),
        pair_convention=resolved.get("pair_convention", "ordered"),
        time_budget=resolved.get("time_budget"),
        max_nodes=None if not max_nodes else int(max_nodes),
    )


_DECODER_KEYS = {
    "quadratic_weight": 1.0,
    "top_k": 5,
    "pair_convention": "ordered",
    "time_budget": None,
    "max_nodes": STUDY_DECODE_MAX_NODES,
}


def _add_decoder_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--quadratic-weight", dest="quadratic_weight", type=float)
    sub.add_argument("--top-k", dest="top_k", type=int)
    sub.add_argument("--pair-convention", dest="pair_convention", choices=["ordered", "unordered"])
    sub.add_argument("--time-budget", dest="time_budget", type=float)
    sub.add_argument(
        "--max-nodes",
        dest="max_nodes",
        type=int,
        help=f"search node cap, 0 for unlimited (default {STUDY_DECODE_MAX_NODES})",
    )


def _study_paths(raw: list[str]) -> list[Path]:
    """Expand directory arguments to their study files, keep files as-is."""
    paths: list[Path] = []
    for item in raw:
        p = Path(item)
        if p.is_dir():
            found = sorted(p.glob("*.json"))
            found = [f for f in found if f.name != "manifest.json"]
            if not found:
                raise FileNotFoundError(f"no study files in directory: {p}")
            paths.extend(found)
        elif p.exists():
            paths.append(p)
        else:
            raise FileNotFoundError(f"study file not found: {p}")
    return paths


def _map_workers(func: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


# -- generate -------------------------------------------------------------------

_GEN_KEYS = {
    "width": 512,
    "height": 256,
    "missing_prob": 0.15,
    "implant_prob": 0.3,
    "impacted_prob": 0.08,
    "crown_bridge_prob": 0.10,
    "restoration_prob": 0.12,
    "root_filled_prob": 0.10,
    "duplicate_rate": 0.0,
    "temperature": 0.0,
    "jitter": 0.0,
}


def _gen_one(task: tuple[dict, int, str, bool]) -> str:
    resolved, index, out_dir, raw_masks = task
    config = GenConfig(
        width=resolved["width"],
        height=resolved["height"],
        missing_prob=resolved["missing_prob"],
        implant_prob=resolved["implant_prob"],
        impacted_prob=resolved["impacted_prob"],
        crown_bridge_prob=resolved["crown_bridge_prob"],
        restoration_prob=resolved["restoration_prob"],
        root_filled_prob=resolved["root_filled_prob"],
        duplicate_rate=resolved["duplicate_rate"],
        label_temperature=resolved["temperature"],
        mask_jitter=resolved["jitter"],
        rng_seed=resolved["seed"],
    )
    rng = np.random.default_rng(np.random.SeedSequence([config.rng_seed, index]))
    study = generate_study(config, rng).to_study()
    path = Path(out_dir) / f"study_{index:04d}.json"
    save_study(study, path, raw_bits=raw_masks)
    return path.name


def cmd_generate(args: argparse.Namespace) -> int:
    started = time.monotonic()
    file_config = _load_config_file(args.config)
    resolved = _resolve(args, file_config, dict(_GEN_KEYS, seed=0, count=20))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [
        (resolved, i, str(out_dir), bool(args.raw_masks)) for i in range(resolved["count"])
    ]
    names = _map_workers(_gen_one, tasks, args.workers)
    seg_names = [n.replace(".json", ".seg") for n in names]
    _write_manifest(
        out_dir, "generate", resolved, resolved["seed"], [], list(names) + seg_names, started
    )
    print(f"generated {len(names)} studies in {out_dir}")
    return EXIT_OK


# -- decode ----------------------------------------------------------------------


def _decode_doc(study: Study, config: DecoderConfig) -> dict[str, Any]:
    result = decode_study(study.detections, config)
    assignment = {
        str(fdi_for_slot(slot)): n for n, slot in result.assignment.pairs()
    }
    return {
        "assignment": dict(sorted(assignment.items(), key=lambda kv: int(kv[0]))),
        "reward": result.reward,
        "suppressed": list(result.suppressed),
        "optimality": result.optimality,
        "implant_passthrough": list(result.passthrough_implants),
        "dropped_background": list(result.dropped_background),
        "config": {
            "quadratic_weight": config.quadratic_weight,
            "top_k": config.candidate_classes_per_object,
            "pair_convention": config.pair_convention,
            "max_nodes": config.max_nodes,
        },
    }


def _decode_one(task: tuple[str, str, dict]) -> str:
    study_path, out_dir, resolved = task
    study = load_study(study_path)
    doc = _decode_doc(study, _decoder_config(resolved))
    doc["study"] = Path(study_path).name
    out = Path(out_dir) / (Path(study_path).stem + ".decode.json")
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return out.name


def cmd_decode(args: argparse.Namespace) -> int:
    started = time.monotonic()
    file_config = _load_config_file(args.config)
    resolved = _resolve(args, file_config, dict(_DECODER_KEYS))
    paths = _study_paths(args.studies)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(str(p), str(out_dir), resolved) for p in paths]
    names = _map_workers(_decode_one, tasks, args.workers)
    _write_manifest(out_dir, "decode", resolved, args.seed, [str(p) for p in paths], names, started)
    print(f"decoded {len(names)} studies into {out_dir}")
    return EXIT_OK


# -- reward ----------------------------------------------------------------------


def study_reward(
    study: Study, assignment_by_fdi: dict[str, int], config: DecoderConfig
) -> float:
    """Recompute the decoder's objective for an assignment document.

    Reconstructs the same tooth-class subproblem the decoder optimizes, so
    the value matches ``decode`` output exactly.
    """
    from .core.types import build_overlap_tensor

    body = [
        i
        for i, det in enumerate(study.detections)
        if det.argmax_class not in (BACKGROUND_CLASS, IMPLANT_CLASS)
    ]
    index_of = {orig: local for local, orig in enumerate(body)}
    rows: list[int | None] = [None] * len(body)
    for fdi, obj in assignment_by_fdi.items():
        slot = slot_for_fdi(int(fdi))
        if obj not in index_of:
            raise ValueError(
                f"assignment references detection {obj}, which is not a tooth candidate"
            )
        rows[index_of[obj]] = slot
    probs = (
        np.stack([study.detections[i].probs[1 : N_TEETH + 1] for i in body])
        if body
        else np.zeros((0, N_TEETH))
    )
    overlaps = build_overlap_tensor([study.detections[i] for i in body])
    return reward_value(probs, rows, overlaps, config.quadratic_weight, config.pair_factor)


def cmd_reward(args: argparse.Namespace) -> int:
    study = load_study(args.study)
    doc_path = Path(args.assignment)
    if not doc_path.exists():
        raise FileNotFoundError(f"assignment file not found: {doc_path}")
    doc = json.loads(doc_path.read_text(encoding="utf-8"))
    if not isinstance(doc, dict) or "assignment" not in doc:
        raise StudyFormatError(doc_path, "assignment", "expected a decode-result document")
    doc_config = doc.get("config", {})
    resolved = {
        "quadratic_weight": args.quadratic_weight
        if args.quadratic_weight is not None
        else doc_config.get("quadratic_weight", 1.0),
        "pair_convention": args.pair_convention or doc_config.get("pair_convention", "ordered"),
        "top_k": doc_config.get("top_k", 5),
        "max_nodes": 0,
        "time_budget": None,
    }
    value = study_reward(study, doc["assignment"], _decoder_config(resolved))
    print(fmt(value))
    return EXIT_OK


# -- summarize -------------------------------------------------------------------


def _profile_thresholds(resolved: dict[str, Any]) -> tuple[float, ...]:
    profile = resolved["threshold_profile"]
    if profile == "custom":
        custom = resolved.get("custom_thresholds")
        if custom is None:
            raise ValueError("--threshold-profile custom requires --custom-thresholds")
        values = [float(v) for v in str(custom).split(",")]
        if len(values) != len(FINDING_NAMES):
            raise ValueError(f"need {len(FINDING_NAMES)} thresholds, got {len(values)}")
        return tuple(values)
    if profile not in THRESHOLD_PROFILES:
        raise ValueError(f"unknown threshold profile: {profile!r}")
    return THRESHOLD_PROFILES[profile]


def _summarize_one(task: tuple[str, str, dict]) -> str:
    study_path, out_dir, resolved = task
    study = load_study(study_path)
    summary, decode = summarize_with_decode(study, _decoder_config(resolved))
    thresholds = _profile_thresholds(resolved)
    binarized = summary.binarized(thresholds)
    doc = {
        "study": Path(study_path).name,
        "finding_names": list(FINDING_NAMES),
        "fdi_order": [fdi_for_slot(s) for s in range(N_TEETH)],
        "values": [[v for v in row] for row in summary.values.tolist()],
        "binarized": [[int(v) for v in row] for row in binarized],
        "threshold_profile": resolved["threshold_profile"],
        "thresholds": list(thresholds),
        "assignment": {
            str(fdi_for_slot(slot)): n for n, slot in decode.assignment.pairs()
        },
        "implant_passthrough": [
            {"detection": n, "box": list(study.detections[n].box)}
            for n in decode.passthrough_implants
        ],
        "suppressed": list(decode.suppressed),
    }
    out = Path(out_dir) / (Path(study_path).stem + ".summary.json")
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return out.name


def cmd_summarize(args: argparse.Namespace) -> int:
    started = time.monotonic()
    file_config = _load_config_file(args.config)
    resolved = _resolve(
        args,
        file_config,
        dict(_DECODER_KEYS, threshold_profile="table1", custom_thresholds=None),
    )
    _profile_thresholds(resolved)  # validate early
    paths = _study_paths(args.studies)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(str(p), str(out_dir), resolved) for p in paths]
    names = _map_workers(_summarize_one, tasks, args.workers)
    _write_manifest(
        out_dir, "summarize", resolved, args.seed, [str(p) for p in paths], names, started
    )
    print(f"summarized {len(names)} studies into {out_dir}")
    return EXIT_OK


# -- eval-detection --------------------------------------------------------------


def _eval_det_one(task: tuple[str, dict]):
    study_path, resolved = task
    study = load_study(study_path)
    return evaluate_study_detections(
        study,
        resolved["mode"],
        resolved["iou_thresholds"],
        _decoder_config(resolved),
        resolved["nms_iou"],
    )


def cmd_eval_detection(args: argparse.Namespace) -> int:
    started = time.monotonic()
    file_config = _load_config_file(args.config)
    resolved = _resolve(
        args,
        file_config,
        dict(_DECODER_KEYS, mode="dcr", iou_thresholds="0.0,0.5", nms_iou=0.5),
    )
    thresholds = [float(v) for v in str(resolved["iou_thresholds"]).split(",")]
    resolved["iou_thresholds"] = thresholds
    paths = _study_paths(args.studies)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    records = _map_workers(_eval_det_one, [(str(p), resolved) for p in paths], args.workers)
    metrics = aggregate_detection_metrics(records, thresholds)

    csv_path = out_dir / "metrics.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value", "stderr", "n_studies"])
        for name, value, stderr in metrics.rows():
            writer.writerow([name, fmt(value), fmt(stderr), metrics.n_studies])
    txt_path = out_dir / "metrics.txt"
    with open(txt_path, "w", encoding="utf-8") as fh:
        fh.write(f"detection metrics ({resolved['mode']}, {metrics.n_studies} studies)\n")
        for name, value, stderr in metrics.rows():
            fh.write(f"  {name:<16} {fmt(value)} (stderr {fmt(stderr)})\n")
    print(txt_path.read_text(encoding="utf-8"), end="")

    from .plots import save_pr_curves

    staircases = {
        f"IoU>{t:g}": pr_staircase(records, t) for t in thresholds
    }
    fig_path = out_dir / "pr_curves.png"
    save_pr_curves(staircases, fig_path)
    _write_manifest(
        out_dir,
        "eval-detection",
        resolved,
        args.seed,
        [str(p) for p in paths],
        [csv_path.name, txt_path.name, fig_path.name],
        started,
    )
    return EXIT_OK


# -- eval-findings ---------------------------------------------------------------


def _eval_find_one(task: tuple[str, dict]) -> tuple[list[list[float]], list[list[int]]]:
    study_path, resolved = task
    study = load_study(study_path)
    if study.ground_truth is None or study.ground_truth.findings is None:
        raise ValueError(f"{study_path}: eval-findings requires ground-truth findings")
    summary, _decode = summarize_with_decode(study, _decoder_config(resolved))
    return summary.values.tolist(), study.ground_truth.findings.astype(int).tolist()


def cmd_eval_findings(args: argparse.Namespace) -> int:
    started = time.monotonic()
    file_config = _load_config_file(args.config)
    resolved = _resolve(
        args,
        file_config,
        dict(_DECODER_KEYS, threshold_profile="table1", custom_thresholds=None),
    )
    thresholds = _profile_thresholds(resolved)
    paths = _study_paths(args.studies)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    results = _map_workers(_eval_find_one, [(str(p), resolved) for p in paths], args.workers)
    from .summary import FindingSummary

    predicted = [FindingSummary(np.asarray(v)) for v, _g in results]
    reference = [np.asarray(g, dtype=bool) for _v, g in results]
    curves = finding_roc_curves(predicted, reference)

    outputs = []
    for name, curve in curves.items():
        roc_path = out_dir / f"roc_{name}.csv"
        with open(roc_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "tpr", "tnr", "f1"])
            if curve is not None:
                for t, tpr, tnr, f1 in curve.points:
                    writer.writerow([fmt(t), fmt(tpr), fmt(tnr), fmt(f1)])
        outputs.append(roc_path.name)

    pooled_scores = np.concatenate([p.values for p in predicted], axis=0)
    pooled_labels = np.concatenate(reference, axis=0)
    auc_path = out_dir / "auc_table.csv"
    with open(auc_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["finding", "auc", "max_f1", "max_f1_threshold", "profile_threshold",
             "profile_f1", "n_pos", "n_neg"]
        )
        for f, name in enumerate(FINDING_NAMES):
            curve = curves[name]
            labels = pooled_labels[:, f]
            scores = pooled_scores[:, f]
            n_pos = int(labels.sum())
            n_neg = int(labels.size - n_pos)
            pred_pos = scores >= thresholds[f]
            tp = int((pred_pos & labels).sum())
            fp = int((pred_pos & ~labels).sum())
            fn = int((~pred_pos & labels).sum())
            profile_f1 = 2 * tp / (2 * tp + fn + fp) if (2 * tp + fn + fp) else 0.0
            if curve is None:
                writer.writerow([name, "absent", "absent", "absent",
                                 fmt(thresholds[f]), fmt(profile_f1), n_pos, n_neg])
            else:
                writer.writerow(
                    [name, fmt(curve.auc), fmt(curve.max_f1), fmt(curve.max_f1_threshold),
                     fmt(thresholds[f]), fmt(profile_f1), n_pos, n_neg]
                )
    outputs.append(auc_path.name)
    print(auc_path.read_text(encoding="utf-8"), end="")

    from .plots import save_roc_grid

    fig_path = out_dir / "roc_curves.png"
    save_roc_grid(curves, fig_path)
    outputs.append(fig_path.name)
    _write_manifest(
        out_dir, "eval-findings", resolved, args.seed, [str(p) for p in paths], outputs, started
    )
    return EXIT_OK


# -- train-toy -------------------------------------------------------------------


def rl_instance_from_study(study: Study) -> RLInstance:
    """Training instance: tooth-candidate detections with prob features.

    Features are the 32 tooth-class probabilities plus a constant bias
    entry; the weak label is the study's dentition presence vector.
    """
    if study.dentition_label is None:
        raise ValueError("train-toy requires studies with a dentition label")
    from .core.types import build_overlap_tensor

    body = [
        i
        for i, det in enumerate(study.detections)
        if det.argmax_class not in (BACKGROUND_CLASS, IMPLANT_CLASS)
    ]
    features = np.zeros((len(body), N_TEETH + 1))
    for row, i in enumerate(body):
        features[row, :N_TEETH] = study.detections[i].probs[1 : N_TEETH + 1]
        features[row, N_TEETH] = 1.0
    overlaps = build_overlap_tensor([study.detections[i] for i in body])
    present = np.asarray(study.dentition_label.present, dtype=bool)
    true_classes = None
    if study.ground_truth is not None and study.ground_truth.true_classes is not None:
        true_classes = np.asarray(
            [study.ground_truth.true_classes[i] - 1 for i in body], dtype=np.int64
        )
    return RLInstance(features, overlaps, present, true_classes)


def cmd_train_toy(args: argparse.Namespace) -> int:
    started = time.monotonic()
    file_config = _load_config_file(args.config)
    resolved = _resolve(
        args,
        file_config,
        {
            "steps": 300,
            "learning_rate": 0.5,
            "samples": 64,
            "seed": 0,
            "policy_scale": 4.0,
            "eval_max_nodes": 50_000,
        },
    )
    paths = _study_paths(args.studies)
    instances = [rl_instance_from_study(load_study(p)) for p in paths]
    holdout = []
    if args.holdout:
        holdout = [rl_instance_from_study(load_study(p)) for p in _study_paths([args.holdout])]

    config = RLConfig(
        samples_per_instance=resolved["samples"],
        learning_rate=resolved["learning_rate"],
        steps=resolved["steps"],
        rng_seed=resolved["seed"],
    )
    policy = ToyPolicy.scaled_identity(N_TEETH, resolved["policy_scale"], n_extra_features=1)
    eval_config = DecoderConfig(max_nodes=resolved["eval_max_nodes"])

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train_toy(
        instances, config, policy=policy, accuracy_decode_config=eval_config
    )

    traj_path = out_dir / "trajectory.csv"
    with open(traj_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "mean_reward", "accuracy"])
        for s, r, a in zip(result.steps, result.mean_reward, result.accuracy):
            writer.writerow([s, fmt(r), fmt(a)])

    policy_path = out_dir / "policy.txt"
    theta = result.policy.theta
    with open(policy_path, "w", encoding="utf-8") as fh:
        fh.write(f"{theta.shape[0]} {theta.shape[1]}\n")
        for row in theta:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")

    from .plots import save_trajectory

    fig_path = out_dir / "trajectory.png"
    save_trajectory(result.steps, result.mean_reward, result.accuracy, fig_path)

    outputs = [traj_path.name, policy_path.name, fig_path.name]
    lines = [
        f"trained {config.steps} steps on {len(instances)} studies",
        f"mean reward: {fmt(result.mean_reward[0])} -> {fmt(result.mean_reward[-1])}",
        f"train accuracy: {fmt(result.accuracy[0])} -> {fmt(result.accuracy[-1])}",
    ]
    if holdout:
        before = assignment_accuracy(policy, holdout, eval_config)
        after = assignment_accuracy(result.policy, holdout, eval_config)
        lines.append(f"holdout accuracy: {fmt(before)} -> {fmt(after)}")
        holdout_path = out_dir / "holdout.csv"
        with open(holdout_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["when", "accuracy"])
            writer.writerow(["initial", fmt(before)])
            writer.writerow(["trained", fmt(after)])
        outputs.append(holdout_path.name)
    print("\n".join(lines))
    _write_manifest(
        out_dir,
        "train-toy",
        resolved,
        resolved["seed"],
        [str(p) for p in paths] + ([args.holdout] if args.holdout else []),
        outputs,
        started,
    )
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opgkit",
        description="Coherence decoding, weak-supervision training, finding "
        "summaries, and evaluation for panoramic-radiograph detection outputs.",
    )
    parser.add_argument("--version", action="version", version=f"opgkit {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    def common(sub: argparse.ArgumentParser, out_required: bool = True) -> None:
        sub.add_argument("--seed", type=int, default=None)
        sub.add_argument("--config", type=str, default=None, help="JSON config or manifest")
        sub.add_argument("--workers", type=int, default=1)
        if out_required:
            sub.add_argument("--out", required=True, help="output directory")

    gen = subs.add_parser("generate", help="write synthetic study files")
    common(gen)
    gen.add_argument("--count", type=int, default=None)
    gen.add_argument("--raw-masks", action="store_true", help="store bitmaps instead of RLE")
    for key in _GEN_KEYS:
        flag = "--" + key.replace("_", "-")
        gen.add_argument(flag, dest=key, type=float if key not in ("width", "height") else int)
    gen.set_defaults(func=cmd_generate)

    dec = subs.add_parser("decode", help="decode tooth assignments for studies")
    common(dec)
    dec.add_argument("studies", nargs="+", help="study files or directories")
    _add_decoder_flags(dec)
    dec.set_defaults(func=cmd_decode)

    rew = subs.add_parser("reward", help="print the coherence reward of an assignment")
    rew.add_argument("--study", required=True)
    rew.add_argument("--assignment", required=True, help="decode-result document")
    rew.add_argument("--quadratic-weight", dest="quadratic_weight", type=float)
    rew.add_argument(
        "--pair-convention", dest="pair_convention", choices=["ordered", "unordered"]
    )
    rew.set_defaults(func=cmd_reward)

    summ = subs.add_parser("summarize", help="per-study finding summaries")
    common(summ)
    summ.add_argument("studies", nargs="+")
    _add_decoder_flags(summ)
    summ.add_argument("--threshold-profile", dest="threshold_profile", default=None)
    summ.add_argument("--custom-thresholds", dest="custom_thresholds", default=None)
    summ.set_defaults(func=cmd_summarize)

    evd = subs.add_parser("eval-detection", help="detection metric tables")
    common(evd)
    evd.add_argument("studies", nargs="+")
    _add_decoder_flags(evd)
    evd.add_argument("--mode", choices=["dcr", "argmax-nms", "raw"], default=None)
    evd.add_argument("--iou-thresholds", dest="iou_thresholds", default=None)
    evd.add_argument("--nms-iou", dest="nms_iou", type=float, default=None)
    evd.set_defaults(func=cmd_eval_detection)

    evf = subs.add_parser("eval-findings", help="finding ROC/AUC tables")
    common(evf)
    evf.add_argument("studies", nargs="+")
    _add_decoder_flags(evf)
    evf.add_argument("--threshold-profile", dest="threshold_profile", default=None)
    evf.add_argument("--custom-thresholds", dest="custom_thresholds", default=None)
    evf.set_defaults(func=cmd_eval_findings)

    tt = subs.add_parser("train-toy", help="weak-supervision policy training")
    common(tt)
    tt.add_argument("studies", nargs="+", help="training study files or directories")
    tt.add_argument("--holdout", type=str, default=None, help="held-out studies")
    tt.add_argument("--steps", type=int, default=None)
    tt.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    tt.add_argument("--samples", type=int, default=None)
    tt.add_argument("--policy-scale", dest="policy_scale", type=float, default=None)
    tt.add_argument("--eval-max-nodes", dest="eval_max_nodes", type=int, default=None)
    tt.set_defaults(func=cmd_train_toy)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except StudyFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
