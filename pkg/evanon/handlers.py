"""
Event Anonymization - Command Handlers

This module implements the handlers behind every CLI command. Handlers take a
validated RunConfig, delegate to the library modules, write
`<reports>/<command>.report` (plus CSV tables) and return a result dict.

Failures never escape a handler: the handle_errors decorator logs them and
returns `{"error", "type", "exit_code"}` instead.

Functions:
- handle_errors() - Decorator converting exceptions into error results
- run_command() - Validate declared inputs, echo the config, dispatch
- handle_gen_dataset(), handle_simulate(), handle_train_attacker(),
  handle_train_joint(), handle_encrypt_baseline(), handle_eval(),
  handle_invert_attack(), handle_gradcheck(), handle_ablate(), handle_render()
"""

from __future__ import annotations

import functools
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Tuple, Type, TypeVar

from .baselines import ENCRYPTION_METHODS, descramble_events, encrypt_stream, select_events
from .command_registry import COMMAND_REGISTRY, register_command
from .commands import (
    ANONYMIZER_CHECKPOINT,
    ATTACKER_CHECKPOINT,
    CMD_ABLATE,
    CMD_ENCRYPT_BASELINE,
    CMD_EVAL,
    CMD_GEN_DATASET,
    CMD_GRADCHECK,
    CMD_INVERT_ATTACK,
    CMD_RENDER,
    CMD_SIMULATE,
    CMD_TRAIN_ATTACKER,
    CMD_TRAIN_JOINT,
    INVERTER_CHECKPOINT,
    REID_CHECKPOINT,
    REID_RAW_CHECKPOINT,
)
from .config import write_resolved_config
from .errors import CheckpointError, DataError, EvanonError, NumericalError, UsageError, exit_code_for
from .evaluation import (
    ABLATION_HEADER,
    EvalReport,
    cross_camera_split,
    evaluate_encryption_baseline,
    evaluate_image_quality,
    evaluate_reid,
    inversion_attack,
    retrieval_attack,
    run_loss_ablation,
    train_retrieval_embedder,
)
from .events import (
    GrayImage,
    VoxelGrid,
    build_voxel_grid,
    normalize_voxel,
    read_events,
    render_voxel,
    window_partition,
    write_events,
    write_gray,
)
from .models import RunConfig
from .networks import (
    AnonymizerNet,
    AttackerNet,
    Model,
    ReIdNet,
    anonymize,
    gradcheck_suite,
    integrate_batch,
    load_model,
    save_model,
)
from .report import REPORT_SUFFIX, Report, Table, emit_report
from .samples import CorpusWindows, build_windows, corpus_summary, load_streams, prepare_windows
from .simulator import MANIFEST_NAME, ToyCorpus, generate_toy_corpus, read_corpus, write_corpus, write_sequence_events
from .training import TrainingLog, train_attacker, train_joint, train_reid_baseline

logger = logging.getLogger(__name__)

M = TypeVar("M", bound=Model)

CMC_TABLE_DEPTH = 10


def handle_errors(func: Callable[[RunConfig], Dict[str, Any]]) -> Callable[[RunConfig], Dict[str, Any]]:
    """Decorator to standardize error handling across all handlers."""

    @functools.wraps(func)
    def wrapper(config: RunConfig) -> Dict[str, Any]:
        try:
            return func(config)
        except EvanonError as e:
            logger.error(f"{type(e).__name__} in {func.__name__}: {e}")
            return {"error": str(e), "type": type(e).__name__, "exit_code": e.exit_code}
        except (FileNotFoundError, NotADirectoryError) as e:
            logger.error(f"Missing input in {func.__name__}: {e}")
            return {"error": f"Missing input: {e}", "type": type(e).__name__, "exit_code": exit_code_for(e)}
        except ValueError as e:
            logger.error(f"Invalid argument in {func.__name__}: {e}")
            return {"error": f"Invalid argument: {e}", "type": "ValueError", "exit_code": exit_code_for(e)}
        except Exception as e:
            logger.exception(f"Unexpected error in {func.__name__}")
            return {"error": f"Operation failed: {e}", "type": type(e).__name__, "exit_code": exit_code_for(e)}

    return wrapper


@handle_errors
def run_command(config: RunConfig) -> Dict[str, Any]:
    """Check the command's declared inputs, write the resolved config, dispatch."""
    registration = COMMAND_REGISTRY.get(config.command)
    if registration is None:
        raise UsageError(f"unknown command '{config.command}'")
    if registration.needs_corpus and not (config.corpus_path / MANIFEST_NAME).is_file():
        raise DataError(f"corpus not found: {config.corpus_path / MANIFEST_NAME}")
    for name in registration.needs_checkpoints:
        if not (config.checkpoint_path / name).is_file():
            raise DataError(f"checkpoint not found: {config.checkpoint_path / name}")
    write_resolved_config(config)
    return registration.handler(config)


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _finish(config: RunConfig, report: Report) -> Dict[str, Any]:
    path = config.report_path / f"{config.command}{REPORT_SUFFIX}"
    written = emit_report(report, path)
    return {"report": str(path), "files": [str(p) for p in written], "values": report.values}


def _load_windows(config: RunConfig) -> Tuple[ToyCorpus, CorpusWindows]:
    corpus = read_corpus(config.corpus_path)
    windows = prepare_windows(
        corpus,
        bins=config.bins,
        window_us=config.window_us,
        contrast_threshold=config.contrast_threshold,
        streams=load_streams(config.corpus_path, corpus),
    )
    return corpus, windows


def _load(config: RunConfig, name: str, kind: Type[M]) -> M:
    path = config.checkpoint_path / name
    model = load_model(path)
    if model.kind != kind.kind:
        raise CheckpointError(f"{path} holds a '{model.kind}' model, expected '{kind.kind}'")
    return model  # type: ignore[return-value]


def _loss_table(log: TrainingLog) -> Table:
    keys = list(log.epochs[0]) if log.epochs else ["epoch"]
    return Table(keys, [[int(row["epoch"])] + [row[k] for k in keys[1:]] for row in log.epochs])


def _cmc_table(reports: Dict[str, EvalReport]) -> Table:
    rows: List[List[Any]] = []
    for name in sorted(reports):
        curve = reports[name].curve
        rows.extend([name, k + 1, curve[k]] for k in range(min(CMC_TABLE_DEPTH, len(curve))))
    return Table(["protocol", "rank", "rate"], rows)


def _values(reports: Dict[str, EvalReport]) -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    for name in sorted(reports):
        values.update(reports[name].as_values())
    return values


# ---------------------------------------------------------------------------
# Data commands
# ---------------------------------------------------------------------------


@register_command(name=CMD_GEN_DATASET, description="Generate and write the toy person-ReId corpus")
@handle_errors
def handle_gen_dataset(config: RunConfig) -> Dict[str, Any]:
    corpus = generate_toy_corpus(
        config.num_ids,
        config.cams,
        frames_per_seq=config.frames,
        height=config.height,
        width=config.width,
        seed=config.seed,
        num_test_ids=config.num_test_ids,
    )
    write_corpus(corpus, config.corpus_path)
    summary = corpus_summary(corpus)
    logger.info(f"Corpus summary: {summary}")
    report = Report(config.command, {f"dataset.{k}": v for k, v in summary.items()})
    report.values["dataset.seed"] = config.seed
    return _finish(config, report)


@register_command(
    name=CMD_SIMULATE,
    description="Simulate events.csv for every corpus sequence",
    needs_corpus=True,
)
@handle_errors
def handle_simulate(config: RunConfig) -> Dict[str, Any]:
    total = write_sequence_events(config.corpus_path, config.contrast_threshold)
    report = Report(
        config.command,
        {"simulate.events": total, "simulate.contrast_threshold": config.contrast_threshold},
    )
    return _finish(config, report)


@register_command(
    name=CMD_ENCRYPT_BASELINE,
    description="Encrypt an event file, or evaluate both encryption baselines on the corpus",
)
@handle_errors
def handle_encrypt_baseline(config: RunConfig) -> Dict[str, Any]:
    if config.events_in is not None:
        return _encrypt_file(config)
    for name in (ATTACKER_CHECKPOINT, REID_RAW_CHECKPOINT):
        if not (config.checkpoint_path / name).is_file():
            raise DataError(f"checkpoint not found: {config.checkpoint_path / name}")
    if not (config.corpus_path / MANIFEST_NAME).is_file():
        raise DataError(f"corpus not found: {config.corpus_path / MANIFEST_NAME}")

    corpus, windows = _load_windows(config)
    attacker = _load(config, ATTACKER_CHECKPOINT, AttackerNet)
    reid_raw = _load(config, REID_RAW_CHECKPOINT, ReIdNet)
    embedder, _ = train_retrieval_embedder(windows, attacker, config.train_config())
    key = config.encryption_key()
    streams = load_streams(config.corpus_path, corpus)
    encrypted = {
        method: build_windows(
            corpus.test,
            bins=config.bins,
            window_us=config.window_us,
            contrast_threshold=config.contrast_threshold,
            streams=streams,
            transform=functools.partial(encrypt_stream, method=method, key=key, ratio=config.ratio),
        )
        for method in sorted(ENCRYPTION_METHODS)
    }
    reports = evaluate_encryption_baseline(encrypted, attacker, reid_raw, embedder, config.ssim_config())
    report = Report(config.command, _values(reports))
    report.values["encrypt.ratio"] = config.ratio
    report.tables["cmc"] = _cmc_table({k: v for k, v in reports.items() if v.curve})
    return _finish(config, report)


def _encrypt_file(config: RunConfig) -> Dict[str, Any]:
    if config.events_out is None:
        raise UsageError("encrypt-baseline with events_in also needs events_out")
    stream = read_events(config.events_in)
    key = config.encryption_key()
    if config.decrypt:
        if config.method != "scramble":
            raise UsageError("only scrambling can be decrypted")
        out = descramble_events(stream, key, config.ratio)
    else:
        out = encrypt_stream(stream, config.method, key, config.ratio)
    Path(config.events_out).parent.mkdir(parents=True, exist_ok=True)
    write_events(out, config.events_out)
    report = Report(
        config.command,
        {
            "encrypt.method": config.method,
            "encrypt.decrypt": config.decrypt,
            "encrypt.ratio": config.ratio,
            "encrypt.events_in": len(stream),
            "encrypt.events_out": len(out),
            "encrypt.selected": int(select_events(len(stream), key, config.ratio).size),
        },
    )
    return _finish(config, report)


@register_command(name=CMD_RENDER, description="Render raw and anonymized voxel grids of one window as PGM")
@handle_errors
def handle_render(config: RunConfig) -> Dict[str, Any]:
    if config.events_in is not None:
        windows = window_partition(read_events(config.events_in), config.window_us)
        if config.window_index >= len(windows):
            raise UsageError(f"window_index {config.window_index} out of range ({len(windows)} windows)")
        t0, sub = windows[config.window_index]
        grid = normalize_voxel(build_voxel_grid(sub, t0, config.window_us, config.bins))
        source = config.events_in
    else:
        if not (config.corpus_path / MANIFEST_NAME).is_file():
            raise DataError(f"corpus not found: {config.corpus_path / MANIFEST_NAME}")
        _, windows_set = _load_windows(config)
        split = windows_set.train if config.split == "train" else windows_set.test
        if config.window_index >= len(split):
            raise UsageError(f"window_index {config.window_index} out of range ({len(split)} windows)")
        grid = VoxelGrid(split.voxels[config.window_index], 0.0, float(config.window_us))
        source = f"{config.split}/{split.sequences[config.window_index]}"

    outputs = {"raw": render_voxel(grid)}
    outputs["integration"] = GrayImage(integrate_batch(grid.data[None])[0, 0])
    anonymizer_path = config.checkpoint_path / ANONYMIZER_CHECKPOINT
    if anonymizer_path.is_file():
        anonymizer = _load(config, ANONYMIZER_CHECKPOINT, AnonymizerNet)
        outputs["anonymized"] = render_voxel(anonymize(anonymizer, grid))
    values: Dict[str, Any] = {"render.source": source, "render.window_index": config.window_index}
    for name, image in outputs.items():
        path = config.report_path / f"render-{name}.pgm"
        path.parent.mkdir(parents=True, exist_ok=True)
        write_gray(image, path)
        values[f"render.{name}"] = str(path)
    return _finish(config, Report(config.command, values))


# ---------------------------------------------------------------------------
# Training commands
# ---------------------------------------------------------------------------


@register_command(
    name=CMD_TRAIN_ATTACKER,
    description="Train and freeze the reconstruction attacker surrogate",
    needs_corpus=True,
)
@handle_errors
def handle_train_attacker(config: RunConfig) -> Dict[str, Any]:
    _, windows = _load_windows(config)
    ssim_config = config.ssim_config()
    attacker, log = train_attacker(windows.train, config.train_config(), ssim_config)
    config.checkpoint_path.mkdir(parents=True, exist_ok=True)
    save_model(attacker, config.checkpoint_path / ATTACKER_CHECKPOINT)
    quality = evaluate_image_quality(attacker, windows.test, protocol="attacker_heldout", cfg=ssim_config)
    report = Report(config.command, quality.as_values())
    report.values["attacker.first_loss"] = log.first["loss"]
    report.values["attacker.final_loss"] = log.final["loss"]
    report.values["attacker.frozen"] = attacker.frozen
    report.tables["losses"] = _loss_table(log)
    return _finish(config, report)


@register_command(
    name=CMD_TRAIN_JOINT,
    description="Jointly train the anonymizer and ReId embedder against the frozen attacker",
    needs_corpus=True,
    needs_checkpoints=(ATTACKER_CHECKPOINT,),
)
@handle_errors
def handle_train_joint(config: RunConfig) -> Dict[str, Any]:
    _, windows = _load_windows(config)
    attacker = _load(config, ATTACKER_CHECKPOINT, AttackerNet)
    train_config = config.train_config()
    result = train_joint(
        windows.train,
        windows.train_ids,
        attacker,
        train_config,
        config.ssim_config(),
        checkpoint_dir=config.checkpoint_path,
    )
    save_model(result.anonymizer, config.checkpoint_path / ANONYMIZER_CHECKPOINT)
    save_model(result.reid, config.checkpoint_path / REID_CHECKPOINT)
    report = Report(config.command, {f"joint.final_{k}": v for k, v in result.log.final.items() if k != "epoch"})
    report.values.update({f"joint.first_{k}": v for k, v in result.log.first.items() if k != "epoch"})
    report.tables["losses"] = _loss_table(result.log)
    if config.raw_baseline:
        reid_raw, raw_log = train_reid_baseline(windows.train, windows.train_ids, train_config)
        save_model(reid_raw, config.checkpoint_path / REID_RAW_CHECKPOINT)
        report.values["reid_raw.final_loss"] = raw_log.final["loss"]
        report.tables["raw_losses"] = _loss_table(raw_log)
    return _finish(config, report)


# ---------------------------------------------------------------------------
# Evaluation commands
# ---------------------------------------------------------------------------


@register_command(
    name=CMD_EVAL,
    description="Image quality, ReId and retrieval-attack evaluation",
    needs_corpus=True,
    needs_checkpoints=(ATTACKER_CHECKPOINT, ANONYMIZER_CHECKPOINT, REID_CHECKPOINT),
)
@handle_errors
def handle_eval(config: RunConfig) -> Dict[str, Any]:
    _, windows = _load_windows(config)
    ssim_config = config.ssim_config()
    attacker = _load(config, ATTACKER_CHECKPOINT, AttackerNet)
    anonymizer = _load(config, ANONYMIZER_CHECKPOINT, AnonymizerNet)
    reid = _load(config, REID_CHECKPOINT, ReIdNet)
    test = windows.test

    reports: Dict[str, EvalReport] = {
        "quality_raw": evaluate_image_quality(attacker, test, cfg=ssim_config),
        "quality_anonymized": evaluate_image_quality(attacker, test, anonymizer, cfg=ssim_config),
        "quality_integration_raw": evaluate_image_quality(
            integrate_batch, test, protocol="quality_integration_raw", cfg=ssim_config
        ),
        "quality_integration_anonymized": evaluate_image_quality(
            integrate_batch, test, anonymizer, protocol="quality_integration_anonymized", cfg=ssim_config
        ),
    }
    query, gallery = cross_camera_split(test)
    reports["reid_anonymized"] = evaluate_reid(reid, query, gallery, anonymizer, protocol="reid_anonymized")
    if (config.checkpoint_path / REID_RAW_CHECKPOINT).is_file():
        reid_raw = _load(config, REID_RAW_CHECKPOINT, ReIdNet)
        reports["reid_raw"] = evaluate_reid(reid_raw, query, gallery, protocol="reid_raw")
    retrieval = retrieval_attack(windows, attacker, anonymizer, config.train_config())
    reports.update(retrieval.reports)

    report = Report(config.command, _values(reports))
    report.tables["cmc"] = _cmc_table({k: v for k, v in reports.items() if v.curve})
    report.tables["retrieval_losses"] = _loss_table(retrieval.log)
    return _finish(config, report)


@register_command(
    name=CMD_INVERT_ATTACK,
    description="Train an inversion adversary against the anonymizer and rerun retrieval",
    needs_corpus=True,
    needs_checkpoints=(ATTACKER_CHECKPOINT, ANONYMIZER_CHECKPOINT),
)
@handle_errors
def handle_invert_attack(config: RunConfig) -> Dict[str, Any]:
    _, windows = _load_windows(config)
    attacker = _load(config, ATTACKER_CHECKPOINT, AttackerNet)
    anonymizer = _load(config, ANONYMIZER_CHECKPOINT, AnonymizerNet)
    result = inversion_attack(anonymizer, attacker, windows, config.train_config(), config.ssim_config())
    save_model(result.inverter, config.checkpoint_path / INVERTER_CHECKPOINT)
    report = Report(config.command, _values(result.reports))
    report.values["inverter.first_loss"] = result.log.first["loss"]
    report.values["inverter.final_loss"] = result.log.final["loss"]
    report.tables["losses"] = _loss_table(result.log)
    report.tables["cmc"] = _cmc_table({k: v for k, v in result.reports.items() if v.curve})
    return _finish(config, report)


@register_command(
    name=CMD_ABLATE,
    description="Loss-weight ablation over (alpha, beta, gamma)",
    needs_corpus=True,
    needs_checkpoints=(ATTACKER_CHECKPOINT,),
)
@handle_errors
def handle_ablate(config: RunConfig) -> Dict[str, Any]:
    _, windows = _load_windows(config)
    attacker = _load(config, ATTACKER_CHECKPOINT, AttackerNet)
    rows = run_loss_ablation(windows, attacker, config.train_config(), ssim_config=config.ssim_config())
    values: Dict[str, Any] = {}
    for row in rows:
        tag = f"ablation.a{row.alpha:g}_b{row.beta:g}_g{row.gamma:g}"
        values[f"{tag}.rank1"] = row.rank1
        values[f"{tag}.map"] = row.mean_ap
        values[f"{tag}.ssim"] = row.ssim
        values[f"{tag}.psnr"] = row.psnr
    report = Report(config.command, values)
    report.tables["ablation"] = Table(ABLATION_HEADER, [row.as_row() for row in rows])
    return _finish(config, report)


@register_command(name=CMD_GRADCHECK, description="Finite-difference audit of every network and loss")
@handle_errors
def handle_gradcheck(config: RunConfig) -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    rows: List[List[Any]] = []
    worst = 0.0
    failed: List[str] = []
    for offset in range(config.gradcheck_seeds):
        seed = config.seed + offset
        for case in gradcheck_suite(seed=seed, bins=config.bins, max_entries=config.gradcheck_entries):
            worst = max(worst, case.report.worst)
            rows.append(
                [seed, case.name, case.report.worst, case.tolerance, case.report.entries_checked, case.report.entries_skipped]
            )
            key = f"gradcheck.{case.name}"
            values[f"{key}.max_rel_error"] = max(values.get(f"{key}.max_rel_error", 0.0), case.report.worst)
            values[f"{key}.tolerance"] = case.tolerance
            if not case.passed:
                failed.append(f"{case.name}@{seed}")
    values["gradcheck.max_rel_error"] = worst
    values["gradcheck.passed"] = not failed
    report = Report(config.command, values)
    report.tables["cases"] = Table(["seed", "case", "max_rel_error", "tolerance", "checked", "skipped"], rows)
    result = _finish(config, report)
    if failed:
        raise NumericalError(f"gradient check failed for {', '.join(failed)} (worst {worst:.3e})")
    return result
