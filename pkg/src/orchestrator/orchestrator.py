"""
Pipeline orchestrator: one handler per CLI subcommand.

Each handler performs exactly one stage, reads its inputs from the output
directory written by earlier stages and writes its own outputs there.
"""

import csv
import logging
import time
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import numpy as np

from attack.individual import train_individual
from attack.perturbation import UniversalPerturbation
from attack.universal import select_victims, train_universal
from audio.corpus import MANIFEST_NAME, CorpusManifest, synth_corpus
from audio.wav_io import Waveform, write_float_wav
from config.run_config import RunConfig
from evaluation.benchmark import timing_benchmark
from evaluation.report import AttackReport, Condition, render_sweep_table, write_reports_csv
from evaluation.suites import run_gradient_suite, run_property_suite
from evaluation.sweep import channels_for, evaluate_perturbations, sweep_epsilons
from orchestrator.response_builder import response_builder
from room.rir_set import INDEX_NAME, RirSet, sample_rir_set
from utils.errors import ConfigError, DataError, NumericError
from utils.retry import retry_with_backoff, reraise_transient
from utils.validators import require_dir, require_file, stage_dir
from xvector.checkpoint import load_checkpoint, save_checkpoint
from xvector.model import SpeakerModel
from xvector.trainer import accuracy_on, train

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.ckpt"
CHANNEL_CONDITIONS: Dict[str, Condition] = {"none": "no-RIR", "train-rir": "train-RIR", "test-rir": "test-RIR"}
# Perturbation subdirectory per attack.rir_mode
PERTURBATION_SETS = {"none": "digital", "set": "rir"}


def perturbation_stem(directory: Path, target: int) -> Path:
    return directory / f"target_{target:02d}"


@retry_with_backoff
def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text + "\n", encoding="utf-8")
    except OSError as e:
        reraise_transient(e)


class Orchestrator:
    """Runs pipeline stages against a run config and an output directory."""

    def __init__(self):
        self.handlers: Dict[str, Callable[[RunConfig, Path, Dict[str, Any]], Dict[str, Any]]] = {
            "synth-corpus": self._handle_synth_corpus,
            "train-model": self._handle_train_model,
            "gen-rirs": self._handle_gen_rirs,
            "attack-universal": self._handle_attack_universal,
            "attack-individual": self._handle_attack_individual,
            "evaluate": self._handle_evaluate,
            "bench": self._handle_bench,
        }

    def run(
        self,
        command: str,
        config: RunConfig,
        out_dir: Optional[str | Path] = None,
        options: Optional[Dict[str, Any]] = None,
    ) -> Dict[str, Any]:
        """
        Run one stage.

        Args:
            command: Subcommand name
            config: Validated run config
            out_dir: Output root; defaults to config.paths.out_dir
            options: Stage options from the command line (channel, suite)

        Returns:
            Stage result with metadata

        Raises:
            SpeakerUapError: any stage failure, carrying its exit code
        """
        if command not in self.handlers:
            raise ConfigError(f"unknown subcommand {command!r}")
        out = Path(out_dir) if out_dir is not None else Path(config.paths.out_dir)
        start_time = time.time()
        logger.info("=" * 70)
        logger.info(f"STAGE {command.upper()} -> {out}")
        logger.info("=" * 70)
        result = self.handlers[command](config, out, options or {})
        return response_builder.add_metadata(result, time.time() - start_time, {"out_dir": str(out)})

    # Artifact loading

    def _load_corpus(self, out: Path) -> CorpusManifest:
        return CorpusManifest.load(require_file(out / "corpus" / MANIFEST_NAME, "corpus manifest"))

    def _load_model(self, config: RunConfig, out: Path) -> SpeakerModel:
        model = load_checkpoint(require_file(out / "model" / CHECKPOINT_NAME, "model checkpoint"))
        if model.mfcc_config != config.mfcc:
            logger.warning("Checkpoint front-end settings differ from [mfcc]; using the checkpoint's")
        return model

    def _load_rirs(self, out: Path) -> RirSet:
        require_file(out / "rirs" / INDEX_NAME, "RIR set index")
        return RirSet.load(out / "rirs")

    def _load_perturbations(self, directory: Path, targets: list[int]) -> list[UniversalPerturbation]:
        return [
            UniversalPerturbation.load(require_file(perturbation_stem(directory, t).with_suffix(".json"), "perturbation"))
            for t in targets
        ]

    # Stage handlers

    def _handle_synth_corpus(self, config: RunConfig, out: Path, options: Dict[str, Any]) -> Dict[str, Any]:
        manifest = synth_corpus(config.corpus, stage_dir(out, "corpus"))
        return response_builder.build_stage_response(
            "synth-corpus",
            f"{manifest.n_speakers} speakers, {len(manifest.split('train'))} train / "
            f"{len(manifest.split('test'))} test utterances",
            outputs={"manifest": str(manifest.root / MANIFEST_NAME)},
        )

    def _handle_train_model(self, config: RunConfig, out: Path, options: Dict[str, Any]) -> Dict[str, Any]:
        corpus = self._load_corpus(out)
        model = SpeakerModel.initialize(config.mfcc, config.model, corpus.label_names)
        log = train(model, corpus, config.train)
        test_accuracy = log.records[-1].accuracy if log.records else accuracy_on(model, corpus.load_split("test"))

        checkpoint = stage_dir(out, "model") / CHECKPOINT_NAME
        save_checkpoint(model, checkpoint)
        log_path = stage_dir(out, "reports") / "train_log.csv"
        log.to_csv(log_path)
        return response_builder.build_stage_response(
            "train-model",
            f"{len(log.records)} epochs, test accuracy {test_accuracy:.2%}",
            outputs={"checkpoint": str(checkpoint), "log": str(log_path)},
            data={"test_accuracy": test_accuracy},
        )

    def _handle_gen_rirs(self, config: RunConfig, out: Path, options: Dict[str, Any]) -> Dict[str, Any]:
        rirs = sample_rir_set(config.room, config.rirs)
        directory = stage_dir(out, "rirs")
        rirs.save(directory)
        return response_builder.build_stage_response(
            "gen-rirs",
            f"{len(rirs.train)} train / {len(rirs.test)} test RIRs",
            outputs={"rirs": str(directory)},
        )

    def _handle_attack_universal(self, config: RunConfig, out: Path, options: Dict[str, Any]) -> Dict[str, Any]:
        model = self._load_model(config, out)
        victims = self._load_corpus(out).load_split("train")
        rirs = self._load_rirs(out) if config.attack.rir_mode == "set" else None
        directory = stage_dir(out, "perturbations") / PERTURBATION_SETS[config.attack.rir_mode]
        directory.mkdir(exist_ok=True)
        reports = stage_dir(out, "reports")

        rates = {}
        for target in config.target_list:
            cfg = config.attack.model_copy(update={"target": target})
            perturbation, log = train_universal(model, victims, cfg, rirs)
            perturbation.save(perturbation_stem(directory, target))
            log.to_csv(reports / f"attack_log_{directory.name}_target_{target:02d}.csv")
            rates[target] = perturbation.metadata.train_success_rate
            logger.info(f"✓ Target {target}: train success {rates[target]:.2%} after {len(log.records)} epochs")

        mean_rate = float(np.mean(list(rates.values())))
        return response_builder.build_stage_response(
            "attack-universal",
            f"{len(rates)} perturbations ({directory.name}), mean train success {mean_rate:.2%}",
            outputs={"perturbations": str(directory)},
            data={"train_success": rates},
        )

    def _handle_attack_individual(self, config: RunConfig, out: Path, options: Dict[str, Any]) -> Dict[str, Any]:
        model = self._load_model(config, out)
        cfg = config.attack
        victims = select_victims(self._load_corpus(out).load_split("test"), cfg.target)[: config.bench.n_utterances]
        directory = stage_dir(out, "perturbations") / "individual"
        directory.mkdir(exist_ok=True)
        log_path = stage_dir(out, "reports") / f"individual_target_{cfg.target:02d}.csv"

        rows = []
        for utterance in victims:
            result = train_individual(model, utterance.waveform, cfg)
            write_float_wav(directory / f"{utterance.utterance_id}.wav", Waveform(result.delta, utterance.waveform.sample_rate))
            rows.append([utterance.utterance_id, int(result.success), result.iterations, f"{result.elapsed_s:.4f}"])
            logger.info(f"{utterance.utterance_id}: success={result.success} iterations={result.iterations}")
        try:
            with open(log_path, "w", newline="", encoding="utf-8") as handle:
                writer = csv.writer(handle)
                writer.writerow(["utterance_id", "success", "iterations", "elapsed_s"])
                writer.writerows(rows)
        except OSError as e:
            raise DataError(f"cannot write {log_path}: {e}") from e

        successes = sum(row[1] for row in rows)
        return response_builder.build_stage_response(
            "attack-individual",
            f"target {cfg.target}: {successes}/{len(rows)} utterances attacked successfully",
            outputs={"log": str(log_path), "deltas": str(directory)},
        )

    def _handle_evaluate(self, config: RunConfig, out: Path, options: Dict[str, Any]) -> Dict[str, Any]:
        suite = options.get("suite", "attack")
        if suite in ("properties", "gradients"):
            return self._run_suite(suite, out)

        channel = options.get("channel") or config.evaluate.channel
        condition = CHANNEL_CONDITIONS[channel]
        model = self._load_model(config, out)
        corpus = self._load_corpus(out)
        rirs = self._load_rirs(out) if condition != "no-RIR" or config.attack.rir_mode == "set" else None
        reports_dir = stage_dir(out, "reports")

        if suite == "sweep":
            reports = sweep_epsilons(
                model,
                corpus.load_split("train"),
                corpus.load_split("test"),
                config.attack,
                config.evaluate.epsilons,
                config.target_list,
                rirs,
                condition,
            )
            table = render_sweep_table(reports)
            write_reports_csv(reports, reports_dir / f"sweep_{channel}.csv")
            _write_text(reports_dir / f"sweep_{channel}.txt", table)
            logger.info(f"\n{table}")
            return response_builder.build_stage_response(
                "evaluate",
                f"sweep over {len(reports)} epsilons [{condition}], "
                f"avg success {', '.join(f'{r.avg_success:.2%}' for r in reports)}",
                outputs={"report": str(reports_dir / f"sweep_{channel}.csv")},
                data={
                    "epsilons": list(config.evaluate.epsilons),
                    "avg_success": [r.avg_success for r in reports],
                    "mean_noise_db": [r.mean_noise_db for r in reports],
                },
            )

        if suite != "attack":
            raise ConfigError(f"unknown evaluation suite {suite!r}")
        channels = channels_for(condition, rirs)
        test_utterances = corpus.load_split("test")
        perturbation_root = require_dir(out / "perturbations", "perturbations")
        results: Dict[str, AttackReport] = {}
        for name in PERTURBATION_SETS.values():
            directory = perturbation_root / name
            if not directory.is_dir():
                continue
            perturbations = self._load_perturbations(directory, config.target_list)
            report = evaluate_perturbations(model, perturbations, test_utterances, channels, condition)
            report.to_csv(reports_dir / f"attack_{name}_{channel}.csv")
            _write_text(reports_dir / f"attack_{name}_{channel}.txt", report.render_text(model.labels))
            logger.info(f"\n{report.render_text(model.labels)}")
            results[name] = report
        if not results:
            raise DataError(f"no perturbations found under {perturbation_root} (run attack-universal first)")

        summary = ", ".join(
            f"{name}: avg {r.avg_success:.2%} (min {r.min_success:.2%}, max {r.max_success:.2%})"
            for name, r in results.items()
        )
        return response_builder.build_stage_response(
            "evaluate",
            f"[{condition}] {summary}",
            outputs={name: str(reports_dir / f"attack_{name}_{channel}.csv") for name in results},
            data={name: r.avg_success for name, r in results.items()},
        )

    def _run_suite(self, suite: str, out: Path) -> Dict[str, Any]:
        checks = run_property_suite() if suite == "properties" else run_gradient_suite()
        lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}" for c in checks]
        report_path = stage_dir(out, "reports") / f"{suite}.txt"
        _write_text(report_path, "\n".join(lines))
        failed = [c.name for c in checks if not c.passed]
        if failed:
            raise NumericError(f"{len(failed)} of {len(checks)} {suite} checks failed: {', '.join(failed)}")
        return response_builder.build_stage_response(
            "evaluate",
            f"all {len(checks)} {suite} checks passed",
            outputs={"report": str(report_path)},
        )

    def _handle_bench(self, config: RunConfig, out: Path, options: Dict[str, Any]) -> Dict[str, Any]:
        model = self._load_model(config, out)
        directory = out / "perturbations" / PERTURBATION_SETS[config.attack.rir_mode]
        (perturbation,) = self._load_perturbations(directory, [config.attack.target])
        summary = timing_benchmark(
            model, perturbation, self._load_corpus(out).load_split("test"), config.attack, config.bench
        )
        report_path = stage_dir(out, "reports") / "timing.txt"
        _write_text(report_path, summary.render_text())
        return response_builder.build_stage_response(
            "bench",
            f"apply {summary.apply_median_s * 1e3:.3f} ms vs individual {summary.individual_median_s:.2f} s "
            f"per utterance ({summary.speedup:.0f}x)",
            outputs={"report": str(report_path)},
            data={
                "speedup": summary.speedup,
                "apply_median_s": summary.apply_median_s,
                "apply_by_length": [[n, t] for n, t in summary.apply_by_length],
            },
        )


# Global orchestrator instance
orchestrator = Orchestrator()
