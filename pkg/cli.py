"""
Command-line entry point: train, reduce, rank, benchmark, all and demo.

Exit codes: 0 success, 1 internal error, 2 config/input error, 3 unknown keyword,
4 missing stage artifact.
"""
import argparse
import dataclasses
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from artifacts import ArtifactManager
from benchmark import (TECHNIQUE_LABELS, baseline_frame, format_summary_table, geojson_text, report_frame,
                       run_benchmark, summary_frame)
from config import config_to_ini, derive_seed, resolve_config, with_stage_seeds
from corpus_pipeline import load_corpus, load_stop_words, process_corpus
from errors import ConfigError, PipelineError
from fixtures import planted_resource_world, write_world
from gazetteer import filter_vocabulary, load_cities, load_english_words, load_mines
from glove import accumulate_cooc, build_vocabulary, load_embeddings, save_embeddings, save_loss_trace, train_glove
from models import REDUCER_KINDS, BenchmarkReport, EmbeddingTable, FilteredVocabulary, PipelineConfig, ReducerModel
from ranking import format_ranking_table, ranking_frame, score_all, top_k_cities, top_k_words
from reducers import export_latent, fit_identity, fit_reducer, load_model, save_model, trace_frame

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

EMBEDDINGS = "embeddings.txt"
GLOVE_LOSS = "glove_loss.csv"
REDUCERS_SUMMARY = "reducers_summary.csv"
SUMMARY = "summary.csv"
BASELINE = "baseline.csv"
CONFIG_COPY = "pipeline.ini"


def model_name(kind: str) -> str:
    return f"model_{kind}.txt"


def _require_path(value: Optional[str], key: str, flag: str) -> str:
    if not value:
        raise ConfigError(f"{key} is not set (pass {flag} or set [paths] {key})")
    return value


class PipelineRunner:
    """Runs pipeline stages against one output directory, caching shared inputs."""

    def __init__(self, config: PipelineConfig, force: bool = False):
        self.config = config
        self.force = force
        self.artifacts = ArtifactManager(config.output_dir)
        self._table: Optional[EmbeddingTable] = None
        self._fvocab: Optional[FilteredVocabulary] = None
        self._cities = None
        self._mines = None
        self._write_config_copy()

    def _write_config_copy(self) -> None:
        # rewritten only on change; its mtime marks every stage stale
        text = config_to_ini(self.config)
        path = self.artifacts.path(CONFIG_COPY)
        if not path.exists() or path.read_text(encoding="utf-8") != text:
            self.artifacts.write_text(CONFIG_COPY, text)

    @property
    def kinds(self) -> List[str]:
        return [spec.kind for spec in self.config.reducers]

    # cached inputs

    def table(self) -> EmbeddingTable:
        if self._table is None:
            self._table = load_embeddings(self.artifacts.require(EMBEDDINGS))
        return self._table

    def cities(self):
        if self._cities is None:
            self._cities = load_cities(_require_path(self.config.cities_path, "cities_path", "--cities"))
        return self._cities

    def filtered_vocabulary(self) -> FilteredVocabulary:
        if self._fvocab is None:
            english = load_english_words(self.config.english_words_path)
            self._fvocab = filter_vocabulary(self.table(), english, self.cities())
        return self._fvocab

    def mines(self):
        if self._mines is None:
            self._mines = load_mines(_require_path(self.config.mines_path, "mines_path", "--mines"))
        return self._mines

    def model(self, kind: str) -> ReducerModel:
        if kind == "none":
            return fit_identity(self.table(), self.config.reducer(kind))
        return load_model(self.artifacts.require(model_name(kind)), expected_kind=kind)

    # staleness

    def stage_outputs(self, stage: str) -> List[str]:
        if stage == "train":
            return [EMBEDDINGS, GLOVE_LOSS]
        if stage == "reduce":
            fitted = [k for k in self.kinds if k != "none"]
            return [model_name(k) for k in fitted] + [f"trace_{k}.csv" for k in fitted] + [REDUCERS_SUMMARY]
        if stage.startswith("rank:"):
            return [f"ranking_{stage[5:]}.csv"]
        if stage == "benchmark":
            outputs = [f"report_{k}.csv" for k in self.kinds] + [f"map_{k}.geojson" for k in self.kinds] + [SUMMARY]
            return outputs + ([BASELINE] if self.config.baseline_trials else [])
        raise ValueError(f"unknown stage {stage}")

    def stage_inputs(self, stage: str) -> list:
        c = self.config
        inputs = [self.artifacts.path(CONFIG_COPY)]
        if stage == "train":
            return inputs + [c.corpus_path, c.stopwords_path]
        if stage == "reduce":
            return inputs + [self.artifacts.path(EMBEDDINGS)]
        if stage.startswith("rank:"):
            kind = stage[5:]
            inputs += [self.artifacts.path(EMBEDDINGS), c.cities_path, c.english_words_path]
            if kind != "none":
                inputs.append(self.artifacts.path(model_name(kind)))
            return inputs
        return inputs + [self.artifacts.path(f"ranking_{k}.csv") for k in self.kinds] + [c.mines_path]

    def is_fresh(self, stage: str) -> bool:
        return not self.force and self.artifacts.is_fresh(self.stage_outputs(stage), self.stage_inputs(stage))

    # stages

    def train(self) -> EmbeddingTable:
        config = self.config
        docs = load_corpus(_require_path(config.corpus_path, "corpus_path", "--corpus"))
        stops = load_stop_words(config.stopwords_path)
        streams = process_corpus(docs, stops, workers=config.workers)
        vocab = build_vocabulary(streams, config.glove.min_count)
        cooc = accumulate_cooc(streams, vocab, config.glove.window)
        logger.info("%d documents, %d words, %d co-occurrence entries", len(docs), len(vocab), len(cooc))

        table = train_glove(cooc, config.glove)
        save_embeddings(table, self.artifacts.path(EMBEDDINGS))
        save_loss_trace(table.loss_trace, self.artifacts.path(GLOVE_LOSS))
        self._table, self._fvocab = table, None
        print(f"vocabulary size: {len(vocab)}")
        return table

    def _fit_one(self, kind: str) -> Tuple[str, Optional[ReducerModel], Optional[PipelineError]]:
        try:
            model = fit_reducer(self.table(), self.config.reducer(kind))
        except PipelineError as e:
            logger.error("%s reducer failed: %s", kind, e)
            return kind, None, e
        save_model(model, self.artifacts.path(model_name(kind)))
        self.artifacts.write_frame(f"trace_{kind}.csv", trace_frame(model))
        return kind, model, None

    def reduce(self) -> Dict[str, ReducerModel]:
        """Fit every configured reducer; one kind failing does not stop the others."""
        table = self.table()
        fitted = [k for k in self.kinds if k != "none"]
        if "none" in self.kinds:
            logger.info("none reducer needs no model file; skipped")

        if self.config.workers > 1 and len(fitted) > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                results = list(pool.map(self._fit_one, fitted))
        else:
            results = [self._fit_one(kind) for kind in fitted]

        models = {kind: model for kind, model, _ in results if model is not None}
        failures = [(kind, error) for kind, _, error in results if error is not None]

        rows = []
        for kind in self.kinds:
            if kind == "none":
                rows.append({"technique": TECHNIQUE_LABELS[kind], "recon_mse": f"{0.0:.6f}"})
            elif kind in models:
                rows.append({"technique": TECHNIQUE_LABELS[kind], "recon_mse": f"{models[kind].recon_mse:.6f}"})
        self.artifacts.write_frame(REDUCERS_SUMMARY, pd.DataFrame(rows, columns=["technique", "recon_mse"]))
        print(f"fitted {len(models)} reducer(s) on {len(table)} vectors of dim {table.dim}")

        if failures:
            raise failures[0][1]
        return models

    def rank(self, kind: str):
        model = self.model(kind)
        fvocab = self.filtered_vocabulary()
        scores = score_all(self.config.keyword, self.table(), model, fvocab)
        ranking = top_k_cities(scores, fvocab, self.config.k)
        self.artifacts.write_frame(f"ranking_{kind}.csv", ranking_frame(ranking))
        if kind != "none":
            export_latent(model, self.table(), fvocab, self.artifacts.path(f"latent_{kind}.csv"))

        print(f"\n{TECHNIQUE_LABELS[kind]}: '{self.config.keyword}'")
        print(format_ranking_table(ranking))
        related = top_k_words(scores, fvocab, 5)
        if related:
            print("related words: " + ", ".join(f"{s.word} ({s.score:.4f})" for s in related))
        return ranking

    def benchmark(self) -> List[BenchmarkReport]:
        for kind in self.kinds:
            self.artifacts.require(f"ranking_{kind}.csv")
        mines = self.mines()
        reports = []
        for kind in self.kinds:
            report = run_benchmark(self.config.keyword, self.table(), self.model(kind),
                                   self.filtered_vocabulary(), mines, self.config.k)
            self.artifacts.write_frame(f"report_{kind}.csv", report_frame(report))
            self.artifacts.write_text(f"map_{kind}.geojson", geojson_text(report, mines))
            reports.append(report)
        self.artifacts.write_frame(SUMMARY, summary_frame(reports))
        print()
        print(format_summary_table(reports))

        trials = self.config.baseline_trials
        if trials:
            seeds = [derive_seed(self.config.seed, f"baseline:{i}") for i in range(trials)]
            frame = baseline_frame(self.cities(), mines, self.config.k, seeds)
            self.artifacts.write_frame(BASELINE, frame)
            print(f"random cities: mean RMSE {frame['rmse_km'].astype(float).mean():.4f} km over {trials} draw(s)")
        return reports

    def run_all(self) -> List[str]:
        """Run every stale stage in order; returns the names of stages that ran."""
        stages = ["train", "reduce"] + [f"rank:{k}" for k in self.kinds] + ["benchmark"]
        ran = []
        for stage in stages:
            if self.is_fresh(stage):
                print(f"{stage}: skipped (up to date)")
                continue
            logger.info("running stage %s", stage)
            if stage == "train":
                self.train()
            elif stage == "reduce":
                self.reduce()
            elif stage == "benchmark":
                self.benchmark()
            else:
                self.rank(stage[5:])
            ran.append(stage)
        return ran


def cmd_train(config: PipelineConfig, force: bool = False) -> EmbeddingTable:
    return PipelineRunner(config, force).train()


def cmd_reduce(config: PipelineConfig, force: bool = False) -> Dict[str, ReducerModel]:
    return PipelineRunner(config, force).reduce()


def cmd_rank(config: PipelineConfig, kind: Optional[str] = None, force: bool = False):
    runner = PipelineRunner(config, force)
    return [runner.rank(k) for k in ([kind] if kind else runner.kinds)]


def cmd_benchmark(config: PipelineConfig, force: bool = False) -> List[BenchmarkReport]:
    return PipelineRunner(config, force).benchmark()


def cmd_all(config: PipelineConfig, force: bool = False) -> List[str]:
    return PipelineRunner(config, force).run_all()


def cmd_demo(out_dir: str, seed: int = 0) -> Path:
    world = planted_resource_world(seed)
    config_path = write_world(world, out_dir, seed=seed)
    print(f"wrote demo data to {out_dir}")
    print(f"run: python cli.py all --config {config_path}")
    return config_path


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline INI file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="global seed every stage seed derives from")
    common.add_argument("--force", action="store_true", help="re-run stages even when outputs are fresh")
    common.add_argument("--keyword", help="resource keyword (default lithium)")
    common.add_argument("--kind", choices=REDUCER_KINDS, help="restrict to one reducer")
    common.add_argument("--top-k", dest="k", type=int, help="cities to rank")
    common.add_argument("--workers", type=int, help="parallel jobs for tokenizing and reducer fits")
    common.add_argument("--baseline-trials", dest="baseline_trials", type=int,
                        help="also write baseline.csv with this many random-city draws")
    common.add_argument("--corpus", dest="corpus_path", help="directory of .txt files or id<TAB>text file")
    common.add_argument("--stopwords", dest="stopwords_path", help="stop-word list (default: shipped list)")
    common.add_argument("--english-words", dest="english_words_path", help="English word list (default: NLTK words)")
    common.add_argument("--cities", dest="cities_path", help="gazetteer CSV")
    common.add_argument("--mines", dest="mines_path", help="mine sites CSV")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(description="Rank gazetteer cities by embedding similarity to a resource keyword")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("train", parents=[common], help="tokenize the corpus and train GloVe embeddings")
    commands.add_parser("reduce", parents=[common], help="fit the configured reducers")
    commands.add_parser("rank", parents=[common], help="rank cities for the keyword")
    commands.add_parser("benchmark", parents=[common], help="distance-to-mine RMSE per technique")
    commands.add_parser("all", parents=[common], help="run every stale stage in order")
    commands.add_parser("demo", parents=[common], help="write a synthetic planted-resource dataset")
    return parser


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    config = resolve_config(
        args.config,
        corpus_path=args.corpus_path,
        stopwords_path=args.stopwords_path,
        english_words_path=args.english_words_path,
        cities_path=args.cities_path,
        mines_path=args.mines_path,
        keyword=args.keyword,
        k=args.k,
        output_dir=args.out,
        seed=args.seed,
        workers=args.workers,
        baseline_trials=args.baseline_trials,
    )
    if args.kind:
        configured = [spec for spec in config.reducers if spec.kind == args.kind]
        template = configured[0] if configured else dataclasses.replace(config.reducers[0], kind=args.kind)
        config = with_stage_seeds(dataclasses.replace(config, reducers=[template])).validate()
    return config


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)

    try:
        if args.command == "demo":
            cmd_demo(args.out or "demo", seed=args.seed or 0)
            return 0
        config = config_from_args(args)
        if args.command == "train":
            cmd_train(config, args.force)
        elif args.command == "reduce":
            cmd_reduce(config, args.force)
        elif args.command == "rank":
            cmd_rank(config, args.kind, args.force)
        elif args.command == "benchmark":
            cmd_benchmark(config, args.force)
        elif args.command == "all":
            cmd_all(config, args.force)
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception:
        logger.exception("internal error")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
