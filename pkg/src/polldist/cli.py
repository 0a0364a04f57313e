"""Operator entry point: reproducible pipelines over a survey dataset.

Config precedence is flags > TOML config file > defaults. Every command
writes its artifacts under the output directory together with a run
manifest (config hash, timestamp, cache statistics).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import click

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import bounds as bounds_mod
from . import dataset_ops, evaluation, metrics, prompting, survey
from .errors import ConfigError, EvaluationError, NoDataError, PolldistError
from .model_client import ModelClient, extract_distribution


@dataclass
class RunConfig:
    dataset: str = ""
    out: str = "out"
    endpoint: str = ""
    model: str = "mock"
    embed_model: str = ""
    cache_dir: str = ""
    normalize_wd: bool = True
    kl_epsilon: float = 1e-10
    style: str = "QA"
    R: int = 1000
    seed: int = 0
    workers: int = 1
    top_logprobs: int = 20

    def metric_config(self) -> metrics.MetricConfig:
        return metrics.MetricConfig(normalize_wd=self.normalize_wd, kl_epsilon=self.kl_epsilon)

    def prompt_style(self) -> prompting.PromptStyle:
        try:
            return prompting.PromptStyle(self.style)
        except ValueError:
            raise ConfigError(f"style must be one of QA, BIO, PORTRAY, got {self.style!r}",
                              field="style") from None

    def client(self) -> ModelClient:
        if not self.endpoint:
            raise ConfigError("endpoint URL required for this command", field="endpoint")
        cache = self.cache_dir or str(Path(self.out) / "cache")
        return ModelClient(self.endpoint, self.model, cache_dir=cache,
                           embed_model=self.embed_model, top_logprobs=self.top_logprobs,
                           max_concurrency=self.workers)


def load_config(config_path: str | None, overrides: dict) -> RunConfig:
    values: dict = {}
    if config_path:
        try:
            with open(config_path, "rb") as fh:
                data = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}")
        known = {f.name for f in dataclasses.fields(RunConfig)}
        for key, value in data.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}", field=key)
            values[key] = value
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc))
    for fdef in dataclasses.fields(RunConfig):
        got = getattr(cfg, fdef.name)
        if not isinstance(got, fdef.type if isinstance(fdef.type, type) else type(fdef.default)):
            if not (isinstance(got, int) and type(fdef.default) is float):
                raise ConfigError(
                    f"config field {fdef.name!r}: expected {type(fdef.default).__name__}, "
                    f"got {type(got).__name__}", field=fdef.name)
    return cfg


def write_manifest(cfg: RunConfig, command: str, extra: dict | None = None,
                   client: ModelClient | None = None) -> None:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    config_dict = dataclasses.asdict(cfg)
    manifest = {
        "command": command,
        "config": config_dict,
        "config_hash": hashlib.sha256(
            json.dumps(config_dict, sort_keys=True).encode()).hexdigest(),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "cache": client.stats.as_dict() if client else None,
    }
    if extra:
        manifest.update(extra)
    (out / f"{command}_manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _load(cfg: RunConfig) -> survey.SurveyDataset:
    if not cfg.dataset:
        raise ConfigError("dataset path required", field="dataset")
    return survey.load_dataset(cfg.dataset)


def _select_groups(dataset: survey.SurveyDataset, group_labels) -> list[survey.Subpopulation]:
    if not group_labels:
        return list(dataset.subpopulations)
    selected = []
    for label in group_labels:
        trait, _, group = label.partition(":")
        selected.append(dataset.subpopulation(trait, group))
    return selected


def _fmt(x: float) -> str:
    return f"{x:.12g}"


_config_option = click.option("--config", "config_path", type=click.Path(exists=True),
                              default=None, help="TOML config file.")
_dataset_option = click.option("--dataset", default=None, help="Dataset directory.")
_out_option = click.option("--out", default=None, help="Output directory.")


@click.group()
def main():
    """Survey opinion-distribution toolkit."""


def _run(func):
    """Map package errors to the documented exit codes."""
    try:
        func()
    except ConfigError as exc:
        field = f" (field: {exc.field})" if exc.field else ""
        click.echo(f"config error: {exc}{field}", err=True)
        sys.exit(2)
    except PolldistError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


@main.command()
@_config_option
@_dataset_option
@_out_option
def ingest(config_path, dataset, out):
    """Load and validate a dataset, writing a summary."""
    def body():
        cfg = load_config(config_path, {"dataset": dataset, "out": out})
        ds = _load(cfg)
        summary = {
            "n_questions": len(ds.questions),
            "n_respondents": len(ds.respondents),
            "n_responses": len(ds.responses),
            "n_subpopulations": len(ds.subpopulations),
            "waves": sorted({q.wave for q in ds.questions.values()}),
            "source_family": ds.source_family,
        }
        outdir = Path(cfg.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        write_manifest(cfg, "ingest", {"summary": summary})
        click.echo(json.dumps(summary))
    _run(body)


@main.command()
@_config_option
@_dataset_option
@_out_option
@click.option("--group", "group_labels", multiple=True, help="trait:group (repeatable).")
def dists(config_path, dataset, out, group_labels):
    """Write weighted human answer distributions per (group, question)."""
    def body():
        cfg = load_config(config_path, {"dataset": dataset, "out": out})
        ds = _load(cfg)
        groups = _select_groups(ds, group_labels)
        result: dict[str, dict[str, list[float]]] = {}
        for g in groups:
            per_q = {}
            for q in sorted(ds.questions.values(), key=lambda q: q.id):
                try:
                    per_q[q.id] = list(survey.weighted_distribution(ds, g, q).probs)
                except NoDataError:
                    continue
            result[g.label] = per_q
        outdir = Path(cfg.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "dists.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
        write_manifest(cfg, "dists")
        click.echo(f"wrote distributions for {len(result)} groups")
    _run(body)


@main.command(name="bounds")
@_config_option
@_dataset_option
@_out_option
@click.option("--group", "group_labels", multiple=True)
@click.option("--R", "replicates", type=int, default=None)
@click.option("--seed", type=int, default=None)
def bounds_cmd(config_path, dataset, out, group_labels, replicates, seed):
    """Uniform upper bound and bootstrap lower bound per group."""
    def body():
        cfg = load_config(config_path, {"dataset": dataset, "out": out,
                                        "R": replicates, "seed": seed})
        ds = _load(cfg)
        mcfg = cfg.metric_config()
        questions = sorted(ds.questions.values(), key=lambda q: q.id)
        results = []
        for g in _select_groups(ds, group_labels):
            report = bounds_mod.bootstrap_lower_bound(ds, g, questions, cfg.R, cfg.seed, mcfg)
            results.append({
                "group": g.label,
                "upper_bound": bounds_mod.upper_bound(ds, g, questions, mcfg),
                "lower_bound": dataclasses.asdict(report),
            })
        outdir = Path(cfg.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "bounds.json").write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
        write_manifest(cfg, "bounds")
        click.echo(f"wrote bounds for {len(results)} groups")
    _run(body)


def _make_predictor(cfg: RunConfig, ds: survey.SurveyDataset, method: str):
    mcfg = cfg.metric_config()
    if method == "human":
        return lambda g, q: survey.weighted_distribution(ds, g, q), None
    if method == "uniform":
        return lambda g, q: metrics.uniform(q), None
    if method == "zero_shot":
        client = cfg.client()
        style = cfg.prompt_style()

        def predictor(g, q):
            prompt = prompting.build_prompt(g, q, style)
            result = client.fetch_option_logprobs(prompt, q.letters)
            return extract_distribution(result, q)

        return predictor, client
    raise ConfigError(f"unknown eval method {method!r}", field="method")


@main.command(name="eval")
@_config_option
@_dataset_option
@_out_option
@click.option("--method", default="zero_shot",
              type=click.Choice(["human", "uniform", "zero_shot"]))
@click.option("--endpoint", default=None)
@click.option("--model", default=None)
@click.option("--style", default=None)
@click.option("--workers", type=int, default=None)
@click.option("--group", "group_labels", multiple=True)
def eval_cmd(config_path, dataset, out, method, endpoint, model, style, workers, group_labels):
    """Score a predictor against human targets; emit records CSV and aggregates."""
    def body():
        cfg = load_config(config_path, {"dataset": dataset, "out": out, "endpoint": endpoint,
                                        "model": model, "style": style, "workers": workers})
        ds = _load(cfg)
        groups = _select_groups(ds, group_labels)
        questions = sorted(ds.questions.values(), key=lambda q: q.id)
        predictor, client = _make_predictor(cfg, ds, method)
        try:
            run = evaluation.evaluate(ds, groups, questions, predictor,
                                      method_tag=method, cfg=cfg.metric_config(),
                                      workers=cfg.workers)
        except EvaluationError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
        outdir = Path(cfg.out)
        outdir.mkdir(parents=True, exist_ok=True)
        with (outdir / "records.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["method", "group", "question_id", "wave", "wd", "kl"])
            for r in run.records:
                writer.writerow([r.method, r.group, r.question_id, r.wave,
                                 _fmt(r.wd), _fmt(r.kl)])
        aggregates = {
            "overall": evaluation.aggregate(run.records, "overall"),
            "group": evaluation.aggregate(run.records, "group"),
            "wave": evaluation.aggregate(run.records, "wave"),
        }
        (outdir / "aggregates.json").write_text(
            json.dumps(aggregates, indent=2, sort_keys=True) + "\n")
        write_manifest(cfg, "eval",
                       {"method": method, "n_records": len(run.records),
                        "skipped": run.skipped}, client=client)
        for skip in run.skipped:
            click.echo(f"warning: skipped ({skip['group']}, {skip['question_id']}): "
                       f"{skip['reason']}", err=True)
        click.echo(f"wrote {len(run.records)} records")
    _run(body)


@main.command()
@_config_option
@_dataset_option
@_out_option
@click.option("--trait", required=True)
@click.option("--source", default="human", type=click.Choice(["human", "model"]))
@click.option("--endpoint", default=None)
@click.option("--model", default=None)
@click.option("--style", default=None)
@click.option("--plot", is_flag=True, default=False, help="Also emit an SVG heatmap.")
def disagree(config_path, dataset, out, trait, source, endpoint, model, style, plot):
    """Intergroup disagreement matrix for one trait."""
    def body():
        cfg = load_config(config_path, {"dataset": dataset, "out": out,
                                        "endpoint": endpoint, "model": model, "style": style})
        ds = _load(cfg)
        groups = [g for g in ds.subpopulations if g.trait == trait]
        if not groups:
            raise ConfigError(f"no groups with trait {trait!r}", field="trait")
        questions = sorted(ds.questions.values(), key=lambda q: q.id)
        targets = evaluation.human_distribution_map(ds, groups, questions)
        client = None
        if source == "human":
            sources = targets
        else:
            predictor, client = _make_predictor(cfg, ds, "zero_shot")
            sources = {}
            for g in groups:
                sources[g.label] = {q.id: predictor(g, q) for q in questions}
        matrix = evaluation.intergroup_matrix(targets, sources, questions,
                                              cfg.metric_config(), source_kind=source)
        outdir = Path(cfg.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "disagreement.json").write_text(
            json.dumps(matrix.to_dict(), indent=2) + "\n")
        if plot:
            _plot_heatmap(matrix, outdir / "disagreement.svg")
        write_manifest(cfg, "disagree", {"trait": trait, "source": source}, client=client)
        click.echo(f"wrote {len(matrix.axis)}x{len(matrix.axis)} matrix")
    _run(body)


@main.command()
@_config_option
@_dataset_option
@_out_option
@click.option("--mode", default="explicit",
              type=click.Choice(["explicit", "one_hot", "augment"]))
@click.option("--N", "n_augment", type=int, default=50)
@click.option("--style", default=None)
@click.option("--group", "group_labels", multiple=True)
def export(config_path, dataset, out, mode, n_augment, style, group_labels):
    """Export fine-tuning data in one of the three response-modeling modes."""
    def body():
        cfg = load_config(config_path, {"dataset": dataset, "out": out, "style": style})
        ds = _load(cfg)
        groups = _select_groups(ds, group_labels)
        export_mode = (dataset_ops.ExportMode.augment(n_augment) if mode == "augment"
                       else dataset_ops.ExportMode(mode))
        outdir = Path(cfg.out)
        manifest = dataset_ops.export_training(
            ds, groups, cfg.prompt_style(), export_mode, outdir / "train.jsonl")
        write_manifest(cfg, "export", {"export": manifest})
        click.echo(f"wrote {manifest['n_examples']} examples")
    _run(body)


@main.command()
@_config_option
@_dataset_option
@_out_option
@click.option("--dataset-b", required=True, type=click.Path(exists=True))
@click.option("--threshold", type=float, default=0.87)
@click.option("--endpoint", default=None)
@click.option("--model", default=None)
def overlap(config_path, dataset, out, dataset_b, threshold, endpoint, model):
    """Detect near-duplicate questions across two datasets via embeddings."""
    def body():
        cfg = load_config(config_path, {"dataset": dataset, "out": out,
                                        "endpoint": endpoint, "model": model})
        ds_a = _load(cfg)
        ds_b = survey.load_dataset(dataset_b)
        client = cfg.client()
        embeddings = {}
        for q in list(ds_a.questions.values()) + list(ds_b.questions.values()):
            embeddings[q.id] = client.fetch_embedding(q.text).values
        pairs = dataset_ops.detect_overlap(
            list(ds_a.questions.values()), list(ds_b.questions.values()),
            embeddings, threshold)
        outdir = Path(cfg.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "overlap.json").write_text(json.dumps(
            [{"id_a": a, "id_b": b, "similarity": s} for a, b, s in pairs],
            indent=2) + "\n")
        write_manifest(cfg, "overlap", {"threshold": threshold, "n_pairs": len(pairs)},
                       client=client)
        click.echo(f"found {len(pairs)} overlapping pairs")
    _run(body)


@main.command()
@_config_option
@_out_option
@click.option("--points-file", required=True, type=click.Path(exists=True),
              help="JSON list of [fraction, wd] pairs.")
@click.option("--predict-at", "predict_fracs", type=float, multiple=True)
@click.option("--plot", is_flag=True, default=False)
def scaling(config_path, out, points_file, predict_fracs, plot):
    """Fit a log-log trend line to (dataset fraction, WD) points."""
    def body():
        cfg = load_config(config_path, {"out": out})
        points = json.loads(Path(points_file).read_text(encoding="utf-8"))
        fit = evaluation.fit_scaling(points)
        result = {
            "slope": fit.slope,
            "intercept": fit.intercept,
            "points": [list(p) for p in fit.points],
            "predictions": {str(f): evaluation.predict(fit, f) for f in predict_fracs},
        }
        outdir = Path(cfg.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "scaling.json").write_text(json.dumps(result, indent=2) + "\n")
        if plot:
            _plot_scaling(fit, outdir / "scaling.svg")
        write_manifest(cfg, "scaling")
        click.echo(json.dumps({"slope": fit.slope, "intercept": fit.intercept}))
    _run(body)


def _plot_heatmap(matrix, path):
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(matrix.as_array(), cmap="viridis")
    ax.set_xticks(range(len(matrix.axis)), matrix.axis, rotation=45, ha="right")
    ax.set_yticks(range(len(matrix.axis)), matrix.axis)
    ax.set_xlabel("source group")
    ax.set_ylabel("target group")
    fig.colorbar(im, ax=ax, label="mean WD")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _plot_scaling(fit, path):
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt
    import numpy as np

    from . import evaluation as ev

    fig, ax = plt.subplots(figsize=(5, 4))
    fractions = [f for f, _ in fit.points]
    ax.scatter(fractions, [w for _, w in fit.points])
    xs = np.logspace(np.log10(min(fractions)), np.log10(max(fractions)), 50)
    ax.plot(xs, [ev.predict(fit, x) for x in xs], linestyle="--")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("training fraction")
    ax.set_ylabel("mean WD")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


if __name__ == "__main__":
    main()
