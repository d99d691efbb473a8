"""materia command-line interface: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage/validation error, 2 runtime failure.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from . import corpus as corpus_mod
from . import dataset as dataset_mod
from . import evaluate as eval_mod
from . import extraction as extraction_mod
from . import figures as figures_mod
from . import prompts as prompts_mod
from .config import ProjectConfig, load_config
from .errors import MateriaError
from .gateway import Gateway, GatewayPolicy, MockChatProvider, build_chat_provider, load_providers
from .review import ReviewDecision, ReviewStore


class ValidationFailure(MateriaError):
    """Bad input the user can fix (missing file, unknown name): exit code 1."""


class StageError(Exception):
    def __init__(self, stage: str, original: Exception):
        super().__init__(str(original))
        self.stage = stage
        self.original = original


def stage_errors(name: str):
    """Tag runtime failures with the pipeline stage for structured error output."""

    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except ValidationFailure:
                raise
            except (MateriaError, OSError) as exc:
                raise StageError(name, exc) from exc

        return wrapper

    return decorate


def _require_file(path: Path | str, what: str) -> Path:
    resolved = Path(path)
    if not resolved.is_file():
        raise ValidationFailure(f"{what} not found: {resolved}")
    return resolved


def _require_dir(path: Path | str, what: str) -> Path:
    resolved = Path(path)
    if not resolved.is_dir():
        raise ValidationFailure(f"{what} not found: {resolved}")
    return resolved


def _load_project(config: str | None) -> ProjectConfig:
    if config is None:
        return ProjectConfig()
    return load_config(_require_file(config, "config file"))


def _resolve_template(name: str, templates_dir: Path | None) -> prompts_mod.PromptTemplate:
    candidate = Path(name)
    if candidate.is_file():
        return prompts_mod.load_template(candidate)
    if templates_dir is not None:
        in_dir = Path(templates_dir) / f"{name}.json"
        if in_dir.is_file():
            return prompts_mod.load_template(in_dir)
    try:
        return prompts_mod.builtin_template(name)
    except FileNotFoundError:
        raise ValidationFailure(
            f"template {name!r} is neither a file, a templates-dir entry, nor a built-in"
        ) from None


def _chat_gateway(
    provider_name: str,
    providers_file: Path | None,
    policy: GatewayPolicy,
) -> Gateway:
    if providers_file is not None and Path(providers_file).is_file():
        table = load_providers(providers_file)
        if provider_name in table:
            entry = table[provider_name]
            if entry["adapter"] not in ("openai-chat", "mock"):
                raise ValidationFailure(
                    f"provider {provider_name!r} is not a chat provider (adapter "
                    f"{entry['adapter']!r})"
                )
            return Gateway(build_chat_provider(entry), policy)
        if provider_name != "mock":
            raise ValidationFailure(
                f"provider {provider_name!r} not found in {providers_file}"
            )
    if provider_name == "mock":
        return Gateway(MockChatProvider(), policy)
    raise ValidationFailure(
        f"provider {provider_name!r} requires a providers file defining it"
    )


def _embedding_provider(provider_name: str, providers_file: Path | None):
    if providers_file is not None and Path(providers_file).is_file():
        table = load_providers(providers_file)
        if provider_name in table:
            entry = table[provider_name]
            if entry["adapter"] not in ("openai-embeddings", "mock-embeddings"):
                raise ValidationFailure(
                    f"provider {provider_name!r} is not an embedding provider (adapter "
                    f"{entry['adapter']!r})"
                )
            return eval_mod.build_embedding_provider(entry)
        if provider_name not in ("mock-embed",):
            raise ValidationFailure(
                f"provider {provider_name!r} not found in {providers_file}"
            )
    if provider_name == "mock-embed":
        return eval_mod.MockEmbeddingProvider()
    raise ValidationFailure(
        f"provider {provider_name!r} requires a providers file defining it"
    )


def _taxonomy(taxonomy_file: Path | None) -> dataset_mod.DomainTaxonomy:
    if taxonomy_file is None:
        return dataset_mod.builtin_taxonomy()
    return dataset_mod.load_taxonomy(_require_file(taxonomy_file, "taxonomy file"))


@click.group()
def cli():
    """Corpus -> segments -> QA extraction -> review -> dataset -> evaluation."""


# -- ingest ------------------------------------------------------------------


@cli.command()
@click.option("--corpus", "corpus_dir", type=click.Path(), help="Corpus root directory (.txt/.md files).")
@click.option("--out", "out_path", type=click.Path(), help="Segments JSONL output path.")
@click.option("--config", type=click.Path(), default=None, help="Project config file (flags override it).")
@click.option("--max-chars", type=int, default=None, help="Maximum segment length in characters.")
@click.option("--overlap", type=int, default=None, help="Overlap between consecutive segments.")
@click.option(
    "--boundary-rule",
    type=click.Choice(corpus_mod.BOUNDARY_RULES),
    default=None,
    help="Where cut points may move to.",
)
@stage_errors("ingest")
def ingest(corpus_dir, out_path, config, max_chars, overlap, boundary_rule):
    """Load the corpus and write overlapping text segments as JSONL."""
    project = _load_project(config)
    corpus_dir = _require_dir(corpus_dir or project.corpus_dir, "corpus directory")
    out_path = Path(out_path) if out_path else project.output_dir / "segments.jsonl"
    policy = corpus_mod.SegmentationPolicy(
        max_chars=max_chars if max_chars is not None else project.segmentation.max_chars,
        overlap_chars=overlap if overlap is not None else project.segmentation.overlap_chars,
        boundary_rule=boundary_rule or project.segmentation.boundary_rule,
    )
    segments: list[corpus_mod.TextSegment] = []
    documents = 0
    for document in corpus_mod.iter_corpus(corpus_dir):
        documents += 1
        segments.extend(corpus_mod.segment(document, policy))
    corpus_mod.write_segments_jsonl(segments, out_path)
    click.echo(f"ingested {documents} documents -> {len(segments)} segments ({out_path})")


# -- prompts -----------------------------------------------------------------


@cli.group()
def prompts():
    """Prompt template utilities."""


@prompts.command("validate")
@click.argument("templates_dir", type=click.Path())
@stage_errors("prompts validate")
def prompts_validate(templates_dir):
    """Validate every template/profile JSON file in a directory."""
    directory = _require_dir(templates_dir, "templates directory")
    results = prompts_mod.scan_template_dir(directory)
    if not results:
        raise ValidationFailure(f"no .json template files in {directory}")
    bad = 0
    for path, issues in results:
        if issues:
            bad += 1
            click.echo(f"{path}: INVALID")
            for issue in issues:
                click.echo(f"  [{issue.invariant}] {issue.location}: {issue.message}")
        else:
            click.echo(f"{path}: ok")
    if bad:
        raise ValidationFailure(f"{bad} invalid template file(s)")


# -- extract -----------------------------------------------------------------


@cli.command()
@click.option("--segments", "segments_path", type=click.Path(), required=True, help="Segments JSONL from ingest.")
@click.option("--template", default="extraction-default", show_default=True, help="Template id, file path, or templates-dir entry.")
@click.option("--provider", default="mock", show_default=True, help="Chat provider id from the providers file.")
@click.option("--providers", "providers_file", type=click.Path(), default=None, help="providers.json path.")
@click.option("--out", "out_path", type=click.Path(), required=True, help="Checkpoint/output triples JSONL (append-resumable).")
@click.option("--expected-count", type=int, default=None, help="Require exactly this many pairs per segment.")
@click.option("--config", type=click.Path(), default=None, help="Project config file (flags override it).")
@stage_errors("extract")
def extract(segments_path, template, provider, providers_file, out_path, expected_count, config):
    """Extract QA pairs for every segment, checkpointing each success immediately."""
    project = _load_project(config)
    segments = corpus_mod.read_segments_jsonl(_require_file(segments_path, "segments file"))
    template_obj = _resolve_template(template, project.templates_dir)
    issues = prompts_mod.validate_template(template_obj)
    if issues:
        raise ValidationFailure(f"template {template_obj.template_id!r} invalid: {issues[0].message}")
    gateway = _chat_gateway(provider, providers_file or project.providers_file, project.gateway)
    report = extraction_mod.run_extraction_job(
        segments, template_obj, gateway, out_path, expected_count=expected_count
    )
    click.echo(
        f"extracted {report.succeeded}/{report.requested} segments "
        f"({report.skipped_checkpointed} already checkpointed, {report.failed} failed, "
        f"{report.repaired} repaired) -> {report.checkpoint_path}"
    )
    click.echo(
        f"format compliance: {report.compliance.compliant}/{report.compliance.total_outputs}"
    )


# -- review ------------------------------------------------------------------


@cli.group()
def review():
    """Expert review service and exports."""


@review.command("serve")
@click.option("--store", "store_path", type=click.Path(), required=True, help="Review store file.")
@click.option("--host", default="127.0.0.1", show_default=True, help="Bind address.")
@click.option("--port", default=8014, show_default=True, type=int, help="Bind port.")
@click.option("--ui-dir", type=click.Path(), default=None, help="Static UI assets directory (defaults to ./ui/dist when present).")
@stage_errors("review serve")
def review_serve(store_path, host, port, ui_dir):
    """Run the review/blind-session HTTP API (plus the UI when assets exist)."""
    import uvicorn

    from .server import create_app

    store = ReviewStore(store_path)
    if ui_dir is None and Path("ui/dist").is_dir():
        ui_dir = "ui/dist"
    app = create_app(store, ui_dir=ui_dir)
    click.echo(f"serving review API on http://{host}:{port} (store: {store_path})")
    uvicorn.run(app, host=host, port=port, log_level="warning")


@review.command("export")
@click.option("--store", "store_path", type=click.Path(), required=True, help="Review store file.")
@click.option("--out", "out_path", type=click.Path(), required=True, help="Pairs JSONL output path.")
@stage_errors("review export")
def review_export(store_path, out_path):
    """Export all pairs with their review states as JSONL."""
    store = ReviewStore(_require_file(store_path, "review store"))
    blob = store.export_pairs_jsonl(out_path)
    count = blob.count(b"\n")
    click.echo(f"exported {count} pairs -> {out_path}")


# -- assemble ----------------------------------------------------------------


@cli.command()
@click.option("--triples", "triples_path", type=click.Path(), required=True, help="Extraction triples JSONL.")
@click.option("--reviews", "store_path", type=click.Path(), required=True, help="Review store with decisions.")
@click.option("--taxonomy", "taxonomy_file", type=click.Path(), default=None, help="Taxonomy JSON (defaults to built-in).")
@click.option("--out", "out_path", type=click.Path(), required=True, help="Dataset JSONL output path.")
@click.option("--dedupe-policy", type=click.Choice(dataset_mod.DEDUPE_POLICIES), default="exact", show_default=True)
@stage_errors("assemble")
def assemble(triples_path, store_path, taxonomy_file, out_path, dedupe_policy):
    """Join triples with review decisions and write the instruction dataset."""
    _assemble(triples_path, store_path, taxonomy_file, out_path, dedupe_policy)


def _assemble(triples_path, store_path, taxonomy_file, out_path, dedupe_policy):
    triples = extraction_mod.read_checkpoint(_require_file(triples_path, "triples file"))
    store = ReviewStore(_require_file(store_path, "review store"))
    taxonomy = _taxonomy(taxonomy_file)
    out_path = Path(out_path)

    records: list[dataset_mod.InstructionRecord] = []
    tagged: list[extraction_mod.QAPair] = []
    tallies = {"accepted": 0, "edited": 0, "rejected": 0, "unreviewed": 0}
    for triple in triples:
        for pair in triple.qa_pairs:
            try:
                reviewed = store.get_pair(pair.qa_id)
            except MateriaError:
                tallies["unreviewed"] += 1
                continue
            if reviewed.review_state in ("pending",):
                tallies["unreviewed"] += 1
                continue
            if reviewed.review_state == "rejected":
                tallies["rejected"] += 1
                continue
            tallies[reviewed.review_state] += 1
            records.append(dataset_mod.to_instruction_record(reviewed))
            reviewed.domain = dataset_mod.tag_domain(reviewed, taxonomy)
            tagged.append(reviewed)

    kept, dedupe_report = dataset_mod.dedupe(records, policy=dedupe_policy)
    kept_indices = {id(record) for record in kept}
    kept_pairs = [
        pair for record, pair in zip(records, tagged) if id(record) in kept_indices
    ]
    dataset_mod.write_jsonl(kept, out_path)

    distribution = dataset_mod.compute_distribution(kept_pairs, taxonomy)
    stats_path = out_path.parent / (out_path.stem + ".stats.json")
    stats_path.write_text(
        json.dumps(dataset_mod.distribution_to_dict(distribution), indent=2) + "\n",
        encoding="utf-8",
    )
    figure_path = out_path.parent / (out_path.stem + ".domains.png")
    figures_mod.save_distribution_figure(distribution, figure_path)
    click.echo(
        f"assembled {len(kept)} records -> {out_path} "
        f"({dedupe_report.dropped} duplicates dropped; "
        f"accepted {tallies['accepted']}, edited {tallies['edited']}, "
        f"rejected {tallies['rejected']}, unreviewed {tallies['unreviewed']})"
    )
    click.echo(f"stats -> {stats_path}; figure -> {figure_path}")
    return out_path, stats_path


# -- stats -------------------------------------------------------------------


@cli.command()
@click.argument("dataset_path", type=click.Path())
@click.option("--taxonomy", "taxonomy_file", type=click.Path(), default=None, help="Taxonomy JSON (defaults to built-in).")
@click.option("--out-dir", type=click.Path(), default=None, help="Where to write stats JSON + figure (defaults next to the dataset).")
@stage_errors("stats")
def stats(dataset_path, taxonomy_file, out_dir):
    """Tag a dataset's records by domain and report the distribution."""
    dataset_path = _require_file(dataset_path, "dataset file")
    taxonomy = _taxonomy(taxonomy_file)
    records = dataset_mod.read_jsonl(dataset_path)
    counts = {label: 0 for label in taxonomy.labels}
    for record in records:
        counts[dataset_mod.tag_text(record.question, record.answer, taxonomy)] += 1
    distribution = dataset_mod.DomainDistribution(counts=counts, total=len(records))

    target = Path(out_dir) if out_dir else dataset_path.parent
    target.mkdir(parents=True, exist_ok=True)
    stats_path = target / (dataset_path.stem + ".stats.json")
    stats_path.write_text(
        json.dumps(dataset_mod.distribution_to_dict(distribution), indent=2) + "\n",
        encoding="utf-8",
    )
    figure_path = target / (dataset_path.stem + ".domains.png")
    figures_mod.save_distribution_figure(distribution, figure_path)

    width = max(len(label) for label in distribution.counts)
    for label, count in distribution.counts.items():
        click.echo(f"{label.ljust(width)}  {count}")
    click.echo(f"{'total'.ljust(width)}  {distribution.total}")
    click.echo(f"stats -> {stats_path}; figure -> {figure_path}")


# -- emit-train-config ---------------------------------------------------------


@cli.command("emit-train-config")
@click.option("--dataset", "dataset_path", type=click.Path(), required=True, help="Validated dataset JSONL.")
@click.option("--out", "out_path", type=click.Path(), default=None, help="Config output path (default: train_config.json next to the dataset).")
@click.option("--base-model", default=None, help="Base model name override.")
@click.option("--learning-rate", type=float, default=None, help="Learning rate override.")
@click.option("--batch-size", type=int, default=None, help="Batch size override.")
@click.option("--epochs", type=int, default=None, help="Epoch count override.")
@click.option("--output-dir", default=None, help="Trainer output directory override.")
@stage_errors("emit-train-config")
def emit_train_config(dataset_path, out_path, base_model, learning_rate, batch_size, epochs, output_dir):
    """Validate the dataset and emit the trainer configuration file."""
    dataset_path = _require_file(dataset_path, "dataset file")
    overrides = {
        "base_model": base_model,
        "learning_rate": learning_rate,
        "batch_size": batch_size,
        "epochs": epochs,
        "output_dir": output_dir,
    }
    config = dataset_mod.emit_train_config(dataset_path, overrides=overrides, output_path=out_path)
    destination = out_path or dataset_path.parent / "train_config.json"
    click.echo(
        f"train config -> {destination} (base_model={config.base_model}, "
        f"lr={config.learning_rate}, batch_size={config.batch_size}, epochs={config.epochs})"
    )


# -- eval ----------------------------------------------------------------------


@cli.command("eval")
@click.option("--benchmarks", "benchmarks_path", type=click.Path(), required=True, help="Benchmark answers JSONL.")
@click.option("--answers", "answers_path", type=click.Path(), required=True, help="Model answers JSONL.")
@click.option("--provider", default="mock-embed", show_default=True, help="Embedding provider id.")
@click.option("--providers", "providers_file", type=click.Path(), default=None, help="providers.json path.")
@click.option("--format", "render_format", type=click.Choice(eval_mod.RENDER_FORMATS), default="text-table", show_default=True)
@click.option("--reports-dir", type=click.Path(), default="reports", show_default=True, help="Directory for report artifacts.")
@click.option("--cache-dir", type=click.Path(), default=".materia-cache", show_default=True, help="Embedding cache directory.")
@stage_errors("eval")
def eval_command(benchmarks_path, answers_path, provider, providers_file, render_format, reports_dir, cache_dir):
    """Score model answers against benchmark answers by embedding cosine similarity."""
    benchmarks = eval_mod.read_benchmarks_jsonl(_require_file(benchmarks_path, "benchmarks file"))
    answers = eval_mod.read_answers_jsonl(_require_file(answers_path, "answers file"))
    if not benchmarks:
        raise ValidationFailure(f"benchmarks file is empty: {benchmarks_path}")
    if not answers:
        raise ValidationFailure(f"answers file is empty: {answers_path}")
    provider_obj = _embedding_provider(provider, providers_file)
    cache = eval_mod.EmbeddingCache(cache_dir)
    report = eval_mod.score_models(benchmarks, answers, provider_obj, cache)

    reports_dir = Path(reports_dir)
    reports_dir.mkdir(parents=True, exist_ok=True)
    artifacts = {
        "text-table": reports_dir / "similarity_report.txt",
        "csv": reports_dir / "similarity_report.csv",
        "json": reports_dir / "similarity_report.json",
    }
    for fmt, path in artifacts.items():
        path.write_text(eval_mod.render_report(report, fmt), encoding="utf-8")
    figure_path = reports_dir / "similarity_report.png"
    figures_mod.save_similarity_figure(report, figure_path)

    click.echo(eval_mod.render_report(report, render_format), nl=False)
    click.echo(f"report artifacts -> {reports_dir} (txt, csv, json, png)")


# -- pipeline --------------------------------------------------------------------


@cli.group()
def pipeline():
    """Multi-stage pipeline orchestration."""


@pipeline.command("run")
@click.option("--config", type=click.Path(), required=True, help="Project config file.")
@click.option("--provider", default="mock", show_default=True, help="Chat provider id.")
@click.option("--auto-accept", is_flag=True, help="Accept every extracted pair without review (for tests/demos only).")
@click.option("--out-dir", type=click.Path(), default=None, help="Override the config's output directory.")
@click.option("--dedupe-policy", type=click.Choice(dataset_mod.DEDUPE_POLICIES), default="exact", show_default=True)
@stage_errors("pipeline run")
def pipeline_run(config, provider, auto_accept, out_dir, dedupe_policy):
    """Run ingest -> extract -> review -> assemble -> stats -> train config."""
    project = _load_project(_require_file(config, "config file"))
    output_dir = Path(out_dir) if out_dir else project.output_dir
    output_dir.mkdir(parents=True, exist_ok=True)
    corpus_dir = _require_dir(project.corpus_dir, "corpus directory")
    taxonomy = _taxonomy(project.taxonomy_file)

    segments_path = output_dir / "segments.jsonl"
    documents = 0
    segments: list[corpus_mod.TextSegment] = []
    for document in corpus_mod.iter_corpus(corpus_dir):
        documents += 1
        segments.extend(corpus_mod.segment(document, project.segmentation))
    corpus_mod.write_segments_jsonl(segments, segments_path)
    click.echo(f"[1/6] ingest: {documents} documents -> {len(segments)} segments ({segments_path})")

    template_obj = _resolve_template("extraction-default", project.templates_dir)
    gateway = _chat_gateway(provider, project.providers_file, project.gateway)
    triples_path = output_dir / "triples.jsonl"
    report = extraction_mod.run_extraction_job(segments, template_obj, gateway, triples_path)
    click.echo(
        f"[2/6] extract: {report.succeeded}+{report.skipped_checkpointed} checkpointed "
        f"of {report.requested} segments, compliance "
        f"{report.compliance.compliant}/{report.compliance.total_outputs} ({triples_path})"
    )

    store_path = project.store_path if out_dir is None else output_dir / Path(project.store_path).name
    store = ReviewStore(store_path)
    triples = extraction_mod.read_checkpoint(triples_path)
    contexts = {}
    pending_pairs = []
    for triple in triples:
        for pair in triple.qa_pairs:
            pair.domain = dataset_mod.tag_domain(pair, taxonomy)
            pending_pairs.append(pair)
            contexts[pair.qa_id] = triple.source_text
    enqueued = store.enqueue(pending_pairs, contexts=contexts)

    if not auto_accept:
        click.echo(f"[3/6] review: enqueued {enqueued} new pairs into {store_path}")
        click.echo(
            "pipeline paused for expert review. Run "
            f"`materia review serve --store {store_path}` to review, then "
            f"`materia assemble --triples {triples_path} --reviews {store_path} "
            f"--out {output_dir / 'dataset.jsonl'}`"
        )
        return

    accepted = 0
    for pair in store.list_pairs(state="pending", limit=10**9):
        store.decide(
            ReviewDecision(qa_id=pair.qa_id, decision="accept", reviewer_id="auto-accept")
        )
        accepted += 1
    click.echo(f"[3/6] review: enqueued {enqueued} new pairs, auto-accepted {accepted}")

    dataset_path = output_dir / "dataset.jsonl"
    _assemble(triples_path, store_path, project.taxonomy_file, dataset_path, dedupe_policy)
    click.echo(f"[4/6] assemble: done ({dataset_path})")

    records = dataset_mod.read_jsonl(dataset_path)
    click.echo(f"[5/6] stats: {len(records)} records tallied")

    train_config = dataset_mod.emit_train_config(dataset_path)
    click.echo(
        f"[6/6] train config: {output_dir / 'train_config.json'} "
        f"(lr={train_config.learning_rate}, batch_size={train_config.batch_size}, "
        f"epochs={train_config.epochs})"
    )


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 1
    except ValidationFailure as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except click.Abort:
        return 130
    except StageError as exc:
        click.echo(
            json.dumps(
                {
                    "stage": exc.stage,
                    "code": type(exc.original).__name__,
                    "message": str(exc.original),
                }
            ),
            err=True,
        )
        return 2
    except MateriaError as exc:
        click.echo(
            json.dumps({"stage": "unknown", "code": type(exc).__name__, "message": str(exc)}),
            err=True,
        )
        return 2


if __name__ == "__main__":
    sys.exit(main())
