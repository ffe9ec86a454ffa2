"""Command-line entry point.

Subcommands: extract, match, dedup, eval-generation, eval-retrieval,
correlate, pool (with a grade subcommand), report. Global flags choose the
call cache, concurrency, and an optional JSON config file whose keys fill
in unset options.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import corpus, pooling
from .analysis import SystemRanking, kendall_tau, spearman_rho
from .corpus import NuggetSource, RunCategory
from .dedup import deduplicate_all
from .errors import ConeError, ConfigError
from .gateway import Gateway, gateway_from_specs
from .matcher import Matcher, MatchMode, serialize_matches
from .metrics import GAIN_EXPONENTIAL, GAIN_LINEAR
from .nuggetizer import Nuggetizer
from .report import (
    GENERATION_TABLE_ASSET,
    GOLD_SOURCES,
    RETRIEVAL_TABLE_ASSET,
    config_from_file,
    dump_report,
    evaluate_generation_run,
    evaluate_retrieval_run,
    load_participant_table,
    parse_participant_table,
    render_tsv,
)

logger = logging.getLogger(__name__)


def _fail(error: Exception) -> "click.ClickException":
    return click.ClickException(str(error))


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise click.ClickException(f"cannot read {path}: {exc}") from exc


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        click.echo(text, nl=False)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _gateway(ctx: click.Context, llm: str | None = None,
             nli: str | None = None) -> Gateway:
    try:
        return gateway_from_specs(
            llm_spec=llm,
            nli_spec=nli,
            cache_path=ctx.obj.get("cache"),
            concurrency=ctx.obj.get("concurrency", 8),
        )
    except (ConeError, OSError, json.JSONDecodeError) as exc:
        raise _fail(exc) from exc


def _config_value(ctx: click.Context, key: str, given, fallback):
    """Explicit flag wins, then the config file, then the default."""
    if given is not None:
        return given
    return ctx.obj.get("config", {}).get(key, fallback)


@click.group()
@click.option("--cache", type=click.Path(dir_okay=False),
              help="Append-only JSONL call cache; reused across runs.")
@click.option("--concurrency", type=int, default=None,
              help="Maximum in-flight backend calls. [default: 8]")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON object supplying defaults for unset options.")
@click.pass_context
def main(ctx: click.Context, cache: str | None, concurrency: int | None,
         config_path: str | None):
    """Nugget-based evaluation toolkit for conversational RAG runs."""
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    ctx.ensure_object(dict)
    try:
        config = config_from_file(config_path) if config_path else {}
    except (ConeError, json.JSONDecodeError) as exc:
        raise _fail(exc) from exc
    ctx.obj["config"] = config
    ctx.obj["cache"] = cache if cache is not None else config.get("cache")
    ctx.obj["concurrency"] = (concurrency if concurrency is not None
                              else config.get("concurrency", 8))


# ---------------------------------------------------------------------------
# extract


@main.command()
@click.option("--input", "input_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Passage lookup JSON (passage mode) or generation run "
                   "JSON (response mode).")
@click.option("--topics", "topics_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice(["passage", "response"]),
              default="response", show_default=True)
@click.option("--qrels", "qrels_path", type=click.Path(exists=True, dir_okay=False),
              help="Required in passage mode: which passages are relevant.")
@click.option("--strict-span", is_flag=True,
              help="Error out on non-span completion lines instead of dropping.")
@click.option("--min-grade", type=int, default=2, show_default=True,
              help="Lowest qrels grade treated as relevant for extraction.")
@click.option("--llm", "llm_spec", help="LLM backend spec.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def extract(ctx, input_path, topics_path, mode, qrels_path, strict_span,
            min_grade, llm_spec, out_path):
    """Extract span nuggets from passages or run responses."""
    gateway = _gateway(ctx, llm=llm_spec)
    try:
        topics = corpus.parse_topics(_read(topics_path))
        turns = corpus.turns_by_id(topics)
        nuggetizer = Nuggetizer(gateway, strict=strict_span)
        if mode == "passage":
            if qrels_path is None:
                raise ConfigError("--qrels is required in passage mode")
            qrels = corpus.parse_qrels(_read(qrels_path))
            passages = corpus.parse_passage_lookup(_read(input_path))
            result = nuggetizer.extract_for_pool(qrels, passages, turns,
                                                 min_grade)
            _write(out_path, corpus.serialize_nugget_file(result.nuggets_by_turn))
            for turn_id, passage_id, message in result.failures:
                click.echo(f"warning: turn {turn_id} passage {passage_id}: "
                           f"{message}", err=True)
            if result.failures:
                sys.exit(1)
        else:
            run = corpus.parse_generation_run(_read(input_path))
            responses = {turn_id: response.text
                         for turn_id, response in run.responses.items()}
            nugget_sets = nuggetizer.extract_from_responses(responses, turns)
            _write(out_path, corpus.serialize_nugget_file(nugget_sets))
    except ConeError as exc:
        raise _fail(exc) from exc


# ---------------------------------------------------------------------------
# match


@main.command()
@click.option("--mode", "mode_name", type=click.Choice([m.value for m in MatchMode]),
              default=MatchMode.NTN.value, show_default=True)
@click.option("--gold", "gold_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--run", "run_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--extracted", "extracted_path",
              type=click.Path(exists=True, dir_okay=False),
              help="Pre-extracted response nuggets (ntn mode); otherwise "
                   "extraction runs first and needs --topics and an LLM.")
@click.option("--topics", "topics_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--llm", "llm_spec", help="LLM backend spec.")
@click.option("--nli", "nli_spec", help="NLI backend spec.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def match(ctx, mode_name, gold_path, run_path, extracted_path, topics_path,
          llm_spec, nli_spec, out_path):
    """Decide gold-nugget coverage for a generation run."""
    mode = MatchMode(mode_name)
    gateway = _gateway(ctx, llm=llm_spec, nli=nli_spec)
    try:
        run = corpus.parse_generation_run(_read(run_path))
        gold_sets = corpus.parse_nugget_file(_read(gold_path),
                                             source=NuggetSource.HUMAN)
        responses = run.responses

        extracted_sets = None
        if mode is MatchMode.NTN:
            if extracted_path is not None:
                extracted_sets = corpus.parse_nugget_file(
                    _read(extracted_path), source=NuggetSource.RESPONSE
                )
            else:
                if topics_path is None:
                    raise ConfigError(
                        "ntn mode needs --extracted or --topics (for extraction)"
                    )
                topics = corpus.parse_topics(_read(topics_path))
                turns = corpus.turns_by_id(topics)
                nuggetizer = Nuggetizer(gateway)
                extracted_sets = nuggetizer.extract_from_responses(
                    {turn_id: response.text
                     for turn_id, response in responses.items()},
                    turns,
                )

        matcher = Matcher(gateway)
        matrices = {}
        for turn_id in sorted(set(responses) & set(gold_sets)):
            gold = gold_sets[turn_id]
            if mode is MatchMode.NTN:
                assert extracted_sets is not None
                extracted = extracted_sets.get(turn_id)
                if extracted is None:
                    continue
                matrices[turn_id] = matcher.match_ntn(extracted, gold)
            elif mode is MatchMode.NTR:
                matrices[turn_id] = matcher.match_ntr(responses[turn_id], gold)
            else:
                matrices[turn_id] = matcher.match_ntr_nli(responses[turn_id],
                                                          gold)
        _write(out_path, serialize_matches(matrices) + "\n")
    except ConeError as exc:
        raise _fail(exc) from exc


# ---------------------------------------------------------------------------
# dedup


@main.command()
@click.option("--in", "in_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--nli", "nli_spec", help="NLI backend spec.")
@click.option("--keep-failed", is_flag=True,
              help="On backend failure keep that turn's set unmodified "
                   "instead of aborting.")
@click.pass_context
def dedup(ctx, in_path, out_path, nli_spec, keep_failed):
    """Remove nuggets entailed by another nugget in the same turn."""
    gateway = _gateway(ctx, nli=nli_spec)
    try:
        nugget_sets = corpus.parse_nugget_file(_read(in_path))
        deduplicated = deduplicate_all(nugget_sets, gateway,
                                       keep_failed=keep_failed)
        _write(out_path, corpus.serialize_nugget_file(deduplicated))
    except ConeError as exc:
        raise _fail(exc) from exc


# ---------------------------------------------------------------------------
# eval-generation


@main.command(name="eval-generation")
@click.option("--run", "run_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--topics", "topics_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--gold-nuggets", "gold_specs", multiple=True,
              help="Nugget file path, or variant=path; repeatable. Variants: "
                   + ", ".join(GOLD_SOURCES) + ".")
@click.option("--gold-source", type=click.Choice(GOLD_SOURCES), default=None,
              help="Variant used for the leaderboard and match-label "
                   "sections. [default: human]")
@click.option("--matching", "matching_name",
              type=click.Choice([m.value for m in MatchMode]), default=None,
              help="Coverage procedure. [default: ntn]")
@click.option("--gold-responses", "gold_responses_path",
              type=click.Path(exists=True, dir_okay=False),
              help="Reference responses; adds ROUGE scores.")
@click.option("--passages", "passages_path",
              type=click.Path(exists=True, dir_okay=False),
              help="Passage lookup; adds groundedness (needs an NLI backend).")
@click.option("--strict-span", is_flag=True)
@click.option("--llm", "llm_spec", help="LLM backend spec.")
@click.option("--nli", "nli_spec", help="NLI backend spec.")
@click.option("--leaderboard-category",
              type=click.Choice(["all"] + [c.value for c in RunCategory]),
              default="all", show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False),
              help="Report JSON destination; stdout when omitted.")
@click.option("--tsv", "tsv_path", type=click.Path(dir_okay=False),
              help="Also render the aggregate table as TSV.")
@click.pass_context
def eval_generation(ctx, run_path, topics_path, gold_specs, gold_source,
                    matching_name, gold_responses_path, passages_path,
                    strict_span, llm_spec, nli_spec, leaderboard_category,
                    out_path, tsv_path):
    """Evaluate a generation run against gold nuggets; emit the full report."""
    cfg = ctx.obj.get("config", {})
    run_path = _config_value(ctx, "run", run_path, None)
    topics_path = _config_value(ctx, "topics", topics_path, None)
    gold_source = _config_value(ctx, "gold_source", gold_source, "human")
    matching_name = _config_value(ctx, "matching", matching_name,
                                  MatchMode.NTN.value)
    gold_responses_path = _config_value(ctx, "gold_responses",
                                        gold_responses_path, None)
    passages_path = _config_value(ctx, "passages", passages_path, None)
    llm_spec = _config_value(ctx, "llm", llm_spec, None)
    nli_spec = _config_value(ctx, "nli", nli_spec, None)
    if run_path is None or topics_path is None:
        raise click.ClickException("--run and --topics are required "
                                   "(flags or config file)")

    gold_paths: dict[str, str] = {}
    for variant, path in cfg.get("gold_nuggets", {}).items():
        gold_paths[variant] = path
    for spec in gold_specs:
        if "=" in spec:
            variant, _, path = spec.partition("=")
            if variant not in GOLD_SOURCES:
                raise click.ClickException(f"unknown gold variant {variant!r}")
        else:
            variant, path = gold_source, spec
        gold_paths[variant] = path
    if not gold_paths:
        raise click.ClickException("at least one --gold-nuggets file is required")
    if gold_source not in gold_paths:
        raise click.ClickException(
            f"gold source {gold_source!r} has no nugget file among "
            f"{sorted(gold_paths)}"
        )

    for label, path in [("run", run_path), ("topics", topics_path),
                        *[(f"gold nuggets ({v})", p) for v, p in gold_paths.items()]]:
        if not Path(path).is_file():
            raise click.ClickException(f"{label} file not found: {path}")

    gateway = _gateway(ctx, llm=llm_spec, nli=nli_spec)
    try:
        run = corpus.parse_generation_run(_read(run_path))
        topics = corpus.parse_topics(_read(topics_path))
        turns = corpus.turns_by_id(topics)
        gold_variants = {
            variant: corpus.parse_nugget_file(
                _read(path),
                source=(NuggetSource.HUMAN if variant.startswith("human")
                        else NuggetSource.LLM),
            )
            for variant, path in gold_paths.items()
        }
        gold_responses = (corpus.parse_gold_responses(_read(gold_responses_path))
                          if gold_responses_path else None)
        passages = (corpus.parse_passage_lookup(_read(passages_path))
                    if passages_path else None)
        report = evaluate_generation_run(
            run=run,
            gold_variants=gold_variants,
            turns=turns,
            gateway=gateway,
            matching=MatchMode(matching_name),
            gold_source=gold_source,
            strict_span=strict_span,
            gold_responses=gold_responses,
            passages=passages,
            leaderboard_category=leaderboard_category,
        )
    except ConeError as exc:
        raise _fail(exc) from exc
    _write(out_path, dump_report(report))
    if tsv_path:
        _write(tsv_path, render_tsv(report))
    if not report["complete"]:
        click.echo("report incomplete; see its errors section", err=True)
        sys.exit(1)


# ---------------------------------------------------------------------------
# eval-retrieval


@main.command(name="eval-retrieval")
@click.option("--run", "run_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--qrels", "qrels_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--k", "ks", default="5,20", show_default=True,
              help="Comma-separated cutoffs.")
@click.option("--depth", type=int, default=1000, show_default=True)
@click.option("--gain", type=click.Choice([GAIN_LINEAR, GAIN_EXPONENTIAL]),
              default=GAIN_LINEAR, show_default=True)
@click.option("--rel-threshold", type=int, default=1, show_default=True,
              help="Lowest grade counted as relevant for binary metrics.")
@click.option("--strict", is_flag=True, help="Reject empty run files.")
@click.option("--leaderboard-metric", default="ndcg@5", show_default=True)
@click.option("--leaderboard-category",
              type=click.Choice(["all"] + [c.value for c in RunCategory]),
              default="all", show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False))
@click.option("--tsv", "tsv_path", type=click.Path(dir_okay=False))
@click.pass_context
def eval_retrieval(ctx, run_path, qrels_path, ks, depth, gain, rel_threshold,
                   strict, leaderboard_metric, leaderboard_category, out_path,
                   tsv_path):
    """Evaluate a TREC-format retrieval run against qrels."""
    try:
        cutoffs = tuple(int(part) for part in ks.split(",") if part)
    except ValueError:
        raise click.ClickException(f"bad --k value {ks!r}") from None
    if not cutoffs:
        raise click.ClickException("--k needs at least one cutoff")
    try:
        run = corpus.parse_trec_run(_read(run_path), strict=strict)
        qrels = corpus.parse_qrels(_read(qrels_path))
        report = evaluate_retrieval_run(
            run, qrels, ks=cutoffs, depth=depth, rel_threshold=rel_threshold,
            gain=gain, leaderboard_metric=leaderboard_metric,
            leaderboard_category=leaderboard_category,
        )
    except ConeError as exc:
        raise _fail(exc) from exc
    _write(out_path, dump_report(report))
    if tsv_path:
        _write(tsv_path, render_tsv(report))


# ---------------------------------------------------------------------------
# correlate


def _load_scores(spec: str) -> tuple[str, dict[str, float]]:
    """Score-source spec -> (label, run_tag -> score).

    Forms: "<table.tsv>" (two-column score table),
    "<table.tsv>:<column>" (participant-style multi-column table), and
    "bundled:generation:<column>" / "bundled:retrieval:<column>".
    """
    if spec.startswith("bundled:"):
        _, _, rest = spec.partition(":")
        table_name, _, column = rest.partition(":")
        asset = {"generation": GENERATION_TABLE_ASSET,
                 "retrieval": RETRIEVAL_TABLE_ASSET}.get(table_name)
        if asset is None or not column:
            raise ConfigError(
                f"bundled spec must be bundled:generation:<column> or "
                f"bundled:retrieval:<column>, got {spec!r}"
            )
        table = load_participant_table(asset)
        if column not in table.columns:
            raise ConfigError(f"unknown column {column!r}; available: "
                              f"{', '.join(table.columns)}")
        return (f"{table_name}:{column}",
                {tag: row[column] for tag, row in table.rows.items()})
    path, _, column = spec.partition(":")
    text = Path(path).read_text(encoding="utf-8")
    if column:
        parsed = parse_participant_table(text)
        if column not in parsed.columns:
            raise ConfigError(f"unknown column {column!r} in {path}")
        return (f"{Path(path).name}:{column}",
                {tag: row[column] for tag, row in parsed.rows.items()})
    score_table = corpus.parse_score_table(text)
    return score_table.metric_name, dict(score_table.scores)


@main.command()
@click.option("--metric-a", "spec_a", required=True,
              help="Score source: TSV path, TSV:column, or bundled:...")
@click.option("--metric-b", "spec_b", required=True)
@click.option("--tau", "tau_variant", type=click.Choice(["a", "b"]),
              default="b", show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False))
def correlate(spec_a, spec_b, tau_variant, out_path):
    """Rank correlation (Kendall, Spearman) between two score columns."""
    try:
        label_a, scores_a = _load_scores(spec_a)
        label_b, scores_b = _load_scores(spec_b)
        shared = sorted(set(scores_a) & set(scores_b))
        if len(shared) < 2:
            raise ConfigError(
                f"need at least 2 shared runs, found {len(shared)}"
            )
        ranking_a = SystemRanking.from_scores(
            label_a, {tag: scores_a[tag] for tag in shared})
        ranking_b = SystemRanking.from_scores(
            label_b, {tag: scores_b[tag] for tag in shared})
        result = {
            "metric_a": label_a,
            "metric_b": label_b,
            "runs": shared,
            "n": len(shared),
            "kendall_tau": kendall_tau(ranking_a, ranking_b, tau_variant),
            "tau_variant": tau_variant,
            "spearman_rho": spearman_rho(ranking_a, ranking_b),
        }
    except (ConeError, OSError) as exc:
        raise _fail(exc) from exc
    _write(out_path, json.dumps(result, ensure_ascii=False, indent=2,
                                sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# pool


@main.group(invoke_without_command=True)
@click.option("--runs", "run_paths", multiple=True,
              type=click.Path(exists=True),
              help="TREC run files, or directories of them.")
@click.option("--k5", "k_guaranteed", type=int, default=5, show_default=True,
              help="Unconditional per-run depth.")
@click.option("--kmax", "k_max", type=int, default=30, show_default=True,
              help="Filter-gated per-run depth.")
@click.option("--filter", "filter_name",
              type=click.Choice(["accept-all", "reject-all", "judge"]),
              default="accept-all", show_default=True)
@click.option("--topics", "topics_path", type=click.Path(exists=True, dir_okay=False),
              help="Needed by the judge filter.")
@click.option("--passages", "passages_path",
              type=click.Path(exists=True, dir_okay=False),
              help="Needed by the judge filter.")
@click.option("--llm", "llm_spec", help="LLM backend spec for the judge filter.")
@click.option("--min-grade", type=int, default=1, show_default=True,
              help="Judge grade at or above which a candidate passes.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False))
@click.pass_context
def pool(ctx, run_paths, k_guaranteed, k_max, filter_name, topics_path,
         passages_path, llm_spec, min_grade, out_path):
    """Build an adaptive assessment pool from retrieval runs."""
    if ctx.invoked_subcommand is not None:
        return
    if not run_paths:
        raise click.ClickException("--runs is required")
    if out_path is None:
        raise click.ClickException("--out is required")
    files: list[Path] = []
    for raw in run_paths:
        path = Path(raw)
        if path.is_dir():
            files.extend(sorted(p for p in path.iterdir() if p.is_file()))
        else:
            files.append(path)
    try:
        runs = [corpus.parse_trec_run(p.read_text(encoding="utf-8"))
                for p in files]
        if filter_name == "accept-all":
            predicate = pooling.accept_all
        elif filter_name == "reject-all":
            predicate = pooling.reject_all
        else:
            if topics_path is None or passages_path is None:
                raise ConfigError(
                    "--filter judge needs --topics, --passages, and an LLM"
                )
            gateway = _gateway(ctx, llm=llm_spec)
            topics = corpus.parse_topics(_read(topics_path))
            judge = pooling.LlmRelevanceJudge(
                gateway, corpus.turns_by_id(topics),
                corpus.parse_passage_lookup(_read(passages_path)),
            )
            predicate = pooling.judge_filter(judge, min_grade)
        built = pooling.build_pool(
            runs, k_guaranteed=k_guaranteed, k_max=k_max,
            filter_predicate=predicate,
            concurrency=ctx.obj.get("concurrency", 8),
        )
    except ConeError as exc:
        raise _fail(exc) from exc
    _write(out_path, pooling.serialize_pool(built) + "\n")
    click.echo(f"pooled {built.size()} (turn, passage) pairs over "
               f"{len(built.per_turn)} turns", err=True)


@pool.command(name="grade")
@click.option("--pool", "pool_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--topics", "topics_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--passages", "passages_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--llm", "llm_spec", help="LLM backend spec for the judge.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--distribution", "distribution_path",
              type=click.Path(dir_okay=False),
              help="Also write the grade histogram as JSON.")
@click.pass_context
def pool_grade(ctx, pool_path, topics_path, passages_path, llm_spec, out_path,
               distribution_path):
    """Grade every pooled pair with the LLM judge; write qrels."""
    gateway = _gateway(ctx, llm=llm_spec)
    try:
        built = pooling.parse_pool(_read(pool_path))
        topics = corpus.parse_topics(_read(topics_path))
        judge = pooling.LlmRelevanceJudge(
            gateway, corpus.turns_by_id(topics),
            corpus.parse_passage_lookup(_read(passages_path)),
        )
        grading = pooling.grade_pool(built, judge)
    except ConeError as exc:
        raise _fail(exc) from exc
    _write(out_path, corpus.serialize_qrels(grading.qrels))
    if distribution_path:
        _write(distribution_path,
               json.dumps({str(grade): count
                           for grade, count in grading.distribution.items()},
                          indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# report


@main.command(name="report")
@click.option("--in", "in_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="A report JSON produced by eval-generation or eval-retrieval.")
@click.option("--format", "format_name", type=click.Choice(["tsv"]),
              default="tsv", show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False))
def report_cmd(in_path, format_name, out_path):
    """Render a report JSON as an aligned table."""
    try:
        report = json.loads(_read(in_path))
        rendered = render_tsv(report)
    except (ConeError, json.JSONDecodeError) as exc:
        raise _fail(exc) from exc
    _write(out_path, rendered)


if __name__ == "__main__":
    main()
