"""Command-line entry point.

Commands: run, eval, judge, analyze, simulate, chat, concepts list.
Configuration comes from an optional JSON file (--config) with every key
overridable by a flag; flags win. Exit codes: 0 success (or tolerated
partial failure), 2 configuration error, 3 corpus/records error, 4 too
many generation failures / all episodes failed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import analysis, corpus, judge as judge_mod, metrics
from .backend import ENDPOINT_ENV, BackendHandle, MockScript
from .concepts import (
    BUILTIN_SET_IDS,
    ConceptSet,
    DEFAULT_STYLE,
    TagStyle,
    builtin_set,
    load_concept_set,
    render,
    strip_tags,
    tag_style,
)
from .strategies import GenParams, GenerationError, StrategyKind, generate
from .analysis import RecordsError, RunRecord
from .corpus import CorpusError, DialogueTurn, SimConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_FAILURES = 4

FAILURE_TOLERANCE = 0.5


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    endpoint: str | None = None
    mock_path: str | None = None
    model: str = "default"
    token_budget: int = 4096
    strategy: StrategyKind = StrategyKind.COCT
    concepts_ref: str | None = None
    style: TagStyle = DEFAULT_STYLE
    corpus_path: str | None = None
    out_path: str | None = None
    parallelism: int = 1
    seed: int | None = None
    metric_config: metrics.MetricConfig = field(default_factory=metrics.MetricConfig)
    params: GenParams = field(default_factory=GenParams)
    sim: dict = field(default_factory=dict)

    def backend(self) -> BackendHandle:
        if self.mock_path:
            try:
                script = MockScript.from_file(self.mock_path)
            except (OSError, ValueError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot load mock script {self.mock_path}: {exc}") from exc
            return BackendHandle.mock(script, token_budget=self.token_budget)
        endpoint = self.endpoint or os.environ.get(ENDPOINT_ENV)
        if not endpoint:
            raise ConfigError(
                "no backend configured: pass --mock PATH or --backend-endpoint URL "
                f"(or set {ENDPOINT_ENV})"
            )
        return BackendHandle.live(endpoint, token_budget=self.token_budget)

    def concept_set(self) -> ConceptSet | None:
        ref = self.concepts_ref
        if not ref:
            return None
        if ref in BUILTIN_SET_IDS:
            return builtin_set(ref)
        try:
            return load_concept_set(ref)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load concept set {ref!r}: {exc}") from exc


def _load_config_file(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file first, then flags on top."""
    raw: dict = {}
    if getattr(args, "config", None):
        raw = _load_config_file(args.config)

    backend_raw = raw.get("backend", {})
    cfg = RunConfig()
    cfg.endpoint = backend_raw.get("endpoint")
    cfg.mock_path = backend_raw.get("mock")
    cfg.model = backend_raw.get("model", cfg.model)
    cfg.token_budget = int(backend_raw.get("token_budget", cfg.token_budget))

    strat_raw = raw.get("strategy", {})
    if isinstance(strat_raw, str):
        strat_raw = {"kind": strat_raw}
    kind_name = strat_raw.get("kind")
    if kind_name:
        cfg.strategy = _parse_strategy(kind_name)
    cfg.concepts_ref = raw.get("concepts")
    if raw.get("tag_style"):
        cfg.style = _parse_style(raw["tag_style"])
    paths = raw.get("paths", {})
    cfg.corpus_path = paths.get("corpus")
    cfg.out_path = paths.get("out")
    cfg.parallelism = int(raw.get("parallelism", cfg.parallelism))
    cfg.seed = raw.get("seed")
    cfg.sim = raw.get("simulate", {})

    metric_raw = raw.get("metrics", {})
    if metric_raw:
        beta = metric_raw.get("rouge_beta", "inf")
        cfg.metric_config = metrics.MetricConfig(
            bleu_max_n=int(metric_raw.get("bleu_max_n", 2)),
            bleu_smoothing=bool(metric_raw.get("bleu_smoothing", False)),
            rouge_beta=float("inf") if beta in ("inf", None) else float(beta),
            cider_n=int(metric_raw.get("cider_n", 4)),
            tokenizer=metric_raw.get("tokenizer", metrics.TOKENIZER_DEFAULT),
            report_scale=float(metric_raw.get("report_scale", 100.0)),
            score_with_tags=bool(metric_raw.get("score_with_tags", False)),
            distinct_per_example=bool(metric_raw.get("distinct_per_example", False)),
        )

    params_raw = dict(strat_raw.get("params", {}))

    # Flags override file values.
    if getattr(args, "backend_endpoint", None):
        cfg.endpoint = args.backend_endpoint
    if getattr(args, "mock", None):
        cfg.mock_path = args.mock
    if getattr(args, "model", None):
        cfg.model = args.model
    if getattr(args, "strategy", None):
        cfg.strategy = _parse_strategy(args.strategy)
    if getattr(args, "concepts", None):
        cfg.concepts_ref = args.concepts
    if getattr(args, "tag_style", None):
        cfg.style = _parse_style(args.tag_style)
    if getattr(args, "out", None):
        cfg.out_path = args.out
    if getattr(args, "parallelism", None):
        cfg.parallelism = args.parallelism
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "corpus", None):
        cfg.corpus_path = args.corpus

    if cfg.parallelism < 1:
        raise ConfigError("parallelism must be >= 1")
    if cfg.endpoint and cfg.mock_path:
        raise ConfigError("configure exactly one backend source (endpoint or mock)")

    if getattr(args, "model", None):
        params_raw["model"] = args.model
    else:
        params_raw.setdefault("model", cfg.model)
    if cfg.seed is not None:
        params_raw.setdefault("seed", int(cfg.seed))
    try:
        cfg.params = GenParams(**params_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad strategy parameters: {exc}") from exc
    return cfg


def _parse_strategy(name: str) -> StrategyKind:
    try:
        return StrategyKind(name.lower())
    except ValueError:
        valid = ", ".join(k.value for k in StrategyKind)
        raise ConfigError(f"unknown strategy {name!r}; valid: {valid}") from None


def _parse_style(name: str) -> TagStyle:
    try:
        return tag_style(name)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _render_history(history) -> str:
    return "\n".join(f"{t.speaker}: {t.text}" for t in history)


def _strategy_set(cfg: RunConfig) -> ConceptSet | None:
    """The concept set actually handed to generate(): only tagged
    generation and retrieval consume one."""
    if cfg.strategy in (StrategyKind.COCT, StrategyKind.RAG):
        cset = cfg.concept_set()
        if cset is None:
            raise ConfigError(f"strategy {cfg.strategy.value} requires --concepts")
        return cset
    return None


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = resolve_config(args)
    if not cfg.corpus_path:
        raise ConfigError("run requires a corpus (--corpus or paths.corpus)")
    if not cfg.out_path:
        raise ConfigError("run requires an output path (--out)")
    backend = cfg.backend()
    cset = _strategy_set(cfg)

    loaded = corpus.load_jsonl(cfg.corpus_path)
    for err in loaded.errors:
        print(f"warning: {cfg.corpus_path}:{err.line_no}: {err.message}", file=sys.stderr)
    pairs = corpus.extract_pairs(loaded.dialogues)
    if not pairs:
        print(f"error: no evaluation pairs in {cfg.corpus_path}", file=sys.stderr)
        return EXIT_DATA

    def one(pair: corpus.EvalPair) -> RunRecord:
        base = dict(
            example_id=f"{pair.dialogue_id}:{pair.turn_index}",
            dialogue_id=pair.dialogue_id,
            turn_index=pair.turn_index,
            strategy=cfg.strategy.value,
            tag_style=cfg.style.style_id,
            reference=pair.reference,
            history=_render_history(pair.history),
        )
        try:
            outcome = generate(cfg.strategy, pair.history, cset, backend,
                               cfg.params, style=cfg.style)
        except (GenerationError, ValueError) as exc:
            trace = getattr(exc, "trace", ())
            return RunRecord(
                raw_response="", segments=(), calls=len(trace),
                trace_summary=tuple((len(req.messages), len(resp)) for req, resp in trace),
                elapsed_s=0.0, error=str(exc), **base,
            )
        # Mock runs are fully deterministic; wall-clock timing is noise
        # there and would break byte-identical reruns.
        elapsed = 0.0 if backend.is_mock else outcome.elapsed_s
        return RunRecord(
            raw_response=outcome.final_text,
            segments=tuple((s.concept, s.text) for s in outcome.final.segments),
            calls=outcome.call_count,
            trace_summary=tuple((len(req.messages), len(resp)) for req, resp in outcome.trace),
            elapsed_s=elapsed,
            error=None,
            extraction_fallback=outcome.extraction_fallback,
            **base,
        )

    if cfg.parallelism > 1:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            records = list(pool.map(one, pairs))
    else:
        records = [one(p) for p in pairs]

    Path(cfg.out_path).write_bytes(analysis.emit(records, "jsonl"))
    failures = sum(1 for r in records if r.error)
    calls = sum(r.calls for r in records)
    print(f"examples {len(records)}  calls {calls}  failures {failures}")
    print(f"records written to {cfg.out_path}")
    if failures > FAILURE_TOLERANCE * len(records):
        print(f"error: {failures}/{len(records)} generations failed", file=sys.stderr)
        return EXIT_FAILURES
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    try:
        records = analysis.read_run_records(args.records)
    except RecordsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    outputs = [r.utterance() for r in records]
    references = [r.reference for r in records]
    report = metrics.evaluate_run(outputs, references, cfg.metric_config)
    if cfg.out_path:
        Path(cfg.out_path).write_bytes(analysis.emit(report, "json"))
        print(f"report written to {cfg.out_path}")
    print(analysis.emit(report, "markdown-table").decode("utf-8"), end="")
    return EXIT_OK


def cmd_judge(args) -> int:
    cfg = resolve_config(args)
    try:
        records_a = analysis.read_run_records(args.records_a)
        records_b = analysis.read_run_records(args.records_b)
    except RecordsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    ids_a = [r.example_id for r in records_a]
    ids_b = [r.example_id for r in records_b]
    if ids_a != ids_b:
        for i, (a, b) in enumerate(zip(ids_a, ids_b)):
            if a != b:
                print(f"error: example ids diverge at index {i}: {a!r} vs {b!r}",
                      file=sys.stderr)
                return EXIT_CONFIG
        print(f"error: record counts differ ({len(ids_a)} vs {len(ids_b)})",
              file=sys.stderr)
        return EXIT_CONFIG

    pairs = []
    for ra, rb in zip(records_a, records_b):
        pairs.append((
            ra.history,
            strip_tags(ra.utterance()) or ra.raw_response or "(empty)",
            strip_tags(rb.utterance()) or rb.raw_response or "(empty)",
        ))
    backend = cfg.backend()
    result = judge_mod.run_pairwise(
        pairs, backend, debias=not args.no_debias,
        model=cfg.model, parallelism=cfg.parallelism,
    )
    payload = json.dumps(result.to_dict(), sort_keys=True, ensure_ascii=False)
    if cfg.out_path:
        Path(cfg.out_path).write_text(payload + "\n", encoding="utf-8")
        print(f"result written to {cfg.out_path}")
    print(payload)
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = resolve_config(args)
    try:
        records = analysis.read_run_records(args.records)
    except RecordsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA

    cset = cfg.concept_set()
    utterances = [r.utterance() for r in records]
    by_dialogue: dict[str, list] = {}
    for r in records:
        by_dialogue.setdefault(r.dialogue_id, []).append(r)
    conversations = [
        [r.utterance() for r in sorted(group, key=lambda r: r.turn_index)]
        for _, group in sorted(by_dialogue.items())
    ]

    inner = analysis.inner_transitions(utterances, cset)
    outer = analysis.outer_transitions(conversations, cset)

    out_dir = Path(cfg.out_path or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "inner.csv").write_bytes(analysis.matrix_csv(inner.labels, inner.counts))
    (out_dir / "inner_normalized.csv").write_bytes(
        analysis.matrix_csv(inner.labels, analysis.normalize(inner)))
    (out_dir / "outer.csv").write_bytes(analysis.matrix_csv(outer.labels, outer.counts))
    (out_dir / "outer_normalized.csv").write_bytes(
        analysis.matrix_csv(outer.labels, analysis.normalize(outer)))
    print(f"inner transitions: {inner.total}  outer transitions: {outer.total}")
    print(f"matrices written to {out_dir}")

    if cset is not None and any(c.stage for c in cset.concepts) and inner.total > 0:
        order = analysis.stage_ordering(inner.labels, cset)
        mass = analysis.upper_triangle_mass(inner, order)
        print(f"upper-triangle mass (stage ordering): {mass:.4f}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    backend = cfg.backend()
    cset = _strategy_set(cfg)

    episodes = int(args.episodes or cfg.sim.get("episodes", 1))
    topics = cfg.sim.get("topics") or ([args.topic] if args.topic else [None])
    if isinstance(topics, str):
        # a newline-delimited topic / seed-query list file
        try:
            lines = Path(topics).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise ConfigError(f"cannot read topics file {topics!r}: {exc}") from exc
        topics = [line.strip() for line in lines if line.strip()] or [None]
    sim_cfg_base = dict(
        max_rounds=int(args.max_rounds or cfg.sim.get("max_rounds", 10)),
        stop_markers=tuple(cfg.sim.get("stop_markers", ("[END]", "goodbye"))),
        user_persona=cfg.sim.get("user_persona", ""),
        agent_strategy=cfg.strategy,
    )

    sim_records = []
    for i in range(episodes):
        topic = topics[i % len(topics)]
        sim_cfg = SimConfig(topic=topic, **sim_cfg_base)
        sim_records.append(corpus.simulate(
            sim_cfg, backend, backend, cset, cfg.params,
            style=cfg.style, episode_id=f"sim-{i}",
        ))

    ok = [r for r in sim_records if r.error is None]
    if cfg.out_path:
        lines = [json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False)
                 for r in sim_records]
        Path(cfg.out_path).write_text("".join(l + "\n" for l in lines), encoding="utf-8")
        print(f"episodes written to {cfg.out_path}")
    if not ok:
        print("error: every episode failed", file=sys.stderr)
        return EXIT_FAILURES
    mean_len = sum(r.avg_len for r in ok) / len(ok)
    mean_rounds = sum(r.rounds for r in ok) / len(ok)
    print(f"episodes {len(sim_records)}  errors {len(sim_records) - len(ok)}")
    print(f"AvgLen {mean_len:.2f}")
    print(f"Rounds {mean_rounds:.2f}")
    return EXIT_OK


def _format_reply(utterance, style: TagStyle, color: bool) -> str:
    if not color:
        return render(utterance, style)
    parts = []
    for seg in utterance.segments:
        if seg.concept is None:
            parts.append(seg.text)
        else:
            tag = f"\x1b[96m{style.wrap(seg.concept)}\x1b[0m"
            parts.append(f"{tag} {seg.text}" if seg.text else tag)
    return " ".join(parts)


def cmd_chat(args) -> int:
    cfg = resolve_config(args)
    backend = cfg.backend()
    kind = cfg.strategy
    color = sys.stdout.isatty()
    turns: list[DialogueTurn] = []
    out_path = Path(cfg.out_path or "chat_transcript.jsonl")

    print(f"strategy: {kind.value}; /strategy KIND, /concepts, /quit")
    while True:
        print("you> ", end="", flush=True)
        line = sys.stdin.readline()
        if not line:
            break
        line = line.strip()
        if not line:
            continue
        if line == "/quit":
            break
        if line == "/concepts":
            cset = cfg.concept_set()
            print(", ".join(cset.names()) if cset else "(no concept set configured)")
            continue
        if line.startswith("/strategy"):
            name = line.split(maxsplit=1)[1] if " " in line else ""
            try:
                kind = _parse_strategy(name)
                print(f"strategy: {kind.value}")
            except ConfigError as exc:
                print(f"error: {exc}")
            continue

        turns.append(DialogueTurn(corpus.SPEAKER_SEEKER, line))
        try:
            cset = cfg.concept_set() if kind in (StrategyKind.COCT, StrategyKind.RAG) else None
            outcome = generate(kind, turns, cset, backend, cfg.params, style=cfg.style)
        except (GenerationError, ConfigError, ValueError) as exc:
            print(f"[error: {exc}]")
            turns.pop()
            continue
        print(_format_reply(outcome.final, cfg.style, color))
        turns.append(DialogueTurn(
            corpus.SPEAKER_SUPPORTER,
            strip_tags(outcome.final) or outcome.final_text,
            strategy=next(iter(outcome.final.concept_chain()), None),
        ))

    if len(turns) >= 2:
        corpus.save_jsonl([corpus.Dialogue("chat-session", tuple(turns))], out_path)
    else:
        out_path.write_text("", encoding="utf-8")
    print(f"transcript saved to {out_path}")
    return EXIT_OK


def cmd_concepts(args) -> int:
    if args.concepts_cmd != "list":
        raise ConfigError("usage: coct concepts list")
    for set_id in BUILTIN_SET_IDS:
        cset = builtin_set(set_id)
        print(f"{set_id} ({cset.mode.value}, {len(cset)} concepts)")
        for c in cset.concepts:
            stage = f" [stage {c.stage}]" if c.stage else ""
            print(f"  {c.name}{stage}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_shared(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--backend-endpoint", help="OpenAI-compatible endpoint URL")
    parser.add_argument("--model", help="model name sent to the backend")
    parser.add_argument("--mock", help="mock script JSON path")
    parser.add_argument("--strategy", help="strategy kind, e.g. coct, direct, self-refine")
    parser.add_argument("--concepts", help="builtin concept set id or JSON path")
    parser.add_argument("--tag-style",
                        choices=["angle", "caret", "hash", "at", "square", "ampersand"])
    parser.add_argument("--out", help="output path")
    parser.add_argument("--parallelism", type=int)
    parser.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coct",
        description="Concept-tagged generation and evaluation pipelines",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="generate over a corpus, write run records")
    _add_shared(p_run)
    p_run.add_argument("--corpus", help="canonical corpus JSONL")
    p_run.set_defaults(func=cmd_run)

    p_eval = sub.add_parser("eval", help="score run records against references")
    _add_shared(p_eval)
    p_eval.add_argument("records", help="run-record JSONL path")
    p_eval.set_defaults(func=cmd_eval)

    p_judge = sub.add_parser("judge", help="pairwise-judge two run-record files")
    _add_shared(p_judge)
    p_judge.add_argument("records_a")
    p_judge.add_argument("records_b")
    p_judge.add_argument("--no-debias", action="store_true",
                         help="judge each pair once instead of order-swapped twice")
    p_judge.set_defaults(func=cmd_judge)

    p_an = sub.add_parser("analyze", help="emit transition matrices from run records")
    _add_shared(p_an)
    p_an.add_argument("records")
    p_an.set_defaults(func=cmd_analyze)

    p_sim = sub.add_parser("simulate", help="run self-chat episodes")
    _add_shared(p_sim)
    p_sim.add_argument("--episodes", type=int)
    p_sim.add_argument("--max-rounds", type=int)
    p_sim.add_argument("--topic")
    p_sim.set_defaults(func=cmd_simulate)

    p_chat = sub.add_parser("chat", help="interactive terminal chat")
    _add_shared(p_chat)
    p_chat.set_defaults(func=cmd_chat)

    p_con = sub.add_parser("concepts", help="inspect builtin concept sets")
    p_con.add_argument("concepts_cmd", choices=["list"])
    p_con.set_defaults(func=cmd_concepts)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CorpusError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
