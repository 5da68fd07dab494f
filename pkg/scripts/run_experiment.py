#!/usr/bin/env python3
"""End-to-end pipeline demo on a tiny synthetic corpus.

Generates with two strategies over a mock backend, scores both runs,
judges them pairwise, and prints the transition analysis for the tagged
run. Point --backend-endpoint/--model at a live server to run the same
pipeline for real.

Usage:
    python scripts/run_experiment.py --workdir /tmp/coct-demo
    python scripts/run_experiment.py --workdir out \
        --backend-endpoint http://localhost:8000/v1 --model llama-3-8b-instruct
"""

import argparse
import json
import sys
from pathlib import Path

from coct import cli
from coct.backend import ChatMessage, MockScript
from coct.concepts import ANGLE, builtin_set
from coct.corpus import extract_pairs, load_jsonl
from coct.strategies import build_coct_prompt, history_to_messages

DIALOGUES = [
    {"id": "demo-1", "turns": [
        {"speaker": "seeker", "text": "I think I failed my driving test."},
        {"speaker": "supporter",
         "text": "That sounds stressful. What part felt hardest for you?"},
    ]},
    {"id": "demo-2", "turns": [
        {"speaker": "seeker", "text": "My best friend moved away last month."},
        {"speaker": "supporter",
         "text": "Losing daily contact is hard. Have you two found a new routine?"},
    ]},
    {"id": "demo-3", "turns": [
        {"speaker": "seeker", "text": "Work keeps piling up and I cannot sleep."},
        {"speaker": "supporter",
         "text": "You sound exhausted. Maybe one small task tonight would help."},
    ]},
]

TAGGED_REPLIES = [
    "<Reflection of Feelings> That sounds stressful. <Question> What part felt hardest for you?",
    "<Reflection of Feelings> Losing daily contact is hard. <Question> Have you two found a new routine?",
    "<Reflection of Feelings> You sound exhausted. <Providing Suggestions> Maybe one small task tonight would help.",
]


def build_mock(corpus_path, mock_path):
    cset = builtin_set("esconv-strategy")
    system = ChatMessage("system", build_coct_prompt(cset, ANGLE))
    exchanges = []
    for pair, reply in zip(extract_pairs(load_jsonl(corpus_path).dialogues), TAGGED_REPLIES):
        exchanges.append(([system] + history_to_messages(pair.history), reply))
    MockScript.from_exchanges(exchanges, fallback="echo-last-user").to_file(mock_path)


def run(argv):
    code = cli.main(argv)
    if code != 0:
        print(f"step failed ({code}): {' '.join(argv)}", file=sys.stderr)
        sys.exit(code)


def main():
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--workdir", default="demo-out")
    parser.add_argument("--backend-endpoint", help="live endpoint; default is a mock")
    parser.add_argument("--model", default="default")
    args = parser.parse_args()

    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    corpus_path = workdir / "corpus.jsonl"
    corpus_path.write_text(
        "".join(json.dumps(d, ensure_ascii=False) + "\n" for d in DIALOGUES),
        encoding="utf-8")

    if args.backend_endpoint:
        backend_args = ["--backend-endpoint", args.backend_endpoint, "--model", args.model]
    else:
        mock_path = workdir / "mock.json"
        build_mock(corpus_path, mock_path)
        backend_args = ["--mock", str(mock_path)]

    coct_records = workdir / "coct.jsonl"
    direct_records = workdir / "direct.jsonl"
    run(["run", *backend_args, "--strategy", "coct", "--concepts", "esconv-strategy",
         "--corpus", str(corpus_path), "--out", str(coct_records)])
    run(["run", *backend_args, "--strategy", "direct",
         "--corpus", str(corpus_path), "--out", str(direct_records)])

    print("\n== automatic metrics (coct) ==")
    run(["eval", str(coct_records), "--out", str(workdir / "coct_report.json")])
    print("\n== automatic metrics (direct) ==")
    run(["eval", str(direct_records), "--out", str(workdir / "direct_report.json")])

    if not args.backend_endpoint:
        # The demo mock is not a competent judge; point the judge at the
        # always-tie script just to exercise the pipeline shape.
        judge_mock = workdir / "judge_mock.json"
        MockScript(fallback="fixed", fallback_text="JUDGE: [[C]]").to_file(judge_mock)
        judge_args = ["--mock", str(judge_mock)]
    else:
        judge_args = backend_args
    print("\n== pairwise judge (coct vs direct) ==")
    run(["judge", str(coct_records), str(direct_records), *judge_args,
         "--out", str(workdir / "pairwise.json")])

    print("\n== transition analysis (coct) ==")
    run(["analyze", str(coct_records), "--concepts", "esconv-strategy",
         "--out", str(workdir / "analysis")])
    print(f"\nartifacts in {workdir}/")


if __name__ == "__main__":
    main()
