#!/usr/bin/env python3
"""Convert an ESConv-style release file into the canonical corpus JSONL.

Expected input: a JSON array of sessions, each shaped like
    {"emotion_type": str?, "problem_type": str?, "situation": str?,
     "dialog": [{"speaker": "seeker"|"supporter", "content": str,
                 "annotation": {"strategy": str?, "feeling": str?}?}]}

Usage:
    python scripts/convert_esconv.py ESConv.json corpus.jsonl
"""

import argparse
import json
import sys
from pathlib import Path


def convert_session(index, session):
    turns = []
    for raw in session.get("dialog", []):
        content = (raw.get("content") or "").strip()
        if not content:
            continue
        annotation = raw.get("annotation") or {}
        turns.append({
            "speaker": raw.get("speaker", "seeker"),
            "text": content,
            "emotion": annotation.get("feeling") or session.get("emotion_type"),
            "strategy": annotation.get("strategy"),
        })
    if len(turns) < 2:
        return None
    for turn in turns:
        for key in ("emotion", "strategy"):
            if turn[key] is None:
                del turn[key]
    return {
        "id": f"esconv-{index}",
        "topic": session.get("problem_type") or session.get("situation"),
        "turns": turns,
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("source", help="ESConv release JSON file")
    parser.add_argument("output", help="canonical corpus JSONL to write")
    args = parser.parse_args()

    sessions = json.loads(Path(args.source).read_text(encoding="utf-8"))
    if not isinstance(sessions, list):
        print("error: expected a JSON array of sessions", file=sys.stderr)
        return 1

    converted = 0
    with open(args.output, "w", encoding="utf-8") as out:
        for i, session in enumerate(sessions):
            record = convert_session(i, session)
            if record is None:
                continue
            record = {k: v for k, v in record.items() if v is not None}
            out.write(json.dumps(record, ensure_ascii=False) + "\n")
            converted += 1
    print(f"wrote {converted} dialogues to {args.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
