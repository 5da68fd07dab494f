#!/usr/bin/env python3
"""Convert a DailyDialog-style release (parallel text files) into the
canonical corpus JSONL.

Expected inputs: dialogues_text.txt with utterances separated by __eou__,
plus optional parallel dialogues_emotion.txt / dialogues_act.txt carrying
space-separated integer codes per line.

Usage:
    python scripts/convert_dailydialog.py dialogues_text.txt corpus.jsonl \
        --emotions dialogues_emotion.txt --acts dialogues_act.txt
"""

import argparse
import json
import sys
from pathlib import Path

EMOTIONS = {0: "no emotion", 1: "anger", 2: "disgust", 3: "fear",
            4: "happiness", 5: "sadness", 6: "surprise"}
ACTS = {1: "inform", 2: "question", 3: "directive", 4: "commissive"}


def read_code_lines(path):
    if path is None:
        return None
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [[int(c) for c in line.split()] for line in lines]


def main():
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("text", help="dialogues_text.txt (__eou__-separated)")
    parser.add_argument("output", help="canonical corpus JSONL to write")
    parser.add_argument("--emotions", help="dialogues_emotion.txt")
    parser.add_argument("--acts", help="dialogues_act.txt")
    args = parser.parse_args()

    text_lines = Path(args.text).read_text(encoding="utf-8").splitlines()
    emotion_lines = read_code_lines(args.emotions)
    act_lines = read_code_lines(args.acts)

    converted = 0
    with open(args.output, "w", encoding="utf-8") as out:
        for i, line in enumerate(text_lines):
            utterances = [u.strip() for u in line.split("__eou__") if u.strip()]
            if len(utterances) < 2:
                continue
            turns = []
            for j, text in enumerate(utterances):
                turn = {
                    # DailyDialog alternates two speakers; map the opener to
                    # the seeker side so extraction targets the replies.
                    "speaker": "seeker" if j % 2 == 0 else "supporter",
                    "text": text,
                }
                if emotion_lines and j < len(emotion_lines[i]):
                    turn["emotion"] = EMOTIONS.get(emotion_lines[i][j])
                if act_lines and j < len(act_lines[i]):
                    turn["strategy"] = ACTS.get(act_lines[i][j])
                turns.append({k: v for k, v in turn.items() if v is not None})
            out.write(json.dumps({"id": f"dailydialog-{i}", "turns": turns},
                                 ensure_ascii=False) + "\n")
            converted += 1
    print(f"wrote {converted} dialogues to {args.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
