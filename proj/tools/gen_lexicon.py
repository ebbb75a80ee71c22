#!/usr/bin/env python3
"""Regenerate data/lexicon.tsv from pypinyin over the GB2312 character set.

Each character gets the final of its most common reading, tone-stripped and
rewritten into the spelling used by the rhyme table (van -> uan, uei -> ui, ...).
"""
import sys

from pypinyin import Style, pinyin

ALIASES = {"van": "uan", "vn": "un", "uei": "ui", "iou": "iu", "uen": "un", "ueng": "eng"}


def gb2312_chars():
    for hi in range(0xB0, 0xF8):
        for lo in range(0xA1, 0xFF):
            try:
                yield bytes([hi, lo]).decode("gb2312")
            except UnicodeDecodeError:
                continue


def main(out_path):
    with open(out_path, "w", encoding="utf-8", newline="\n") as out:
        out.write("# char<TAB>final, generated by tools/gen_lexicon.py (GB2312 set, pypinyin most-common reading)\n")
        for ch in gb2312_chars():
            final = pinyin(ch, style=Style.FINALS, strict=True, heteronym=False)[0][0]
            final = ALIASES.get(final, final)
            if not final:
                continue
            out.write(f"{ch}\t{final}\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data/lexicon.tsv")
