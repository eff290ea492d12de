"""Regenerate the fixture flight database (src/multislu/data/flights.txt).

Deterministic: five flights per ordered city pair, cycling airlines, trip
types, and days, with fares from a fixed arithmetic scheme.  Guarantees the
boston -> denver monday/sunday round trip the packaged demo scenario queries.
Run from the repo root; the output file is committed.
"""

from __future__ import annotations

from pathlib import Path

CITIES = ["boston", "denver", "atlanta", "dallas", "chicago", "seattle", "miami"]
AIRLINES = ["delta", "united", "american"]
DAYS = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]
TYPES = ["round trip", "one way"]
PER_PAIR = 5


def build_records() -> list[tuple[str, ...]]:
    records = []
    pairs = [(a, b) for a in CITIES for b in CITIES if a != b]
    for p, (src, dst) in enumerate(pairs):
        for j in range(PER_PAIR):
            airline = AIRLINES[(p + j) % len(AIRLINES)]
            ftype = TYPES[(p + 2 * j) % len(TYPES)]
            depart = DAYS[(3 * p + 2 * j) % len(DAYS)]
            ret = DAYS[(3 * p + 2 * j + 4) % len(DAYS)] if ftype == "round trip" else "-"
            fare = str(89 + (37 * p + 53 * j) % 311)
            records.append((airline, src, dst, depart, ret, ftype, fare))
    demo = ("united", "boston", "denver", "monday", "sunday", "round trip", "240")
    if not any(r[1:6] == demo[1:6] for r in records):
        records.append(demo)
    return records


def main() -> None:
    out = Path(__file__).resolve().parents[1] / "src" / "multislu" / "data" / "flights.txt"
    records = build_records()
    lines = ["# airline\tfrom\tto\tdepart\treturn\ttype\tfare"]
    lines += ["\t".join(r) for r in records]
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(records)} flights to {out}")


if __name__ == "__main__":
    main()
