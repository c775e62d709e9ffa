#!/usr/bin/env python3
"""Build the shipped toy benchmark under fixtures/toy/: two SQLite databases,
12 questions with gold SQL, a static prediction file containing four
deliberately bad queries, the scripted gateway transcript, the run config,
and the golden memory log that a two-round run must reproduce byte-for-byte.

Rerun after changing prompt rendering, record serialization, or the scenario.
"""

from __future__ import annotations

import shutil
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "tests"))

from conftest import build_benchmark_dbs  # noqa: E402
from scenario import record_toy_transcript, write_toy_inputs  # noqa: E402

from nlrewrite import cli  # noqa: E402


def main() -> int:
    toy = REPO / "fixtures" / "toy"
    if toy.exists():
        shutil.rmtree(toy)
    build_benchmark_dbs(toy / "databases")
    write_toy_inputs(toy)
    record_toy_transcript(toy)

    golden = toy / "golden_run.log"
    code = cli.main(["run", "--config", str(toy / "toy.cfg"),
                     "--log", str(golden), "--max-rounds", "2", "--force"])
    if code != 0:
        print("golden run failed", file=sys.stderr)
        return code

    # the golden must replay: run again and compare
    check = toy / "replay_check.log"
    code = cli.main(["run", "--config", str(toy / "toy.cfg"),
                     "--log", str(check), "--max-rounds", "2", "--force"])
    if code != 0:
        return code
    if check.read_bytes() != golden.read_bytes():
        print("replay diverged from the golden log", file=sys.stderr)
        return 2
    check.unlink()
    print(f"toy benchmark written to {toy}")
    print(f"golden log: {golden} ({len(golden.read_bytes())} bytes)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
