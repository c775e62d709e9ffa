"""Query-rewriting middleware for NL2SQL systems.

Detects flawed natural-language database questions by checking the SQL a
black-box translator produced for them, diagnoses the flaws against the
database schema using a weighted experience memory, rewrites the question,
and loops over the surviving bad samples. Ships with an offline scripted
gateway for deterministic replay and an evaluation harness (EX, EM, VES, CP).
"""

__version__ = "0.1.0"
