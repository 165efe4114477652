"""Collects a PASS/FAIL line per acceptance check for the terminal summary."""
from __future__ import annotations

import contextlib

RESULTS: dict[tuple[int, str], bool] = {}


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record PASS if the block finishes, FAIL (and re-raise) otherwise.

    The block may append measured values to the yielded list for the report.
    """
    notes: list[str] = []
    try:
        yield notes
    except BaseException as exc:
        notes.append(f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        RESULTS[number, f"{title}; " + "; ".join(notes)] = False
        raise
    RESULTS[number, f"{title}; " + "; ".join(notes)] = True


def lines() -> list[str]:
    return [f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}"
            for (n, text), ok in sorted(RESULTS.items(), key=lambda kv: kv[0][0])]
