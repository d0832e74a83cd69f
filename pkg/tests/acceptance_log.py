"""Collects one verdict line per acceptance criterion for the terminal summary."""

LINES = {}


def record(number, title, passed, detail):
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    LINES[number] = line
    print(line)
    return passed
