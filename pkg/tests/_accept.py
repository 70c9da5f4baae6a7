"""Collects one verdict per acceptance criterion for the terminal summary."""
RESULTS: dict[int, str] = {}


def verdict(number: int, title: str, ok: bool, detail: str) -> bool:
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS[number] = line
    print(line)
    return ok
