"""Per-criterion PASS/FAIL bookkeeping for the acceptance suite."""
RESULTS = {}
TITLES = {}


def record(number, title, ok, detail):
    TITLES[number] = title
    RESULTS.setdefault(number, []).append((bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'} criterion {number} ({title}): {detail}")
    return bool(ok)


def lines():
    for n in sorted(RESULTS):
        parts = RESULTS[n]
        ok = all(p[0] for p in parts)
        yield f"{'PASS' if ok else 'FAIL'}  {n:>2}  {TITLES[n]}: " + "; ".join(d for _, d in parts)
