import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

import llpdc.proportion_assign as pa  # noqa: E402

AUDIT = {"assignments": 0}


def _audited(fn):
    def wrapper(P, counts, *args, **kwargs):
        result = fn(P, counts, *args, **kwargs)
        hist = np.bincount(result.labels, minlength=len(counts))
        if not np.array_equal(hist, np.asarray(counts)):
            raise AssertionError(f"label histogram {hist.tolist()} != counts {list(counts)}")
        AUDIT["assignments"] += 1
        return result

    wrapper.__wrapped__ = fn
    wrapper.__doc__ = fn.__doc__
    return wrapper


# Every assignment made anywhere in the suite is checked against its counts.
pa.assign_pseudo_labels = _audited(pa.assign_pseudo_labels)
pa.enumerate_optimal = _audited(pa.enumerate_optimal)


def pytest_terminal_summary(terminalreporter):
    terminalreporter.write_line(
        f"hard-constraint audit: {AUDIT['assignments']} assignments, all histograms exact"
    )
