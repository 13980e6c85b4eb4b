"""Smoke test for the pyzidm extension module.

Build and install first, e.g.
    pip install --no-build-isolation -e crates/python
then run `python python/smoke_test.py`.
"""

import json
import math

import pyzidm


def main():
    assert "tiny" in pyzidm.presets()

    data = pyzidm.simulate("tiny", seed=3)
    n, j = len(data.counts), len(data.counts[0])
    assert (n, j) == (12, 4)
    assert len(data.covariates[0]) == 2
    assert all(sum(row) > 0 for row in data.counts)

    fit = pyzidm.fit(data.counts, data.covariates, iterations=1000, seed=1, chains=2)
    assert fit.samples == 100, fit.samples
    assert len(fit.mppi_gamma) == j and len(fit.mppi_gamma[0]) == 3
    assert all(fit.selected_gamma[k][0] for k in range(j)), "intercepts are always selected"
    assert len(fit.zero_inflation) == j
    assert math.isclose(sum(fit.composition), 1.0, rel_tol=1e-9)
    for row in fit.abundance:
        assert math.isclose(sum(row), 1.0, rel_tol=1e-9)
    assert fit.acceptance["expand"] is not None
    summary = json.loads(fit.summary_json())
    assert summary["samples"] == 100

    again = pyzidm.fit(data.counts, data.covariates, iterations=1000, seed=1, chains=2)
    assert again.mppi_gamma == fit.mppi_gamma, "same seed, same draws"

    dm = pyzidm.fit(data.counts, model="dm", iterations=400)
    assert dm.zero_inflation is None and dm.mppi_theta is None

    selected, kappa = pyzidm.select_bfdr([[0.99, 0.98, 0.60]], 0.05)
    assert selected == [[True, True, False]] and kappa == 0.98

    m = pyzidm.selection_metrics([True] * 3 + [False, True] + [False] * 5, [True] * 4 + [False] * 6)
    assert m["mcc"] == 14 / 24 and m["f1"] == 0.75
    assert pyzidm.metric_simp([[0.5, 0.5]], [[1.0, 0.0]]) == 0.25

    try:
        pyzidm.fit([[1, 2], [3]])
    except ValueError:
        pass
    else:
        raise AssertionError("ragged counts must raise ValueError")

    print(f"pyzidm smoke test passed ({fit!r}, {fit.seconds:.2f} s)")


if __name__ == "__main__":
    main()
