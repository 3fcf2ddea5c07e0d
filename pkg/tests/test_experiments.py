import csv
import io
import math

import numpy as np
import pytest

from smve.errors import InvalidInput
from smve.experiments import CSV_HEADER, ExperimentConfig, default_grid, fourier_matrix, run_ssnm


def rows_of(text):
    body = "\n".join(l for l in text.splitlines() if not l.startswith("#"))
    return list(csv.DictReader(io.StringIO(body)))


def test_fourier_matrix_shape_and_columns():
    H = fourier_matrix()
    assert H.shape == (128, 16)
    assert np.allclose(np.linalg.norm(H, axis=0), 1.0)
    m = np.arange(128)
    raw = np.cos(2 * np.pi * (0.2 + 2 * 3.9e-3) * m)
    assert np.allclose(H[:, 2], raw / np.linalg.norm(raw))


def test_default_grid():
    g = default_grid(-20, 20)
    assert len(g) == 25 and g[0] == -20 and g[-1] == 20


def test_config_validation():
    with pytest.raises(InvalidInput):
        ExperimentConfig("ssnm", snr_db=[])
    with pytest.raises(InvalidInput):
        ExperimentConfig("ssnm", snr_db=[0.0], thresholds=[-1.0])


def test_ssnm_rows_are_consistent():
    text = run_ssnm(ExperimentConfig("ssnm", snr_db=[0.0, 10.0], trials=4096, seed=2))
    assert text.splitlines()[0] == "# experiment: ssnm"
    assert CSV_HEADER in text.splitlines()
    rows = rows_of(text)
    get = lambda snr, q, lab: float(next(r["value"] for r in rows if float(r["snr_db"]) == snr and r["quantity"] == q and r["label"] == lab))
    for snr in (0.0, 10.0):
        # T = 0 is least squares
        assert get(snr, "variance", "HT(T=0)") == pytest.approx(50.0)
        assert get(snr, "oracle_crb", "oracle") == 5.0
        for T in ("0", "2", "3", "4"):
            lab = f"HT(T={T})"
            var = get(snr, "variance", lab)
            for b in ("B2", "B3"):
                assert get(snr, "bound", f"{b}:{lab}") <= var + 1e-9
            assert get(snr, "barankin", lab) <= var + 1e-9
    assert get(10.0, "barankin", "HT(T=0)") == pytest.approx(5.0 + 45 * (1 - (1 - math.exp(-10)) ** 5), rel=1e-12)
    ml_rows = [r for r in rows if r["label"] == "ML"]
    assert all(r["trials"] == "4096" and r["se"] for r in ml_rows)
