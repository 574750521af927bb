import numpy as np
import pytest

from serkit.core import GoldTrack, PredictionTrack
from serkit.errors import InvalidArgumentError
from serkit.fusion import (
    GRID_WEIGHTS,
    FusionWeights,
    fuse,
    grid_search_weights,
    write_fusion_report,
)
from serkit.metrics import ccc


def _track(values, conv="c0", source="a"):
    return PredictionTrack(conv, np.asarray(values, dtype=np.float64), source)


def test_fuse_endpoint_returns_a():
    a = _track([0.1, 0.4])
    b = _track([0.9, -0.2], source="b")
    assert np.array_equal(fuse(a, b, 1.0).values, a.values)


def test_fuse_idempotent_on_equal_tracks():
    a = _track([0.3, 0.5])
    b = _track([0.3, 0.5], source="b")
    for w in (0.1, 0.37, 0.9):
        assert np.allclose(fuse(a, b, w).values, a.values)


def test_fuse_arithmetic():
    fused = fuse(_track([0.1]), _track([0.2], source="b"), 0.31)
    assert fused.values[0] == pytest.approx(0.169, abs=1e-12)


def test_fuse_symmetry():
    rng = np.random.default_rng(2)
    a = _track(rng.normal(size=8))
    b = _track(rng.normal(size=8), source="b")
    for w in (0.25, 0.5, 0.77):
        left = fuse(a, b, w).values
        right = fuse(b, a, 1.0 - w).values
        assert np.max(np.abs(left - right)) < 1e-15


def test_fuse_linearity():
    rng = np.random.default_rng(4)
    a = _track(rng.normal(size=12))
    b = _track(rng.normal(size=12), source="b")
    for w in (0.1, 0.4, 0.9):
        total = fuse(a, b, w).values + fuse(b, a, w).values
        assert np.max(np.abs(total - (a.values + b.values))) < 1e-15


def test_fuse_validates_inputs():
    with pytest.raises(InvalidArgumentError):
        fuse(_track([1.0]), _track([1.0], conv="other", source="b"), 0.5)
    with pytest.raises(InvalidArgumentError):
        fuse(_track([1.0]), _track([1.0, 2.0], source="b"), 0.5)
    with pytest.raises(InvalidArgumentError):
        fuse(_track([1.0]), _track([1.0], source="b"), 1.5)


def test_fusion_weights_must_sum_to_one():
    with pytest.raises(InvalidArgumentError):
        FusionWeights(0.4, 0.5, 0.0)


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------


def test_grid_has_81_points():
    assert len(GRID_WEIGHTS) == 81
    assert GRID_WEIGHTS[0] == 0.10
    assert GRID_WEIGHTS[-1] == 0.90


def _degenerate_case():
    values = np.linspace(-1, 1, 20)
    preds_a = {"c0": _track(values)}
    preds_b = {"c0": _track(values, source="b")}
    golds = {"c0": GoldTrack("satisfaction", values + 0.05)}
    return preds_a, preds_b, golds


def test_grid_ties_break_to_smallest_weight():
    preds_a, preds_b, golds = _degenerate_case()
    selected, grid = grid_search_weights(preds_a, preds_b, golds)
    assert selected.w_a == 0.10
    assert len(grid) == 81


def _constructed_optimum(n=5000, w_star=0.40, seed=0):
    """Two noisy views whose empirically exact optimum sits at w_star.

    The noises are Gram-Schmidt orthogonalized against the reference and
    each other and then scaled so the in-sample noise variances satisfy
    var(n1)/var(n2) = (1 - w*) / w*, which puts the CCC maximizer exactly
    at w* for the empirical moments.
    """
    rng = np.random.default_rng(seed)
    gold = np.cumsum(rng.normal(0, 0.2, n))
    gold = (gold - gold.mean()) / gold.std()

    def center(v):
        return v - v.mean()

    def against(v, *others):
        v = center(v)
        for o in others:
            v = v - (v @ o) / (o @ o) * o
        return v

    n1 = against(rng.normal(size=n), gold)
    n2 = against(rng.normal(size=n), gold, n1)
    s = 0.35
    var1 = (1.0 - w_star) * s * s
    var2 = w_star * s * s
    n1 *= np.sqrt(var1) / n1.std()
    n2 *= np.sqrt(var2) / n2.std()
    preds_a = {"c0": _track(gold + n1)}
    preds_b = {"c0": _track(gold + n2, source="b")}
    golds = {"c0": GoldTrack("satisfaction", gold)}
    return preds_a, preds_b, golds


def test_grid_recovers_constructed_optimum():
    preds_a, preds_b, golds = _constructed_optimum()
    selected, _ = grid_search_weights(preds_a, preds_b, golds)
    # Brute-force scan at step 0.001 establishes the true optimum.
    fine = np.arange(100, 901) / 1000.0
    a = preds_a["c0"].values
    b = preds_b["c0"].values
    g = golds["c0"].values
    scores = [ccc(w * a + (1 - w) * b, g) for w in fine]
    w_fine = fine[int(np.argmax(scores))]
    assert abs(w_fine - 0.40) <= 0.001
    assert abs(selected.w_a - w_fine) <= 0.01


def test_grid_result_is_exhaustive():
    preds_a, preds_b, golds = _constructed_optimum(seed=3)
    selected, grid = grid_search_weights(preds_a, preds_b, golds)
    for w, score in grid:
        assert selected.dev_ccc >= score
    # Re-scan independently of the returned grid.
    a = preds_a["c0"].values
    b = preds_b["c0"].values
    g = golds["c0"].values
    for w in GRID_WEIGHTS:
        assert selected.dev_ccc >= ccc(w * a + (1 - w) * b, g) - 1e-15


def test_grid_refinement_never_hurts():
    preds_a, preds_b, golds = _constructed_optimum(seed=5)
    coarse_weights = tuple(k / 100.0 for k in range(10, 91, 5))
    coarse, _ = grid_search_weights(preds_a, preds_b, golds, weights=coarse_weights)
    fine, _ = grid_search_weights(preds_a, preds_b, golds)
    assert fine.dev_ccc >= coarse.dev_ccc


def test_grid_invariant_to_conversation_order():
    rng = np.random.default_rng(9)
    golds, preds_a, preds_b = {}, {}, {}
    for cid in ("c0", "c1", "c2"):
        g = np.cumsum(rng.normal(0, 0.3, 40))
        golds[cid] = GoldTrack("satisfaction", g)
        preds_a[cid] = _track(g + rng.normal(0, 0.3, 40), conv=cid)
        preds_b[cid] = _track(g + rng.normal(0, 0.2, 40), conv=cid, source="b")
    sel1, _ = grid_search_weights(preds_a, preds_b, golds)
    reordered = dict(reversed(list(golds.items())))
    sel2, _ = grid_search_weights(preds_a, preds_b, reordered)
    assert sel1 == sel2


def test_grid_rejects_empty_dev():
    with pytest.raises(InvalidArgumentError):
        grid_search_weights({}, {}, {})


def test_grid_rejects_missing_coverage():
    preds_a, preds_b, golds = _degenerate_case()
    with pytest.raises(InvalidArgumentError, match="coverage"):
        grid_search_weights({}, preds_b, golds)


def test_fusion_report_rows(tmp_path):
    preds_a, preds_b, golds = _constructed_optimum(seed=7, n=500)
    selected, grid = grid_search_weights(preds_a, preds_b, golds)
    path = tmp_path / "report.csv"
    write_fusion_report(selected, grid, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "w_a,w_b,dev_ccc"
    assert len(lines) == 1 + 81 + 1  # header, grid, summary
    assert lines[-1].startswith(f"{selected.w_a:.2f},{selected.w_b:.2f},")
