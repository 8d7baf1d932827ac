"""Correlation metrics against brute-force definitional oracles."""

import numpy as np
import pytest

from jscar.metrics import EvalReport, build_report, emit_patch_maps, fit_logistic, krcc, plcc, srcc


# ---- independent oracles ---------------------------------------------------

def oracle_ranks(x):
    """Rank = 1 + count(smaller) + (count(equal)-1)/2, evaluated pointwise."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(x.size)
    for i, v in enumerate(x):
        smaller = np.sum(x < v)
        equal = np.sum(x == v)
        out[i] = smaller + (equal + 1) / 2.0
    return out


def oracle_pearson(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xm, ym = x - x.mean(), y - y.mean()
    return float((xm * ym).sum() / np.sqrt((xm**2).sum() * (ym**2).sum()))


def oracle_spearman(x, y):
    return oracle_pearson(oracle_ranks(x), oracle_ranks(y))


def oracle_kendall_tau_b(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    concordant = discordant = tx = ty = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx, dy = x[i] - x[j], y[i] - y[j]
            if dx == 0 and dy == 0:
                tx += 1
                ty += 1
            elif dx == 0:
                tx += 1
            elif dy == 0:
                ty += 1
            elif dx * dy > 0:
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) / 2
    return (concordant - discordant) / np.sqrt((n0 - tx) * (n0 - ty))


class TestSrcc:
    def test_monotone_increasing_is_one(self, rng):
        x = rng.normal(size=10)
        assert srcc(x, np.exp(x)) == pytest.approx(1.0)

    def test_reverse_order_is_minus_one(self, rng):
        x = rng.normal(size=10)
        assert srcc(x, -x) == pytest.approx(-1.0)

    def test_known_rank_example(self):
        # tie-free ranks (1,2,3) vs (1,3,2): 1 - 6*2/(3*8)
        assert srcc([1.0, 2.0, 3.0], [1.0, 3.0, 2.0]) == pytest.approx(0.5)

    def test_constant_vector_rejected(self):
        with pytest.raises(ValueError):
            srcc([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_matches_oracle_with_ties(self, rng):
        for _ in range(200):
            n = rng.integers(3, 9)
            x = rng.integers(0, 5, size=n).astype(float)
            y = rng.integers(0, 5, size=n).astype(float)
            if len(set(x)) < 2 or len(set(y)) < 2:
                continue
            assert srcc(x, y) == pytest.approx(oracle_spearman(x, y), abs=1e-12)


class TestPlcc:
    def test_affine_relation_is_one(self, rng):
        x = rng.normal(size=12)
        assert plcc(x, 2 * x + 1) == pytest.approx(1.0)

    def test_negated_is_minus_one(self, rng):
        x = rng.normal(size=12)
        assert plcc(x, -x) == pytest.approx(-1.0)

    def test_small_example_matches_covariance_oracle(self):
        x, y = [1.0, 2.0, 3.0], [1.0, 2.0, 4.0]
        assert plcc(x, y) == pytest.approx(oracle_pearson(x, y), abs=1e-12)

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError, match="variance"):
            plcc([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_affine_invariance(self, rng):
        x = rng.normal(size=20)
        y = rng.normal(size=20)
        assert plcc(3 * x + 5, y) == pytest.approx(plcc(x, y), abs=1e-12)

    def test_logistic_fit_recovers_sigmoid_relation(self, rng):
        x = np.linspace(-3, 3, 40)
        y = 7.0 / (1.0 + np.exp(-2 * x)) + 1.0
        raw = plcc(x, y)
        fitted = plcc(x, y, logistic_fit=True)
        assert fitted > raw
        assert fitted > 0.999


class TestKrcc:
    def test_identical_orderings(self, rng):
        x = rng.normal(size=9)
        assert krcc(x, 3 * x + 2) == pytest.approx(1.0)

    def test_reversed_orderings(self, rng):
        x = rng.normal(size=9)
        assert krcc(x, -x) == pytest.approx(-1.0)

    def test_known_swap_example(self):
        # one discordant pair out of six
        assert krcc([1.0, 2.0, 3.0, 4.0], [1.0, 3.0, 2.0, 4.0]) == pytest.approx(2.0 / 3.0)

    def test_all_tied_rejected(self):
        with pytest.raises(ValueError, match="tied"):
            krcc([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])

    def test_matches_oracle_with_ties(self, rng):
        for _ in range(200):
            n = rng.integers(3, 9)
            x = rng.integers(0, 5, size=n).astype(float)
            y = rng.integers(0, 5, size=n).astype(float)
            if len(set(x)) < 2 or len(set(y)) < 2:
                continue
            assert krcc(x, y) == pytest.approx(oracle_kendall_tau_b(x, y), abs=1e-12)


class TestInvariances:
    def test_rank_metrics_invariant_under_monotone_transform(self, rng):
        x = rng.normal(size=15)
        y = rng.normal(size=15)
        assert srcc(np.exp(x), y) == pytest.approx(srcc(x, y), abs=1e-12)
        assert krcc(x**3, y) == pytest.approx(krcc(x, y), abs=1e-12)

    def test_symmetry(self, rng):
        x = rng.normal(size=11)
        y = rng.normal(size=11)
        assert srcc(x, y) == pytest.approx(srcc(y, x), abs=1e-12)
        assert plcc(x, y) == pytest.approx(plcc(y, x), abs=1e-12)
        assert krcc(x, y) == pytest.approx(krcc(y, x), abs=1e-12)


class TestEvalReport:
    def test_self_evaluation_is_unity(self, rng):
        y = rng.normal(size=10)
        report = build_report(y, y)
        assert report.srcc == pytest.approx(1.0)
        assert report.plcc == pytest.approx(1.0)
        assert report.krcc == pytest.approx(1.0)

    def test_negated_truth(self, rng):
        y = rng.normal(size=10)
        report = build_report(-y, y)
        assert report.srcc == pytest.approx(-1.0)
        assert report.krcc == pytest.approx(-1.0)

    def test_per_type_breakdown(self, rng):
        y = rng.normal(size=12)
        x = y + rng.normal(0, 0.1, size=12)
        types = ["blur"] * 6 + ["noise"] * 6
        report = build_report(x, y, types)
        assert set(report.per_type) == {"blur", "noise"}
        assert report.per_type["blur"]["n"] == 6

    def test_out_of_range_coefficient_rejected(self):
        with pytest.raises(ValueError):
            EvalReport(srcc=1.5, plcc=0.0, krcc=0.0, n=5)

    def test_text_roundtrip_has_all_three(self, tmp_path, rng):
        y = rng.normal(size=8)
        report = build_report(y, y)
        path = tmp_path / "report.txt"
        report.write_text(path)
        text = path.read_text()
        assert "srcc: 1.0" in text and "plcc" in text and "krcc" in text


class _FakeForward:
    def __init__(self, origins, q, w):
        from jscar.tensor import Tensor

        self.origins = origins
        self.qualities = Tensor(np.asarray(q, dtype=np.float32))
        self._w = np.asarray(w, dtype=np.float64)

    def normalized_weights(self):
        return self._w / self._w.sum()


class TestPatchMaps:
    def test_constant_qualities_render_mid_gray(self):
        origins = [(0, 0), (0, 32), (32, 0), (32, 32)]
        out = _FakeForward(origins, [2.0] * 4, [1.0, 2.0, 3.0, 4.0])
        qmap, _ = emit_patch_maps(out, (64, 64))
        assert np.all(qmap == 128.0)

    def test_brightest_tile_is_argmax_weight(self):
        origins = [(0, 0), (0, 32), (32, 0), (32, 32)]
        w = [0.1, 0.5, 0.2, 0.2]
        out = _FakeForward(origins, [1.0, 2.0, 3.0, 4.0], w)
        _, wmap = emit_patch_maps(out, (64, 64))
        assert wmap[0, 32] == 255.0  # tile of the largest weight
        assert wmap[0, 0] == 0.0

    def test_map_dims_truncate_remainder(self):
        origins = [(0, 0), (0, 32)]
        out = _FakeForward(origins, [1.0, 2.0], [1.0, 1.0])
        qmap, wmap = emit_patch_maps(out, (50, 70))
        assert qmap.shape == (32, 64) and wmap.shape == (32, 64)

    def test_non_tiled_output_rejected(self):
        out = _FakeForward([(0, 0), (5, 7)], [1.0, 2.0], [1.0, 1.0])
        with pytest.raises(ValueError, match="tiling"):
            emit_patch_maps(out, (64, 64))


class TestLogisticFit:
    def test_deterministic(self, rng):
        x = rng.normal(size=25)
        y = rng.normal(size=25)
        assert np.array_equal(fit_logistic(x, y), fit_logistic(x, y))
