import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from equityhpo.errors import AlignmentError, DomainError, SpecError
from equityhpo.market_data import (SP500_SAMPLE, MonthlySeries, bars_to_series, bundled_path,
                                   parse_ohlcv_csv, ym_add)
from equityhpo.technical import (
    TECHNICAL_COLUMNS, TECHNICAL_SPECS, IndicatorSpec, SignalSeries, compute_signal,
    full_technical_set, ma_signal, momentum, obv, sma, vol_signal,
)


def series(values, start=200001):
    return MonthlySeries(start, np.asarray(values, dtype=float))


@pytest.fixture(scope="module")
def bundled():
    return bars_to_series(parse_ohlcv_csv(bundled_path(SP500_SAMPLE)))


class TestIndicatorSpec:
    def test_labels(self):
        assert IndicatorSpec("MOM", m=12).label == "MOM12M"
        assert IndicatorSpec("MA", s=1, l=9).long_label == "MA(1M-9M)"
        assert IndicatorSpec("VOL", s=3, l=12).label == "VOL312"

    def test_seventeen_columns_in_order(self):
        assert TECHNICAL_COLUMNS == (
            "MOM1M", "MOM3M", "MOM6M", "MOM9M", "MOM12M",
            "MA19", "MA112", "MA29", "MA212", "MA39", "MA312",
            "VOL19", "VOL112", "VOL29", "VOL212", "VOL39", "VOL312",
        )

    @pytest.mark.parametrize("kw", [dict(kind="MA", s=9, l=9), dict(kind="VOL", s=12, l=9),
                                    dict(kind="MOM", m=0), dict(kind="RSI")])
    def test_invalid(self, kw):
        with pytest.raises(SpecError):
            IndicatorSpec(**kw)

    def test_signal_codomain_enforced(self):
        with pytest.raises(DomainError):
            SignalSeries(200001, [1, 0, -1])


class TestMomentum:
    def test_constant_is_all_buy(self):
        sig = momentum(series([5.0] * 20), 12)
        assert set(sig.values.tolist()) == {1}
        assert sig.start == ym_add(200001, 12)

    def test_decreasing_is_all_sell(self):
        assert set(momentum(series(np.arange(30, 0, -1)), 1).values.tolist()) == {-1}

    def test_matches_pairwise_loop(self, rng):
        p = rng.uniform(1, 100, 24)
        assert momentum(series(p), 6).values.tolist() == oracles.momentum(p, 6)

    def test_insufficient_history(self):
        with pytest.raises(DomainError, match="more than 6"):
            momentum(series([1.0] * 6), 6)


class TestSma:
    def test_identity_window(self, rng):
        x = rng.normal(size=10)
        np.testing.assert_array_equal(sma(series(x), 1).values, x)

    def test_hand_example(self):
        out = sma(series([1, 2, 3, 4]), 2)
        assert out.values.tolist() == [1.5, 2.5, 3.5]
        assert out.start == 200002

    def test_constant(self):
        assert set(sma(series([3.25] * 15), 12).values.tolist()) == {3.25}

    def test_window_too_long(self):
        with pytest.raises(DomainError):
            sma(series([1, 2]), 3)


class TestMaSignal:
    def test_constant_is_all_buy(self):
        # 0.1 is inexact in binary, so float means differ in the last bit
        for c in (0.1, 1 / 3, 1234.5678):
            assert set(ma_signal(series([c] * 30), 3, 12).values.tolist()) == {1}

    def test_increasing_is_all_buy(self):
        assert set(ma_signal(series(np.linspace(1, 2, 40)), 2, 9).values.tolist()) == {1}

    def test_matches_double_loop(self, rng):
        p = rng.uniform(1, 100, 30)
        sig = ma_signal(series(p), 2, 9)
        assert sig.values.tolist() == oracles.ma_signal(p, 2, 9)
        assert sig.start == ym_add(200001, 8)

    def test_s_not_below_l(self):
        with pytest.raises(SpecError):
            ma_signal(series(np.ones(20)), 9, 9)


class TestObv:
    def test_hand_example(self):
        out = obv(series([100, 101, 99]), series([0, 50, 70]))
        assert out.values.tolist() == [50.0, -20.0]
        assert out.start == 200002

    @pytest.mark.parametrize("prices", [[1, 2, 2, 3, 5], [7, 7, 7, 7, 7]])
    def test_nondecreasing_is_running_volume(self, prices):
        v = [9, 1, 2, 3, 4]
        assert obv(series(prices), series(v)).values.tolist() == [1, 3, 6, 10]

    def test_misaligned(self):
        with pytest.raises(AlignmentError):
            obv(series([1, 2, 3]), series([1, 2, 3], start=200002))
        with pytest.raises(AlignmentError):
            obv(series([1, 2, 3]), series([1, 2]))


class TestVolSignal:
    def test_rising_prices_constant_volume(self):
        sig = vol_signal(series(np.arange(1, 30)), series([10.0] * 29), 1, 9)
        assert set(sig.values.tolist()) == {1}

    def test_falling_prices_constant_volume(self):
        sig = vol_signal(series(np.arange(30, 1, -1)), series([10.0] * 29), 2, 12)
        assert set(sig.values.tolist()) == {-1}

    def test_matches_sma_of_obv(self, rng):
        p, v = rng.uniform(1, 100, 40), rng.integers(1, 10**6, 40).astype(float)
        sig = vol_signal(series(p), series(v), 3, 12)
        assert sig.values.tolist() == oracles.vol_signal(p, v, 3, 12)
        assert sig.start == ym_add(200001, 12)

    def test_cancelling_obv_near_zero(self):
        # OBV oscillating around zero with huge volumes: means cancel, terms do not
        p = [1.0, 2.0] * 20
        v = [3e9 + 1] * 40
        assert vol_signal(series(p), series(v), 1, 9).values.tolist() == oracles.vol_signal(p, v, 1, 9)


class TestFullSet:
    def test_bundled_shape_and_codomain(self, bundled):
        fm = full_technical_set(*bundled)
        assert fm.columns == TECHNICAL_COLUMNS
        assert fm.values.shape == (816 - 12, 17)
        assert set(np.unique(fm.values).tolist()) == {-1.0, 1.0}

    def test_first_row_twelve_months_after_start(self, bundled):
        fm = full_technical_set(*bundled)
        assert fm.dates[0] == ym_add(bundled[0].start, 12) == 195101
        assert fm.dates[-1] == 201712

    def test_rows_reproducible_per_column(self, bundled):
        prices, volumes = bundled
        fm = full_technical_set(prices, volumes)
        for j, spec in enumerate(TECHNICAL_SPECS):
            sig = compute_signal(spec, prices, volumes)
            pos = {ym_add(sig.start, i): v for i, v in enumerate(sig.values)}
            assert [pos[d] for d in fm.dates] == fm.values[:, j].astype(int).tolist(), spec.label

    def test_too_short(self):
        with pytest.raises(DomainError):
            full_technical_set(series(np.ones(12)), series(np.ones(12)))


class TestProperties:
    def test_oracle_equivalence_random_series(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            p = rng.uniform(1, 100, 40)
            v = rng.integers(0, 10**7, 40).astype(float)
            P, V = series(p), series(v)
            for spec in TECHNICAL_SPECS:
                got = compute_signal(spec, P, V).values.tolist()
                if spec.kind == "MOM":
                    want = oracles.momentum(p, spec.m)
                elif spec.kind == "MA":
                    want = oracles.ma_signal(p, spec.s, spec.l)
                else:
                    want = oracles.vol_signal(p, v, spec.s, spec.l)
                assert got == want, spec.label

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0.5, 500), min_size=14, max_size=30), st.floats(0.01, 100))
    def test_price_scale_invariance(self, prices, c):
        p = np.array(prices)
        v = np.ones(len(p))
        base = full_technical_set(series(p), series(v)).values
        scaled = full_technical_set(series(p * c), series(v)).values
        np.testing.assert_array_equal(base[:, :11], scaled[:, :11])

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(0, 10**6), min_size=14, max_size=30), st.integers(1, 1000))
    def test_volume_scale_invariance(self, volumes, c):
        v = np.array(volumes, dtype=float)
        p = np.random.default_rng(len(v)).uniform(1, 10, len(v))
        base = full_technical_set(series(p), series(v)).values
        scaled = full_technical_set(series(p), series(v * c)).values
        np.testing.assert_array_equal(base[:, 11:], scaled[:, 11:])

    def test_prepending_history_keeps_values(self, rng):
        p, v = rng.uniform(1, 100, 50), rng.integers(1, 1000, 50).astype(float)
        full = full_technical_set(series(p, 200001), series(v, 200001))
        k = 7
        late = full_technical_set(series(p[k:], ym_add(200001, k)), series(v[k:], ym_add(200001, k)))
        # prepending shifts OBV by a constant, which cancels in the MA difference
        common = full.rows_between(late.dates[0], late.dates[-1])
        np.testing.assert_array_equal(common.values, late.values)
