import numpy as np
import pytest

from synthts import (
    DataError,
    FilterState,
    RejectReason,
    StopDecision,
    diversity_score,
    filter_batch,
    norm_bounds,
    should_stop,
)
from synthts.embedding import EmbeddingTable
from synthts.textcodec import ParsedRow


def row(values):
    values = np.asarray(values, dtype=np.float64)
    return ParsedRow(values, source_text="")


def base_state(n=40, k=2, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    table = EmbeddingTable(rng.normal(scale=scale, size=(n, k)), (("c", 0, k),))
    return FilterState.from_table(table), table


class TestNormBounds:
    def test_worked_example(self):
        lo, hi = norm_bounds([1, 2, 3, 4, 5])
        assert lo == pytest.approx(-4.0)
        assert hi == pytest.approx(10.0)

    def test_matches_quantile_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.gamma(2.0, size=200)
        lo, hi = norm_bounds(x)
        q1, q3 = np.quantile(x, [0.25, 0.75])
        assert lo == pytest.approx(q1 - 3 * (q3 - q1))
        assert hi == pytest.approx(q3 + 3 * (q3 - q1))

    def test_too_few(self):
        with pytest.raises(DataError):
            norm_bounds([1, 2, 3])


class TestFilterBatch:
    def test_missing_rejected(self):
        state, _ = base_state()
        d = filter_batch([row([np.nan, 0.5])], state)
        assert d.rejected == ((0, RejectReason.MISSING),)
        assert state.nan_count == 1

    def test_duplicate_of_original_rejected(self):
        state, table = base_state()
        d = filter_batch([row(table.values[3])], state)
        assert d.rejected[0][1] == RejectReason.DUPLICATE

    def test_duplicate_detection_uses_fourth_decimal(self):
        state, table = base_state()
        nudged = table.values[3] + 4e-5  # rounds to the same 4-decimal key
        d = filter_batch([row(nudged)], state)
        assert d.rejected[0][1] == RejectReason.DUPLICATE
        far = table.values[3] + 6e-4
        d = filter_batch([row(far)], state)
        assert d.accepted == (0,)

    def test_within_batch_duplicate_rejected(self):
        state, _ = base_state()
        d = filter_batch([row([0.5, 0.5]), row([0.5, 0.5])], state)
        assert d.accepted == (0,)
        assert d.rejected == ((1, RejectReason.DUPLICATE),)

    def test_norm_outlier_rejected(self):
        state, _ = base_state()
        d = filter_batch([row([50.0, 50.0])], state)
        assert d.rejected[0][1] == RejectReason.NORM
        assert state.norm_reject_count == 1

    def test_bounds_fixed_within_batch(self):
        # bounds come from the pre-batch state, so an accepted row in the
        # same batch cannot widen them for later rows
        state, _ = base_state()
        bounds_before = norm_bounds(state.channel_norms[0])
        big = np.sqrt(bounds_before[1] * 1.5 / 2.0)
        d = filter_batch([row([0.1, 0.2]), row([big, big])], state)
        assert d.counts["norm"] == 1

    def test_accepted_commits_to_state(self):
        state, _ = base_state()
        filter_batch([row([0.3, 0.4])], state)
        assert state.accepted_count == 1
        assert len(state.gen_norms[0]) == 1
        assert state.gen_norms[0][0] == pytest.approx(0.25)  # squared L2
        # the accepted norm now counts toward future bounds
        assert len(state.channel_norms[0]) == 41

    def test_order_missing_before_duplicate_before_norm(self):
        state, table = base_state()
        rows = [
            row([np.nan, np.nan]),
            row(table.values[0]),
            row([99.0, 99.0]),
            row([0.2, -0.1]),
        ]
        d = filter_batch(rows, state)
        assert d.counts == {"missing": 1, "duplicate": 1, "norm": 1, "accepted": 1}

    def test_per_channel_norms(self):
        rng = np.random.default_rng(3)
        table = EmbeddingTable(rng.normal(size=(30, 4)), (("a", 0, 2), ("b", 2, 2)))
        state = FilterState.from_table(table)
        # channel b blows past its band while a stays in range
        d = filter_batch([row([0.1, 0.1, 40.0, 40.0])], state)
        assert d.rejected[0][1] == RejectReason.NORM


class TestDiversity:
    def test_empty_state_is_one(self):
        state, _ = base_state()
        assert np.all(diversity_score(state) == 1.0)

    def test_all_unique(self):
        state, _ = base_state()
        filter_batch([row([0.1, 0.2]), row([0.3, 0.1]), row([0.2, 0.3])], state)
        assert diversity_score(state)[0] == pytest.approx(1.0)

    def test_repeated_norms_reduce_score(self):
        state, _ = base_state()
        # distinct value tuples sharing one squared norm
        filter_batch([row([0.3, 0.4]), row([0.4, 0.3]), row([0.5, 0.0]),
                      row([0.1, 0.2])], state)
        assert state.accepted_count == 4
        assert diversity_score(state)[0] == pytest.approx(2 / 4)


class TestShouldStop:
    def test_continue(self):
        state, _ = base_state()
        filter_batch([row([0.1, 0.2])], state)
        assert should_stop(state, 0.1, 1000, 100) == StopDecision.CONTINUE

    def test_target_reached(self):
        state, _ = base_state()
        filter_batch([row([0.1 * i, 0.05 * i]) for i in range(1, 6)], state)
        assert should_stop(state, 0.1, 1000, 5) == StopDecision.TARGET

    def test_cap(self):
        state, _ = base_state()
        filter_batch([row([0.01 * i, 0.02 * i]) for i in range(1, 8)], state)
        assert should_stop(state, 0.1, 6, None) == StopDecision.CAP

    def test_collapse_beats_target(self):
        state, _ = base_state()
        # 20 distinct tuples all sharing one norm: diversity 1/20 < 0.1
        vals = [[0.6 * np.cos(a), 0.6 * np.sin(a)]
                for a in np.linspace(0.01, 1.0, 20)]
        vals = [np.array(v) for v in vals]
        # force identical squared norms at 4 decimals
        filter_batch([row(np.round(v / np.linalg.norm(v) * 0.6, 8)) for v in vals], state)
        assert state.accepted_count == 20
        assert float(np.max(diversity_score(state))) < 0.1
        assert should_stop(state, 0.1, 1000, 5) == StopDecision.COLLAPSE

    def test_no_stop_before_first_acceptance(self):
        state, _ = base_state()
        assert should_stop(state, 0.1, 10, None) == StopDecision.CONTINUE
