import numpy as np
import pytest
from hypothesis import given, strategies as st

from fedbatch.core import (
    BatchAllocation,
    InvalidConfig,
    McEstimate,
    SystemConfig,
    as_allocation,
    derive_seed,
    make_rng,
    validate_config,
)


class TestValidateConfig:
    def test_accepts_valid(self):
        validate_config(SystemConfig(2, 500, 5, 0.2))

    def test_rejects_certain_collision(self):
        with pytest.raises(InvalidConfig, match="p_tr"):
            validate_config(SystemConfig(2, 500, 5, 1.0))

    def test_allows_p_one_for_single_device(self):
        validate_config(SystemConfig(1, 500, 5, 1.0))

    def test_rejects_zero_devices(self):
        with pytest.raises(InvalidConfig, match="n_devices"):
            validate_config(SystemConfig(0, 1, 1, 0.5))

    @pytest.mark.parametrize(
        "cfg,field",
        [
            (SystemConfig(2, 0, 5, 0.2), "total_batch"),
            (SystemConfig(2, 500, 0, 0.2), "compute_rate"),
            (SystemConfig(2, 500, 5, 0.0), "p_tr"),
            (SystemConfig(2, 500, 5, -0.1), "p_tr"),
        ],
    )
    def test_names_offending_field(self, cfg, field):
        with pytest.raises(InvalidConfig, match=field):
            validate_config(cfg)


class TestMakeRng:
    def test_equal_seeds_equal_streams(self):
        a = make_rng(0).random(100)
        b = make_rng(0).random(100)
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        assert not np.array_equal(make_rng(0).random(100), make_rng(1).random(100))

    def test_trial_substream_reproducible_in_isolation(self):
        whole = [make_rng(7, trial).random(5) for trial in range(10)]
        lone = make_rng(7, 3).random(5)
        assert np.array_equal(whole[3], lone)

    def test_substreams_differ_from_parent(self):
        assert not np.array_equal(make_rng(7).random(5), make_rng(7, 0).random(5))

    def test_derive_seed_deterministic(self):
        assert derive_seed(3, 10) == derive_seed(3, 10)
        assert derive_seed(3, 10) != derive_seed(3, 11)


class TestBatchAllocation:
    def test_valid(self):
        alloc = BatchAllocation((2, 4, 6))
        assert alloc.sizes == (2, 4, 6)
        assert alloc.total == 12
        assert alloc.n_devices == 3

    def test_rejects_descending(self):
        with pytest.raises(InvalidConfig, match="non-decreasing"):
            BatchAllocation((4, 2, 6))

    def test_rejects_negative(self):
        with pytest.raises(InvalidConfig, match="non-negative"):
            BatchAllocation((-1, 2))

    def test_rejects_empty(self):
        with pytest.raises(InvalidConfig):
            BatchAllocation(())

    def test_rejects_fractional(self):
        with pytest.raises(InvalidConfig, match="integers"):
            BatchAllocation((1.5, 2))

    def test_from_sizes_sorts(self):
        assert BatchAllocation.from_sizes([6, 2, 4]).sizes == (2, 4, 6)

    def test_for_config_checks_sum_and_length(self):
        cfg = SystemConfig(3, 12, 2, 0.2)
        assert BatchAllocation.for_config(cfg, (2, 4, 6)).sizes == (2, 4, 6)
        with pytest.raises(InvalidConfig, match="sum"):
            BatchAllocation.for_config(cfg, (2, 4, 7))
        with pytest.raises(InvalidConfig, match="entries"):
            BatchAllocation.for_config(cfg, (6, 6))

    def test_as_allocation_coerces(self):
        assert as_allocation([1, 2]).sizes == (1, 2)
        alloc = BatchAllocation((1, 2))
        assert as_allocation(alloc) is alloc

    @given(st.lists(st.integers(0, 10_000), min_size=1, max_size=12))
    def test_any_multiset_canonicalizes(self, sizes):
        alloc = BatchAllocation.from_sizes(sizes)
        assert list(alloc.sizes) == sorted(sizes)
        assert alloc.total == sum(sizes)
        assert all(a <= b for a, b in zip(alloc.sizes, alloc.sizes[1:]))


class TestMcEstimate:
    def test_exact_value_has_zero_error(self):
        est = McEstimate(1.0, 0.0, 0, 0)
        assert est.std_err == 0.0

    def test_rejects_negative_error(self):
        with pytest.raises(InvalidConfig):
            McEstimate(1.0, -0.1, 10, 0)

    def test_rejects_exact_with_error(self):
        with pytest.raises(InvalidConfig):
            McEstimate(1.0, 0.5, 0, 0)
