import numpy as np
import pytest

from app.core.errors import OutOfRangeError
from app.schemas.mixer import Variant
from app.services.benchmark import FlopTally, bench_mixer, count_recurrence_flops, run_bench, state_bytes
from app.services.mixers import flops_per_step


def test_flop_ratio_matches_closed_form():
    report = run_bench(16, 16, 0.5, Variant.DELTA, tokens=16, batch=2, warmup=3, repeats=1)
    assert report.baseline.key_dim == 16
    assert report.compressed.key_dim == 8
    assert report.flop_ratio == report.expected_flop_ratio
    assert report.flop_ratio == pytest.approx((6 * 128 + 48 + 32) / (6 * 256 + 96 + 32))
    assert report.speedup > 0.0


def test_flop_counts_are_reproducible():
    first = bench_mixer(8, 4, "gated", tokens=8, batch=1, repeats=1)
    second = bench_mixer(8, 4, "gated", tokens=8, batch=1, repeats=1)
    assert first.flops_per_token == second.flops_per_token == flops_per_step(8, 4, "gated")


def test_heads_scale_flops():
    row = bench_mixer(4, 4, Variant.LINEAR, tokens=4, batch=1, num_heads=3, repeats=1)
    assert row.flops_per_token == 3 * flops_per_step(4, 4, Variant.LINEAR)


def test_warmup_below_minimum_is_rejected():
    with pytest.raises(OutOfRangeError):
        bench_mixer(4, 4, Variant.DELTA, warmup=2)


@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("key_dim,value_dim", [(1, 1), (4, 7), (16, 16), (8, 3)])
def test_counted_recurrence_matches_flop_model(variant, key_dim, value_dim):
    assert count_recurrence_flops(key_dim, value_dim, variant) == flops_per_step(key_dim, value_dim, variant)


def test_flop_tally_primitives():
    tally = FlopTally()
    tally.matvec(np.ones((3, 4)), np.ones(4))
    tally.outer(np.ones(3), np.ones(4))
    assert tally.count == 2 * 12 + 12


def test_state_memory_shrinks_with_key_dim():
    assert state_bytes(16, 16, num_heads=2) == 2 * 16 * 16 * 8
    report = run_bench(16, 16, 0.5, Variant.GATED, tokens=8, batch=1, warmup=3, repeats=1)
    assert report.baseline.state_bytes == 16 * 16 * 8
    assert report.compressed.state_bytes == 8 * 16 * 8
    assert report.memory_ratio == pytest.approx(0.5)
