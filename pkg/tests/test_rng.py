import numpy as np
import pytest
from scipy import stats

from srampuf import rng


def test_uniforms_are_a_pure_function_of_the_key():
    a = rng.uniforms(5, rng.STREAM_SYNTHETIC, np.arange(10), 7)
    b = rng.uniforms(5, rng.STREAM_SYNTHETIC, np.arange(10)[::-1], 7)[::-1]
    assert np.array_equal(a, b)
    assert np.all((a >= 0) & (a < 1))


def test_streams_and_seeds_decorrelate():
    a = rng.uniforms(5, 1, np.arange(1000), 1).ravel()
    b = rng.uniforms(5, 2, np.arange(1000), 1).ravel()
    c = rng.uniforms(6, 1, np.arange(1000), 1).ravel()
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.1
    assert abs(np.corrcoef(a, c)[0, 1]) < 0.1


def test_normals_pass_a_normality_check():
    z = rng.normals(3, rng.STREAM_SYNTHETIC, np.arange(4000), 5).ravel()
    assert abs(z.mean()) < 0.03
    assert abs(z.std() - 1) < 0.03
    assert stats.kstest(z, "norm").pvalue > 1e-3


def test_normal_pairs_match_block_helper():
    z = rng.normals(9, rng.STREAM_MISMATCH, np.array([4]), 4)[0]
    first = rng.normal_pair(9, rng.STREAM_MISMATCH, 4, 0)
    second = rng.normal_pair(9, rng.STREAM_MISMATCH, 4, 1)
    assert np.allclose(z, [*first, *second])


@pytest.mark.parametrize("bad", [-1, 2**63])
def test_seed_range_is_checked(bad):
    with pytest.raises(ValueError):
        rng.uniforms(bad, 1, np.arange(2), 1)
