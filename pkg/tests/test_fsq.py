import numpy as np
import pytest

from src.autodiff import Tensor, backward
from src.fsq import (
    TABLE_LEVELS,
    FsqError,
    FsqSpec,
    active_fraction,
    bound,
    codebook_size,
    codeword_to_index,
    enumerate_codebook,
    index_to_codeword,
    is_valid_latent,
    levels_for_size,
    quantize,
    quantize_ste,
)
from tests.helpers import numeric_grad, rel_err


@pytest.mark.parametrize(
    "levels, size",
    [((5, 3), 15), ((8, 8), 64), ((8, 6, 5), 240), ((8, 8, 8), 512), ((8, 5, 5, 5), 1000)],
)
def test_codebook_enumeration_is_a_bijection(levels, size):
    spec = FsqSpec(levels)
    assert codebook_size(spec) == size
    book = enumerate_codebook(spec)
    assert book.shape == (size, len(levels))
    indices = [codeword_to_index(w, spec) for w in book]
    assert indices == list(range(size))
    assert len({tuple(w) for w in book}) == size
    for i in (0, size // 2, size - 1):
        np.testing.assert_array_equal(index_to_codeword(i, spec), book[i])


def test_all_minimum_codeword_is_index_zero():
    spec = FsqSpec((8, 6, 5))
    assert codeword_to_index([-3.5, -2.5, -2.0], spec) == 0
    np.testing.assert_array_equal(index_to_codeword(239, spec), [3.5, 2.5, 2.0])


def test_out_of_range_index_and_codeword():
    spec = FsqSpec((5, 3))
    with pytest.raises(FsqError):
        index_to_codeword(15, spec)
    with pytest.raises(FsqError):
        index_to_codeword(-1, spec)
    with pytest.raises(FsqError):
        codeword_to_index([3.0, 0.0], spec)
    with pytest.raises(FsqError):
        codeword_to_index([0.5, 0.0], spec)


def test_bound_examples():
    np.testing.assert_allclose(bound(np.zeros(2), FsqSpec((5, 3))), 0.0)
    np.testing.assert_allclose(bound(np.array([1.0]), FsqSpec((5,))), [2 * np.tanh(1.0)], rtol=1e-12)

    spec = FsqSpec((8,))
    top = bound(np.array([30.0]), spec) + spec.offset()
    assert top[0] == pytest.approx(4.0)
    assert bound(np.array([30.0]), FsqSpec((8,), literal_bound=True))[0] == pytest.approx(4.0)


def test_zero_input_is_the_zero_codeword():
    spec = FsqSpec((5, 3), groups=2)
    z, codes = quantize(np.zeros((1, 4)), spec)
    np.testing.assert_array_equal(z, 0.0)
    np.testing.assert_array_equal(codes, [[7, 7]])


@pytest.mark.parametrize("levels", [(2,), (3,), (4,), (5,), (6,), (7,), (8,)])
def test_each_channel_reaches_exactly_its_level_count(levels):
    spec = FsqSpec(levels)
    sweep = np.linspace(-10.0, 10.0, 40001)[:, None]
    z, codes = quantize(sweep, spec)
    assert len(np.unique(z)) == levels[0]
    assert len(np.unique(codes)) == levels[0]
    assert is_valid_latent(z, spec)


def test_literal_bound_overshoots_even_levels():
    spec = FsqSpec((8,), literal_bound=True)
    z, _ = quantize(np.linspace(-10.0, 10.0, 4001)[:, None], spec)
    assert len(np.unique(z)) == 9


def test_dense_sweep_hits_every_index():
    spec = FsqSpec((5, 3))
    axis = np.linspace(-4.0, 4.0, 201)
    grid = np.stack(np.meshgrid(axis, axis), axis=-1).reshape(-1, 2)
    z, codes = quantize(grid, spec)
    pairs = {(tuple(row), int(c)) for row, c in zip(z, codes[:, 0])}
    assert len(pairs) == 15
    assert set(codes[:, 0]) == set(range(15))


def test_width_mismatch():
    with pytest.raises(FsqError):
        quantize(np.zeros((2, 5)), FsqSpec((5, 3), groups=2))


def test_ste_forward_equals_hard_quantization(rng):
    spec = FsqSpec((8, 6, 5), groups=2)
    x = rng.normal(scale=2.0, size=(16, 6)).astype(np.float32)
    np.testing.assert_array_equal(quantize_ste(Tensor(x), spec).data, quantize(x, spec)[0])


@pytest.mark.parametrize("levels", sorted(TABLE_LEVELS.values()))
def test_ste_gradient_is_the_bound_gradient(f64, rng, levels):
    spec = FsqSpec(levels)
    x = rng.normal(scale=2.0, size=(100, len(levels)))
    weights = rng.normal(size=x.shape)
    leaf = Tensor(x.copy(), requires_grad=True)
    backward((quantize_ste(leaf, spec) * weights).sum())
    expected = numeric_grad(lambda: float((bound(x, spec) * weights).sum()), x)
    assert rel_err(leaf.grad, expected) < 1e-3


def test_codewords_are_fixed_points(rng):
    # holds whenever every channel has at most four levels
    spec = FsqSpec((3, 4, 2), groups=3)
    z, codes = quantize(rng.normal(scale=3.0, size=(50, 9)), spec)
    z2, codes2 = quantize(z, spec)
    np.testing.assert_array_equal(z2, z)
    np.testing.assert_array_equal(codes2, codes)


def test_is_valid_latent():
    spec = FsqSpec((4, 3))
    assert is_valid_latent(np.array([[-1.5, 1.0]]), spec)
    assert not is_valid_latent(np.array([[-2.5, 1.0]]), spec)
    assert not is_valid_latent(np.array([[0.0, 1.0]]), spec)
    assert not is_valid_latent(np.array([[0.5, 1.0, 0.0]]), spec)


def test_active_fraction_edges():
    spec = FsqSpec((5, 3), groups=2)
    assert active_fraction([], spec) == 0.0
    assert active_fraction([range(15), range(15)], spec) == 1.0
    assert active_fraction([[0, 0, 1], range(15)], spec) == pytest.approx((2 / 15 + 1.0) / 2)


def test_active_fraction_is_monotone(rng):
    spec = FsqSpec((8, 8))
    draws = rng.integers(0, 64, size=300)
    fractions = [active_fraction([draws[:n]], spec) for n in range(0, 301, 10)]
    assert all(b >= a for a, b in zip(fractions, fractions[1:]))


def test_active_fraction_matches_occupancy_expectation(rng):
    spec = FsqSpec((8, 8))
    n = 64
    history = [rng.integers(0, 64, size=n) for _ in range(400)]
    expected = 1 - (1 - 1 / 64) ** n
    assert active_fraction(history, spec) == pytest.approx(expected, abs=0.01)


def test_levels_for_size():
    for size, levels in TABLE_LEVELS.items():
        assert levels_for_size(size) == levels
    with pytest.raises(FsqError):
        levels_for_size(100)
