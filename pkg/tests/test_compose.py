import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hrrfp.compose import (
    FingerprintSequence,
    FormatError,
    Method,
    aggregate_decimation,
    aggregate_summation,
    compose_block,
    compose_database,
    read_database,
    read_header,
    recover_position,
    write_database,
)
from hrrfp.hrr import circular_convolve, cosine, generate_position_basis, unbind

from .conftest import naive_convolve, unit


def _seq(rng, n, d=64, tid="t"):
    return FingerprintSequence(tid, unit(rng, d, n).astype(np.float32))


def test_single_slot_block(rng):
    basis = generate_position_basis(64, 1, seed=0)
    x = unit(rng, 64)
    assert np.allclose(compose_block([x], basis), circular_convolve(x, basis[1]), atol=1e-12)


def test_zero_inputs_give_zero():
    basis = generate_position_basis(32, 3, seed=0)
    assert np.allclose(compose_block(np.zeros((3, 32)), basis), 0.0)


def test_small_block_against_naive_oracle():
    basis = generate_position_basis(4, 2, seed=1, unitary=False)
    x = np.array([[1.0, 0.0, -2.0, 0.5], [0.25, 3.0, 1.0, -1.0]])
    expected = naive_convolve(x[0], basis.vectors[0]) + naive_convolve(x[1], basis.vectors[1])
    assert np.max(np.abs(compose_block(x, basis) - expected)) < 1e-12


def test_compose_block_errors():
    basis = generate_position_basis(8, 2, seed=0)
    with pytest.raises(ValueError):
        compose_block(np.zeros((0, 8)), basis)
    with pytest.raises(ValueError, match="mismatch"):
        compose_block(np.zeros((1, 4)), basis)
    with pytest.raises(ValueError, match="at most"):
        compose_block(np.zeros((3, 8)), basis)


def test_summation_and_decimation(rng):
    a, b = unit(rng, 16, 2)
    assert np.array_equal(aggregate_summation([a]), a)
    assert np.allclose(aggregate_summation([a, -a]), 0.0)
    assert np.array_equal(aggregate_decimation([a, b]), a)
    assert np.array_equal(aggregate_decimation([a]), a)
    with pytest.raises(ValueError):
        aggregate_summation(np.zeros((0, 4)))
    with pytest.raises(ValueError):
        aggregate_decimation(np.zeros((0, 4)))


def test_summation_norm_near_sqrt_m(rng):
    # oracle: mean norm of a sum of 4 random unit vectors in 512-D is 2.00 (std 0.054)
    norms = [np.linalg.norm(aggregate_summation(unit(rng, 512, 4))) for _ in range(1000)]
    assert np.mean(norms) == pytest.approx(2.0, abs=0.02)


@pytest.mark.parametrize("N,M,blocks,last", [(59, 2, 30, 1), (59, 4, 15, 3), (8, 4, 2, 4), (1, 4, 1, 1)])
def test_block_counts(rng, N, M, blocks, last):
    basis = generate_position_basis(64, M, seed=0)
    db = compose_database([_seq(rng, N)], basis, "hrr")
    assert db.n_blocks == blocks == math.ceil(N / M)
    assert db.fills[-1] == last
    assert db.payload_bytes == blocks * 64 * 4


def test_decimation_database_keeps_first_fingerprints(rng):
    s = _seq(rng, 4)
    db = compose_database([s], generate_position_basis(64, 2, seed=0), "decimation")
    assert np.array_equal(db.vectors, s.fingerprints[[0, 2]])


def test_multi_track_layout(rng):
    seqs = [_seq(rng, 5, tid="a"), _seq(rng, 7, tid="b"), _seq(rng, 2, tid="c")]
    db = compose_database(seqs, generate_position_basis(64, 3, seed=0), "summation")
    assert [(t.start_block, t.block_count) for t in db.tracks] == [(0, 2), (2, 3), (5, 1)]
    assert list(db.track_index_of([0, 1, 2, 4, 5])) == [0, 0, 1, 1, 2]
    blk = db.block(3)
    assert blk.track_id == "b" and blk.block_index == 2 and blk.fill == 3
    expected = seqs[1].fingerprints[3:6].astype(np.float64).sum(axis=0)
    assert np.allclose(db.vectors[3], expected, atol=1e-6)


def test_dimension_mismatch(rng):
    with pytest.raises(ValueError, match="mismatch"):
        compose_database([_seq(rng, 3, d=32)], generate_position_basis(64, 2, seed=0))


def test_sequence_validation(rng):
    with pytest.raises(ValueError, match="norm"):
        FingerprintSequence("x", np.ones((2, 4)))
    with pytest.raises(ValueError, match="non-finite"):
        FingerprintSequence("x", np.full((1, 2), np.nan))


def test_recover_single_item_exact(rng):
    basis = generate_position_basis(512, 4, seed=2)
    s = _seq(rng, 1, d=512)
    db = compose_database([s], basis)
    assert np.max(np.abs(recover_position(db.block(0), basis, 1) - s.fingerprints[0])) < 1e-6


def test_recover_noisy_positions(rng):
    # oracle (500 trials): mean recovered cosine 0.500; off-slot |cos| < 0.2 in 100%
    D, M = 512, 4
    rec, stray = [], []
    for t in range(500):
        basis = generate_position_basis(D, M, seed=t)
        X = unit(rng, D, M).astype(np.float32)
        db = compose_database([FingerprintSequence("x", X)], basis)
        m = t % M + 1
        rec.append(cosine(recover_position(db.block(0), basis, m), X[m - 1]))
        single = compose_database([FingerprintSequence("y", X[:1])], basis)
        stray.append(cosine(recover_position(single.block(0), basis, 2), X[1]))
    assert np.mean(rec) > 0.45
    assert np.mean(np.abs(stray) < 0.2) >= 0.99


def test_recover_errors(rng):
    basis = generate_position_basis(64, 2, seed=0)
    db = compose_database([_seq(rng, 2)], basis, "summation")
    with pytest.raises(ValueError, match="undefined"):
        recover_position(db.block(0), basis, 1)
    db = compose_database([_seq(rng, 2)], basis, "hrr")
    with pytest.raises(ValueError, match="outside"):
        recover_position(db.block(0), basis, 3)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**31))
def test_linearity_and_roundtrip(M, seed):
    rng = np.random.default_rng(seed)
    basis = generate_position_basis(128, M, seed=seed % 1000)
    x, y = rng.standard_normal((2, M, 128))
    assert np.allclose(compose_block(x + y, basis), compose_block(x, basis) + compose_block(y, basis), atol=1e-6)
    m = int(rng.integers(1, M + 1))
    only = np.zeros((M, 128))
    only[m - 1] = x[m - 1]
    assert np.max(np.abs(unbind(compose_block(only, basis), basis[m]) - x[m - 1])) < 1e-6


def test_recompose_is_bit_identical(rng):
    seqs = [_seq(rng, 11, tid=f"t{i}") for i in range(3)]
    for method in Method:
        a = compose_database(seqs, generate_position_basis(64, 4, seed=5), method)
        b = compose_database(seqs, generate_position_basis(64, 4, seed=5), method)
        assert a.vectors.tobytes() == b.vectors.tobytes()


def test_method_parse():
    assert Method.parse("sum") is Method.SUMMATION
    assert Method.parse("dec") is Method.DECIMATION
    with pytest.raises(ValueError):
        Method.parse("median")


# --- HRRC format -----------------------------------------------------------------


def test_roundtrip_and_size(tmp_path, rng):
    seqs = [_seq(rng, 59, tid="trk-é"), _seq(rng, 10, tid="b")]
    basis = generate_position_basis(64, 4, seed=123456789012, unitary=True)
    db = compose_database(seqs, basis, "hrr")
    path = tmp_path / "db.hrrc"
    n = write_database(db, path)
    assert n == path.stat().st_size
    table = sum(4 + len(t.encode()) + 8 for t in ["trk-é", "b"])
    assert n == 28 + table + (15 + 3) * 64 * 4 + (15 + 3)
    back = read_database(path)
    assert back.vectors.tobytes() == db.vectors.tobytes()
    assert np.array_equal(back.fills, db.fills)
    assert back.tracks == db.tracks and back.method is Method.HRR
    assert back.basis.vectors.tobytes() == basis.vectors.tobytes()
    head = read_header(path)
    assert (head["D"], head["M"], head["seed"], head["unitary"]) == (64, 4, 123456789012, True)


def test_reader_rejects_bad_files(tmp_path, rng):
    db = compose_database([_seq(rng, 4)], generate_position_basis(64, 2, seed=0), "decimation")
    path = tmp_path / "db.hrrc"
    write_database(db, path)
    data = path.read_bytes()
    (tmp_path / "magic").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError, match="magic"):
        read_database(tmp_path / "magic")
    (tmp_path / "ver").write_bytes(data[:4] + (9).to_bytes(2, "little") + data[6:])
    with pytest.raises(FormatError, match="version"):
        read_database(tmp_path / "ver")
    (tmp_path / "short").write_bytes(data[:-10])
    with pytest.raises(FormatError, match="truncated"):
        read_database(tmp_path / "short")
