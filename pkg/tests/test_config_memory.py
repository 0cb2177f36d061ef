import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seusim.config_memory import (BitAddress, Clean, Corrected, DetectedUncorrectable, EccLayout,
                                  FrameAddress, build_memory, device_crc, ecc_decode_frame, ecc_encode_frame,
                                  ecc_payload, load_image, random_golden_image, save_image)


def crc32_bitwise(data: bytes) -> int:
    """Reference CRC-32 (reflected 0x04C11DB7, init and xorout all ones)."""
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ (0xEDB88320 if crc & 1 else 0)
    return crc ^ 0xFFFFFFFF


def naive_pack(bits):
    flat = [int(x) for x in np.asarray(bits).reshape(-1)]
    out = bytearray((len(flat) + 7) // 8)
    for i, bit in enumerate(flat):
        out[i // 8] |= bit << (i % 8)
    return bytes(out)


def brute_force_decode(frame, layout):
    """Oracle: which single flip (if any) turns the frame back into a codeword."""
    def is_codeword(f):
        return np.array_equal(ecc_encode_frame(f[layout.payload_positions], layout), f)
    if is_codeword(frame):
        return "clean", None
    hits = []
    for k in range(layout.frame_size):
        g = frame.copy()
        g[k] ^= 1
        if is_codeword(g):
            hits.append(k)
    return ("single", hits[0]) if len(hits) == 1 else ("multi", None)


# --- layout and construction ------------------------------------------------

def test_default_layout_1312_frame():
    layout = EccLayout()
    assert layout.frame_size == 1312
    assert layout.check_bits == 12 and layout.payload_bits == 1300
    assert 2 ** (layout.check_bits - 1) >= layout.payload_bits + layout.check_bits


def test_small_layout():
    layout = EccLayout(32)
    assert (layout.hamming_bits, layout.check_bits, layout.payload_bits) == (5, 6, 26)
    assert len(layout.payload_positions) == 26


def test_layout_too_small():
    with pytest.raises(ValueError):
        EccLayout(8)


def test_build_memory_zero_image():
    mem = build_memory(10, 1312)
    assert mem.live.size == 13120
    assert mem.diff == frozenset()


def test_build_memory_copies_golden():
    img = random_golden_image(3, 32, seed=7)
    mem = build_memory(3, 32, img)
    assert np.array_equal(mem.live, img)
    img[0, 0] ^= 1  # caller's array is not aliased
    assert mem.golden[0, 0] != img[0, 0]


def test_build_memory_rejects():
    with pytest.raises(ValueError):
        build_memory(3, 32, np.zeros((3, 31), dtype=np.uint8))
    with pytest.raises(ValueError):
        build_memory(0, 32)
    with pytest.raises(ValueError):
        build_memory(2, 8)


def test_golden_is_immutable():
    mem = build_memory(2, 32)
    with pytest.raises(ValueError):
        mem.golden[0, 0] = 1


def test_addresses_checked():
    assert FrameAddress.checked(3, 4).index == 3
    with pytest.raises(IndexError):
        FrameAddress.checked(4, 4)
    with pytest.raises(IndexError):
        BitAddress.checked(0, 32, 4, 32)


# --- flips ----------------------------------------------------------------

def test_single_flip_and_involution():
    mem = build_memory(8, 32)
    assert mem.flip_bits({(3, 7)}) == {(3, 7)}
    assert mem.flip_bits({(3, 7)}) == frozenset()
    assert np.array_equal(mem.live, mem.golden)


def test_mbe_then_overlapping_sbe():
    mem = build_memory(8, 32)
    mbe = {(3, 7), (2, 7), (4, 7), (3, 6), (3, 8)}
    naive = np.zeros((8, 32), dtype=np.uint8)
    for f, b in mbe:
        naive[f, b] ^= 1
    naive[3, 7] ^= 1
    mem.flip_bits(mbe)
    diff = mem.flip_bits({(3, 7)})
    assert len(diff) == 4
    assert diff == {tuple(x) for x in np.argwhere(naive)}


def test_flip_out_of_range():
    mem = build_memory(2, 32)
    with pytest.raises(IndexError):
        mem.flip_bits({(2, 0)})


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 31)), max_size=30))
def test_flip_is_involution_and_diff_exact(cells):
    mem = build_memory(6, 32, random_golden_image(6, 32, seed=1))
    mem.flip_bits(cells)
    assert mem.diff == {tuple(x) for x in np.argwhere(mem.live != mem.golden)}
    assert mem.hamming_distance() == int((mem.live != mem.golden).sum())
    mem.flip_bits(cells)
    assert np.array_equal(mem.live, mem.golden) and not mem.diff


def test_restore_frame_and_dirty_order():
    mem = build_memory(6, 32)
    mem.flip_bits({(4, 1)}, now=5)
    mem.flip_bits({(1, 2), (1, 3)}, now=9)
    assert mem.dirty_frames() == [4, 1]
    assert mem.restore_frame(1) == {(1, 2), (1, 3)}
    assert mem.dirty_frames() == [4]
    assert mem.restore_all() == {(4, 1)}
    assert np.array_equal(mem.live, mem.golden)


# --- ECC ------------------------------------------------------------------

def test_encode_zero_payload():
    frame = ecc_encode_frame(np.zeros(1300, dtype=np.uint8))
    assert not frame.any()
    assert ecc_decode_frame(frame) == Clean()


def test_encode_wrong_length():
    with pytest.raises(ValueError):
        ecc_encode_frame(np.zeros(1299, dtype=np.uint8))
    with pytest.raises(ValueError):
        ecc_decode_frame(np.zeros(1311, dtype=np.uint8))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip(seed):
    layout = EccLayout(1312)
    payload = np.random.default_rng(seed).integers(0, 2, layout.payload_bits, dtype=np.uint8)
    frame = ecc_encode_frame(payload, layout)
    assert ecc_decode_frame(frame, layout) == Clean()
    assert np.array_equal(ecc_payload(frame, layout), payload)


def test_single_errors_match_brute_force_32():
    layout = EccLayout(32)
    rng = np.random.default_rng(11)
    for _ in range(20):
        frame = ecc_encode_frame(rng.integers(0, 2, layout.payload_bits, dtype=np.uint8), layout)
        for k in range(32):
            bad = frame.copy()
            bad[k] ^= 1
            assert brute_force_decode(bad, layout) == ("single", k)
            assert ecc_decode_frame(bad, layout) == Corrected(k)


def test_single_errors_1312_all_positions():
    layout = EccLayout(1312)
    rng = np.random.default_rng(3)
    for _ in range(5):
        frame = ecc_encode_frame(rng.integers(0, 2, layout.payload_bits, dtype=np.uint8), layout)
        for k in range(1312):
            frame[k] ^= 1
            assert ecc_decode_frame(frame, layout) == Corrected(k)
            frame[k] ^= 1


def test_double_errors_detected_32_exhaustive():
    layout = EccLayout(32)
    frame = ecc_encode_frame(np.random.default_rng(5).integers(0, 2, 26, dtype=np.uint8), layout)
    for i, j in itertools.combinations(range(32), 2):
        bad = frame.copy()
        bad[[i, j]] ^= 1
        assert brute_force_decode(bad, layout)[0] == "multi"
        assert isinstance(ecc_decode_frame(bad, layout), DetectedUncorrectable)


# --- CRC ------------------------------------------------------------------

def test_crc_matches_bitwise_reference():
    img = random_golden_image(4, 32, seed=2)
    assert device_crc(build_memory(4, 32, img)) == crc32_bitwise(naive_pack(img))
    assert crc32_bitwise(b"123456789") == 0xCBF43926


def test_crc_empty_device():
    assert device_crc(np.zeros((0, 32), dtype=np.uint8)) == 0


def test_crc_tracks_diff():
    mem = build_memory(4, 32, random_golden_image(4, 32, seed=4))
    ref = device_crc(mem.golden)
    rng = np.random.default_rng(8)
    for _ in range(50):
        cells = {(int(rng.integers(4)), int(rng.integers(32))) for _ in range(int(rng.integers(1, 4)))}
        mem.flip_bits(cells)
        assert (device_crc(mem) == ref) == (not mem.diff)
        mem.flip_bits(cells)
        assert device_crc(mem) == ref


def test_crc_detects_single_flips():
    mem = build_memory(8, 1312, random_golden_image(8, 1312, seed=6))
    ref = device_crc(mem)
    rng = np.random.default_rng(10)
    for _ in range(1000):
        cell = (int(rng.integers(8)), int(rng.integers(1312)))
        mem.flip_bits([cell])
        assert device_crc(mem) != ref
        mem.flip_bits([cell])


# --- image files ------------------------------------------------------------

def test_image_file_round_trip(tmp_path):
    img = random_golden_image(3, 37, seed=1, encoded=False)
    path = tmp_path / "golden.bin"
    save_image(path, img)
    assert path.stat().st_size == (3 * 37 + 7) // 8
    assert path.read_bytes() == naive_pack(img)
    assert np.array_equal(load_image(path, 3, 37), img)
    with pytest.raises(ValueError):
        load_image(path, 3, 40)
