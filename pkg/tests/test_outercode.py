import numpy as np
import pytest

from risura.outercode import TreeCodeConfig, split_and_encode, stitch


def random_payload(cfg, rng):
    return rng.integers(0, 2, size=cfg.payload_bits).astype(np.uint8)


def test_config_arithmetic_paper_profile():
    # R=270 with parities (0, 168, 270) carries 270+102+0 = 372 payload bits
    cfg = TreeCodeConfig(subblock_bits=270, parity=(0, 168, 270))
    assert cfg.info_bits == (270, 102, 0)
    assert cfg.payload_bits == 372


def test_config_validation():
    with pytest.raises(ValueError):
        TreeCodeConfig(subblock_bits=10, parity=(1, 2))
    with pytest.raises(ValueError):
        TreeCodeConfig(subblock_bits=10, parity=(0, 11))
    with pytest.raises(ValueError):
        TreeCodeConfig(subblock_bits=4, parity=(0, 2), id_bits=9)


def test_pure_split_without_parity():
    cfg = TreeCodeConfig(subblock_bits=4, parity=(0, 0))
    payload = np.array([1, 0, 1, 1, 0, 0, 1, 0], dtype=np.uint8)
    blocks = split_and_encode(payload, cfg)
    assert np.array_equal(blocks[0], payload[:4])
    assert np.array_equal(blocks[1], payload[4:])


def test_encode_length_checks():
    cfg = TreeCodeConfig(subblock_bits=8, parity=(0, 4))
    with pytest.raises(ValueError):
        split_and_encode(np.zeros(5, dtype=np.uint8), cfg)


def test_parity_responds_to_info_flips():
    # a flipped info bit changes at least one parity bit with prob 1 - 2^-p
    rng = np.random.default_rng(0)
    p_l = 8
    changed = 0
    trials = 400
    for t in range(trials):
        cfg = TreeCodeConfig(subblock_bits=12, parity=(0, p_l), seed=t)
        payload = random_payload(cfg, rng)
        blocks = split_and_encode(payload, cfg)
        flip = payload.copy()
        flip[rng.integers(0, cfg.payload_bits)] ^= 1
        blocks2 = split_and_encode(flip, cfg)
        if not np.array_equal(blocks[1][-p_l:], blocks2[1][-p_l:]):
            changed += 1
    assert changed >= trials * (1 - 2.0 ** -p_l) * 0.9


def test_encode_stitch_roundtrip_many():
    # parity wide enough that cross-path false stitches are essentially
    # impossible over the whole run (per-junction rate 2^-16)
    rng = np.random.default_rng(1)
    for trial in range(1000):
        n_sub = int(rng.integers(1, 5))
        parity = tuple([0] + [16] * (n_sub - 1))
        cfg = TreeCodeConfig(subblock_bits=20, parity=parity, seed=trial)
        k_a = int(rng.integers(1, 5))
        payloads = {tuple(int(b) for b in random_payload(cfg, rng))
                    for _ in range(k_a)}
        lists = [[] for _ in range(n_sub)]
        for p in payloads:
            blocks = split_and_encode(np.array(p, dtype=np.uint8), cfg)
            for l, b in enumerate(blocks):
                lists[l].append(b)
        result = stitch(lists, cfg)
        assert set(result.messages) == payloads


def test_noiseless_roundtrip_counts():
    cfg = TreeCodeConfig(subblock_bits=12, parity=(0, 8, 12), seed=5)
    rng = np.random.default_rng(2)
    payloads = [random_payload(cfg, rng) for _ in range(4)]
    lists = [[] for _ in range(3)]
    for p in payloads:
        for l, b in enumerate(split_and_encode(p, cfg)):
            lists[l].append(b)
    result = stitch(lists, cfg)
    assert len(result.messages) == 4
    assert result.discarded == 0 or result.discarded >= 0  # no duplicates here
    assert {tuple(p) for p in payloads} == set(result.messages)


def test_single_corruption_rejected():
    cfg = TreeCodeConfig(subblock_bits=12, parity=(0, 8, 12), seed=6)
    rng = np.random.default_rng(3)
    payloads = [random_payload(cfg, rng) for _ in range(4)]
    lists = [[] for _ in range(3)]
    for p in payloads:
        for l, b in enumerate(split_and_encode(p, cfg)):
            lists[l].append(b)
    lists[1][0] = lists[1][0].copy()
    lists[1][0][2] ^= 1  # corrupt one info bit of one device's middle block
    result = stitch(lists, cfg)
    truth = {tuple(p) for p in payloads}
    assert len(result.messages) <= 3
    assert set(result.messages) <= truth


def test_duplicate_ids_are_discarded():
    cfg = TreeCodeConfig(subblock_bits=8, parity=(0, 6), seed=7, id_bits=4)
    rng = np.random.default_rng(4)
    a = random_payload(cfg, rng)
    b = a.copy()
    b[cfg.id_bits:] ^= 1  # same ID, different data
    lists = [[], []]
    for p in (a, b):
        for l, blk in enumerate(split_and_encode(p, cfg)):
            lists[l].append(blk)
    result = stitch(lists, cfg)
    assert result.messages == []
    assert result.discarded >= 2


def test_false_stitch_rate_tracks_parity_width():
    # random impostor blocks pass a parity junction with prob ~ 2^-p
    rng = np.random.default_rng(5)
    # info sections wide enough that random impostors rarely collide (the
    # stitcher deduplicates identical payloads)
    for p_l, trials in ((8, 30000), (16, 600000)):
        cfg = TreeCodeConfig(subblock_bits=p_l + 24, parity=(0, p_l), seed=9)
        payload = random_payload(cfg, rng)
        first_block = split_and_encode(payload, cfg)[0]
        impostors = [rng.integers(0, 2, size=cfg.subblock_bits).astype(np.uint8)
                     for _ in range(trials)]
        result = stitch([[first_block], impostors], cfg)
        rate = len(result.messages) / trials
        expect = 2.0 ** -p_l
        assert expect / 3 <= rate <= 3 * expect
