"""Summation, pooling, and activation blocks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scdcnn.arith import (
    APC_APPROXIMATE,
    BinaryStream,
    add_mux,
    add_or,
    decode_binary_sum,
)
from scdcnn.blocks import (
    APC_ANY,
    BINARY,
    FIFTH,
    HALF,
    IP_APC,
    IP_MUX,
    IP_OR,
    IP_TWO_LINE,
    MUX_AVG,
    MUX_MAX,
    STOCHASTIC,
    avg_pool,
    btanh,
    inner_product,
    max_pool_hw,
    nearest_even,
    optimal_states,
    stanh,
    xnor_products,
)
from scdcnn.core import (
    BIPOLAR,
    UNIPOLAR,
    BitStream,
    SngFamily,
    SngState,
    decode_stream,
    generate_stream,
    two_line_decode,
)


def bits(text: str) -> np.ndarray:
    return np.array([int(c) for c in text], dtype=np.uint8)


def bipolar(text: str) -> BitStream:
    return BitStream(bits(text), BIPOLAR)


def random_bipolar(n, length, seed):
    rng = np.random.default_rng(seed)
    return [BitStream(rng.integers(0, 2, length).astype(np.uint8), BIPOLAR)
            for _ in range(n)]


class TestOptimalStates:
    def test_design_points(self):
        assert optimal_states(MUX_AVG, 16, 1024) == 10
        assert optimal_states(MUX_MAX, 16, 1024) == 14
        assert optimal_states(APC_ANY, 16, 1024) == 8

    def test_apc_rule_tracks_input_size(self):
        assert optimal_states(APC_ANY, 64, 512) == 32
        assert optimal_states(APC_ANY, 5, 512) == 2

    def test_always_even_and_at_least_two(self):
        for kind in (MUX_AVG, MUX_MAX, APC_ANY):
            for n in (2, 4, 16, 64, 256):
                for length in (16, 256, 4096):
                    k = optimal_states(kind, n, length)
                    assert k >= 2 and k % 2 == 0

    def test_validation(self):
        with pytest.raises(ValueError):
            optimal_states("bogus", 16, 1024)
        with pytest.raises(ValueError):
            optimal_states(MUX_AVG, 1, 1024)
        with pytest.raises(ValueError):
            optimal_states(MUX_AVG, 16, 1)


class TestNearestEven:
    def test_halfway_rounds_up(self):
        assert nearest_even(3.0) == 4
        assert nearest_even(5.0) == 6

    def test_nearest(self):
        assert nearest_even(4.9) == 4
        assert nearest_even(7.2) == 8
        assert nearest_even(16.0) == 16

    def test_floor_of_two(self):
        assert nearest_even(0.3) == 2
        assert nearest_even(-5.0) == 2


class TestInnerProduct:
    def test_unit_weights_apc_identity(self):
        # with all weights +1 the counter sums the inputs themselves
        xs = random_bipolar(8, 256, seed=1)
        ones = [BitStream(np.ones(256, dtype=np.uint8), BIPOLAR)] * 8
        out = inner_product(xs, ones, IP_APC)
        direct = sum(decode_stream(x) for x in xs)
        assert decode_binary_sum(out, BIPOLAR) == pytest.approx(direct)

    def test_or_variant_matches_union_of_products(self):
        xs = random_bipolar(4, 128, seed=2)
        ws = random_bipolar(4, 128, seed=3)
        out = inner_product(xs, ws, IP_OR)
        prods = [BitStream(1 - (x.bits ^ w.bits), BIPOLAR)
                 for x, w in zip(xs, ws)]
        assert np.array_equal(out.bits, add_or(prods).bits)

    def test_mux_variant_matches_scaled_add(self):
        xs = random_bipolar(4, 128, seed=4)
        ws = random_bipolar(4, 128, seed=5)
        out = inner_product(xs, ws, IP_MUX, select=SngState(9))
        prods = [BitStream(1 - (x.bits ^ w.bits), BIPOLAR)
                 for x, w in zip(xs, ws)]
        assert np.array_equal(out.bits, add_mux(prods, SngState(9)).bits)

    def test_apc_approximate_counts_even(self):
        xs = random_bipolar(16, 64, seed=6)
        ws = random_bipolar(16, 64, seed=7)
        out = inner_product(xs, ws, IP_APC, apc_mode=APC_APPROXIMATE)
        assert not (out.counts % 2).any()

    def test_two_line_single_product(self):
        x, w = bipolar("1011"), bipolar("1110")
        out = inner_product([x], [w], IP_TWO_LINE)
        prod = BitStream(1 - (x.bits ^ w.bits), BIPOLAR)
        assert two_line_decode(out) == decode_stream(prod)

    def test_xnor_products_helper(self):
        x = np.array([[1, 0, 1, 1]], dtype=np.uint8)
        w = np.array([[1, 1, 1, 0]], dtype=np.uint8)
        assert np.array_equal(xnor_products(x, w),
                              np.array([[1, 0, 1, 0]], dtype=np.uint8))

    def test_validation(self):
        xs = random_bipolar(2, 64, seed=8)
        with pytest.raises(ValueError):
            inner_product(xs, xs[:1], IP_APC)
        with pytest.raises(ValueError):
            inner_product([], [], IP_APC)
        with pytest.raises(ValueError):
            inner_product(xs, xs, IP_MUX)  # no select
        uni = [BitStream(np.zeros(64, dtype=np.uint8), UNIPOLAR)] * 2
        with pytest.raises(ValueError):
            inner_product(uni, uni, IP_APC)
        with pytest.raises(ValueError):
            inner_product(xs, xs, "bogus")


class TestAvgPool:
    def test_binary_truncated_mean(self):
        streams = [BinaryStream(np.full(6, c, dtype=np.int32), 8)
                   for c in (2, 3, 4, 5)]
        out = avg_pool(streams, BINARY)
        assert np.array_equal(out.counts, np.full(6, 3))

    def test_binary_floor(self):
        streams = [BinaryStream(np.array([c], dtype=np.int32), 8)
                   for c in (0, 0, 0, 3)]
        assert avg_pool(streams, BINARY).counts[0] == 0

    def test_stochastic_identical_inputs_pass_through(self):
        s = random_bipolar(1, 128, seed=10)[0]
        out = avg_pool([s] * 4, STOCHASTIC, select=SngState(2))
        assert np.array_equal(out.bits, s.bits)

    def test_stochastic_monte_carlo(self):
        # (0.8 + 0.4 + 0.0 - 0.4) / 4 = 0.2
        values = [0.8, 0.4, 0.0, -0.4]
        length, trials = 4096, 500
        outs = []
        for t in range(trials):
            fam = SngFamily(t, width=16)
            streams = [BitStream(row, BIPOLAR)
                       for row in fam.encode(values, BIPOLAR, length)]
            outs.append(decode_stream(
                avg_pool(streams, STOCHASTIC, select=fam.stream(4))))
        assert np.mean(outs) == pytest.approx(0.20, abs=0.02)

    def test_validation(self):
        streams = random_bipolar(3, 16, seed=11)
        with pytest.raises(ValueError):
            avg_pool(streams, STOCHASTIC, select=SngState(0))
        with pytest.raises(ValueError):
            avg_pool(random_bipolar(4, 16, seed=12), STOCHASTIC)
        counts = [BinaryStream(np.ones(4, dtype=np.int32), 8)] * 3 \
            + [BinaryStream(np.ones(8, dtype=np.int32), 8)]
        with pytest.raises(ValueError):
            avg_pool(counts, BINARY)
        with pytest.raises(ValueError):
            avg_pool(random_bipolar(4, 16, seed=13), "bogus")


class TestMaxPoolHw:
    def test_segments_copied_verbatim(self):
        streams = random_bipolar(4, 64, seed=14)
        out = max_pool_hw(streams, c=8, domain=STOCHASTIC,
                          first_pick=SngState(3))
        mat = np.stack([s.bits for s in streams]).reshape(4, 8, 8)
        got = out.bits.reshape(8, 8)
        for t in range(8):
            assert any(np.array_equal(got[t], mat[m, t]) for m in range(4))

    def test_winner_follows_previous_segment_count(self):
        # per-segment ones counts: a = (4, 0, 2), b = (0, 2, 1),
        # c = (2, 3, 0); the race picks a for segment 1, c for segment 2
        a = bipolar("1111" "0000" "1010")
        b = bipolar("0000" "1100" "0101")
        c = bipolar("0011" "0111" "0000")
        out = max_pool_hw([a, b, c], c=4, domain=STOCHASTIC,
                          first_pick=SngState(0))
        assert np.array_equal(out.bits[4:8], a.bits[4:8])
        assert np.array_equal(out.bits[8:12], c.bits[8:12])
        first = out.bits[0:4]
        assert any(np.array_equal(first, s.bits[0:4]) for s in (a, b, c))

    def test_binary_race_accumulates(self):
        # running totals after segment 1: a = 5, b = 4; a per-segment
        # reset would hand segment 2 to b instead
        a = BinaryStream(np.array([5, 0, 7], dtype=np.int32), 16)
        b = BinaryStream(np.array([0, 4, 9], dtype=np.int32), 16)
        out = max_pool_hw([a, b], c=1, domain=BINARY, first_pick=SngState(1))
        assert out.counts[1] == 0
        assert out.counts[2] == 7

    def test_dominant_input_wins_every_race(self):
        rng = np.random.default_rng(15)
        low = [BitStream((rng.random(256) < 0.3).astype(np.uint8), BIPOLAR)
               for _ in range(3)]
        top = BitStream(np.ones(256, dtype=np.uint8), BIPOLAR)
        out = max_pool_hw(low + [top], c=16, domain=STOCHASTIC,
                          first_pick=SngState(4))
        assert out.bits[16:].all()

    def test_validation(self):
        streams = random_bipolar(2, 64, seed=16)
        with pytest.raises(ValueError):
            max_pool_hw(streams[:1], c=8, first_pick=SngState(0))
        with pytest.raises(ValueError):
            max_pool_hw(streams, c=7, first_pick=SngState(0))
        with pytest.raises(ValueError):
            max_pool_hw(streams, c=8)
        with pytest.raises(ValueError):
            max_pool_hw(streams, c=8, domain="bogus", first_pick=SngState(0))


class TestStanh:
    def test_two_states_is_unit_delay(self):
        s = bipolar("0110100011")
        out = stanh(s, 2)
        assert out.bits[0] == 1
        assert np.array_equal(out.bits[1:], s.bits[:-1])

    def test_all_ones_saturates_high(self):
        s = BitStream(np.ones(64, dtype=np.uint8), BIPOLAR)
        assert stanh(s, 8).bits.all()

    def test_all_zeros_emit_before_transition(self):
        # the initial state K/2 sits on the emit boundary, so exactly
        # one leading 1 escapes
        s = BitStream(np.zeros(64, dtype=np.uint8), BIPOLAR)
        out = stanh(s, 8)
        assert out.bits[0] == 1 and not out.bits[1:].any()

    def test_fifth_boundary_lowers_threshold(self):
        # K=10: half boundary emits while state >= 5, fifth while >= 2;
        # from state 5 a zero run keeps the fifth output high for 4 steps
        s = BitStream(np.zeros(12, dtype=np.uint8), BIPOLAR)
        out = stanh(s, 10, boundary=FIFTH)
        assert np.array_equal(out.bits,
                              bits("1111" "0000" "0000"))

    def test_zero_input_balanced_output(self):
        length, seeds = 8192, 50
        outs = []
        for seed in range(seeds):
            fam = SngFamily(seed, width=16)
            s = BitStream(fam.encode([0.0], BIPOLAR, length)[0], BIPOLAR)
            outs.append(decode_stream(stanh(s, 8)))
        assert abs(np.mean(outs)) <= 0.05

    def test_gain_steepens_with_states(self):
        length = 8192
        fam = SngFamily(3, width=16)
        s = BitStream(fam.encode([0.3], BIPOLAR, length)[0], BIPOLAR)
        shallow = decode_stream(stanh(s, 4))
        steep = decode_stream(stanh(s, 16))
        assert steep > shallow > 0.3

    @given(st.integers(min_value=1, max_value=8),
           st.integers(min_value=0, max_value=2 ** 32),
           st.integers(min_value=0, max_value=63))
    @settings(max_examples=60, deadline=None)
    def test_antisymmetry(self, half_k, seed, init):
        # complementing the input and mirroring the state complements
        # the output: the half-boundary FSM is odd around its centre
        k = 2 * half_k
        init = init % k
        rng = np.random.default_rng(seed)
        raw = rng.integers(0, 2, 48).astype(np.uint8)
        s = BitStream(raw, BIPOLAR)
        comp = BitStream(1 - raw, BIPOLAR)
        a = stanh(s, k, HALF, init_state=init)
        b = stanh(comp, k, HALF, init_state=k - 1 - init)
        assert np.array_equal(b.bits, 1 - a.bits)

    def test_validation(self):
        s = bipolar("01")
        with pytest.raises(ValueError):
            stanh(s, 7)
        with pytest.raises(ValueError):
            stanh(s, 0)
        with pytest.raises(ValueError):
            stanh(BitStream(bits("01"), UNIPOLAR), 4)
        with pytest.raises(ValueError):
            stanh(s, 4, boundary="bogus")
        with pytest.raises(ValueError):
            stanh(s, 4, init_state=4)


class TestBtanh:
    def test_full_counts_saturate_high(self):
        bs = BinaryStream(np.full(32, 4, dtype=np.int32), 4)
        assert btanh(bs, 6).bits.all()

    def test_zero_counts_saturate_low(self):
        bs = BinaryStream(np.zeros(32, dtype=np.int32), 4)
        out = btanh(bs, 6)
        assert out.bits[0] == 1 and not out.bits[1:].any()

    def test_balanced_counts_balanced_output(self):
        length, n, seeds = 4096, 16, 50
        outs = []
        for seed in range(seeds):
            fam = SngFamily(seed, width=16)
            mat = fam.encode(np.zeros(n), BIPOLAR, length)
            bs = BinaryStream(mat.sum(axis=0, dtype=np.int32), n)
            outs.append(decode_stream(btanh(bs, 8)))
        assert abs(np.mean(outs)) <= 0.05

    def test_validation(self):
        bs = BinaryStream(np.array([1, 2], dtype=np.int32), 2)
        with pytest.raises(ValueError):
            btanh(bs, 5)
        with pytest.raises(ValueError):
            btanh(BinaryStream(np.array([3], dtype=np.int32), 2), 4)
        with pytest.raises(ValueError):
            btanh(bs, 4, init_state=-1)


def fsm_oracle(rows: np.ndarray, k: int) -> np.ndarray:
    """Step-by-step restatement of counter + saturating activation."""
    n, length = rows.shape
    state = k // 2
    out = np.empty(length, dtype=np.uint8)
    for i in range(length):
        out[i] = 1 if state >= k // 2 else 0
        state += 2 * int(rows[:, i].sum()) - n
        state = min(max(state, 0), k - 1)
    return out


class TestApcBtanhOracle:
    def test_exhaustive_two_inputs(self):
        # every 2-stream input pattern up to length 8
        for length in (4, 8):
            k = 4
            for code in range(1 << (2 * length)):
                rows = np.array(
                    [[(code >> (r * length + i)) & 1 for i in range(length)]
                     for r in range(2)], dtype=np.uint8)
                streams = [BitStream(rows[0], BIPOLAR),
                           BitStream(rows[1], BIPOLAR)]
                ones = [BitStream(np.ones(length, dtype=np.uint8), BIPOLAR)] * 2
                counts = inner_product(streams, ones, IP_APC)
                got = btanh(counts, k)
                assert np.array_equal(got.bits, fsm_oracle(rows, k)), code

    def test_sampled_wider_inputs(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            n = int(rng.integers(2, 5))
            length = int(rng.integers(2, 33))
            k = 2 * int(rng.integers(1, 5))
            rows = rng.integers(0, 2, (n, length)).astype(np.uint8)
            bs = BinaryStream(rows.sum(axis=0, dtype=np.int32), n)
            assert np.array_equal(btanh(bs, k).bits, fsm_oracle(rows, k))
