import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motionedit.attention import (
    Attention,
    RecurrentCausalAttention,
    TemporalAttention,
    cross_attention,
    neighbour_indices,
    scaled_dot_attention,
    self_attention,
)
from motionedit.gradcheck import gradcheck
from motionedit.layers import make_rng
from motionedit.tensor import ConfigurationError, DimensionError, Tensor, precision


def np_attention(x_q, ctx_k, ctx_v, attn):
    """Reference multi-head attention written directly in numpy."""
    q, k, v = x_q @ attn.w_q.data, ctx_k @ attn.w_k.data, ctx_v @ attn.w_v.data
    h = attn.heads
    dh = q.shape[-1] // h
    outs = []
    for j in range(h):
        sl = slice(j * dh, (j + 1) * dh)
        s = q[:, sl] @ k[:, sl].T / np.sqrt(dh)
        s = np.exp(s - s.max(axis=-1, keepdims=True))
        s /= s.sum(axis=-1, keepdims=True)
        outs.append(s @ v[:, sl])
    return np.concatenate(outs, axis=-1) @ attn.out.weight.data + attn.out.bias.data


def rca_oracle(x, rca):
    """Concatenate each frame's neighbour tokens explicitly and attend."""
    f = x.shape[0]
    out = []
    for i in range(f):
        if f == 1:
            ctx = np.concatenate([x[0], x[0]])
        elif i == 0:
            ctx = np.concatenate([x[0], x[1]])
        elif i == f - 1:
            ctx = np.concatenate([x[f - 2], x[f - 1]])
        else:
            ctx = np.concatenate([x[i - 1], x[i + 1]])
        out.append(np_attention(x[i], ctx, ctx, rca.attn))
    return np.stack(out)


@pytest.fixture(autouse=True)
def f64():
    with precision(np.float64):
        yield


def make_rca(d=8, heads=2, seed=0, **kw):
    return RecurrentCausalAttention(d, "spatial_rca", make_rng(seed), heads, **kw)


class TestScaledDot:
    def test_single_key_returns_value(self):
        q = Tensor(np.random.default_rng(0).standard_normal((3, 4)))
        v = Tensor([[1.0, 2.0, 3.0, 4.0]])
        out = scaled_dot_attention(q, Tensor(np.ones((1, 4))), v)
        np.testing.assert_allclose(out.data, np.tile(v.data, (3, 1)))

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            scaled_dot_attention(Tensor(np.ones((2, 4))), Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))))

    def test_empty_keys(self):
        with pytest.raises(DimensionError):
            scaled_dot_attention(Tensor(np.ones((2, 4))), Tensor(np.ones((0, 4))), Tensor(np.ones((0, 4))))

    def test_heads_must_divide(self):
        with pytest.raises(ConfigurationError):
            Attention(6, "cross", make_rng(0), heads=4)

    def test_matches_numpy_reference(self):
        attn = Attention(8, "cross", make_rng(1), heads=2, d_context=5)
        rng = np.random.default_rng(2)
        x, ctx = rng.standard_normal((6, 8)), rng.standard_normal((3, 5))
        out = cross_attention(attn, Tensor(x), Tensor(ctx)).data
        np.testing.assert_allclose(out, np_attention(x, ctx, ctx, attn), atol=1e-12)

    def test_cross_context_width_checked(self):
        attn = Attention(8, "cross", make_rng(1), heads=2, d_context=5)
        with pytest.raises(DimensionError, match="context width"):
            cross_attention(attn, Tensor(np.ones((2, 8))), Tensor(np.ones((2, 4))))

    def test_gradcheck(self):
        attn = Attention(8, "cross", make_rng(3), heads=2)
        x = Tensor(np.random.default_rng(4).standard_normal((2, 5, 8)), requires_grad=True)
        wt = Tensor(np.random.default_rng(5).standard_normal((2, 5, 8)))
        res = gradcheck(lambda: (self_attention(attn, x) * wt).sum(),
                        [x, attn.w_q, attn.w_k, attn.w_v, attn.out.weight])
        assert res.max_rel_error < 1e-3, res.worst


class TestNeighbours:
    def test_rules(self):
        prev, nxt = neighbour_indices(5)
        assert prev.tolist() == [0, 0, 1, 2, 3]
        assert nxt.tolist() == [1, 2, 3, 4, 4]

    def test_single_frame(self):
        assert [a.tolist() for a in neighbour_indices(1)] == [[0], [0]]

    def test_two_frames(self):
        assert [a.tolist() for a in neighbour_indices(2)] == [[0, 0], [1, 1]]

    def test_zero_frames(self):
        with pytest.raises(ConfigurationError):
            neighbour_indices(0)


class TestRCA:
    @pytest.mark.parametrize("frames", [1, 2, 3, 6])
    def test_matches_concat_oracle(self, frames):
        rca = make_rca()
        x = np.random.default_rng(frames).standard_normal((frames, 5, 8))
        np.testing.assert_allclose(rca(Tensor(x)).data, rca_oracle(x, rca), atol=1e-12)

    def test_duplication_identity(self):
        rca = make_rca()
        frame = np.random.default_rng(0).standard_normal((5, 8))
        x = np.repeat(frame[None], 4, axis=0)
        out = rca(Tensor(x)).data
        single = self_attention(rca.attn, Tensor(frame)).data
        assert np.abs(out - single[None]).max() < 1e-6

    def test_locality_is_bit_exact(self):
        rca = make_rca()
        rng = np.random.default_rng(1)
        x = rng.standard_normal((7, 4, 8))
        base = rca(Tensor(x)).data
        y = x.copy()
        y[6] = rng.standard_normal((4, 8))
        out = rca(Tensor(y)).data
        # frames 0..4 never see frame 6
        assert np.array_equal(base[:5], out[:5])
        assert not np.array_equal(base[5], out[5])

    def test_own_frame_only_drives_queries(self):
        rca = make_rca()
        x = np.random.default_rng(2).standard_normal((3, 4, 8))
        y = x.copy()
        y[1] += 1.0
        # frame 0 attends over frames 0 and 1, so its output changes
        assert not np.array_equal(rca(Tensor(x)).data[0], rca(Tensor(y)).data[0])

    def test_asymmetric_variant_values(self):
        rca = make_rca(asymmetric_values=True)
        x = np.random.default_rng(3).standard_normal((4, 3, 8))
        out = rca(Tensor(x)).data
        prev, nxt = neighbour_indices(4)
        for i in range(4):
            k_ctx = np.concatenate([x[prev[i]], x[nxt[i]]])
            v_ctx = np.concatenate([x[max(i - 1, 0)], x[i]])
            np.testing.assert_allclose(out[i], np_attention(x[i], k_ctx, v_ctx, rca.attn), atol=1e-12)

    def test_gradcheck(self):
        rca = make_rca(heads=2)
        x = Tensor(np.random.default_rng(5).standard_normal((3, 4, 8)), requires_grad=True)
        wt = Tensor(np.random.default_rng(6).standard_normal((3, 4, 8)))
        a = rca.attn
        res = gradcheck(lambda: (rca(x) * wt).sum(), [x, a.w_q, a.w_k, a.w_v, a.out.weight, a.out.bias])
        assert res.max_rel_error < 1e-3, res.worst

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 10_000))
    def test_oracle_property(self, frames, tokens, seed):
        rca = make_rca(seed=seed % 7)
        x = np.random.default_rng(seed).standard_normal((frames, tokens, 8))
        np.testing.assert_allclose(rca(Tensor(x)).data, rca_oracle(x, rca), atol=1e-10)


class TestTemporal:
    def test_identical_frames_stay_identical(self):
        ta = TemporalAttention(8, "temporal", make_rng(0), heads=2)
        frame = np.random.default_rng(0).standard_normal((5, 8))
        out = ta(Tensor(np.repeat(frame[None], 3, axis=0))).data
        assert np.abs(out - out[:1]).max() < 1e-12

    def test_positions_break_symmetry(self):
        ta = TemporalAttention(8, "temporal", make_rng(0), heads=2)
        x = np.random.default_rng(1).standard_normal((3, 2, 8))
        plain = ta(Tensor(x)).data
        ta.pos.data[:] = 0.0
        assert not np.allclose(plain, ta(Tensor(x)).data)

    def test_too_many_frames(self):
        ta = TemporalAttention(8, "temporal", make_rng(0), heads=2, max_frames=4)
        with pytest.raises(ConfigurationError):
            ta(Tensor(np.zeros((5, 1, 8))))

    def test_gradcheck(self):
        ta = TemporalAttention(8, "temporal", make_rng(2), heads=2)
        x = Tensor(np.random.default_rng(3).standard_normal((3, 2, 8)), requires_grad=True)
        wt = Tensor(np.random.default_rng(4).standard_normal((3, 2, 8)))
        res = gradcheck(lambda: (ta(x) * wt).sum(), [x, ta.pos, ta.attn.w_q, ta.attn.w_v])
        assert res.max_rel_error < 1e-3, res.worst
