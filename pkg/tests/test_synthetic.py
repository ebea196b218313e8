import itertools

import numpy as np
import pytest

from cohand.domain import AXIS_ORDER, DominantAxis, active_dimensions
from cohand.synthetic import (
    GenConfig,
    build_corpus,
    build_dataset,
    generate_user_clips,
    recover_operation,
    render_gesture,
    sample_dominant_operation,
    sample_user_style,
    split_in_sample,
    style_from_dict,
    style_to_dict,
)


@pytest.fixture(scope="module")
def cfg():
    return GenConfig(seed=11)


class TestSampleDominantOperation:
    def test_single_active_axis(self, cfg):
        rng = np.random.default_rng(0)
        op, dims = sample_dominant_operation(rng, cfg, 1)
        assert len(dims) == 1
        mean_mag = np.abs(op.frames).mean(axis=0)
        (ax,) = dims
        assert mean_mag[ax.index] == mean_mag.max()

    @pytest.mark.parametrize("seed", range(40))
    def test_label_matches_activity_oracle(self, cfg, seed):
        rng = np.random.default_rng(seed)
        n_active = 1 + seed % 2
        op, dims = sample_dominant_operation(rng, cfg, n_active)
        assert active_dimensions(op) == dims

    def test_length_bounds(self, cfg):
        rng = np.random.default_rng(1)
        lengths = []
        for _ in range(50):
            op, _ = sample_dominant_operation(rng, cfg, 2)
            lengths.append(len(op))
        assert max(lengths) <= cfg.max_frames == 50
        assert min(lengths) >= cfg.min_frames == 20

    def test_rejects_bad_n_active(self, cfg):
        with pytest.raises(ValueError):
            sample_dominant_operation(np.random.default_rng(0), cfg, 3)


class TestRenderGesture:
    def test_zero_operation_gives_bias_only(self, cfg):
        rng = np.random.default_rng(2)
        style = sample_user_style(rng, "u", cfg)
        op, dims = sample_dominant_operation(rng, cfg, 1)
        zero_op = type(op)(np.zeros_like(op.frames), op.rate_hz)
        quiet = type(style)(style.user_id, style.templates, style.motion_scale,
                            style.resting_bias, 0.0)
        g = render_gesture(quiet, zero_op, dims, np.random.default_rng(0))
        expected = np.tile(style.resting_bias, (len(op), 1)).reshape(-1, 6, 6)
        assert np.allclose(g.frames, expected, atol=1e-6)

    def test_two_styles_differ(self, cfg):
        rng = np.random.default_rng(3)
        s1 = sample_user_style(rng, "a", cfg)
        s2 = sample_user_style(rng, "b", cfg)
        op, dims = sample_dominant_operation(rng, cfg, 2)
        g1 = render_gesture(s1, op, dims, np.random.default_rng(0))
        g2 = render_gesture(s2, op, dims, np.random.default_rng(0))
        assert np.linalg.norm(g1.frames - g2.frames) > 0

    def test_deterministic_given_seed(self, cfg):
        rng = np.random.default_rng(4)
        style = sample_user_style(rng, "u", cfg)
        op, dims = sample_dominant_operation(rng, cfg, 1)
        g1 = render_gesture(style, op, dims, np.random.default_rng(9))
        g2 = render_gesture(style, op, dims, np.random.default_rng(9))
        assert np.array_equal(g1.frames, g2.frames)

    def test_missing_axis_errors(self, cfg):
        rng = np.random.default_rng(5)
        style = sample_user_style(rng, "u", cfg)
        op, dims = sample_dominant_operation(rng, cfg, 1)
        broken = dict(style.templates)
        (ax,) = dims
        del broken[ax]
        with pytest.raises(ValueError):
            lame = type(style)(style.user_id, broken, style.motion_scale,
                               style.resting_bias, style.style_noise)
            render_gesture(lame, op, dims, rng)

    def test_linear_superposition(self, cfg):
        rng = np.random.default_rng(6)
        style = sample_user_style(rng, "u", cfg)
        noiseless = type(style)(style.user_id, style.templates,
                                style.motion_scale, style.resting_bias, 0.0)
        op_a, dims_a = sample_dominant_operation(
            rng, cfg, 1, axes=(DominantAxis.TX,))
        op_b, dims_b = sample_dominant_operation(
            rng, cfg, 1, axes=(DominantAxis.RY,))
        n = min(len(op_a), len(op_b))
        fa, fb = op_a.frames[:n], op_b.frames[:n]
        op_ab = type(op_a)(fa + fb, op_a.rate_hz)
        op_a2 = type(op_a)(fa, op_a.rate_hz)
        op_b2 = type(op_b)(fb, op_b.rate_hz)
        r = np.random.default_rng(0)
        g_ab = render_gesture(noiseless, op_ab, dims_a | dims_b, r).frames
        g_a = render_gesture(noiseless, op_a2, dims_a | dims_b, r).frames
        g_b = render_gesture(noiseless, op_b2, dims_a | dims_b, r).frames
        bias = np.tile(style.resting_bias, (n, 1)).reshape(-1, 6, 6)
        assert np.allclose(g_ab, g_a + g_b - bias, atol=1e-5)

    def test_least_squares_inverse_oracle(self, cfg):
        rng = np.random.default_rng(7)
        style = sample_user_style(rng, "u", cfg)
        op, dims = sample_dominant_operation(rng, cfg, 2)
        g = render_gesture(style, op, dims, np.random.default_rng(1))
        recovered = recover_operation(style, g, dims)
        for ax in dims:
            err = np.abs(recovered[:, ax.index] - op.frames[:, ax.index])
            # lagged samples at the clip tail are unobservable
            lag = style.templates[ax].lag
            upto = len(op) - lag
            assert err[:upto].max() < 10 * style.style_noise


class TestDatasetProtocol:
    @pytest.mark.parametrize("seed", [0, 1, 17])
    def test_split_counts_exact(self, seed):
        cfg = GenConfig(seed=seed)
        ds = build_dataset(cfg)
        assert len(ds.train) == 10 * 36 == 360
        assert len(ds.test_in_sample) == 10 * 36 == 360
        assert len(ds.test_out_sample) == 5 * 72 == 360

        for uid in ds.users_in:
            tr = [c for c in ds.train if c.user_id == uid]
            te = [c for c in ds.test_in_sample if c.user_id == uid]
            assert len(tr) == 36 and len(te) == 36
            tr_single = [c for c in tr if len(c.active_dims) == 1]
            te_single = [c for c in te if len(c.active_dims) == 1]
            assert len(tr_single) == 12 and len(te_single) == 12
            tr_double = [c for c in tr if len(c.active_dims) == 2]
            te_double = [c for c in te if len(c.active_dims) == 2]
            assert len(tr_double) == 24 and len(te_double) == 24
            train_pairs = {c.active_dims for c in tr_double}
            shared = [c for c in te_double if c.active_dims in train_pairs]
            assert len(shared) == 12

    def test_out_sample_users_disjoint(self):
        ds = build_dataset(GenConfig(seed=3))
        train_users = {c.user_id for c in ds.train}
        out_users = {c.user_id for c in ds.test_out_sample}
        assert train_users.isdisjoint(out_users)

    def test_reproducible_given_seed(self):
        a = build_dataset(GenConfig(seed=5))
        b = build_dataset(GenConfig(seed=5))
        assert len(a.train) == len(b.train)
        for ca, cb in zip(a.train, b.train):
            assert ca == cb

    def test_style_round_trip(self):
        corpus = build_corpus(GenConfig(seed=9))
        uid = corpus.dataset.users_in[0]
        style = corpus.styles[uid]
        back = style_from_dict(style_to_dict(style))
        assert back.user_id == style.user_id
        assert np.array_equal(back.resting_bias, style.resting_bias)
        for ax in AXIS_ORDER:
            assert np.array_equal(back.templates[ax].weights,
                                  style.templates[ax].weights)
            assert back.templates[ax].lag == style.templates[ax].lag

    def test_clip_ids_unique(self):
        ds = build_dataset(GenConfig(seed=2))
        ids = [c.clip_id for split in (ds.train, ds.test_in_sample,
                                       ds.test_out_sample) for c in split]
        assert len(ids) == len(set(ids))

    def test_protocol_structure_per_user(self):
        cfg = GenConfig(seed=4)
        rng = np.random.default_rng(0)
        style = sample_user_style(rng, "u", cfg)
        clips = generate_user_clips("u", style, rng, cfg)
        assert len(clips.all_clips()) == 72
        singles = list(itertools.chain.from_iterable(clips.singles.values()))
        assert len(singles) == 24
        assert all(len(c.active_dims) == 1 for c in singles)
        tr, te = split_in_sample(clips, rng)
        assert len(tr) == 36 and len(te) == 36
