import numpy as np
import pytest
import torch

from cohand.domain import Clip, Dataset, DominantAxis, DynamicGesture, HandlingOperation
from cohand.evaluation import (
    DEFAULT_LEVELS,
    EvalCell,
    EvalResult,
    NoiseLevel,
    SettingMismatch,
    TestSetting,
    dummy_cell,
    evaluate,
    export_attention,
    high_frequency_ratio,
    make_table,
    noise_sweep,
    predict_zero_mse,
    select_context_eval,
    spectrum,
)
from cohand.model import ConditionalHandlingModel, ModelConfig
from cohand.synthetic import GenConfig, build_dataset

torch.set_num_threads(1)


@pytest.fixture(scope="module")
def dataset():
    cfg = GenConfig(seed=21, n_in_sample_users=2, n_out_sample_users=1)
    return build_dataset(cfg)


@pytest.fixture(scope="module")
def tiny_model():
    return ConditionalHandlingModel(
        ModelConfig.reduced(hidden=8, feat=8, latent_dim=4, dtype="float32"),
        seed=0)


class OracleStub:
    """Returns ground truth with unit variance."""

    def predict(self, target, contexts, frames):
        y = target.operation.frames.astype(np.float64)
        return y, np.ones_like(y)


class ZeroStub:
    def predict(self, target, contexts, frames):
        y = target.operation.frames
        return np.zeros_like(y, dtype=np.float64), np.ones(y.shape)


class TestEvaluateContract:
    def test_oracle_stub_zero_mse(self, dataset):
        res = evaluate(OracleStub(), dataset, TestSetting.DP_UP, seed=0,
                       max_targets=20)
        assert res.mse == 0.0

    def test_zero_stub_matches_magnitude(self, dataset):
        res = evaluate(ZeroStub(), dataset, TestSetting.DP_UP, seed=0,
                       max_targets=20)
        expect = predict_zero_mse(dataset, TestSetting.DP_UP, max_targets=20)
        assert res.mse == pytest.approx(expect, rel=1e-12)

    def test_repeat_same_seed_identical(self, dataset, tiny_model):
        r1 = evaluate(tiny_model, dataset, TestSetting.DP_UP, seed=5,
                      max_targets=12)
        r2 = evaluate(tiny_model, dataset, TestSetting.DP_UP, seed=5,
                      max_targets=12)
        assert r1.elbo == r2.elbo and r1.mse == r2.mse

    def test_does_not_mutate_model(self, dataset, tiny_model):
        before = [p.detach().clone() for p in tiny_model.parameters()]
        evaluate(tiny_model, dataset, TestSetting.DM_UM, seed=0,
                 max_targets=8)
        for p0, p1 in zip(before, tiny_model.parameters()):
            assert torch.equal(p0, p1)

    def test_unseen_requires_out_split(self, tiny_model, dataset):
        ds = Dataset(train=dataset.train, test_in_sample=dataset.test_in_sample,
                     test_out_sample=[])
        with pytest.raises(SettingMismatch):
            evaluate(tiny_model, ds, TestSetting.UNSEEN, seed=0)


class TestContextSelection:
    @pytest.mark.parametrize("setting,same_user,covered", [
        (TestSetting.DP_UP, True, True),
        (TestSetting.DP_UM, False, True),
        (TestSetting.DM_UP, True, False),
        (TestSetting.DM_UM, False, False),
    ])
    def test_rules(self, dataset, setting, same_user, covered):
        rng = np.random.default_rng(0)
        for tgt in dataset.test_in_sample[:25]:
            ctx = select_context_eval(dataset, tgt, setting, rng)
            assert len(ctx) == 3
            for c in ctx:
                assert (c.user_id == tgt.user_id) == same_user
            union = frozenset().union(*(c.active_dims for c in ctx))
            if covered:
                assert tgt.active_dims <= union
            else:
                for c in ctx:
                    assert not (c.active_dims & tgt.active_dims)

    def test_unseen_draws_from_train(self, dataset):
        rng = np.random.default_rng(1)
        tgt = dataset.test_out_sample[0]
        ctx = select_context_eval(dataset, tgt, TestSetting.UNSEEN, rng)
        train_ids = {c.clip_id for c in dataset.train}
        assert all(c.clip_id in train_ids for c in ctx)
        assert all(c.user_id != tgt.user_id for c in ctx)


class TestNoiseSweep:
    def test_levels_parameterization(self):
        assert DEFAULT_LEVELS[0].sigma_r == 0.0
        assert DEFAULT_LEVELS[0].sigma_t == 0.0
        assert DEFAULT_LEVELS[10].sigma_r == pytest.approx(0.1)
        assert DEFAULT_LEVELS[10].sigma_t == pytest.approx(0.05)
        assert DEFAULT_LEVELS[4].sigma_r == pytest.approx(0.04)
        with pytest.raises(ValueError):
            NoiseLevel(11)

    def test_level_zero_equals_clean(self, dataset, tiny_model):
        pts = noise_sweep(tiny_model, dataset,
                          levels=(NoiseLevel(0), NoiseLevel(3)), repeats=2,
                          base_seed=9, max_targets=10)
        clean = evaluate(tiny_model, dataset, TestSetting.DP_UP, seed=9,
                         max_targets=10)
        assert pts[0].elbo[0] == clean.elbo
        assert pts[0].mse[0] == clean.mse
        assert len(pts[0].mse) == 2

    def test_noisy_setting_level_zero_match(self, dataset, tiny_model):
        # noisy-setting MSE at zero noise equals the clean same-user result
        noisy0 = evaluate(tiny_model, dataset, TestSetting.NOISY, seed=4,
                          noise=(0.0, 0.0), max_targets=10)
        clean = evaluate(tiny_model, dataset, TestSetting.DP_UP, seed=4,
                         max_targets=10)
        assert noisy0.mse == clean.mse


class TestSpectrum:
    def test_constant_is_dc_only(self):
        res = spectrum(np.full(32, 1.7), 10.0)
        assert res.hf_ratio == 0.0

    def test_nyquist_tone(self):
        x = np.cos(np.pi * np.arange(32))  # alternating +-1 at 5 Hz
        res = spectrum(x, 10.0)
        assert res.hf_ratio == pytest.approx(1.0)

    def test_low_tone_matches_direct_dft_oracle(self):
        n, rate, f0 = 100, 10.0, 0.5
        t = np.arange(n) / rate
        x = np.sin(2 * np.pi * f0 * t)
        res = spectrum(x, rate)
        # independent O(N^2) DFT
        ks = np.arange(n // 2 + 1)
        coeffs = np.array([np.sum(x * np.exp(-2j * np.pi * k * np.arange(n) / n))
                           for k in ks])
        power = np.abs(coeffs) ** 2
        freqs = ks * rate / n
        expect = power[freqs > rate / 4].sum() / power.sum()
        assert res.hf_ratio == pytest.approx(expect, abs=1e-12)
        assert res.hf_ratio < 0.01

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            spectrum(np.ones(7), 10.0)


class TestAttentionExport:
    def test_rows_sum_to_one(self, dataset, tiny_model, tmp_path):
        tgt = dataset.test_in_sample[0]
        ctx = dataset.train[:3]
        art = export_attention(tiny_model, tgt, ctx, seed=0,
                               path=tmp_path / "att.json")
        w = np.array(art["weights"])
        assert w.shape == (len(tgt), sum(len(c) for c in ctx))
        assert np.allclose(w.sum(axis=1), 1.0, atol=1e-6)
        assert art["boundaries"][0] == [0, len(ctx[0])]
        assert (tmp_path / "att.json").exists()

    def test_identical_context_frames_uniform(self, tiny_model):
        frame_x = np.full((1, 6, 6), 0.3, np.float32)
        frame_y = np.full((1, 6), 0.1, np.float32)
        ctx = [Clip("u", f"c{i}", DynamicGesture(frame_x.copy()),
                    HandlingOperation(frame_y.copy()),
                    frozenset({DominantAxis.TX})) for i in range(4)]
        rng = np.random.default_rng(0)
        tgt = Clip("u", "t",
                   DynamicGesture(rng.normal(0, 0.3, (5, 6, 6))
                                  .astype(np.float32)),
                   HandlingOperation(rng.normal(0, 0.1, (5, 6))
                                     .astype(np.float32)),
                   frozenset({DominantAxis.TX}))
        art = export_attention(tiny_model, tgt, ctx, seed=0)
        w = np.array(art["weights"])
        assert np.allclose(w, 0.25, atol=1e-6)


class TestTable:
    def test_dummy_na_layout_and_bold(self):
        results = {}
        for s in TestSetting:
            results[("main", s.value)] = EvalCell(elbo=-10.0, mse=1.0)
            results[("dummy-lstm", s.value)] = dummy_cell(
                s, EvalResult(elbo=5.0, mse=2.0, n_targets=3))
        report = make_table(results, variants=["main", "dummy-lstm"])
        assert report.cells[("dummy-lstm", "D+U-")] is None
        assert report.cells[("dummy-lstm", "D-U+")] is None
        assert report.cells[("dummy-lstm", "D-U-")] is None
        cell = report.cells[("dummy-lstm", "D+U+")]
        assert cell.elbo is None and cell.mse == 2.0
        unseen = report.cells[("dummy-lstm", "unseen")]
        assert unseen.elbo == 5.0 and unseen.mse == 2.0
        text = report.render_text()
        assert "NA" in text
        assert "**-10.000**" in text  # column minimum bolded

    def test_settings_order(self):
        results = {("main", s.value): EvalCell(elbo=0.0, mse=0.0)
                   for s in TestSetting}
        report = make_table(results)
        assert report.settings == ["D+U+", "D+U-", "D-U+", "D-U-",
                                   "unseen", "noisy"]


def test_high_frequency_ratio_bounds(dataset, tiny_model):
    r = high_frequency_ratio(tiny_model, dataset, noise=(0.05, 0.1), seed=0,
                             max_targets=6)
    assert 0.0 <= r <= 1.0
