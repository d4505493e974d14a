import numpy as np
import pytest
import torch

from unires.diffusion import forward_diffuse, make_schedule
from unires.predictors import (AnalyticGaussianPredictor, Condition,
                               TinyCondDenoiser, TrainConfig, _draw_batch,
                               gradient_check, load_checkpoint,
                               save_checkpoint, task_index, train,
                               TASK_VOCAB)


class TestCondition:
    def test_task_indices(self):
        assert task_index(None) == 0
        for i, t in enumerate(TASK_VOCAB):
            assert task_index(t) == i + 1

    def test_unknown_task_rejected(self):
        with pytest.raises(ValueError):
            Condition(lq=None, task="XX")


class TestAnalyticPredictor:
    def test_point_mass_recovers_true_noise(self, sched, rng):
        # with sigma0 = 0 the posterior noise estimate is exact
        mu = rng.uniform(0, 1, (1, 8, 8))
        pred = AnalyticGaussianPredictor(mu=mu, sigma0_sq=0.0, sched=sched)
        eps = rng.standard_normal(mu.shape)
        for t in (1, 100, 500, 1000):
            z_t = forward_diffuse(mu, t, eps, sched)
            assert np.allclose(pred.predict(z_t, t), eps, atol=1e-9)

    def test_posterior_mean_limits(self, sched, rng):
        mu = rng.uniform(0, 1, (1, 8, 8))
        z = rng.standard_normal(mu.shape)
        # wide prior at high t: posterior collapses toward mu
        pred = AnalyticGaussianPredictor(mu=mu, sigma0_sq=0.0, sched=sched)
        assert np.allclose(pred.posterior_mean(z, 1000), mu)
        # huge data variance at t=1 (z almost equals x0): posterior follows z
        wide = AnalyticGaussianPredictor(mu=mu, sigma0_sq=1e6, sched=sched)
        assert np.allclose(wide.posterior_mean(z, 1), z, atol=1e-3)

    def test_consistency_with_posterior_mean(self, sched, rng):
        # eps_hat and E[x0|z] must satisfy z = sqrt(ab) x0 + sqrt(1-ab) eps
        mu = rng.uniform(0, 1, (1, 6, 6))
        pred = AnalyticGaussianPredictor(mu=mu, sigma0_sq=0.3, sched=sched)
        z = rng.standard_normal(mu.shape)
        t = 400
        ab = sched.alpha_bar(t)
        recon = np.sqrt(ab) * pred.posterior_mean(z, t) \
            + np.sqrt(1 - ab) * pred.predict(z, t)
        assert np.allclose(recon, z, atol=1e-12)

    def test_validation(self, sched):
        with pytest.raises(ValueError):
            AnalyticGaussianPredictor(mu=np.zeros((1, 4, 4)), sigma0_sq=-1.0,
                                      sched=sched)
        with pytest.raises(ValueError):
            AnalyticGaussianPredictor(mu=np.full((1, 4, 4), np.nan),
                                      sched=sched)


@pytest.fixture(scope="module")
def tiny_model():
    torch.manual_seed(0)
    return TinyCondDenoiser(widths=(8, 8, 16), emb_dim=16,
                            working_resolution=16)


@pytest.fixture(scope="module")
def tiny_dataset():
    r = np.random.default_rng(0)
    from unires.degrade import TASKS
    return {t: [(r.uniform(0, 1, (3, 16, 16)), r.uniform(0, 1, (3, 16, 16)))
                for _ in range(4)] for t in TASKS}


class TestDenoiser:
    def test_output_shape_and_zero_init(self, tiny_model, rng):
        # the learned head starts zero-initialized, so a fresh model's noise
        # estimate is exactly the analytic component sqrt(1 - abar_t) z_t
        z = rng.standard_normal((3, 16, 16))
        fresh = TinyCondDenoiser(widths=(8, 8, 16), emb_dim=16,
                                 working_resolution=16)
        sched = make_schedule()
        for t in (1, 500, 1000):
            out = fresh.predict(z, t, Condition(lq=None, task=None))
            assert out.shape == z.shape
            expect = np.sqrt(1.0 - sched.alpha_bar(t)) * z
            # the model keeps its schedule in float32
            assert np.allclose(out, expect, rtol=1e-3, atol=1e-6)

    def test_conditioning_changes_output(self, tiny_dataset, rng):
        torch.manual_seed(1)
        m = TinyCondDenoiser(widths=(8, 8, 16), emb_dim=16,
                             working_resolution=16)
        sched = make_schedule(50, 1e-4, 0.02)
        train(m, tiny_dataset, sched,
              TrainConfig(steps=10, batch_size=4, seed=0))
        z = rng.standard_normal((3, 16, 16))
        lq = rng.uniform(0, 1, (3, 16, 16))
        a = m.predict(z, 25, Condition(lq=lq, task="SR"))
        b = m.predict(z, 25, Condition(lq=lq, task="DN"))
        c = m.predict(z, 25, Condition(lq=None, task="SR"))
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_dropped_lq_differs_from_black_lq(self, tiny_dataset, rng):
        # the presence plane disambiguates "no condition" from a black image
        torch.manual_seed(2)
        m = TinyCondDenoiser(widths=(8, 8, 16), emb_dim=16,
                             working_resolution=16)
        sched = make_schedule(50, 1e-4, 0.02)
        train(m, tiny_dataset, sched,
              TrainConfig(steps=10, batch_size=4, seed=0))
        z = rng.standard_normal((3, 16, 16))
        a = m.predict(z, 25, Condition(lq=np.zeros((3, 16, 16)), task=None))
        b = m.predict(z, 25, Condition(lq=None, task=None))
        assert not np.array_equal(a, b)

    def test_shape_mismatch_rejected(self, tiny_model, rng):
        z = rng.standard_normal((3, 16, 16))
        with pytest.raises(ValueError):
            tiny_model.predict(z, 10, Condition(lq=np.zeros((3, 8, 8)),
                                                task=None))
        with pytest.raises(ValueError):
            tiny_model.predict(rng.standard_normal((1, 16, 16)), 10,
                               Condition())


class TestTraining:
    def test_loss_decreases(self, tiny_dataset):
        torch.manual_seed(3)
        m = TinyCondDenoiser(widths=(8, 8, 16), emb_dim=16,
                             working_resolution=16)
        sched = make_schedule(100, 1e-4, 0.02)
        hist = train(m, tiny_dataset, sched,
                     TrainConfig(steps=200, batch_size=8, lr=1e-3, seed=0,
                                 log_every=10))
        assert hist.steps[0] == 1 and hist.steps[-1] == 200
        early = np.mean(hist.losses[:3])
        late = np.mean(hist.losses[-3:])
        assert late < early

    def test_missing_task_rejected(self, tiny_dataset):
        m = TinyCondDenoiser(widths=(8, 8, 16), working_resolution=16)
        bad = dict(tiny_dataset)
        bad["DD"] = []
        with pytest.raises(ValueError):
            train(m, bad, make_schedule(10), TrainConfig(steps=1))

    def test_batch_composition(self, tiny_dataset):
        sched = make_schedule(100, 1e-4, 0.02)
        cfg = TrainConfig(steps=1, batch_size=256, drop_lq=0.5, drop_task=0.5,
                          seed=0)
        zt, ts, lqb, present, idx, eps = _draw_batch(
            tiny_dataset, cfg, sched, np.random.default_rng(0), 3, 16)
        assert zt.shape == (256, 3, 16, 16)
        assert ts.min() >= 1 and ts.max() <= 100
        # both drop kinds must actually occur at rate 0.5
        n_nolq = int((present[:, 0, 0, 0] == 0).sum())
        n_notask = int((idx == 0).sum())
        assert 64 < n_nolq < 192
        assert 64 < n_notask < 192
        # dropped-lq rows are zeroed
        assert torch.all(lqb[present[:, 0, 0, 0] == 0] == 0)

    def test_prompt_slots_drawn_when_enabled(self, tiny_dataset):
        sched = make_schedule(100, 1e-4, 0.02)
        cfg = TrainConfig(steps=1, batch_size=512, pos_neg_prob=0.1, seed=0)
        _, _, _, _, idx, _ = _draw_batch(
            tiny_dataset, cfg, sched, np.random.default_rng(1), 3, 16)
        pos = task_index("POS")
        neg = task_index("NEG")
        assert 20 < int((idx == pos).sum()) < 90
        assert 20 < int((idx == neg).sum()) < 90


class TestGradientCheck:
    def test_autograd_matches_finite_differences(self, tiny_dataset):
        torch.manual_seed(4)
        m = TinyCondDenoiser(widths=(8, 8, 16), emb_dim=16,
                             working_resolution=16)
        sched = make_schedule(100, 1e-4, 0.02)
        cfg = TrainConfig(steps=1, batch_size=4, seed=0)
        probe = _draw_batch(tiny_dataset, cfg, sched,
                            np.random.default_rng(0), 3, 16)
        assert gradient_check(m, probe, n_params=32) < 1e-3


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tmp_path, tiny_dataset, rng):
        torch.manual_seed(5)
        m = TinyCondDenoiser(widths=(8, 8, 16), emb_dim=16,
                             working_resolution=16)
        train(m, tiny_dataset, make_schedule(50), TrainConfig(steps=5,
                                                              batch_size=4))
        p = tmp_path / "m.ckpt"
        save_checkpoint(m, p)
        m2, header = load_checkpoint(p)
        assert header["widths"] == [8, 8, 16]
        z = rng.standard_normal((3, 16, 16))
        cond = Condition(lq=rng.uniform(0, 1, (3, 16, 16)), task="MD")
        assert np.array_equal(m.predict(z, 30, cond), m2.predict(z, 30, cond))

    def test_schedule_defaults_stored(self, tmp_path):
        m = TinyCondDenoiser(widths=(8, 8, 16), working_resolution=16)
        p = tmp_path / "m.ckpt"
        save_checkpoint(m, p, schedule_defaults={"T": 123, "beta_start": 0.01,
                                                 "beta_end": 0.02})
        _, header = load_checkpoint(p)
        assert header["schedule_defaults"]["T"] == 123

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.ckpt"
        p.write_bytes(b"not a checkpoint at all")
        with pytest.raises(ValueError):
            load_checkpoint(p)

    def test_truncated_rejected(self, tmp_path):
        m = TinyCondDenoiser(widths=(8, 8, 16), working_resolution=16)
        p = tmp_path / "m.ckpt"
        save_checkpoint(m, p)
        data = p.read_bytes()
        p.write_bytes(data[:-100])
        with pytest.raises(ValueError):
            load_checkpoint(p)
