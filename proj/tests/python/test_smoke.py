import json
import math

import numpy as np
import pytest

import advdiff


@pytest.fixture(scope="module")
def toy():
    x, y = advdiff.generate_synthetic(num_samples=64, seed=3, image_size=16, center_size=6)
    return x, y


@pytest.fixture(scope="module")
def small_model(toy):
    x, y = toy
    out = advdiff.train_classifier(x, y, epochs=2, batch_size=16, seed=1)
    return out["classifier"]


def test_synthetic_shapes_and_balance(toy):
    x, y = toy
    assert x.shape == (64, 1, 16, 16)
    assert x.dtype == np.float64
    assert x.min() >= 0.0 and x.max() <= 1.0
    assert y.sum() == 32


def test_schedule_matches_product_loop():
    s = advdiff.NoiseSchedule.linear()
    betas = np.linspace(1e-4, 0.02, 1000)
    assert s.num_steps == 1000
    assert len(s.alpha_bars) == 1001
    assert s.alpha_bars[0] == 1.0
    assert math.isclose(s.alpha_bars[-1], float(np.prod(1.0 - betas)), rel_tol=1e-10)
    assert s.step(0.04) == 40


def test_forward_diffuse_closed_form():
    s = advdiff.NoiseSchedule.linear()
    x = np.full((2, 1, 4, 4), 0.5)
    noisy, noise = advdiff.forward_diffuse(x, 100, s, seed=7)
    ab = s.alpha_bars[100]
    np.testing.assert_allclose(noisy, math.sqrt(ab) * x + math.sqrt(1 - ab) * noise, atol=1e-12)
    again, _ = advdiff.forward_diffuse(x, 100, s, seed=7)
    np.testing.assert_array_equal(noisy, again)


def test_classifier_gradient_matches_finite_difference(small_model, toy):
    x, y = toy
    xs, ys = x[:2], y[:2]
    loss, g = small_model.loss_and_input_grad(xs, ys)
    assert g.shape == xs.shape
    idx = np.unravel_index(np.argmax(np.abs(g)), g.shape)
    h = 1e-2
    xp, xm = xs.copy(), xs.copy()
    xp[idx] += h
    xm[idx] -= h
    fd = (small_model.loss_and_input_grad(xp, ys)[0] - small_model.loss_and_input_grad(xm, ys)[0]) / (2 * h)
    assert fd == pytest.approx(g[idx], rel=0.05, abs=1e-4)


def test_pgd_respects_the_ball(small_model, toy):
    x, y = toy
    eps = 8 / 255
    adv = advdiff.pgd_attack(small_model, x[:8], y[:8], epsilon=eps, seed=2)
    assert advdiff.linf_distance(adv, x[:8]) <= eps + 1e-12
    assert adv.min() >= 0.0 and adv.max() <= 1.0
    same = advdiff.pgd_attack(small_model, x[:8], y[:8], epsilon=0.0, seed=2)
    np.testing.assert_array_equal(same, x[:8])


def test_defenses_are_neutral_at_t_zero(small_model, toy):
    x, _ = toy
    s = advdiff.NoiseSchedule.linear()
    base = small_model.predict_proba(x[:4])
    np.testing.assert_array_equal(advdiff.noise_defense(small_model, x[:4], 0.0, s, seed=1), base)
    pred = advdiff.Predictor(base_width=8, seed=0)
    np.testing.assert_array_equal(advdiff.purify(x[:4], 0.0, pred, s, seed=1), x[:4])
    out = advdiff.purify(x[:4], 0.01, pred, s, seed=1)
    assert out.shape == x[:4].shape and out.min() >= 0.0 and out.max() <= 1.0


def test_diffusion_training_runs(toy):
    x, _ = toy
    s = advdiff.NoiseSchedule.linear()
    pred, losses = advdiff.train_diffusion(x[:16], s, epochs=1, base_width=8, seed=4)
    assert len(losses) == 1 and math.isfinite(losses[0])


def test_save_load_round_trip(small_model, toy, tmp_path):
    x, _ = toy
    small_model.save(tmp_path / "c.ckpt", train_seed=1)
    back = advdiff.Classifier.load(tmp_path / "c.ckpt")
    np.testing.assert_array_equal(back.logits(x[:3]), small_model.logits(x[:3]))


def test_bad_shapes_raise(small_model):
    with pytest.raises(ValueError):
        small_model.predict(np.zeros((2, 16, 16)))


def test_cli_in_process(tmp_path):
    code = advdiff.run_cli(["gen-data", "--out", str(tmp_path), "--num-samples", "8", "--image-size", "16",
                            "--center-size", "6"])
    assert code == 0
    manifest = json.loads((tmp_path / "gen-data.manifest.json").read_text())
    assert manifest["subcommand"] == "gen-data"
    assert advdiff.run_cli(["no-such-command"]) == 1
