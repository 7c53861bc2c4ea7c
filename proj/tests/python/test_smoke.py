import math

import numpy as np
import pytest

import shapeset


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    data = tmp_path_factory.mktemp("data")
    shapeset.write_synthetic_dataset(str(data), n=120, seed=3)
    model, losses = shapeset.train_model(str(data), steps=40, width=16, blocks=1, diffusion_steps=20, seed=1)
    return model, losses


def test_generate_dataset_shapes():
    shapes = shapeset.generate_dataset(4, seed=2, points_per_part=32)
    assert len(shapes) == 4
    for s in shapes:
        cats = [c for c, _ in s["parts"]]
        assert 0 in cats and 2 in cats
        assert cats == sorted(cats)
        for _, pts in s["parts"]:
            assert pts.shape == (32, 3)
    again = shapeset.generate_dataset(4, seed=2, points_per_part=32)
    assert all(np.array_equal(a[1], b[1]) for x, y in zip(shapes, again) for a, b in zip(x["parts"], y["parts"]))


def test_ssm_round_trip_and_decode_at_origin():
    shapes = shapeset.generate_dataset(60, seed=5, points_per_part=48)
    seats = [pts for s in shapes for c, pts in s["parts"] if c == 0]
    ssm = shapeset.fit_ssm(seats, q=8)
    assert ssm.q == 8
    assert np.array_equal(ssm.decode(np.zeros(8)).reshape(-1), ssm.mean)
    z = ssm.encode(seats[3])
    assert np.max(np.abs(ssm.decode(z) - seats[3])) < 1e-6
    fit, residual = ssm.fit_latent(ssm.decode(z), ridge=0.0)
    assert np.max(np.abs(fit - z)) < 1e-6
    assert residual < 1e-10
    with pytest.raises(shapeset.ValidationError):
        ssm.decode(np.zeros(7))


def test_losses_and_noise():
    assert shapeset.kl_from_moments(0.0, 1.0) == 0.0
    assert shapeset.kl_from_moments(1.0, 1.0) == 0.5
    out = shapeset.forward_noise(0.25, np.ones((1, 1)), np.full((1, 1), 0.5))
    assert abs(out[0, 0] - (0.5 + math.sqrt(3) / 4)) < 1e-12
    with pytest.raises(shapeset.NumericalError):
        shapeset.kl_from_moments(0.0, 0.0)


def test_metrics_identities():
    rng = np.random.default_rng(0)
    clouds = [rng.normal(size=(40, 3)) for _ in range(6)]
    assert shapeset.chamfer(clouds[0], clouds[0]) == 0.0
    assert shapeset.emd(clouds[0], clouds[0][::-1].copy()) == pytest.approx(0.0, abs=1e-12)
    assert shapeset.mmd(clouds, clouds) == 0.0
    assert shapeset.cov(clouds, clouds) == 1.0
    assert shapeset.nna(clouds, clouds, "emd") == 0.0
    with pytest.raises(shapeset.Error):
        shapeset.mmd(clouds, clouds, "nope")


def test_train_sample_complete_edit(trained, tmp_path):
    model, losses = trained
    assert len(losses) == 40 and all(math.isfinite(v) for v in losses)
    assert model.m == 4 and model.q == 8 and model.steps == 20

    a = model.sample(3, seed=4)
    assert a == model.sample(3, seed=4)
    assert model.sample(1, seed=4)[0] == a[0]
    for z in a:
        assert z.values.shape == (model.m, model.q + model.m + 1)

    path = tmp_path / "m.ckpt"
    model.save(str(path))
    back = shapeset.load_checkpoint(str(path))
    assert back.sample(3, seed=4) == a

    leg = model.ssms[2].decode(np.zeros(model.q))
    done = model.complete(leg, k=2, seed=1)
    assert done["category"] == 2
    assert len(done["latents"]) == 2
    for s in done["shapes"]:
        assert 2 in [c for c, _ in s["parts"]]

    base = done["latents"][0]
    z = np.linspace(-1, 1, model.q)
    replaced = model.replace_part(base, 2, z)
    legs = [pts for c, pts in model.decode(replaced)["parts"] if c == 2]
    assert np.array_equal(legs[0], model.ssms[2].decode(z))
    same = model.interpolate(base, done["latents"][1], 2, 0.0)
    assert same == base
