import math

import numpy as np
import pytest
import torch
import torch.nn as nn
from torch.func import functional_call

from skyaug.gan.gan_model import (TrainConfig, load_discriminator, load_generator, sample, save_network,
                                  train_gan)
from skyaug.gan.networks import (adam_step, adam_step_count, backward, bce_loss, define_D, define_G,
                                 forward_discriminator, forward_generator, make_adam, register_finite_checks)
from skyaug.preprocessing.augment import normalize
from skyaug.preprocessing.imageio import synth_dataset
from skyaug.utils.errors import DataError, NonFiniteError

KINK_MARGIN = 1e-3


def test_generator_with_zero_weights_outputs_zeros():
    netG = define_G(latent_dim=100, image_side=32, init_type="zeros")
    np.testing.assert_array_equal(forward_generator(netG, np.ones(100)), np.zeros((32, 32)))


def test_discriminator_with_zero_weights_outputs_one_half():
    netD = define_D(image_side=32, init_type="zeros")
    assert forward_discriminator(netD, np.zeros((32, 32))) == 0.5


def test_forward_codomains_and_determinism():
    torch.manual_seed(0)
    netG, netD = define_G(latent_dim=100, image_side=16), define_D(image_side=16)
    z = np.random.default_rng(0).standard_normal((100, 100))

    images = forward_generator(netG, z)
    assert images.shape == (100, 16, 16)
    assert np.all(np.abs(images) < 1)
    np.testing.assert_array_equal(images, forward_generator(netG, z))

    probabilities = forward_discriminator(netD, images)
    assert np.all((probabilities > 0) & (probabilities < 1))


def test_forward_shape_mismatch():
    netG, netD = define_G(latent_dim=100, image_side=16), define_D(image_side=16)
    with pytest.raises(ValueError, match="shape mismatch"):
        forward_generator(netG, np.zeros(99))
    with pytest.raises(ValueError, match="shape mismatch"):
        forward_discriminator(netD, np.zeros((32, 32)))


def test_bce_loss_closed_forms():
    assert bce_loss(0.5, 1) == pytest.approx(math.log(2), abs=1e-6)
    assert bce_loss(1 - 1e-7, 1) == pytest.approx(1e-7, rel=1e-3)
    assert bce_loss(0.9, 0) == pytest.approx(-math.log(0.1), abs=1e-6)
    # clamped, so total and non-negative
    assert bce_loss(1.0, 1) >= 0 and math.isfinite(bce_loss(0.0, 1))


def test_backward_hand_chain_rule():
    layer = nn.Linear(1, 1, bias=False)
    layer.weight.data.fill_(3.0)
    loss = layer(torch.tensor([[2.0]])).pow(2).sum()
    grads = backward(loss, layer, ["dense"])
    assert grads["dense.weight"].item() == pytest.approx(24.0)


def test_backward_constant_branch_is_exactly_zero():
    layer = nn.Linear(3, 1, bias=False)
    loss = layer(torch.zeros(1, 3)).sum() + 5.0
    grads = backward(loss, layer, ["dense"])
    assert torch.equal(grads["dense.weight"], torch.zeros(1, 3))


def test_backward_non_finite_gradient_names_the_layer():
    layer = nn.Linear(2, 1)
    layer.weight.data[0, 0] = float("nan")
    loss = layer(torch.ones(1, 2)).pow(2).sum()
    with pytest.raises(NonFiniteError, match="probe layer 'weight'"):
        backward(loss, layer, ["probe"])


def test_forward_non_finite_output_names_the_layer():
    netD = define_D(image_side=8)
    netD.model[0].weight.data.fill_(float("inf"))
    hooks = register_finite_checks(netD, "discriminator")
    with pytest.raises(NonFiniteError, match="discriminator layer 'model.0'"):
        netD(-torch.ones(1, 8, 8))
    for h in hooks:
        h.remove()


def _randomize(net, seed, scale=0.5):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in net.parameters():
            p.normal_(0.0, scale, generator=g)
    return net


def _min_activation_input(net, x):
    """Smallest |pre-activation| feeding any (leaky) ReLU."""
    smallest = [float("inf")]

    def hook(module, inputs, output):
        smallest[0] = min(smallest[0], inputs[0].abs().min().item())

    handles = [m.register_forward_hook(hook) for m in net.modules() if isinstance(m, (nn.ReLU, nn.LeakyReLU))]
    with torch.no_grad():
        net(x)
    for h in handles:
        h.remove()
    return smallest[0]


def _away_from_kinks(net, shape, seed):
    g = torch.Generator().manual_seed(seed)
    for _ in range(1000):
        x = torch.randn(*shape, generator=g, dtype=torch.float64)
        if _min_activation_input(net, x) >= KINK_MARGIN:
            return x
    raise RuntimeError("could not sample inputs away from the activation kinks")


def _gradcheck_module(module, x, loss=None):
    names = [n for n, _ in module.named_parameters()]
    params = tuple(p.detach().clone().requires_grad_(True) for p in module.parameters())

    def f(_x, *_params):
        out = functional_call(module, dict(zip(names, _params)), (_x,))
        return loss(out) if loss is not None else out

    x = x.detach().clone().requires_grad_(True)
    return torch.autograd.gradcheck(f, (x,) + params, eps=1e-4, atol=1e-6, rtol=1e-4)


@pytest.mark.parametrize(
    "layer, shape",
    [
        (nn.Linear(3, 4), (2, 3)),
        (nn.Conv2d(1, 2, kernel_size=4, stride=2, padding=1), (1, 1, 4, 4)),
        (nn.ConvTranspose2d(2, 1, kernel_size=4, stride=2, padding=1), (1, 2, 2, 2)),
        (nn.ReLU(), (2, 5)),
        (nn.LeakyReLU(0.2), (2, 5)),
        (nn.Tanh(), (2, 5)),
        (nn.Sigmoid(), (2, 5)),
    ],
)
def test_layer_gradients_match_central_differences(layer, shape):
    layer = _randomize(layer.double(), seed=1)
    g = torch.Generator().manual_seed(2)
    x = torch.randn(*shape, generator=g, dtype=torch.float64)
    if isinstance(layer, (nn.ReLU, nn.LeakyReLU)):
        x = torch.where(x.abs() < KINK_MARGIN, x + 2 * KINK_MARGIN, x)
    assert _gradcheck_module(layer, x)


def test_bce_gradient_matches_central_differences():
    pred = torch.tensor([0.2, 0.7, 0.95], dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda p: bce_loss(p, 1.0), (pred,), eps=1e-4, atol=1e-6, rtol=1e-4)
    assert torch.autograd.gradcheck(lambda p: bce_loss(p, 0.0), (pred,), eps=1e-4, atol=1e-6, rtol=1e-4)


@pytest.mark.parametrize("seed", range(10))
def test_tiny_networks_gradients_match_central_differences(seed):
    netG = _randomize(define_G(latent_dim=2, image_side=4, ngf=4, dtype=torch.float64), seed)
    netD = _randomize(define_D(image_side=4, ndf=2, dtype=torch.float64), seed + 100)
    assert sum(p.numel() for p in netG.parameters()) <= 200
    assert sum(p.numel() for p in netD.parameters()) <= 200

    z = _away_from_kinks(netG, (3, 2), seed)
    assert _gradcheck_module(netG, z)

    x = _away_from_kinks(netD, (3, 4, 4), seed)
    assert _gradcheck_module(netD, x, loss=lambda out: bce_loss(out, 1.0))


def test_adam_first_step_moves_by_learning_rate():
    p = nn.Parameter(torch.zeros(5, dtype=torch.float64))
    optimizer = make_adam([p])
    p.grad = torch.ones_like(p)
    adam_step(optimizer)
    np.testing.assert_allclose(p.detach().numpy(), -0.00025, rtol=1e-6)
    assert adam_step_count(optimizer) == 1


def test_adam_zero_gradient_advances_the_step_only():
    p = nn.Parameter(torch.full((3,), 0.5, dtype=torch.float64))
    optimizer = make_adam([p])
    for _ in range(2):
        p.grad = torch.zeros_like(p)
        adam_step(optimizer)
    assert torch.equal(p.detach(), torch.full((3,), 0.5, dtype=torch.float64))
    assert adam_step_count(optimizer) == 2


def test_adam_is_deterministic():
    def run():
        p = nn.Parameter(torch.linspace(-1, 1, 7, dtype=torch.float64))
        optimizer = make_adam([p])
        for step in range(5):
            p.grad = torch.sin(p.detach() * (step + 1))
            adam_step(optimizer)
        return p.detach()

    assert torch.equal(run(), run())


def _training_images(count, side, seed=3):
    return [normalize(img) for img, _ in synth_dataset(count, side, seed)]


def test_train_one_epoch_bookkeeping():
    cfg = TrainConfig(batch_size=32, epochs=1, image_side=16, seed=0)
    netG, netD, history = train_gan(_training_images(32, 16), cfg)
    assert len(history) == 1
    epoch, d_loss, g_loss = history[0]
    assert epoch == 1 and math.isfinite(d_loss) and math.isfinite(g_loss)
    assert d_loss >= 0 and g_loss >= 0


def test_training_is_deterministic_per_seed():
    data = _training_images(10, 8)
    cfg = TrainConfig(batch_size=4, epochs=2, image_side=8, latent_dim=16, seed=42)
    netG_a, netD_a, history_a = train_gan(data, cfg)
    netG_b, netD_b, history_b = train_gan(data, cfg)
    assert history_a == history_b
    for a, b in zip(list(netG_a.state_dict().values()) + list(netD_a.state_dict().values()),
                    list(netG_b.state_dict().values()) + list(netD_b.state_dict().values())):
        assert torch.equal(a, b)


def test_training_leaves_the_global_rng_alone():
    torch.manual_seed(123)
    expected = torch.rand(3)
    torch.manual_seed(123)
    train_gan(_training_images(4, 8), TrainConfig(batch_size=4, epochs=1, image_side=8, latent_dim=8))
    assert torch.equal(torch.rand(3), expected)


def test_train_on_empty_data():
    with pytest.raises(DataError):
        train_gan([], TrainConfig(image_side=8))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(image_side=10)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


@pytest.mark.slow
def test_single_image_smoke_run():
    target = _training_images(1, 16, seed=5)[0]
    cfg = TrainConfig(batch_size=32, epochs=200, image_side=16, seed=0)
    z = torch.randn(16, cfg.latent_dim, generator=torch.Generator().manual_seed(9))
    errors = {}

    def record(epoch, netG, netD, d_loss, g_loss):
        if epoch in (1, cfg.epochs):
            with torch.no_grad():
                generated = netG(z).numpy()
            assert np.all(np.abs(generated) < 1)
            errors[epoch] = float(np.mean(np.abs(generated - target)))

    train_gan([target], cfg, epoch_callback=record)
    assert errors[cfg.epochs] < errors[1]


def test_sample():
    torch.manual_seed(0)
    netG = define_G(latent_dim=8, image_side=8)
    assert sample(netG, 0, seed=1) == []

    images = sample(netG, 3, seed=1)
    assert len(images) == 3
    for img in images:
        assert img.dtype == np.uint8 and img.shape == (8, 8)
    for a, b in zip(images, sample(netG, 3, seed=1)):
        np.testing.assert_array_equal(a, b)


def test_network_checkpoints(tmp_path):
    torch.manual_seed(0)
    netG, netD = define_G(latent_dim=8, image_side=8), define_D(image_side=8)
    save_network(netG, tmp_path / "G.bin")
    save_network(netD, tmp_path / "D.bin")

    loadedG, loadedD = load_generator(tmp_path / "G.bin"), load_discriminator(tmp_path / "D.bin")
    z = np.random.default_rng(0).standard_normal((2, 8))
    np.testing.assert_array_equal(forward_generator(loadedG, z), forward_generator(netG, z))
    img = forward_generator(netG, z)
    np.testing.assert_array_equal(forward_discriminator(loadedD, img), forward_discriminator(netD, img))
