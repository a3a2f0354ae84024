import logging
from collections import OrderedDict

import numpy as np
import torch
import torch.nn as nn
from torch.nn import init

from skyaug.utils.errors import NonFiniteError

PROB_EPS = 1e-7
LEAKY_SLOPE = 0.2


def init_weights(net, init_type='normal', init_gain=0.02):
    """Initialize network weights.

    Parameters:
        net (network)   -- network to be initialized
        init_type (str) -- the name of an initialization method: normal | xavier | zeros
        init_gain (float)    -- scaling factor for normal and xavier.

    Biases are always set to zero.
    """
    def init_func(m):  # define the initialization function
        classname = m.__class__.__name__
        if hasattr(m, 'weight') and (classname.find('Conv') != -1 or classname.find('Linear') != -1):
            if init_type == 'normal':
                init.normal_(m.weight.data, 0.0, init_gain)
            elif init_type == 'xavier':
                init.xavier_normal_(m.weight.data, gain=init_gain)
            elif init_type == 'zeros':
                init.zeros_(m.weight.data)
            else:
                raise NotImplementedError('initialization method [%s] is not implemented' % init_type)
            if hasattr(m, 'bias') and m.bias is not None:
                init.constant_(m.bias.data, 0.0)

    net.apply(init_func)  # apply the initialization function <init_func>


def init_net(net, init_type='normal', init_gain=0.02, dtype=torch.float32):
    """Cast a network to `dtype` on the CPU and initialize its weights."""
    net.to(dtype=dtype)
    init_weights(net, init_type, init_gain=init_gain)
    return net


class SkyGenerator(nn.Module):
    """Latent vector -> dense projection -> two stride-2 transposed convolutions -> tanh image."""

    def __init__(self, latent_dim=100, image_side=32, ngf=64):
        super().__init__()
        if image_side % 4 != 0:
            raise ValueError(f"image_side must be a multiple of 4, got {image_side}")
        self.latent_dim = latent_dim
        self.image_side = image_side
        self.ngf = ngf
        self.base_side = image_side // 4

        self.project = nn.Linear(latent_dim, self.base_side * self.base_side * ngf)
        self.model = nn.Sequential(
            nn.ReLU(),
            nn.ConvTranspose2d(ngf, ngf // 2, kernel_size=4, stride=2, padding=1),
            nn.ReLU(),
            nn.ConvTranspose2d(ngf // 2, 1, kernel_size=4, stride=2, padding=1),
            nn.Tanh(),
        )

    def forward(self, z):
        x = self.project(z).view(-1, self.ngf, self.base_side, self.base_side)
        return self.model(x)[:, 0]


class SkyDiscriminator(nn.Module):
    """Mirror of SkyGenerator: two stride-2 convolutions with leaky ReLU, dense sigmoid head."""

    def __init__(self, image_side=32, ndf=32):
        super().__init__()
        if image_side % 4 != 0:
            raise ValueError(f"image_side must be a multiple of 4, got {image_side}")
        self.image_side = image_side
        self.ndf = ndf

        self.model = nn.Sequential(
            nn.Conv2d(1, ndf, kernel_size=4, stride=2, padding=1),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.Conv2d(ndf, ndf * 2, kernel_size=4, stride=2, padding=1),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.Flatten(),
            nn.Linear((image_side // 4) ** 2 * ndf * 2, 1),
            nn.Sigmoid(),
        )

    def forward(self, x):
        return self.model(x.unsqueeze(1))[:, 0]


def define_G(latent_dim=100, image_side=32, ngf=64, init_type='normal', init_gain=0.02, dtype=torch.float32):
    """Create and initialize a generator."""
    return init_net(SkyGenerator(latent_dim, image_side, ngf), init_type, init_gain, dtype)


def define_D(image_side=32, ndf=32, init_type='normal', init_gain=0.02, dtype=torch.float32):
    """Create and initialize a discriminator."""
    return init_net(SkyDiscriminator(image_side, ndf), init_type, init_gain, dtype)


def set_requires_grad(nets, requires_grad=False):
    """Set requires_grad for all the parameters of the given networks."""
    if not isinstance(nets, list):
        nets = [nets]
    for net in nets:
        if net is not None:
            for param in net.parameters():
                param.requires_grad = requires_grad


def _as_batch(x, net, expected_tail, what):
    x = torch.as_tensor(np.asarray(x) if not torch.is_tensor(x) else x)
    single = x.dim() == len(expected_tail)
    if single:
        x = x.unsqueeze(0)
    if tuple(x.shape[1:]) != tuple(expected_tail):
        raise ValueError(f"{what} shape mismatch: expected (..., {', '.join(map(str, expected_tail))}), "
                         f"got {tuple(x.shape)}")
    dtype = next(net.parameters()).dtype
    return x.to(dtype=dtype), single


def forward_generator(net: SkyGenerator, z) -> np.ndarray:
    """
    Generate normalized images (values in (-1, 1)) from latent vectors.

    Args:
        net (SkyGenerator): Generator.
        z: A latent vector (latent_dim,) or a batch (n, latent_dim).

    Returns:
        np.ndarray: (side, side) for a single vector, else (n, side, side).
    """
    z, single = _as_batch(z, net, (net.latent_dim,), "Latent vector")
    with torch.no_grad():
        out = net(z).cpu().numpy()
    return out[0] if single else out


def forward_discriminator(net: SkyDiscriminator, img):
    """
    Probability (in (0, 1)) that a normalized image is real.

    Returns a float for a single (side, side) image, an array for a batch.
    """
    img, single = _as_batch(img, net, (net.image_side, net.image_side), "Image")
    with torch.no_grad():
        out = net(img).cpu().numpy()
    return float(out[0]) if single else out


def bce_loss(pred, label):
    """
    Binary cross-entropy -[label ln(pred) + (1 - label) ln(1 - pred)], mean over a batch.

    `pred` is clamped to [1e-7, 1 - 1e-7] before the logarithms. Python numbers in,
    Python float out; tensors in, differentiable scalar tensor out.
    """
    scalar_input = not torch.is_tensor(pred)
    _pred = torch.as_tensor(pred, dtype=torch.float64) if scalar_input else pred
    _label = torch.as_tensor(label, dtype=_pred.dtype).expand_as(_pred)

    p = _pred.clamp(PROB_EPS, 1.0 - PROB_EPS)
    loss = -(_label * torch.log(p) + (1.0 - _label) * torch.log1p(-p)).mean()
    return float(loss) if scalar_input else loss


def check_finite(net: nn.Module, net_name: str = "network", what: str = "gradient"):
    """
    Raise NonFiniteError naming the first parameter whose value or gradient is not finite.
    """
    for name, param in net.named_parameters():
        tensor = param.grad if what == "gradient" else param.data
        if tensor is not None and not torch.isfinite(tensor).all():
            raise NonFiniteError(f"Non-finite {what} in {net_name} layer '{name}'")


def register_finite_checks(net: nn.Module, net_name: str = "network"):
    """Forward hooks raising NonFiniteError when any layer outputs NaN/Inf. Returns the hook handles."""
    def hook_gen(name):
        def finite_hook(module, inputs, output):
            if torch.is_tensor(output) and not torch.isfinite(output).all():
                raise NonFiniteError(f"Non-finite output from {net_name} layer '{name}' ({module.__class__.__name__})")
        return finite_hook

    return [m.register_forward_hook(hook_gen(name)) for name, m in net.named_modules() if len(list(m.children())) == 0]


def backward(loss: torch.Tensor, nets, net_names=None) -> "OrderedDict[str, torch.Tensor]":
    """
    Reverse-mode pass from `loss`; returns the populated gradients of every trainable parameter.

    Raises:
        NonFiniteError: If any gradient contains NaN/Inf (the message names the layer).
    """
    if not isinstance(nets, (list, tuple)):
        nets = [nets]
    net_names = net_names or [net.__class__.__name__ for net in nets]

    loss.backward()

    grads = OrderedDict()
    for net, net_name in zip(nets, net_names):
        check_finite(net, net_name, what="gradient")
        for name, param in net.named_parameters():
            if param.requires_grad:
                grads[f"{net_name}.{name}"] = param.grad
    return grads


def make_adam(params, learning_rate=0.00025, beta1=0.9, beta2=0.999, epsilon=1e-8):
    """Adam optimizer holding the first/second moment state of `params`."""
    return torch.optim.Adam(params, lr=learning_rate, betas=(beta1, beta2), eps=epsilon)


def adam_step(optimizer: torch.optim.Adam):
    """One bias-corrected Adam update of every parameter with a gradient."""
    optimizer.step()
    logging.debug(f"Adam step {adam_step_count(optimizer)}")


def adam_step_count(optimizer: torch.optim.Adam) -> int:
    steps = [state["step"] for state in optimizer.state.values() if "step" in state]
    return int(max(steps)) if steps else 0


def network_summary(net: nn.Module, name: str) -> str:
    num_params = sum(param.numel() for param in net.parameters())
    return '[Network %s] Total number of parameters : %.3f M' % (name, num_params / 1e6)
