"""
Training and sampling of the sky-image GAN, and the `train_gan` / `sample_gan` stages.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from skyaug.gan.networks import (SkyDiscriminator, SkyGenerator, adam_step, backward, bce_loss, define_D,
                                 define_G, make_adam, network_summary, register_finite_checks,
                                 set_requires_grad)
from skyaug.preprocessing.augment import augment_dataset, denormalize, normalize
from skyaug.utils.checkpoint import load_checkpoint, save_checkpoint
from skyaug.utils.errors import DataError

LOSS_COLUMNS = ["epoch", "d_loss", "g_loss"]
SAMPLES_COLUMNS = ["candidate_id", "image_path", "latent_seed", "generator_sha256"]


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 1000
    image_side: int = 32
    latent_dim: int = 100
    seed: int = 0
    learning_rate: float = 0.00025
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.image_side % 4 != 0:
            raise ValueError(f"image_side must be a multiple of 4, got {self.image_side}")

    @classmethod
    def from_pipeline(cls, config):
        return cls(batch_size=config.batch_size, epochs=config.epochs, image_side=config.side,
                   latent_dim=config.latent_dim, seed=config.gan_seed, learning_rate=config.learning_rate,
                   beta1=config.beta1, beta2=config.beta2)


class _single_threaded:
    """Pin torch to one intra-op thread so float reductions happen in a fixed order."""

    def __enter__(self):
        self._threads = torch.get_num_threads()
        torch.set_num_threads(1)

    def __exit__(self, *exc):
        torch.set_num_threads(self._threads)


def _stack(data: List[np.ndarray], side: int) -> torch.Tensor:
    for i, img in enumerate(data):
        if np.shape(img) != (side, side):
            raise ValueError(f"Training image {i} has shape {np.shape(img)}, expected ({side}, {side})")
    return torch.from_numpy(np.stack(data).astype(np.float32))


def train_gan(data: List[np.ndarray], cfg: TrainConfig,
              epoch_callback: Optional[Callable] = None) -> Tuple[SkyGenerator, SkyDiscriminator, List[tuple]]:
    """
    Train a generator/discriminator pair on normalized images.

    Each batch takes one discriminator step on real (label 1) and generated
    (label 0) images, then one generator step through the frozen discriminator
    with label 1. Weights, batch order and latents all come from `cfg.seed`.

    Args:
        data (list of np.ndarray): Normalized (side, side) images in [-1, 1].
        cfg (TrainConfig): Training hyperparameters.
        epoch_callback (callable, optional): Called as
            epoch_callback(epoch, netG, netD, d_loss, g_loss) after every epoch.

    Returns:
        tuple: (netG, netD, loss_history) where loss_history holds
            (epoch, mean d_loss, mean g_loss) per epoch.

    Raises:
        DataError: If `data` is empty.
        NonFiniteError: If a forward or backward pass produces NaN/Inf.
    """
    if len(data) == 0:
        raise DataError("Cannot train the GAN on an empty dataset")
    if len(data) < cfg.batch_size:
        logging.warning(f"Only {len(data)} training images for batch size {cfg.batch_size}; using smaller batches")

    real_images = _stack(data, cfg.image_side)
    n = len(real_images)
    loss_history = []

    with torch.random.fork_rng(devices=[]), _single_threaded():
        torch.manual_seed(cfg.seed)
        netG = define_G(cfg.latent_dim, cfg.image_side)
        netD = define_D(cfg.image_side)
        logging.info(network_summary(netG, "G"))
        logging.info(network_summary(netD, "D"))

        optimizer_G = make_adam(netG.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2)
        optimizer_D = make_adam(netD.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2)
        hooks = register_finite_checks(netG, "generator") + register_finite_checks(netD, "discriminator")

        try:
            for epoch in tqdm(range(1, cfg.epochs + 1), desc="GAN epochs"):
                d_losses, g_losses = [], []
                order = torch.randperm(n)
                for start in range(0, n, cfg.batch_size):
                    real = real_images[order[start:start + cfg.batch_size]]
                    z = torch.randn(len(real), cfg.latent_dim)
                    fake = netG(z)

                    # update D
                    set_requires_grad(netD, True)
                    optimizer_D.zero_grad()
                    loss_D = 0.5 * (bce_loss(netD(real), 1.0) + bce_loss(netD(fake.detach()), 0.0))
                    backward(loss_D, netD, ["discriminator"])
                    adam_step(optimizer_D)

                    # update G
                    set_requires_grad(netD, False)
                    optimizer_G.zero_grad()
                    loss_G = bce_loss(netD(fake), 1.0)
                    backward(loss_G, netG, ["generator"])
                    adam_step(optimizer_G)

                    d_losses.append(loss_D.item())
                    g_losses.append(loss_G.item())

                set_requires_grad(netD, True)
                d_loss, g_loss = float(np.mean(d_losses)), float(np.mean(g_losses))
                loss_history.append((epoch, d_loss, g_loss))
                logging.debug(f"Epoch {epoch}: d_loss={d_loss:.6f} g_loss={g_loss:.6f}")
                if epoch_callback is not None:
                    epoch_callback(epoch, netG, netD, d_loss, g_loss)
        finally:
            for h in hooks:
                h.remove()

    logging.info(f"GAN training finished after {cfg.epochs} epochs "
                 f"(d_loss={loss_history[-1][1]:.4f}, g_loss={loss_history[-1][2]:.4f})")
    return netG.eval(), netD.eval(), loss_history


def sample(net: SkyGenerator, n: int, seed: int) -> List[np.ndarray]:
    """
    Draw `n` raw uint8 images from the generator; latents come from a torch generator seeded with `seed`.
    """
    if n == 0:
        return []
    rng = torch.Generator().manual_seed(int(seed))
    dtype = next(net.parameters()).dtype
    z = torch.randn(n, net.latent_dim, generator=rng, dtype=torch.float32).to(dtype)
    with torch.no_grad():
        images = net(z).cpu().numpy()
    return [denormalize(img) for img in images]


def save_network(net, path) -> None:
    """Write a generator or discriminator (shape metadata + state dict) to a checkpoint file."""
    meta = {"meta.image_side": net.image_side}
    if isinstance(net, SkyGenerator):
        meta.update({"meta.latent_dim": net.latent_dim, "meta.ngf": net.ngf})
    else:
        meta.update({"meta.ndf": net.ndf})
    save_checkpoint({**meta, **net.state_dict()}, path)


def _split_meta(entries):
    meta = {k[len("meta."):]: int(v) for k, v in entries.items() if k.startswith("meta.")}
    state = {k: torch.from_numpy(v.astype(np.float32)) for k, v in entries.items() if not k.startswith("meta.")}
    return meta, state


def load_generator(path) -> SkyGenerator:
    meta, state = _split_meta(load_checkpoint(path))
    net = define_G(meta["latent_dim"], meta["image_side"], meta["ngf"])
    net.load_state_dict(state)
    return net.eval()


def load_discriminator(path) -> SkyDiscriminator:
    meta, state = _split_meta(load_checkpoint(path))
    net = define_D(meta["image_side"], meta["ndf"])
    net.load_state_dict(state)
    return net.eval()


def write_loss_history(loss_history, path) -> None:
    pd.DataFrame(loss_history, columns=LOSS_COLUMNS).to_csv(path, index=False)


def train_gan_stage(config, outdir: Path):
    from skyaug.preprocessing.imageio import load_split_pairs
    from skyaug.utils.file import ensure_directory
    from skyaug.utils.stages import (DATA_MANIFEST, DISCRIMINATOR_CHECKPOINT, GENERATOR_CHECKPOINT,
                                     LOSS_HISTORY)

    pairs = load_split_pairs(outdir / DATA_MANIFEST, "train")
    augmented = augment_dataset(pairs, dedupe=config.dedupe_augment)
    logging.info(f"Training the GAN on {len(augmented)} augmented images from {len(pairs)} training pairs")

    netG, netD, loss_history = train_gan([normalize(img) for img, _ in augmented],
                                         TrainConfig.from_pipeline(config))

    ensure_directory(outdir / "gan")
    save_network(netG, outdir / GENERATOR_CHECKPOINT)
    save_network(netD, outdir / DISCRIMINATOR_CHECKPOINT)
    write_loss_history(loss_history, outdir / LOSS_HISTORY)
    logging.info(f"Checkpoints written to {outdir / 'gan'}")


def sample_gan_stage(config, outdir: Path):
    from skyaug.preprocessing.imageio import save_image_file
    from skyaug.utils.file import ensure_directory, sha256_file
    from skyaug.utils.stages import GENERATOR_CHECKPOINT, SAMPLES_MANIFEST

    netG = load_generator(outdir / GENERATOR_CHECKPOINT)
    if netG.latent_dim != config.latent_dim or netG.image_side != config.side:
        raise DataError(f"Generator checkpoint (latent {netG.latent_dim}, side {netG.image_side}) does not match "
                        f"the configuration (latent {config.latent_dim}, side {config.side})")
    generator_id = sha256_file(outdir / GENERATOR_CHECKPOINT)

    image_dir = ensure_directory(outdir / "candidates" / "images")
    rows = []
    for i in tqdm(range(config.candidate_count), desc="Sampling"):
        latent_seed = config.candidate_seed + i
        img = sample(netG, 1, latent_seed)[0]
        image_path = Path("images") / f"{i:04d}.pgm"
        save_image_file(img, image_dir.parent / image_path)
        rows.append((i, image_path.as_posix(), latent_seed, generator_id))

    pd.DataFrame(rows, columns=SAMPLES_COLUMNS).to_csv(outdir / SAMPLES_MANIFEST, index=False)
    logging.info(f"Wrote {len(rows)} generated images to {image_dir}")


def _run_train_gan(args):
    from skyaug.utils.stages import config_from_args, run_stage

    run_stage(config_from_args(args), "train_gan", train_gan_stage, force=args.force)


def _run_sample_gan(args):
    from skyaug.utils.stages import config_from_args, run_stage

    run_stage(config_from_args(args), "sample_gan", sample_gan_stage, force=args.force)


if __name__ == "__main__":
    from skyaug.cli import get_train_gan_parser
    args = get_train_gan_parser().parse_args()
    _run_train_gan(args)
