"""Model bundle: encoder, ODE function, decoder, and checkpoint plumbing."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import checkpoint
from .encoder import VARIANTS, EncoderParams
from .ode_model import DecoderParams, OdeFuncParams


@dataclass
class ModelConfig:
    n_features: int = 4
    hidden: int = 64  # observation representation width
    n_layers: int = 2
    latent: int = 16  # learned latent dims (d_z)
    aux: int = 64  # auxiliary zero-initialized latent dims
    relation_width: int = 128
    posterior_hidden: int = 128
    decoder_sigma: float = 0.1
    te_base: float = 10000.0
    densify: int = 5
    variant: str = "full"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def d_state(self) -> int:
        return self.latent + self.aux


class LatentDynamicsModel:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.encoder = EncoderParams(
            rng, n_features=config.n_features, d=config.hidden, d_z=config.latent,
            n_layers=config.n_layers, posterior_hidden=config.posterior_hidden,
            te_base=config.te_base,
        )
        self.ode = OdeFuncParams(
            rng, d_state=config.d_state, d_e=config.relation_width,
            hidden=config.relation_width,
        )
        self.decoder = DecoderParams(
            rng, d_state=config.d_state, n_features=config.n_features,
            sigma=config.decoder_sigma,
        )

    def named_parameters(self):
        return (
            self.encoder.named_parameters()
            + self.ode.named_parameters()
            + self.decoder.named_parameters()
        )

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def save(self, path):
        named = [("config." + k, np.atleast_1d(np.float64(v)))
                 for k, v in asdict(self.config).items()
                 if isinstance(v, (int, float))]
        checkpoint.save_params(path, named + self.named_parameters())

    def load_state(self, state: dict):
        for name, p in self.named_parameters():
            if name not in state:
                raise ValueError(f"checkpoint missing parameter {name}")
            if state[name].shape != p.values.shape:
                raise ValueError(
                    f"checkpoint shape mismatch for {name}: "
                    f"{state[name].shape} vs {p.values.shape}"
                )
            p.values = state[name].copy()

    @classmethod
    def load(cls, path, variant: str = "full") -> "LatentDynamicsModel":
        state = checkpoint.load_params(path)
        kwargs = {}
        for key in ("n_features", "hidden", "n_layers", "latent", "aux",
                    "relation_width", "posterior_hidden", "densify"):
            ck = "config." + key
            if ck in state:
                kwargs[key] = int(state[ck].ravel()[0])
        for key in ("decoder_sigma", "te_base"):
            ck = "config." + key
            if ck in state:
                kwargs[key] = float(state[ck].ravel()[0])
        model = cls(ModelConfig(variant=variant, **kwargs))
        model.load_state({k: v for k, v in state.items() if not k.startswith("config.")})
        return model
