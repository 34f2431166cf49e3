from .checkpoint import load_checkpoint, save_checkpoint
from .graph import LossParts, distance_backward, loss_and_grads, loss_value
from .layers import (
    DEFAULT_HIDDEN,
    LayerSpec,
    NetworkParams,
    NetworkSpecError,
    autoencoder_specs,
    forward_cluster_head,
    forward_decoder,
    forward_encoder,
    he_init,
    reconstruction_loss,
)
from .optim import AdamState, adam_step

__all__ = [
    "AdamState",
    "DEFAULT_HIDDEN",
    "LayerSpec",
    "LossParts",
    "NetworkParams",
    "NetworkSpecError",
    "adam_step",
    "autoencoder_specs",
    "distance_backward",
    "forward_cluster_head",
    "forward_decoder",
    "forward_encoder",
    "he_init",
    "load_checkpoint",
    "loss_and_grads",
    "loss_value",
    "reconstruction_loss",
    "save_checkpoint",
]
