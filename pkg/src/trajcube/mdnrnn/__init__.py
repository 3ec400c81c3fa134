"""Recurrent mixture density network for 4D trajectory generation."""
from .mixture import MixtureParams, mixture_nll, mixture_nll_dense, sample_state, split_head
from .network import (FlightSample, ModelConfig, conv_forward_cube, decoder_step, encode_plan,
                      forward_flight, init_params, loss_and_grads)

__all__ = [
    "FlightSample", "MixtureParams", "ModelConfig", "conv_forward_cube", "decoder_step",
    "encode_plan", "forward_flight", "init_params", "loss_and_grads", "mixture_nll",
    "mixture_nll_dense", "sample_state", "split_head",
]
