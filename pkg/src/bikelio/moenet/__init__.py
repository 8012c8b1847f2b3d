"""Mixture-of-Experts velocity network: config, routing, model, losses, training, accounting."""
from .accounting import count_params_flops
from .checkpoint import CheckpointError, load, save
from .config import ConfigError, MoeConfig
from .losses import loss_aux, loss_mse, loss_nll, loss_nll_sigma
from .model import MoeModel, MoeOutput, VelocityEstimate, moe_forward
from .routing import GateDecision, expert_capacity, topk_route
from .train import TrainConfig, TrainLog, inference_load, train

__all__ = ["MoeConfig", "ConfigError", "MoeModel", "MoeOutput", "VelocityEstimate", "moe_forward",
           "GateDecision", "expert_capacity", "topk_route", "loss_mse", "loss_nll", "loss_nll_sigma",
           "loss_aux", "TrainConfig", "TrainLog", "train", "inference_load", "count_params_flops",
           "save", "load", "CheckpointError"]
