"""Cycle-accurate simulator of a GDDR6 process-in-memory GPT accelerator."""

from ._pimgpt import (
    bf16_round,
    fast_inv_sqrt,
    gelu,
    map_summary,
    model_catalog,
    nr_divide,
    run,
    softmax,
    sweep,
    taylor_exp,
    taylor_tanh,
)

__all__ = [
    "bf16_round",
    "fast_inv_sqrt",
    "gelu",
    "map_summary",
    "model_catalog",
    "nr_divide",
    "run",
    "softmax",
    "sweep",
    "taylor_exp",
    "taylor_tanh",
]
