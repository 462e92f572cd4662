# SPDX-License-Identifier: Apache-2.0
"""Triplet BiGAN: semi-supervised image representations from a BiGAN encoder
trained jointly with a triplet loss."""

from tbigan._core import (
    CheckpointError,
    ContractError,
    DataError,
    NumericalError,
    TbiganError,
    UsageError,
    average_precision,
    combined_loss,
    discriminator_loss,
    embed,
    encoder_generator_loss,
    evaluate,
    knn_classify,
    render_config,
    resolve_config,
    retrieval_map,
    synthetic_shapes,
    train,
    triplet_loss,
    triplet_probability,
)

__all__ = [name for name in dir() if not name.startswith("_")]
