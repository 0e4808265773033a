"""Merging aligned models by parameter averaging, plus the statistics reset.

A pair merge averages model A with model B rewritten in A's feature space:
W_i = (W_i^a + T_i W_i^b T_{i-1}^-1) / 2 and likewise for biases. The
multi-model form aligns every other model to one reference and takes the
uniform average. The reset pass rescales each hidden neuron of a merged
model so its pre-activation mean and standard deviation on probes match the
reference model's, walking the layers bottom-up on the partially rescaled
model so the match holds at every depth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cca, matching
from .activations import probe_matrix
from .errors import ConfigurationError, ValidationError
from .model import Activation, DenseLayer, MethodTag, MlpModel, apply_plan

SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class SkippedNeuron:
    """A neuron the reset left untouched because its spread was ~zero."""

    layer_index: int
    neuron_index: int


def align(reference, model, method, probes=None, gamma=None):
    """Build the alignment plan mapping `model` into `reference`'s space."""
    if method is MethodTag.IDENTITY:
        return matching.identity_plan(model)
    if probes is None:
        raise ConfigurationError(f"method {method.value} needs probes")
    if method is MethodTag.PERMUTE:
        return matching.permute_plan(reference, model, probes)
    if method is MethodTag.CCA:
        return cca.cca_plan(reference, model, probes, gamma)
    raise ConfigurationError(f"unknown method {method!r}")


def _check_same_architecture(models):
    first = models[0]
    for i, m in enumerate(models[1:], start=1):
        if not first.same_architecture(m):
            raise ValidationError(
                f"model {i} does not share the reference architecture"
            )


def average_models(models):
    """Uniform elementwise average of identically shaped models."""
    _check_same_architecture(models)
    layers = []
    for i in range(models[0].num_layers):
        w = np.mean([m.layers[i].weights for m in models], axis=0)
        b = np.mean([m.layers[i].bias for m in models], axis=0)
        layers.append(DenseLayer(w, b, models[0].layers[i].activation))
    tags = [m.seed_tag for m in models if m.seed_tag]
    tag = "+".join(tags) if tags else None
    return MlpModel(tuple(layers), models[0].input_dim, tag)


def merge_pair(model_a, model_b, plan):
    """Average model_a with model_b carried through the plan."""
    return average_models([model_a, apply_plan(model_b, plan)])


def merge_many(reference, others, method, probes=None, gamma=None):
    """All-to-one merge: align each of `others` to `reference`, average all."""
    if not others:
        raise ConfigurationError("merge_many needs at least one other model")
    aligned = [
        apply_plan(m, align(reference, m, method, probes, gamma))
        for m in others
    ]
    return average_models([reference, *aligned])


def _layer_stats(weights, bias, x):
    z = x @ weights.T + bias
    return z.mean(axis=0), z.std(axis=0), z


def repair_reset(merged, reference, probes):
    """Match the merged model's hidden pre-activation stats to the reference.

    Returns (model, skipped): neurons whose merged spread is below
    SIGMA_FLOOR are left untouched and listed. The output layer is never
    rescaled.
    """
    if not merged.same_architecture(reference):
        raise ValidationError("merged and reference architectures differ")
    x = probe_matrix(probes)
    ref_x = x
    new_layers = []
    skipped = []
    cur_x = x
    for i, (layer, ref_layer) in enumerate(zip(merged.layers, reference.layers)):
        if i == merged.num_layers - 1:
            new_layers.append(layer)
            break
        mu_ref, sd_ref, ref_z = _layer_stats(
            ref_layer.weights, ref_layer.bias, ref_x
        )
        mu_m, sd_m, _ = _layer_stats(layer.weights, layer.bias, cur_x)
        keep = sd_m < SIGMA_FLOOR
        scale = np.where(keep, 1.0, sd_ref / np.where(keep, 1.0, sd_m))
        shift = np.where(keep, 0.0, mu_ref - mu_m * scale)
        w = layer.weights * scale[:, None]
        b = layer.bias * scale + shift
        for j in np.flatnonzero(keep):
            skipped.append(SkippedNeuron(i, int(j)))
        new_layer = DenseLayer(w, b, layer.activation)
        new_layers.append(new_layer)
        cur_x = new_layer.apply(cur_x)
        ref_x = Activation.RELU.apply(ref_z)
    return (
        MlpModel(tuple(new_layers), merged.input_dim, merged.seed_tag),
        tuple(skipped),
    )
