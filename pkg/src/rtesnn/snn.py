"""Leaky integrate-and-fire networks unrolled over discrete timesteps.

Hidden layers are LIF populations; the last layer is a linear readout whose
output at timestep ``t`` is the logit vector of the temporal sub-network
``f_t``. The network output is the time average of those logits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tn
from .errors import ContractError, DimensionError, FormatError
from .tensor import SurrogateSpec, Tensor

CHECKPOINT_FORMAT = "rtesnn-checkpoint"
CHECKPOINT_VERSION = 1
SPIKE_MODES = ("heaviside", "sigmoid")


@dataclass(frozen=True)
class LifConfig:
    leak: float = 0.5
    threshold: float = 0.5
    timesteps: int = 4

    def __post_init__(self):
        if not 0 < self.leak <= 1:
            raise ContractError(f"leak must lie in (0, 1], got {self.leak}")
        if not self.threshold > 0:
            raise ContractError(f"threshold must be positive, got {self.threshold}")
        if int(self.timesteps) != self.timesteps or self.timesteps < 1:
            raise ContractError(f"timesteps must be a positive integer, got {self.timesteps}")


@dataclass
class SnnModel:
    """Stack of linear layers; all but the last feed LIF neurons.

    ``weights[l]`` has shape ``(fan_in, fan_out)`` so a batch ``x[B×fan_in]``
    maps to ``x @ W``. ``spike_mode="sigmoid"`` swaps the hard threshold for a
    smooth one and exists for gradient validation only.
    """

    weights: list
    biases: list
    lif: LifConfig = field(default_factory=LifConfig)
    surrogate: SurrogateSpec = field(default_factory=SurrogateSpec)
    detach_reset: bool = True
    spike_mode: str = "heaviside"
    sigmoid_slope: float = 4.0

    def __post_init__(self):
        if len(self.weights) < 2:
            raise ContractError("need at least one hidden layer and a readout")
        if len(self.biases) != len(self.weights):
            raise ContractError("one bias entry (array or None) per layer")
        self.weights = [np.array(w, dtype=np.float64) for w in self.weights]
        self.biases = [None if b is None else np.array(b, dtype=np.float64) for b in self.biases]
        for i, w in enumerate(self.weights):
            if w.ndim != 2:
                raise DimensionError(f"layer {i} weight must be 2-D, got {w.shape}")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise DimensionError(
                    f"layer {i} expects {w.shape[0]} inputs but layer {i - 1} emits {self.weights[i - 1].shape[1]}"
                )
            b = self.biases[i]
            if b is not None and b.shape != (w.shape[1],):
                raise DimensionError(f"layer {i} bias {b.shape} does not match width {w.shape[1]}")
        if self.spike_mode not in SPIKE_MODES:
            raise ContractError(f"spike_mode must be one of {SPIKE_MODES}")

    @classmethod
    def init(cls, sizes, lif=None, surrogate=None, seed=0, bias=True, **kwargs):
        """Kaiming-uniform weights (bound ``sqrt(6/fan_in)``), seeded."""
        if len(sizes) < 3:
            raise ContractError("sizes must list input, at least one hidden width, and classes")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-1.0, 1.0, size=fan_out) / np.sqrt(fan_in) if bias else None)
        return cls(weights, biases, lif or LifConfig(), surrogate or SurrogateSpec(), **kwargs)

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_hidden(self):
        return len(self.weights) - 1

    @property
    def n_classes(self):
        return self.weights[-1].shape[1]

    def parameters(self):
        """Flat list of parameter arrays in a fixed order (W0, b0, W1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            if b is not None:
                out.append(b)
        return out

    def set_parameters(self, arrays):
        it = iter(arrays)
        for i in range(len(self.weights)):
            self.weights[i] = np.array(next(it), dtype=np.float64)
            if self.biases[i] is not None:
                self.biases[i] = np.array(next(it), dtype=np.float64)

    def bind(self, tape=None):
        """Wrap parameters as tensors, watched on ``tape`` when given.

        Returns ``(layers, flat)`` where ``layers`` is a list of (W, b) pairs
        and ``flat`` lists the same tensors in :meth:`parameters` order.
        """
        layers, flat = [], []
        for w, b in zip(self.weights, self.biases):
            wt = Tensor._wrap(w)
            bt = None if b is None else Tensor._wrap(b)
            if tape is not None:
                tape.watch(wt)
                if bt is not None:
                    tape.watch(bt)
            layers.append((wt, bt))
            flat.append(wt)
            if bt is not None:
                flat.append(bt)
        return layers, flat

    def spike(self, v):
        if self.spike_mode == "sigmoid":
            return tn.sigmoid_spike(v, self.lif.threshold, self.sigmoid_slope)
        return tn.heaviside_spike(v, self.lif.threshold, self.surrogate)

    def copy(self):
        return SnnModel(
            [w.copy() for w in self.weights],
            [None if b is None else b.copy() for b in self.biases],
            self.lif,
            self.surrogate,
            self.detach_reset,
            self.spike_mode,
            self.sigmoid_slope,
        )

    def __call__(self, x, params=None):
        return forward_timesteps(self, x, params)


@dataclass
class LayerState:
    """Membrane potentials ``V`` and last spikes ``s`` per hidden layer."""

    V: list
    s: list


def reset_state(model, batch):
    if batch < 1:
        raise ContractError(f"batch must be >= 1, got {batch}")
    widths = [w.shape[1] for w in model.weights[:-1]]
    return LayerState(
        V=[Tensor._wrap(np.zeros((batch, n))) for n in widths],
        s=[Tensor._wrap(np.zeros((batch, n))) for n in widths],
    )


def lif_step(state, layer, input_current, cfg, spike=None, detach_reset=True, scale_input=True):
    """Advance one hidden layer by one timestep and return its spikes.

    ``V <- leak·V·(1 - s_prev) + (1 - leak)·I`` followed by ``s = H(V - V_th)``.
    Pass ``scale_input=False`` when ``I`` already carries the ``(1 - leak)``
    factor.
    """
    if state is None or layer >= len(state.V) or state.V[layer] is None:
        raise ContractError(f"layer {layer} state is not initialized; call reset_state first")
    V, s_prev = state.V[layer], state.s[layer]
    input_current = tn.as_tensor(input_current)
    if input_current.shape != V.shape:
        raise DimensionError(f"input current {input_current.shape} does not match layer state {V.shape}")
    if detach_reset:
        kept = tn.scale(tn.mul(V, Tensor._wrap(1.0 - s_prev.data)), cfg.leak)
    else:
        kept = tn.scale(tn.mul(V, tn.add(tn.neg(s_prev), 1.0)), cfg.leak)
    drive = tn.scale(input_current, 1.0 - cfg.leak) if scale_input else input_current
    V_new = tn.add(kept, drive)
    if spike is None:
        s_new = tn.heaviside_spike(V_new, cfg.threshold)
    else:
        s_new = spike(V_new)
    state.V[layer] = V_new
    state.s[layer] = s_new
    return s_new


def _linear(x, W, b):
    out = tn.matmul(x, W)
    return out if b is None else tn.add_bias(out, b)


def forward_timesteps(model, x, params=None):
    """Per-timestep logits ``f_t(x)`` stacked into a ``T×batch×classes`` tensor.

    The same static ``x`` drives the first layer at every timestep. ``params``
    is the ``layers`` list from :meth:`SnnModel.bind`; by default parameters
    enter as constants.
    """
    x = tn.as_tensor(x)
    if x.data.ndim != 2 or x.shape[1] != model.weights[0].shape[0]:
        raise DimensionError(f"input {x.shape} does not match model input width {model.weights[0].shape[0]}")
    if params is None:
        params, _ = model.bind()
    state = reset_state(model, x.shape[0])
    W_out, b_out = params[-1]
    # the first-layer current is time-invariant under direct encoding
    first_current = _linear(x, *params[0])
    slices = []
    for _ in range(model.lif.timesteps):
        h = first_current
        for layer in range(model.n_hidden):
            if layer:
                h = _linear(h, *params[layer])
            h = lif_step(state, layer, h, model.lif, model.spike, model.detach_reset)
        slices.append(_linear(h, W_out, b_out))
    return tn.stack(slices)


def aggregate_output(logits_per_t):
    """Time-averaged logits, ``(1/T)·Σ_t f_t``."""
    return tn.mean(logits_per_t, axis=0)


def predict(model, x):
    """Class predictions from the aggregated output, no tape."""
    return np.argmax(aggregate_output(forward_timesteps(model, x)).data, axis=-1)


# --- checkpoint file --------------------------------------------------------


def save_checkpoint(model, path):
    """Write ``model`` as a JSON document.

    Floats are emitted with ``repr`` precision, so a save/load round trip is
    bit-exact.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "lif": {"leak": model.lif.leak, "threshold": model.lif.threshold, "timesteps": model.lif.timesteps},
        "surrogate": {"kind": model.surrogate.kind, "width": model.surrogate.width},
        "detach_reset": model.detach_reset,
        "spike_mode": model.spike_mode,
        "sigmoid_slope": model.sigmoid_slope,
        "layers": [
            {
                "shape": list(w.shape),
                "weight": w.reshape(-1).tolist(),
                "bias": None if b is None else b.tolist(),
            }
            for w, b in zip(model.weights, model.biases)
        ],
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=1) + "\n")
    return path


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: not a model checkpoint (format={doc.get('format')!r})")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    weights, biases = [], []
    for layer in doc["layers"]:
        weights.append(np.array(layer["weight"], dtype=np.float64).reshape(layer["shape"]))
        biases.append(None if layer["bias"] is None else np.array(layer["bias"], dtype=np.float64))
    return SnnModel(
        weights,
        biases,
        LifConfig(**doc["lif"]),
        SurrogateSpec(**doc["surrogate"]),
        detach_reset=doc["detach_reset"],
        spike_mode=doc["spike_mode"],
        sigmoid_slope=doc["sigmoid_slope"],
    )
