"""Small feed-forward networks in float64 numpy.

Everything trainable in the package is an :class:`MlpParams`: a chain of
affine layers, each followed by an elementwise activation. Gradients are
computed by hand-written reverse mode (:func:`backward`), optimised with
:func:`adam_step`, blended with :func:`soft_update`, and persisted with
:func:`save` / :func:`load`.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``x`` of
shape ``(B, fan_in)`` maps to ``x @ W + b``.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CLMLP\x00\x00\x00"
FORMAT_VERSION = 1
ACTIVATIONS = ("tanh", "relu", "identity")


class CheckpointError(ValueError):
    """Raised for malformed or incompatible checkpoint files."""


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]
    output_gain: float = 1.0

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases and activations must have equal length")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: weight {w.shape} / bias {b.shape} mismatch")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {k}: input dim {w.shape[0]} does not chain "
                                 f"from {self.weights[k - 1].shape[1]}")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim] + [w.shape[1] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        """Flat view ``[W0, b0, W1, b1, ...]`` (shared, not copied)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_arrays(self, arrays: list[np.ndarray]) -> "MlpParams":
        return MlpParams(list(arrays[0::2]), list(arrays[1::2]),
                         list(self.activations), self.output_gain)

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def zeros_like(self) -> "MlpParams":
        return self.with_arrays([np.zeros_like(a) for a in self.arrays()])


def init_mlp(sizes: list[int], hidden_activation: str, output_activation: str,
             rng: np.random.Generator, output_gain: float = 1.0) -> MlpParams:
    """Uniform fan-in initialisation; the last layer is scaled by ``output_gain``."""
    weights, biases = [], []
    n_layers = len(sizes) - 1
    for k in range(n_layers):
        bound = 1.0 / np.sqrt(sizes[k])
        w = rng.uniform(-bound, bound, size=(sizes[k], sizes[k + 1]))
        b = rng.uniform(-bound, bound, size=sizes[k + 1])
        if k == n_layers - 1:
            w *= output_gain
            b *= output_gain
        weights.append(w)
        biases.append(b)
    acts = [hidden_activation] * (n_layers - 1) + [output_activation]
    return MlpParams(weights, biases, acts, output_gain)


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    return np.ones_like(z)


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.input_dim:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {params.input_dim}")
    return x


def forward(params: MlpParams, x) -> np.ndarray:
    """Evaluate the network on one input vector or a ``(B, in)`` batch."""
    h = _check_input(params, x)
    for w, b, act in zip(params.weights, params.biases, params.activations):
        h = _activate(act, h @ w + b)
    return h


def forward_trace(params: MlpParams, x) -> tuple[np.ndarray, list]:
    """Forward pass that also returns the per-layer cache used by backward."""
    h = _check_input(params, x)
    cache = []
    for w, b, act in zip(params.weights, params.biases, params.activations):
        z = h @ w + b
        a = _activate(act, z)
        cache.append((h, z, a))
        h = a
    return h, cache


def backward_from_trace(params: MlpParams, cache: list, upstream) -> tuple[MlpParams, np.ndarray]:
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != cache[-1][2].shape:
        raise ValueError(f"upstream gradient shape {g.shape} != output shape {cache[-1][2].shape}")
    batched = g.ndim == 2
    dws, dbs = [], []
    for k in range(len(params.weights) - 1, -1, -1):
        h, z, a = cache[k]
        g = g * _activation_grad(params.activations[k], z, a)
        if batched:
            dws.append(h.T @ g)
            dbs.append(g.sum(axis=0))
        else:
            dws.append(np.outer(h, g))
            dbs.append(g.copy())
        g = g @ params.weights[k].T
    dws.reverse()
    dbs.reverse()
    return MlpParams(dws, dbs, list(params.activations), params.output_gain), g


def backward(params: MlpParams, x, upstream) -> tuple[MlpParams, np.ndarray]:
    """Reverse-mode gradients of ``sum(upstream * forward(params, x))``.

    For a batch the parameter gradients are summed over the batch rows.
    Returns ``(param_gradients, input_gradient)``.
    """
    _, cache = forward_trace(params, x)
    return backward_from_trace(params, cache, upstream)


def global_norm(grads: MlpParams) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.arrays())))


def clip_by_global_norm(grads: MlpParams, max_norm: float | None) -> MlpParams:
    if max_norm is None:
        return grads
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return grads.with_arrays([g * scale for g in grads.arrays()])


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    timestep: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(params: MlpParams | list[np.ndarray], lr: float, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    arrays = params.arrays() if isinstance(params, MlpParams) else params
    return AdamState([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays],
                     0, lr, beta1, beta2, epsilon)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam descent step.

    ``params``/``grads`` are either :class:`MlpParams` or plain lists of
    arrays (the same kind is returned). Inputs are not mutated.
    """
    p_arrays = params.arrays() if isinstance(params, MlpParams) else list(params)
    g_arrays = grads.arrays() if isinstance(grads, MlpParams) else list(grads)
    if len(p_arrays) != len(g_arrays) or len(p_arrays) != len(state.first_moment):
        raise ValueError("parameter / gradient / moment counts differ")
    for p, g, m in zip(p_arrays, g_arrays, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient entries")
    t = state.timestep + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arrays, g_arrays, state.first_moment, state.second_moment):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        new_p.append(p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(new_m, new_v, t, state.lr, state.beta1, state.beta2, state.epsilon)
    if isinstance(params, MlpParams):
        return params.with_arrays(new_p), new_state
    return new_p, new_state


def soft_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    """Return ``tau * online + (1 - tau) * target`` elementwise."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    t_arrays, o_arrays = target.arrays(), online.arrays()
    if [a.shape for a in t_arrays] != [a.shape for a in o_arrays]:
        raise ValueError("target and online parameter shapes differ")
    if tau == 1.0:
        return online.copy()
    if tau == 0.0:
        return target.copy()
    return target.with_arrays([tau * o + (1.0 - tau) * t for t, o in zip(t_arrays, o_arrays)])


# -- checkpoints -----------------------------------------------------------

def manifest_path(path) -> Path:
    return Path(str(path) + ".json")


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save(params: MlpParams, path, seed: int | None = None) -> None:
    """Write the binary checkpoint plus its ``.json`` sidecar manifest."""
    path = Path(path)
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(params.weights))]
    for w in params.weights:
        chunks.append(struct.pack("<II", *w.shape))
    for w, b in zip(params.weights, params.biases):
        chunks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    _atomic_write(path, b"".join(chunks))
    manifest = {
        "format_version": FORMAT_VERSION,
        "shapes": [list(w.shape) for w in params.weights],
        "activations": list(params.activations),
        "output_gain": params.output_gain,
        "seed": seed,
    }
    _atomic_write(manifest_path(path), (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())


def load(path) -> MlpParams:
    path = Path(path)
    data = path.read_bytes()
    header = len(MAGIC) + 8
    if len(data) < header or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a network checkpoint")
    version, n_layers = struct.unpack_from("<II", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if len(data) < header + 8 * n_layers:
        raise CheckpointError(f"{path}: truncated layer headers")
    shapes = [struct.unpack_from("<II", data, header + 8 * k) for k in range(n_layers)]
    offset = header + 8 * n_layers
    expected = offset + 8 * sum(r * c + c for r, c in shapes)
    if len(data) != expected:
        raise CheckpointError(f"{path}: {len(data)} bytes, expected {expected} (truncated or corrupt)")
    try:
        manifest = json.loads(manifest_path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest ({exc})") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: manifest format version {manifest.get('format_version')}")
    if [tuple(s) for s in manifest["shapes"]] != [tuple(s) for s in shapes]:
        raise CheckpointError(f"{path}: manifest shapes {manifest['shapes']} != header {shapes}")
    weights, biases = [], []
    for rows, cols in shapes:
        w = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=offset).reshape(rows, cols)
        offset += 8 * rows * cols
        b = np.frombuffer(data, dtype="<f8", count=cols, offset=offset)
        offset += 8 * cols
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    return MlpParams(weights, biases, list(manifest["activations"]), float(manifest["output_gain"]))
