"""All learnable parameters of a GRUwE model, with paired gradients."""

from __future__ import annotations

import hashlib

import numpy as np

from .decay import DecayParams
from .errors import ConfigError, ShapeError
from .numerics import Parameter, make_rng, uniform_init

TASKS = ("forecast", "tpp")

DECAY_NAMES = ("w_gamma", "b_gamma")
GRU_NAMES = (
    "W_z", "W_r", "W_h",
    "U_z", "U_r", "U_h",
    "V_z", "V_r", "V_h",
    "b_z", "b_r", "b_h",
)
HEAD_NAMES = {"forecast": ("W_out", "b_out"), "tpp": ("w_lambda", "b_lambda")}


def expected_shapes(task: str, input_dim: int, hidden_dim: int, output_dim: int) -> dict:
    D, H, P = input_dim, hidden_dim, output_dim
    shapes = {"w_gamma": (H,), "b_gamma": (H,)}
    for gate in "zrh":
        shapes[f"W_{gate}"] = (H, D)
        shapes[f"U_{gate}"] = (H, H)
        shapes[f"V_{gate}"] = (H, D)
    for gate in "zrh":
        shapes[f"b_{gate}"] = (H,)
    w, b = HEAD_NAMES[task]
    shapes[w] = (P, H)
    shapes[b] = (P,)
    return shapes


class GruweParams:
    """Ordered collection of named :class:`Parameter` objects.

    For the ``tpp`` task ``output_dim`` is the number of event types K and the
    input dimension equals K (one-hot marks). For ``forecast`` it is the number
    of predicted variables P.
    """

    def __init__(self, task, input_dim, hidden_dim, output_dim, params):
        if task not in TASKS:
            raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")
        self.task = task
        self.input_dim = int(input_dim)
        self.hidden_dim = int(hidden_dim)
        self.output_dim = int(output_dim)
        shapes = expected_shapes(task, input_dim, hidden_dim, output_dim)
        if set(params) != set(shapes):
            raise ShapeError(f"parameter names {sorted(params)} != {sorted(shapes)}")
        self.params = {}
        for name, shape in shapes.items():
            p = params[name]
            if p.shape != shape:
                raise ShapeError(f"{name}: shape {p.shape}, expected {shape}")
            self.params[name] = p

    @classmethod
    def init(cls, task, input_dim, hidden_dim, output_dim, seed=0):
        """Random initialization.

        Gate and head matrices are uniform with scale 1/sqrt(fan_in). The decay
        weights start in [0, 0.1] with zero bias so every unit begins in the
        state-reset regime.
        """
        for label, v in (("input_dim", input_dim), ("hidden_dim", hidden_dim), ("output_dim", output_dim)):
            if int(v) < 1:
                raise ConfigError(f"{label} must be >= 1, got {v}")
        rng = make_rng(seed, 0)
        H = hidden_dim
        shapes = expected_shapes(task, input_dim, hidden_dim, output_dim)
        params = {}
        for name, shape in shapes.items():
            if name == "w_gamma":
                params[name] = Parameter(name, rng.uniform(0.0, 0.1, size=shape))
            elif name in ("b_gamma", "b_out", "b_lambda"):
                params[name] = Parameter(name, np.zeros(shape))
            elif name.startswith("b_"):
                params[name] = uniform_init(rng, shape, fan_in=H, name=name)
            else:
                params[name] = uniform_init(rng, shape, fan_in=shape[1], name=name)
        return cls(task, input_dim, hidden_dim, output_dim, params)

    # -- access ------------------------------------------------------------

    def __getitem__(self, name) -> Parameter:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.values())

    def names(self):
        return list(self.params)

    def value(self, name) -> np.ndarray:
        return self.params[name].value

    @property
    def decay(self) -> DecayParams:
        # shares memory with the parameters
        return DecayParams(self.params["w_gamma"].value, self.params["b_gamma"].value)

    @property
    def num_types(self) -> int:
        return self.output_dim

    def dims(self) -> dict:
        return {"D": self.input_dim, "H": self.hidden_dim, "out": self.output_dim}

    # -- bookkeeping -------------------------------------------------------

    def zero_grads(self):
        for p in self:
            p.zero_grad()

    def copy(self) -> "GruweParams":
        return GruweParams(
            self.task, self.input_dim, self.hidden_dim, self.output_dim,
            {n: p.copy() for n, p in self.params.items()},
        )

    def grads(self) -> dict:
        return {n: p.grad for n, p in self.params.items()}

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in self)))

    def add_grads(self, grads: dict, scale: float = 1.0):
        for name, g in grads.items():
            self.params[name].grad += scale * g

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
        return h.hexdigest()

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self)
