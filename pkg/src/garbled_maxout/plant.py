"""Plaintext reference world: plant, controller fixtures and closed loop."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable

import numpy as np

from .errors import ContractError, DomainError
from .quantize import RealNetwork, StateDomain

DOUBLE_INTEGRATOR_A = np.array([[1.0, 1.0], [0.0, 1.0]])
DOUBLE_INTEGRATOR_B = np.array([0.5, 1.0])
DOUBLE_INTEGRATOR_BOX = StateDomain(np.array([25.0, 5.0]))
INPUT_BOUND = 1.0

# Places both eigenvalues of A + B k^T at 0.5.
SATURATED_GAIN = np.array([-0.25, -0.875])


@dataclass(frozen=True)
class LinearSystem:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=np.float64)
        B = np.array(self.B, dtype=np.float64).reshape(-1)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or B.shape != (A.shape[0],):
            raise ContractError("A must be n x n and B of length n")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def step(self, x, u: float) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=np.float64) + self.B * u


def double_integrator() -> LinearSystem:
    return LinearSystem(DOUBLE_INTEGRATOR_A, DOUBLE_INTEGRATOR_B)


@dataclass(frozen=True)
class MaxoutController:
    network: RealNetwork
    input_bound: float = INPUT_BOUND
    name: str = "maxout"


def maxout_eval(ctrl: MaxoutController | RealNetwork, x) -> float:
    net = ctrl.network if isinstance(ctrl, MaxoutController) else ctrl
    x = np.asarray(x, dtype=np.float64)
    return float(np.max(net.K @ x + net.b) - np.max(net.L @ x + net.c))


def maxout_eval_batch(net: RealNetwork, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return np.max(X @ net.K.T + net.b, axis=1) - np.max(X @ net.L.T + net.c, axis=1)


def _load_asset(name: str) -> dict:
    return json.loads(resources.files("garbled_maxout.data").joinpath(name).read_text())


def fixture_paper_p8() -> MaxoutController:
    """The printed p = 8 weights for the double integrator (two decimals)."""
    return MaxoutController(RealNetwork.from_dict(_load_asset("paper_p8.json")), INPUT_BOUND, "paper-p8")


def fixture_saturated_feedback(k=SATURATED_GAIN) -> MaxoutController:
    """p = 2 network equal to clamp(k^T x, -1, 1) everywhere.

    max(k^T x, -1) - max(k^T x - 1, 0) is k^T x inside [-1, 1] and
    saturates outside.
    """
    k = np.asarray(k, dtype=np.float64).reshape(-1)
    zero = np.zeros_like(k)
    net = RealNetwork(K=[k, zero], L=[k, zero], b=[0.0, -1.0], c=[-1.0, 0.0])
    return MaxoutController(net, INPUT_BOUND, "saturated")


FIXTURES = {
    "paper-p8": fixture_paper_p8,
    "saturated": fixture_saturated_feedback,
}


def closed_loop_spectral_radius(sys: LinearSystem, k) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(sys.A + np.outer(sys.B, k)))))


@dataclass
class SimulationTrace:
    states: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    controller: str = ""
    seed: int | None = None
    truncated: bool = False

    @property
    def steps(self) -> int:
        return len(self.inputs)

    def rows(self):
        for k, u in enumerate(self.inputs):
            yield k, self.states[k][0], self.states[k][1], u

    def write_csv(self, path_or_file) -> None:
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "x1", "x2", "u"])
            for k, x1, x2, u in self.rows():
                w.writerow([k, repr(float(x1)), repr(float(x2)), repr(float(u))])
        finally:
            if own:
                fh.close()


def closed_loop(sys: LinearSystem, controller: Callable[[np.ndarray], float], x0, steps: int,
                guard: StateDomain | None = None, domain: StateDomain | None = None,
                name: str = "", seed: int | None = None) -> SimulationTrace:
    """Iterate x+ = A x + B u with u from ``controller``.

    Leaving ``guard`` stops the loop and flags the trace as truncated.
    """
    x = np.asarray(x0, dtype=np.float64).reshape(-1)
    if x.shape != (sys.n,):
        raise ContractError(f"x0 must have length {sys.n}")
    if domain is not None and not domain.contains(x):
        raise DomainError("x0 outside the state domain")
    trace = SimulationTrace(states=[x.copy()], controller=name, seed=seed)
    for _ in range(steps):
        if guard is not None and not guard.contains(x):
            trace.truncated = True
            break
        u = float(controller(x))
        trace.inputs.append(u)
        x = sys.step(x, u)
        trace.states.append(x.copy())
    return trace


def sample_states(dom: StateDomain, count: int, seed: int) -> np.ndarray:
    """Uniform samples from the box, deterministic per seed."""
    rng = np.random.default_rng(seed)
    r = dom.half_widths
    return rng.uniform(-r, r, size=(count, r.size))
