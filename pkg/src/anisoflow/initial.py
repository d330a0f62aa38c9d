"""Library of periodic initial height fields."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import minimize

from .errors import ConfigError

if TYPE_CHECKING:
    from .solver import GridSpec

KINDS = ("sawtooth", "trig", "bump", "sine", "constant")

# reference samples per axis for the sup-norm search
PEAK_REFERENCE = {1: 4096, 2: 256, 3: 48}


def smoothed_sawtooth(theta: NDArray, width: float) -> NDArray:
    """Sawtooth ``1 - theta/pi`` on ``(0, 2 pi)`` with its jump rounded off.

    ``width -> 0`` recovers the discontinuous profile.
    """
    return (2.0 / math.pi) * np.arctan2(np.sin(theta), 1.0 + width - np.cos(theta))


@dataclass(frozen=True)
class InitialData:
    """Named initial datum; ``sample`` evaluates it on a grid.

    ``amplitude`` is the sup-norm of the sampled field for ``sawtooth``,
    ``trig`` and ``bump``, the coefficient for ``sine`` and the value for
    ``constant``.
    """

    kind: str
    amplitude: float = 1.0
    width: float = 0.05
    modes: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown initial data {self.kind!r}")

    def sample(self, grid: GridSpec) -> NDArray:
        x = grid.coords()
        theta = 2.0 * math.pi * x / grid.L
        if self.kind == "constant":
            return np.full(grid.shape, float(self.amplitude))
        if self.kind == "sine":
            return self.amplitude * np.sin(self.modes * theta[..., 0])
        if self.kind == "bump":
            # peak value 1 at the centre
            r2 = ((x - grid.L / 2.0) ** 2).sum(axis=-1)
            return self.amplitude * np.exp(-r2 / (2.0 * (self.width * grid.L) ** 2))
        return self.amplitude * self._profile(theta) / self.peak(grid.n)

    def _profile(self, theta: NDArray) -> NDArray:
        if self.kind == "sawtooth":
            return smoothed_sawtooth(theta, self.width).sum(axis=-1)
        return self._trig(theta)

    def _trig(self, theta: NDArray) -> NDArray:
        n = theta.shape[-1]
        rng = np.random.default_rng(self.seed)
        ks = np.stack(
            np.meshgrid(*([np.arange(-self.modes, self.modes + 1)] * n), indexing="ij"), axis=-1
        ).reshape(-1, n)
        ks = ks[np.abs(ks).sum(axis=1) > 0]
        coef = rng.standard_normal((len(ks), 2)) / (1.0 + (ks**2).sum(axis=1))[:, None]
        phase = theta @ ks.T
        return np.cos(phase) @ coef[:, 0] + np.sin(phase) @ coef[:, 1]

    def peak(self, n: int) -> float:
        """Grid-independent sup-norm of the unscaled profile.

        A dense reference sampling is refined by a local search, so the
        normalisation does not depend on the simulation resolution.
        """
        if self.kind == "sawtooth":
            # separable: n copies of the one-dimensional peak
            return n * InitialData("sawtooth", width=self.width)._peak_search(1)
        return self._peak_search(n)

    def _peak_search(self, n: int) -> float:
        m = PEAK_REFERENCE[n]
        axes = np.linspace(0.0, 2.0 * math.pi, m, endpoint=False)
        theta = np.stack(np.meshgrid(*([axes] * n), indexing="ij"), axis=-1).reshape(-1, n)
        vals = np.abs(self._profile(theta))
        start = theta[np.argmax(vals)]

        def neg(t):
            return -abs(float(self._profile(np.asarray(t)[None, :])[0]))

        res = minimize(neg, start, method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-15})
        return max(float(vals.max()), -float(res.fun))


def from_config(section: Mapping[str, str], seed: int = 0) -> InitialData:
    """Build initial data from an ``[initial]`` section; ``seed`` comes from the run."""
    known = {"kind", "amplitude", "width", "modes"}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)}", "[initial]")
    kind = section.get("kind", "").strip()
    if kind not in KINDS:
        raise ConfigError(f"unknown kind {kind!r}", "[initial] kind")
    try:
        return InitialData(
            kind=kind,
            amplitude=float(section.get("amplitude", "1.0")),
            width=float(section.get("width", "0.05")),
            modes=int(section.get("modes", "3")),
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc), "[initial]") from None
