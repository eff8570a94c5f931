"""Plan-view geometry and channel sampling for RIS-assisted uplinks.

All RISs share one plan-view position (the origin) and are stacked
vertically, ``ris_gap`` apart and centred on height 0; BS and users sit at
height 0. Incidence angles are plan-view azimuths, so every RIS sees the same
angle between two users, while link distances include the height offset.

The BS and the desired user sit on rays from the origin that enclose
``bs_desired_angle``; the BS ray lies at +angle/2 from the +x axis, the
desired user ray at -angle/2. Interferer ``m`` is placed at its configured
distance on the ray obtained by rotating the desired-user ray towards the BS
by ``interferer_angles[m]`` degrees.

Link model:

* RIS->BS and user->RIS: Rician, LoS path loss, LoS phase common to all
  elements of a surface (the angular selectivity lives in the coupling
  factor, not in an array response).
* user->BS direct links: Rayleigh with NLoS path loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path
from typing import Any, Sequence

import numpy as np

try:  # python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

SPEED_OF_LIGHT = 299_792_458.0


class ScenarioError(ValueError):
    """Raised for geometrically or physically invalid scenario configs."""


@dataclass
class ScenarioConfig:
    """User-facing knobs for one network instance.

    Users are indexed with the desired user first; ``interferer_*`` lists
    describe users 1..L-1 in order.
    """

    n_ris: int = 1
    elements_per_ris: int | list[int] = 256
    ris_gap: float = 5.0
    bs_ris_distance: float = 80.0
    desired_ris_distance: float = 60.0
    bs_desired_angle: float = 150.0
    interferer_distances: list[float] = field(default_factory=lambda: [10.0])
    interferer_angles: list[float] = field(default_factory=lambda: [0.0])
    desired_power_dbm: float = 20.0
    interferer_powers_dbm: list[float] = field(default_factory=lambda: [10.0])
    noise_dbm: float = -94.0
    carrier_ghz: float = 3.0
    lambda_max: float = 150.0
    k_factor_db: float = 10.0
    seed: int = 0

    @property
    def n_users(self) -> int:
        return 1 + len(self.interferer_distances)

    def replace(self, **changes: Any) -> "ScenarioConfig":
        data = asdict(self)
        data.update(changes)
        return ScenarioConfig(**data)


@dataclass(frozen=True)
class Scenario:
    bs_position: np.ndarray
    ris_positions: np.ndarray  # (K, 2) plan view
    ris_heights: np.ndarray  # (K,) metres
    user_positions: np.ndarray  # (L, 2)
    desired_user: int
    elements_per_ris: tuple[int, ...]
    tx_powers: np.ndarray  # dBm, (L,)
    noise_power: float  # dBm
    carrier_freq: float  # GHz
    lambda_max: float  # degrees
    k_factor_db: float
    seed: int

    @property
    def n_ris(self) -> int:
        return len(self.ris_positions)

    @property
    def n_users(self) -> int:
        return len(self.user_positions)

    def incidence_angle_difference(self, user: int, ris: int = 0) -> float:
        """Plan-view angle (deg) between ``user`` and the desired user at RIS ``ris``."""
        origin = self.ris_positions[ris]
        return _angle_between(
            self.user_positions[user] - origin,
            self.user_positions[self.desired_user] - origin,
        )

    def ris_distance(self, point: np.ndarray, ris: int) -> float:
        """3-D distance from a ground-level point to the centre of RIS ``ris``."""
        plan = float(np.linalg.norm(np.asarray(point) - self.ris_positions[ris]))
        return math.hypot(plan, float(self.ris_heights[ris]))


@dataclass(frozen=True)
class ChannelSet:
    """All complex gains of one realization (linear amplitude).

    ``h_ris_user[k]`` has shape (L, N_k); ``g_ris_bs[k]`` has shape (N_k,).
    ``xi[k, i]`` is the coupling of user ``i`` at RIS ``k`` and is exactly 1
    for the desired user.
    """

    h_ris_user: tuple[np.ndarray, ...]
    g_ris_bs: tuple[np.ndarray, ...]
    h_direct: np.ndarray
    xi: np.ndarray
    desired: int = 0

    @property
    def n_ris(self) -> int:
        return len(self.g_ris_bs)

    @property
    def n_users(self) -> int:
        return len(self.h_direct)

    @property
    def elements_per_ris(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.g_ris_bs)


@dataclass(frozen=True)
class ActivitySet:
    alpha: tuple[int, ...]
    desired: int = 0

    @property
    def omega(self) -> int:
        return sum(a for m, a in enumerate(self.alpha) if m != self.desired)

    @property
    def interferers(self) -> frozenset[int]:
        return frozenset(m for m, a in enumerate(self.alpha) if a and m != self.desired)


def _angle_between(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    c = float(np.dot(u, v) / (nu * nv))
    # atan2 form keeps precision near 0 and 180 degrees
    s = float(u[0] * v[1] - u[1] * v[0]) / (nu * nv)
    return math.degrees(math.atan2(abs(s), c))


def _ray(angle_deg: float, distance: float, origin: np.ndarray) -> np.ndarray:
    a = math.radians(angle_deg)
    return origin + distance * np.array([math.cos(a), math.sin(a)])


def place_scenario(config: ScenarioConfig) -> Scenario:
    K = config.n_ris
    L = config.n_users
    if K < 1:
        raise ScenarioError("need at least one RIS")
    if L < 2:
        raise ScenarioError("need at least two users")
    if len(config.interferer_angles) != L - 1 or len(config.interferer_powers_dbm) != L - 1:
        raise ScenarioError("interferer distance/angle/power lists must have equal length")
    for name in ("bs_ris_distance", "desired_ris_distance", "ris_gap", "carrier_ghz"):
        if getattr(config, name) <= 0:
            raise ScenarioError(f"{name} must be positive")
    if any(d <= 0 for d in config.interferer_distances):
        raise ScenarioError("interferer distances must be positive")
    if config.lambda_max <= 0:
        raise ScenarioError("lambda_max must be positive")
    for lam in config.interferer_angles:
        if not 0.0 <= lam <= config.lambda_max:
            raise ScenarioError(f"interferer angle {lam} outside [0, {config.lambda_max}]")

    n_k = config.elements_per_ris
    n_k = [int(n_k)] * K if np.isscalar(n_k) else [int(n) for n in n_k]
    if len(n_k) != K or any(n < 1 for n in n_k):
        raise ScenarioError("elements_per_ris must give N_k >= 1 for each RIS")

    heights = (np.arange(K) - (K - 1) / 2.0) * config.ris_gap
    ris = np.zeros((K, 2))
    centre = np.zeros(2)
    half = config.bs_desired_angle / 2.0
    bs = _ray(half, config.bs_ris_distance, centre)
    users = [_ray(-half, config.desired_ris_distance, centre)]
    for d, lam in zip(config.interferer_distances, config.interferer_angles):
        users.append(_ray(-half + lam, d, centre))
    users = np.array(users)

    if np.min(np.linalg.norm(users - bs, axis=1)) <= 0:
        raise ScenarioError("a user coincides with the BS")

    powers = np.array([config.desired_power_dbm, *config.interferer_powers_dbm], dtype=float)
    return Scenario(
        bs_position=bs,
        ris_positions=ris,
        ris_heights=heights,
        user_positions=users,
        desired_user=0,
        elements_per_ris=tuple(n_k),
        tx_powers=powers,
        noise_power=float(config.noise_dbm),
        carrier_freq=float(config.carrier_ghz),
        lambda_max=float(config.lambda_max),
        k_factor_db=float(config.k_factor_db),
        seed=int(config.seed),
    )


def pathloss_db(distance, freq_ghz, los: bool = True):
    """3GPP UMi path loss in dB (distance in m, frequency in GHz)."""
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0) or freq_ghz <= 0:
        raise ValueError("distance and frequency must be positive")
    if los:
        pl = 28.0 + 22.0 * np.log10(d) + 20.0 * np.log10(freq_ghz)
    else:
        pl = 22.7 + 36.7 * np.log10(d) + 26.0 * np.log10(freq_ghz)
    return float(pl) if pl.ndim == 0 else pl


def interference_coupling(lambda_angle: float, lambda_max: float = 150.0) -> float:
    return max(0.0, 1.0 - lambda_angle / lambda_max)


def _cn(rng: np.random.Generator, size) -> np.ndarray:
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / math.sqrt(2.0)


def _rician(rng, n, distance, scenario: Scenario) -> np.ndarray:
    amp = 10.0 ** (-pathloss_db(distance, scenario.carrier_freq, los=True) / 20.0)
    wavelength = SPEED_OF_LIGHT / (scenario.carrier_freq * 1e9)
    los = np.exp(-2j * math.pi * distance / wavelength)
    if math.isinf(scenario.k_factor_db):
        return np.full(n, amp * los, dtype=complex)
    kappa = 10.0 ** (scenario.k_factor_db / 10.0)
    return amp * (math.sqrt(kappa / (kappa + 1)) * los + math.sqrt(1 / (kappa + 1)) * _cn(rng, n))


def sample_channels(scenario: Scenario, seed: int | None = None) -> ChannelSet:
    """Draw one quasi-static channel realization.

    Deterministic in ``(scenario, seed)``; ``seed`` defaults to
    ``scenario.seed``.
    """
    rng = np.random.default_rng(scenario.seed if seed is None else seed)
    K, L = scenario.n_ris, scenario.n_users
    g, h = [], []
    for k in range(K):
        n = scenario.elements_per_ris[k]
        g.append(_rician(rng, n, scenario.ris_distance(scenario.bs_position, k), scenario))
        h.append(np.vstack([
            _rician(rng, n, scenario.ris_distance(scenario.user_positions[i], k), scenario)
            for i in range(L)
        ]))
    d_direct = np.linalg.norm(scenario.user_positions - scenario.bs_position, axis=1)
    direct_power = 10.0 ** (-pathloss_db(d_direct, scenario.carrier_freq, los=False) / 10.0)
    h_direct = np.sqrt(direct_power) * _cn(rng, L)

    xi = np.ones((K, L))
    for k in range(K):
        for i in range(L):
            if i != scenario.desired_user:
                lam = scenario.incidence_angle_difference(i, ris=k)
                xi[k, i] = interference_coupling(lam, scenario.lambda_max)
    return ChannelSet(tuple(h), tuple(g), h_direct, xi, scenario.desired_user)


def load_config(path: str | Path) -> ScenarioConfig:
    """Read a TOML scenario file; missing keys keep their defaults.

    Keys may sit at top level or under a ``[scenario]`` table.
    """
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return config_from_dict(data.get("scenario", data))


def config_from_dict(data: dict) -> ScenarioConfig:
    known = {f.name for f in fields(ScenarioConfig)}
    unknown = set(data) - known
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
    return ScenarioConfig(**data)
