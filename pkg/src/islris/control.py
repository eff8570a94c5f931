"""SINR evaluation, phase optimisation and RIS ON-OFF control.

Powers are passed in dBm and converted once; every quantity inside the SINR
arithmetic is in watts.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numba import njit

from .geometry import ChannelSet

TWO_PI = 2.0 * math.pi
GRID_POINTS = 64
MAX_SWEEPS = 50
SWEEP_RTOL = 1e-6
ENUMERATION_LIMIT = 20


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


@dataclass(frozen=True)
class RisState:
    beta: tuple[int, ...]
    phases: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.beta) != len(self.phases):
            raise ValueError("beta and phases must cover the same RISs")

    @classmethod
    def all_on(cls, phases: Sequence[np.ndarray]) -> "RisState":
        return cls(tuple([1] * len(phases)), tuple(np.asarray(p, float) for p in phases))

    @classmethod
    def all_off(cls, phases: Sequence[np.ndarray]) -> "RisState":
        return cls(tuple([0] * len(phases)), tuple(np.asarray(p, float) for p in phases))

    def with_beta(self, beta: Iterable[int]) -> "RisState":
        return RisState(tuple(int(b) for b in beta), self.phases)


@dataclass(frozen=True)
class SinrReport:
    gamma_linear: float
    numerator_power: float
    denominator_power: float

    @property
    def gamma_db(self) -> float:
        return 10.0 * math.log10(self.gamma_linear) if self.gamma_linear > 0 else -math.inf


def zero_phases(channels: ChannelSet) -> list[np.ndarray]:
    return [np.zeros(n) for n in channels.elements_per_ris]


def reflected_term(channels: ChannelSet, k: int, phases_k: np.ndarray, user: int) -> complex:
    """g_k Phi_k h_{user,k} for RIS ``k`` (no coupling, no ON flag)."""
    return complex(np.sum(channels.g_ris_bs[k] * np.exp(1j * phases_k) * channels.h_ris_user[k][user]))


def _coupling(channels: ChannelSet, k: int, user: int, desired: int) -> float:
    return 1.0 if user == desired else float(channels.xi[k, user])


def composite_gain(channels: ChannelSet, state: RisState, user: int, desired: int | None = None) -> complex:
    desired = channels.desired if desired is None else desired
    total = complex(channels.h_direct[user])
    for k, on in enumerate(state.beta):
        if on:
            total += _coupling(channels, k, user, desired) * reflected_term(channels, k, state.phases[k], user)
    return total


def _report(num: float, interference: float, noise_w: float) -> SinrReport:
    den = interference + noise_w
    return SinrReport(num / den, num, den)


def _check_interferers(active: Iterable[int], desired: int) -> list[int]:
    active = sorted(set(active))
    if desired in active:
        raise ValueError("active interferer set must exclude the desired user")
    return active


def sinr(channels: ChannelSet, state: RisState, active_interferers: Iterable[int],
         powers_dbm, noise_dbm: float, desired: int | None = None) -> SinrReport:
    desired = channels.desired if desired is None else desired
    active = _check_interferers(active_interferers, desired)
    p = dbm_to_watt(powers_dbm)
    num = p[desired] * abs(composite_gain(channels, state, desired, desired)) ** 2
    interference = sum(p[m] * abs(composite_gain(channels, state, m, desired)) ** 2 for m in active)
    return _report(float(num), float(interference), float(dbm_to_watt(noise_dbm)))


def sinr_single_ris(channels: ChannelSet, k: int, phases_k: np.ndarray, active_set: Iterable[int],
                    powers_dbm, noise_dbm: float) -> SinrReport:
    """SINR when only RIS ``k`` reflects."""
    desired = channels.desired
    active = _check_interferers(active_set, desired)
    p = dbm_to_watt(powers_dbm)
    own = channels.h_direct[desired] + reflected_term(channels, k, phases_k, desired)
    num = p[desired] * abs(own) ** 2
    interference = 0.0
    for m in active:
        gm = channels.h_direct[m] + channels.xi[k, m] * reflected_term(channels, k, phases_k, m)
        interference += p[m] * abs(gm) ** 2
    return _report(float(num), float(interference), float(dbm_to_watt(noise_dbm)))


def sinr_direct(channels: ChannelSet, active_set: Iterable[int], powers_dbm, noise_dbm: float) -> SinrReport:
    desired = channels.desired
    active = _check_interferers(active_set, desired)
    p = dbm_to_watt(powers_dbm)
    num = p[desired] * abs(channels.h_direct[desired]) ** 2
    interference = sum(p[m] * abs(channels.h_direct[m]) ** 2 for m in active)
    return _report(float(num), float(interference), float(dbm_to_watt(noise_dbm)))


def closed_form_alignment(g_k: np.ndarray, h_lk: np.ndarray, h_d: complex = 0.0) -> np.ndarray:
    """Co-phase every reflected path with the direct link."""
    ref = np.angle(h_d) if h_d != 0 else 0.0
    return np.mod(ref - np.angle(np.asarray(g_k) * np.asarray(h_lk)), TWO_PI)


# ---------------------------------------------------------------- ascent

@njit(cache=True, nogil=True)
def _element_objective(theta, A, c, w, noise):
    e = complex(math.cos(theta), math.sin(theta))
    z = A[0] + c[0] * e
    num = w[0] * (z.real * z.real + z.imag * z.imag)
    den = noise
    for u in range(1, A.shape[0]):
        z = A[u] + c[u] * e
        den += w[u] * (z.real * z.real + z.imag * z.imag)
    return num / den


@njit(cache=True, nogil=True)
def _coordinate_ascent(coef, base, w, noise, theta, max_sweeps, rtol, grid_points):
    """Cyclic 1-D maximisation of the SINR over each element phase.

    coef[u, q]: coupled cascaded gain of user u through element q (row 0 is
    the desired user). Returns the objective after the initial point and
    after every sweep.
    """
    U, Q = coef.shape
    S = base.copy()
    for q in range(Q):
        e = complex(math.cos(theta[q]), math.sin(theta[q]))
        for u in range(U):
            S[u] += coef[u, q] * e
    A = np.empty(U, dtype=np.complex128)
    c = np.empty(U, dtype=np.complex128)
    step = 2.0 * math.pi / grid_points
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    f = _element_objective(0.0, S, np.zeros(U, dtype=np.complex128), w, noise)
    history = np.empty(max_sweeps + 1)
    history[0] = f
    n_hist = 1
    for _ in range(max_sweeps):
        f_start = f
        for q in range(Q):
            e_old = complex(math.cos(theta[q]), math.sin(theta[q]))
            for u in range(U):
                c[u] = coef[u, q]
                A[u] = S[u] - c[u] * e_old
            best_t = theta[q]
            best_f = _element_objective(best_t, A, c, w, noise)
            for i in range(grid_points):
                t = i * step
                ft = _element_objective(t, A, c, w, noise)
                if ft > best_f:
                    best_f = ft
                    best_t = t
            # golden-section refinement inside the neighbouring grid cells
            lo = best_t - step
            hi = best_t + step
            x1 = hi - invphi * (hi - lo)
            x2 = lo + invphi * (hi - lo)
            f1 = _element_objective(x1, A, c, w, noise)
            f2 = _element_objective(x2, A, c, w, noise)
            while hi - lo > 1e-10:
                if f1 < f2:
                    lo = x1
                    x1 = x2
                    f1 = f2
                    x2 = lo + invphi * (hi - lo)
                    f2 = _element_objective(x2, A, c, w, noise)
                else:
                    hi = x2
                    x2 = x1
                    f2 = f1
                    x1 = hi - invphi * (hi - lo)
                    f1 = _element_objective(x1, A, c, w, noise)
            t = 0.5 * (lo + hi)
            ft = _element_objective(t, A, c, w, noise)
            if ft > best_f:
                best_f = ft
                best_t = t
            if best_f > f:
                theta[q] = best_t % (2.0 * math.pi)
                e_new = complex(math.cos(theta[q]), math.sin(theta[q]))
                for u in range(U):
                    S[u] = A[u] + coef[u, q] * e_new
                f = _element_objective(0.0, S, np.zeros(U, dtype=np.complex128), w, noise)
        history[n_hist] = f
        n_hist += 1
        if f - f_start < rtol * f_start:
            break
    return theta, history[:n_hist]


def _stack_problem(channels: ChannelSet, users: Sequence[int]):
    """Flatten all RIS elements into one coefficient matrix (users x Q)."""
    desired = channels.desired
    rows = []
    for u in users:
        parts = [
            _coupling(channels, k, u, desired) * channels.g_ris_bs[k] * channels.h_ris_user[k][u]
            for k in range(channels.n_ris)
        ]
        rows.append(np.concatenate(parts))
    return np.ascontiguousarray(np.array(rows, dtype=np.complex128))


def _split(theta: np.ndarray, sizes: Sequence[int]) -> list[np.ndarray]:
    return [np.array(p) for p in np.split(theta, np.cumsum(sizes)[:-1])]


def optimize_phases(channels: ChannelSet, inferred_set: Iterable[int], powers_dbm, noise_dbm: float,
                    return_trace: bool = False, max_sweeps: int = MAX_SWEEPS):
    """Maximise the inferred SINR over all phases with every RIS ON.

    Starts from co-phasing with the desired direct link, then runs cyclic
    coordinate ascent (64-point grid + golden section per element) until a
    sweep improves the objective by less than 1e-6 relative. With
    ``return_trace`` the per-sweep objective sequence is returned as well.
    """
    desired = channels.desired
    active = _check_interferers(inferred_set, desired)
    users = [desired, *active]
    p = dbm_to_watt(powers_dbm)
    coef = _stack_problem(channels, users)
    base = np.array([channels.h_direct[u] for u in users], dtype=np.complex128)
    w = np.array([p[u] for u in users], dtype=float)
    h_d = channels.h_direct[desired]
    theta0 = np.concatenate([
        closed_form_alignment(channels.g_ris_bs[k], channels.h_ris_user[k][desired], h_d)
        for k in range(channels.n_ris)
    ])
    theta, history = _coordinate_ascent(coef, base, w, float(dbm_to_watt(noise_dbm)), theta0.copy(),
                                        max_sweeps, SWEEP_RTOL, GRID_POINTS)
    phases = _split(theta, channels.elements_per_ris)
    return (phases, np.asarray(history)) if return_trace else phases


# ------------------------------------------------------------ ON-OFF control

def drbc(channels: ChannelSet, inferred_set: Iterable[int], phases: Sequence[np.ndarray],
         powers_dbm, noise_dbm: float) -> tuple[int, ...]:
    """Per-RIS ON-OFF rule: ON iff the single-RIS SINR is at least the direct-link SINR.

    Each test matches ``sinr_single_ris`` bit for bit; the phase rotation
    ``g_k Phi_k`` is formed once per RIS instead of once per user.
    """
    desired = channels.desired
    active = _check_interferers(inferred_set, desired)
    direct = sinr_direct(channels, active, powers_dbm, noise_dbm).gamma_linear
    p = dbm_to_watt(powers_dbm)
    noise = float(dbm_to_watt(noise_dbm))
    h_d = channels.h_direct
    beta = []
    for k in range(channels.n_ris):
        rotated = channels.g_ris_bs[k] * np.exp(1j * phases[k])
        h_k = channels.h_ris_user[k]
        num = float(p[desired] * abs(h_d[desired] + complex(np.sum(rotated * h_k[desired]))) ** 2)
        interference = 0.0
        for m in active:
            gm = h_d[m] + channels.xi[k, m] * complex(np.sum(rotated * h_k[m]))
            interference += p[m] * abs(gm) ** 2
        via_k = _report(num, float(interference), noise).gamma_linear
        beta.append(1 if via_k >= direct else 0)
    return tuple(beta)


def exhaustive_onoff(channels: ChannelSet, inferred_set: Iterable[int], phases: Sequence[np.ndarray],
                     powers_dbm, noise_dbm: float) -> tuple[tuple[int, ...], float]:
    """Enumerate all 2^K ON-OFF vectors; ties go to the lexicographically smallest."""
    K = channels.n_ris
    if K > ENUMERATION_LIMIT:
        raise ValueError(f"enumeration over K={K} RISs exceeds the limit of {ENUMERATION_LIMIT}")
    desired = channels.desired
    users = [desired, *_check_interferers(inferred_set, desired)]
    p = dbm_to_watt(powers_dbm)
    noise = float(dbm_to_watt(noise_dbm))
    terms = [[_coupling(channels, k, u, desired) * reflected_term(channels, k, phases[k], u) for u in users]
             for k in range(K)]
    best, best_gamma = None, -1.0
    for beta in itertools.product((0, 1), repeat=K):
        gains = [complex(channels.h_direct[u]) for u in users]
        for k in range(K):
            if beta[k]:
                for j in range(len(users)):
                    gains[j] += terms[k][j]
        num = p[desired] * abs(gains[0]) ** 2
        den = noise
        for j in range(1, len(users)):
            den += p[users[j]] * abs(gains[j]) ** 2
        gamma = num / den
        if gamma > best_gamma:
            best, best_gamma = beta, gamma
    return tuple(best), float(best_gamma)
