"""
Coarse Guidance Toolkit - Traffic Simulator
Forward-Euler integration of the guided ring under zero-order-hold guidance, with
acceleration saturation, emergency braking, collision detection and human-error
models. Seeds are integrated as one batch of independent rows; every row-wise
reduction is an explicit per-row sum so results do not depend on batching or threads.
"""

import logging
import math
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from config.settings import settings
from schemas.params import (DelayRealization, DisturbanceKind, DisturbanceModel, GuidanceKind,
                            OvmParams, PlantMode, SimConfig)
from traffic.ring_model import Controller, SystemMatrices, optimal_velocity
from utils.error_handling import DimensionMismatchError, EmptyInputError, InvalidHoldLengthError
from utils.logging_config import log_with_context, sim_logger
from utils.validators import validate_gain_row, validate_hold_length

TAIL_FRACTIONS = (0.10, 0.20, 0.30)


class StabilityStatus(str, Enum):
    """Classification of a trajectory ensemble"""
    CONVERGED = "converged"
    COLLIDED = "collided"
    NOT_CONVERGED = "not_converged"


class EventKind(str, Enum):
    AEB_TRIGGERED = "aeb"
    COLLISION = "collision"


@dataclass(frozen=True)
class SimEvent:
    time: float
    kind: EventKind
    vehicle: int


@dataclass
class TrajectorySummary:
    """Per-seed outcome kept by ensemble runs"""
    seed: int
    collided: bool
    diverged: bool
    final_error_norm: float
    tail_maxima: Dict[float, float]
    aeb_count: int
    collision_time: Optional[float] = None


@dataclass
class Trajectory:
    """Recorded history of one seed"""
    times: np.ndarray
    steps: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    control_log: np.ndarray
    events: List[SimEvent]
    summary: TrajectorySummary
    equilibrium: tuple
    n_steps: int

    @property
    def collided(self) -> bool:
        return self.summary.collided

    @property
    def diverged(self) -> bool:
        return self.summary.diverged

    @property
    def final_error_norm(self) -> float:
        return self.summary.final_error_norm

    @property
    def tail_maxima(self) -> Dict[float, float]:
        return self.summary.tail_maxima

    def physical_states(self) -> np.ndarray:
        """Spacings and velocities in physical units, same layout as the error state"""
        s_star, v_star = self.equilibrium
        offset = np.tile([s_star, v_star], self.states.shape[1] // 2)
        return self.states + offset


@dataclass
class StabilityVerdict:
    status: StabilityStatus
    final_error_norm: float
    ultimate_bound: Optional[float] = None
    n_trajectories: int = 0
    n_collided: int = 0
    n_not_converged: int = 0


TrajectoryLike = Union[Trajectory, TrajectorySummary]


def hold_steps(delta: float, t_step: float) -> int:
    """Number of integration steps per holding period, snapping delta down to the grid"""
    ok, error = validate_hold_length(delta, t_step)
    if not ok:
        raise InvalidHoldLengthError('simulator', 'simulate', error)

    steps = max(1, int(math.floor(delta / t_step + 1e-9)))
    snapped = steps * t_step
    if abs(snapped - delta) > 1e-9 * max(1.0, delta):
        log_with_context(sim_logger, logging.INFO, "Hold length snapped to integration grid",
                         requested=delta, snapped=snapped, t_step=t_step)
    return steps


def tail_start_step(n_steps: int, fraction: float) -> int:
    """First step index inside the last `fraction` of the horizon"""
    return n_steps - int(math.ceil(fraction * n_steps - 1e-9))


def aeb_triggered(v_i, v_prev, s_i, cfg: SimConfig):
    """Vectorized braking rule; True where full braking applies"""
    v_i = np.asarray(v_i, dtype=float)
    v_prev = np.asarray(v_prev, dtype=float)
    s_i = np.asarray(s_i, dtype=float)
    gap = s_i - cfg.s_d
    with np.errstate(divide='ignore', invalid='ignore'):
        required = (v_i ** 2 - v_prev ** 2) / (2.0 * gap)
    return (gap <= 0) | ((gap > 0) & (required >= abs(cfg.a_min)))


def aeb_override(v_i: float, v_prev: float, s_i: float, cfg: SimConfig) -> Optional[float]:
    """a_min if emergency braking triggers for this follower, else None"""
    if bool(aeb_triggered(v_i, v_prev, s_i, cfg)):
        return cfg.a_min
    return None


def seed_rng(cfg: SimConfig, seed: int) -> np.random.Generator:
    """Deterministic per-trajectory stream derived from (rng_seed, seed)"""
    return np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, int(seed)]))


def _draw_perturbation(rng: np.random.Generator, n: int, cfg: SimConfig):
    delta_s = rng.uniform(-cfg.perturb_s, cfg.perturb_s, n)
    delta_v = rng.uniform(-cfg.perturb_v, cfg.perturb_v, n)
    return delta_s, delta_v


def _interleave(spacing: np.ndarray, velocity: np.ndarray) -> np.ndarray:
    shape = spacing.shape[:-1] + (2 * spacing.shape[-1],)
    x = np.empty(shape)
    x[..., 0::2] = spacing
    x[..., 1::2] = velocity
    return x


def _error_from_perturbation(delta_s: np.ndarray, delta_v: np.ndarray) -> np.ndarray:
    # vehicle i sits delta_s[i] off its slot; its predecessor is i-1 (vehicle n for i = 1)
    spacing_error = np.roll(delta_s, 1, axis=-1) - delta_s
    return _interleave(spacing_error, delta_v)


def initial_state(p: OvmParams, cfg: SimConfig, seed: int) -> np.ndarray:
    """Error state x(0) of a uniformly perturbed uniform flow"""
    rng = seed_rng(cfg, seed)
    delta_s, delta_v = _draw_perturbation(rng, p.n, cfg)
    return _error_from_perturbation(delta_s, delta_v)


def _rowwise_matvec(M: np.ndarray, X: np.ndarray) -> np.ndarray:
    return np.sum(X[:, None, :] * M[None, :, :], axis=-1)


def _row_norms(X: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(X * X, axis=1))


class _EnsembleRun:
    """One batch of seeds integrated in lockstep"""

    def __init__(self, sys: SystemMatrices, controller: Controller, steps_per_hold: int,
                 dist: DisturbanceModel, plant: PlantMode, cfg: SimConfig,
                 seeds: Sequence[int], record: bool):
        self.sys = sys
        self.p = sys.params
        self.eq = sys.equilibrium
        self.n = sys.n
        self.dim = sys.dim
        self.gain = controller.effective_gain[0].copy()
        self.hold = steps_per_hold
        self.dist = dist
        self.plant = plant
        self.cfg = cfg
        self.seeds = list(seeds)
        self.record = record
        self.S = len(self.seeds)
        self.dt = cfg.t_step
        self.n_steps = cfg.n_steps

        self.rngs = [seed_rng(cfg, seed) for seed in self.seeds]
        delta_s = np.empty((self.S, self.n))
        delta_v = np.empty((self.S, self.n))
        self.mask = np.empty((self.S, self.n))
        for row, rng in enumerate(self.rngs):
            delta_s[row], delta_v[row] = _draw_perturbation(rng, self.n, cfg)
            self.mask[row] = rng.random(self.n) < dist.bernoulli_p

        if plant == PlantMode.NONLINEAR:
            slots = (self.n - 1 - np.arange(self.n)) * self.eq.s_star
            self.pos = slots[None, :] + delta_s
            self.vel = self.eq.v_star + delta_v
        else:
            self.x = _error_from_perturbation(delta_s, delta_v)

        self.alive = np.ones(self.S, dtype=bool)
        self.collided = np.zeros(self.S, dtype=bool)
        self.diverged = np.zeros(self.S, dtype=bool)
        self.collision_time = np.full(self.S, np.nan)
        self.final_norm = np.full(self.S, np.nan)
        self.tail_max = np.zeros((self.S, len(TAIL_FRACTIONS)))
        self.tail_start = [tail_start_step(self.n_steps, f) for f in TAIL_FRACTIONS]
        self.aeb_prev = np.zeros((self.S, self.n), dtype=bool)
        self.aeb_count = np.zeros(self.S, dtype=int)

        self.u = np.zeros(self.S)
        self.applied_issue = np.full(self.S, -1)
        self.pending = deque()

        self.rec_steps: List[int] = []
        self.rec_states: List[np.ndarray] = []
        self.rec_u: List[float] = []
        self.control_log: List[tuple] = []
        self.events: List[SimEvent] = []

    # physical and error coordinates

    def _spacings(self) -> np.ndarray:
        s = np.empty_like(self.pos)
        s[:, 1:] = self.pos[:, :-1] - self.pos[:, 1:]
        s[:, 0] = self.pos[:, -1] + self.p.L - self.pos[:, 0]
        return s

    def _physical(self):
        if self.plant == PlantMode.NONLINEAR:
            return self._spacings(), self.vel
        return self.x[:, 0::2] + self.eq.s_star, self.x[:, 1::2] + self.eq.v_star

    def _error_state(self) -> np.ndarray:
        if self.plant == PlantMode.NONLINEAR:
            return _interleave(self._spacings() - self.eq.s_star, self.vel - self.eq.v_star)
        return self.x

    # per-step stages

    def _observe(self, m: int, x: np.ndarray) -> np.ndarray:
        norms = _row_norms(x)
        spacing, _ = self._physical()

        hit = self.alive & np.any(spacing < 0, axis=1)
        if hit.any():
            self.collided |= hit
            self.collision_time[hit] = m * self.dt
            self.final_norm[hit] = norms[hit]
            self.alive &= ~hit
            if self.record and hit[0]:
                for vehicle in np.flatnonzero(spacing[0] < 0):
                    self.events.append(SimEvent(m * self.dt, EventKind.COLLISION, int(vehicle) + 1))

        blown = self.alive & (~np.isfinite(norms) | (norms > self.cfg.divergence_norm))
        if blown.any():
            self.diverged |= blown
            self.final_norm[blown] = np.inf
            self.alive &= ~blown

        for j, start in enumerate(self.tail_start):
            if m >= start:
                self.tail_max[:, j] = np.where(self.alive, np.maximum(self.tail_max[:, j], norms),
                                               self.tail_max[:, j])

        if m == self.n_steps:
            self.final_norm[self.alive] = norms[self.alive]

        if self.record and (m % self.cfg.record_stride == 0 or m == self.n_steps or not self.alive[0]):
            self.rec_steps.append(m)
            self.rec_states.append(x[0].copy())
        return norms

    def _update_control(self, m: int, x: np.ndarray) -> None:
        if m % self.hold == 0:
            issue = m // self.hold
            u_new = -np.sum(x * self.gain[None, :], axis=1)
            if self.dist.kind == DisturbanceKind.REACTION_DELAY:
                if self.dist.delay_realization == DelayRealization.UNIFORM:
                    delays = np.array([rng.uniform(0.0, self.dist.Sigma) for rng in self.rngs])
                else:
                    delays = np.full(self.S, self.dist.Sigma)
                activate_at = m + np.rint(delays / self.dt).astype(int)
            else:
                activate_at = np.full(self.S, m)
            self.pending.append((issue, activate_at, u_new))

        # issue order: a newer instruction that is already due supersedes an older pending one
        for issue, activate_at, u_new in self.pending:
            ready = (activate_at <= m) & (issue > self.applied_issue)
            if ready.any():
                self.u = np.where(ready, u_new, self.u)
                self.applied_issue = np.where(ready, issue, self.applied_issue)
                if self.record and ready[0]:
                    self.control_log.append((m * self.dt, float(u_new[0])))
        while self.pending:
            issue, activate_at, _ = self.pending[0]
            if not np.all((activate_at <= m) | (self.applied_issue >= issue)):
                break
            self.pending.popleft()

    def _disturbance(self, m: int, norms: np.ndarray) -> np.ndarray:
        kind = self.dist.kind
        if kind not in (DisturbanceKind.NONVANISHING, DisturbanceKind.VANISHING):
            return np.zeros((self.S, self.n))
        if self.cfg.redraw_bernoulli and m > 0:
            for row, rng in enumerate(self.rngs):
                self.mask[row] = rng.random(self.n) < self.dist.bernoulli_p
        if kind == DisturbanceKind.NONVANISHING:
            return self.mask * self.dist.d_nv
        return self.mask * self.dist.d_v * np.where(np.isfinite(norms), norms, 0.0)[:, None]

    def _brake(self, m: int, acc: np.ndarray) -> np.ndarray:
        if not self.cfg.aeb_enabled:
            return acc
        spacing, velocity = self._physical()
        v_prev = np.roll(velocity, 1, axis=1)
        triggered = aeb_triggered(velocity, v_prev, spacing, self.cfg) & self.alive[:, None]
        rising = triggered & ~self.aeb_prev
        self.aeb_count += rising.sum(axis=1)
        if self.record and rising[0].any():
            for vehicle in np.flatnonzero(rising[0]):
                self.events.append(SimEvent(m * self.dt, EventKind.AEB_TRIGGERED, int(vehicle) + 1))
        self.aeb_prev = triggered
        return np.where(triggered, np.minimum(acc, self.cfg.a_min), acc)

    def _advance_nonlinear(self, m: int, norms: np.ndarray) -> None:
        p = self.p
        spacing = self._spacings()
        v = self.vel
        v_prev = np.roll(v, 1, axis=1)
        acc = p.alpha * (optimal_velocity(spacing, p) - v) + p.beta * (v_prev - v)
        if self.sys.guidance == GuidanceKind.ACCELERATION:
            acc[:, 0] = self.u
        else:
            acc[:, 0] = p.alpha * (self.eq.v_star + self.u - v[:, 0]) + p.beta * (v[:, -1] - v[:, 0])
        acc = acc + self._disturbance(m, norms)

        upper = self.cfg.a_max if self.cfg.a_max is not None else np.inf
        acc = np.clip(acc, self.cfg.a_min, upper)
        acc = self._brake(m, acc)

        live = self.alive[:, None]
        self.pos = np.where(live, self.pos + v * self.dt, self.pos)
        self.vel = np.where(live, np.maximum(v + acc * self.dt, 0.0), v)

    def _advance_linear(self, m: int, norms: np.ndarray) -> None:
        x = self.x
        xdot = _rowwise_matvec(self.sys.A, x) + self.u[:, None] * self.sys.B[:, 0][None, :]
        xdot[:, 1::2] += self._disturbance(m, norms)
        xdot[:, 1::2] = self._brake(m, xdot[:, 1::2])
        self.x = np.where(self.alive[:, None], x + self.dt * xdot, x)

    def run(self) -> None:
        for m in range(self.n_steps + 1):
            x = self._error_state()
            norms = self._observe(m, x)
            if m == self.n_steps or not self.alive.any():
                if self.record:
                    self.rec_u.append(float(self.u[0]))
                break
            self._update_control(m, x)
            if self.record and self.rec_steps and self.rec_steps[-1] == m:
                self.rec_u.append(float(self.u[0]))
            if self.plant == PlantMode.NONLINEAR:
                self._advance_nonlinear(m, norms)
            else:
                self._advance_linear(m, norms)

        dead = ~self.alive | self.collided | self.diverged
        self.tail_max[dead] = np.inf

    def summaries(self) -> List[TrajectorySummary]:
        out = []
        for row, seed in enumerate(self.seeds):
            out.append(TrajectorySummary(
                seed=seed,
                collided=bool(self.collided[row]),
                diverged=bool(self.diverged[row]),
                final_error_norm=float(self.final_norm[row]),
                tail_maxima={f: float(self.tail_max[row, j]) for j, f in enumerate(TAIL_FRACTIONS)},
                aeb_count=int(self.aeb_count[row]),
                collision_time=None if np.isnan(self.collision_time[row]) else float(self.collision_time[row]),
            ))
        return out


def _check_inputs(sys: SystemMatrices, c: Controller) -> None:
    ok, error = validate_gain_row(c.K, sys.dim)
    if not ok:
        raise DimensionMismatchError('simulator', 'simulate', error)


def simulate(sys: SystemMatrices, c: Controller, delta: float, dist: Optional[DisturbanceModel] = None,
             plant: PlantMode = PlantMode.NONLINEAR, cfg: Optional[SimConfig] = None,
             seed: int = 0) -> Trajectory:
    """Integrate one seed and keep its history (every record_stride steps)"""
    cfg = cfg or SimConfig()
    dist = dist or DisturbanceModel()
    _check_inputs(sys, c)
    steps_per_hold = hold_steps(delta, cfg.t_step)

    run = _EnsembleRun(sys, c, steps_per_hold, dist, plant, cfg, [seed], record=True)
    run.run()
    summary = run.summaries()[0]

    steps = np.asarray(run.rec_steps, dtype=int)
    log_with_context(sim_logger, logging.DEBUG, "Simulated trajectory",
                     seed=seed, delta=steps_per_hold * cfg.t_step, plant=plant.value,
                     collided=summary.collided, aeb_activations=summary.aeb_count,
                     final_error_norm=summary.final_error_norm)
    return Trajectory(
        times=steps * cfg.t_step,
        steps=steps,
        states=np.asarray(run.rec_states),
        controls=np.asarray(run.rec_u[:len(steps)]),
        control_log=np.asarray(run.control_log, dtype=float).reshape(-1, 2),
        events=run.events,
        summary=summary,
        equilibrium=(sys.equilibrium.s_star, sys.equilibrium.v_star),
        n_steps=cfg.n_steps,
    )


def simulate_ensemble(sys: SystemMatrices, c: Controller, delta: float,
                      dist: Optional[DisturbanceModel] = None,
                      plant: PlantMode = PlantMode.NONLINEAR, cfg: Optional[SimConfig] = None,
                      seeds: Optional[Sequence[int]] = None,
                      threads: Optional[int] = None) -> List[TrajectorySummary]:
    """
    Integrate many seeds and return per-seed summaries in seed order

    Seeds are split into contiguous chunks, one per worker thread.
    """
    cfg = cfg or SimConfig()
    dist = dist or DisturbanceModel()
    _check_inputs(sys, c)
    steps_per_hold = hold_steps(delta, cfg.t_step)
    seeds = list(range(cfg.n_seeds)) if seeds is None else list(seeds)
    if not seeds:
        raise EmptyInputError('simulator', 'simulate_ensemble', 'no seeds to simulate')

    workers = threads if threads and threads > 0 else settings.resolved_threads()
    workers = max(1, min(workers, len(seeds)))
    chunks = [chunk.tolist() for chunk in np.array_split(np.asarray(seeds), workers) if len(chunk)]

    def run_chunk(chunk):
        run = _EnsembleRun(sys, c, steps_per_hold, dist, plant, cfg, chunk, record=False)
        run.run()
        return run.summaries()

    start = time.perf_counter()
    if len(chunks) == 1:
        results = [run_chunk(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as executor:
            results = list(executor.map(run_chunk, chunks))
    summaries = [summary for chunk in results for summary in chunk]

    log_with_context(sim_logger, logging.DEBUG, "Simulated ensemble",
                     delta=steps_per_hold * cfg.t_step, plant=plant.value, seeds=len(seeds),
                     collided=sum(s.collided for s in summaries),
                     aeb_activations=sum(s.aeb_count for s in summaries),
                     duration_seconds=round(time.perf_counter() - start, 3))
    return summaries


def _tail_maximum(traj: TrajectoryLike, fraction: float) -> float:
    if fraction in traj.tail_maxima:
        return traj.tail_maxima[fraction]
    if isinstance(traj, Trajectory):
        if traj.collided or traj.diverged:
            return np.inf
        start = tail_start_step(traj.n_steps, fraction)
        window = traj.steps >= start
        if not window.any():
            return np.inf
        return float(_row_norms(traj.states[window]).max())
    raise ValueError(f"tail fraction {fraction} was not tracked; use one of {TAIL_FRACTIONS}")


def ultimate_bound(trajs: Sequence[TrajectoryLike], tail_fraction: float = 0.10) -> float:
    """Largest error norm over the last tail_fraction of every trajectory"""
    if not trajs:
        raise EmptyInputError('simulator', 'ultimate_bound', 'no trajectories')
    return max(_tail_maximum(traj, tail_fraction) for traj in trajs)


def ultimate_bounds(trajs: Sequence[TrajectoryLike]) -> Dict[float, float]:
    """Ultimate bound at every tracked tail fraction"""
    return {fraction: ultimate_bound(trajs, fraction) for fraction in TAIL_FRACTIONS}


def classify(trajs: Sequence[TrajectoryLike], cfg: Optional[SimConfig] = None) -> StabilityVerdict:
    """Converged iff no trajectory collides and every final error norm is within convergence_eps"""
    if not trajs:
        raise EmptyInputError('simulator', 'classify', 'no trajectories')
    cfg = cfg or SimConfig()

    n_collided = sum(1 for t in trajs if t.collided)
    not_converged = sum(1 for t in trajs
                        if not t.collided and (t.diverged or not t.final_error_norm <= cfg.convergence_eps))
    finals = [t.final_error_norm for t in trajs]
    worst = float(np.max(finals))

    if n_collided:
        status = StabilityStatus.COLLIDED
    elif not_converged:
        status = StabilityStatus.NOT_CONVERGED
    else:
        status = StabilityStatus.CONVERGED

    bound = ultimate_bound(trajs) if status == StabilityStatus.CONVERGED else None
    return StabilityVerdict(status=status, final_error_norm=worst, ultimate_bound=bound,
                            n_trajectories=len(trajs), n_collided=n_collided,
                            n_not_converged=not_converged)


def estimate_derivative_ratio(traj: Trajectory, delta: float, Sigma: float, t_step: float) -> float:
    """
    Empirical D_v: largest ratio between the peak |dx/dt| inside a reaction-delay window
    [t_k, t_k + Sigma] and the peak over the delayed holding period that follows it
    """
    if len(traj.steps) < 3:
        raise EmptyInputError('simulator', 'estimate_derivative_ratio', 'trajectory too short')
    dt = (traj.steps[1] - traj.steps[0]) * t_step
    rates = _row_norms(np.diff(traj.states, axis=0) / dt)
    times = traj.times[:-1]

    ratios = []
    t_k = 0.0
    horizon = times[-1]
    while t_k + delta + Sigma <= horizon:
        window = (times >= t_k) & (times < t_k + Sigma)
        following = (times >= t_k + Sigma) & (times < t_k + delta + Sigma)
        if window.any() and following.any():
            denominator = rates[following].max()
            if denominator > 1e-12:
                ratios.append(rates[window].max() / denominator)
        t_k += delta

    ratio = max(ratios) if ratios else 0.0
    log_with_context(sim_logger, logging.INFO, "Estimated reaction-delay derivative ratio",
                     delta=delta, Sigma=Sigma, periods=len(ratios), D_v_bar=ratio)
    return ratio
