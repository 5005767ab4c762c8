"""Executable stability estimates over accepted trajectories.

The solver's correctness story is not just "residuals are small": an
accepted run must also keep the discrete energy bookkeeping inside the
bounds the continuous problem imposes.  This module turns those bounds
into numbers — per-step energy ledgers, the closed-form growth bound,
backward time-difference energies, an operational uniqueness probe, a
maximum-principle violation meter, and an initial-condition fidelity
check.  Everything is a pure function of a finished Trajectory.

Convention: integrals use the column quadrature (`integrate`), the
gradient energy uses the face-based seminorm — the discrete pairing the
stepping scheme actually controls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constitutive import KirchhoffTable
from .grid import Field, h1_seminorm, integrate, l2_norm, laplacian_clamped
from .stepper import StepConfig, Trajectory, project_initial, run, step

__all__ = [
    "DiagnosticsError",
    "EnergyReport",
    "energy_report",
    "time_quotient_check",
    "regularity_monitor",
    "uniqueness_probe",
    "max_principle_check",
    "initial_condition_check",
]


class DiagnosticsError(ValueError):
    """Invalid diagnostic request (as opposed to a solver failure)."""


@dataclass(frozen=True)
class EnergyReport:
    """Per-step energy ledger plus the closed-form growth bound.

    ``b_integral[n]`` is the convex storage functional of the n-th
    state, ``grad_sq``/``lap_sq`` the gradient and weighted curvature
    energies, ``cum_dissipation[n]`` the time-summed dissipation
    ``sum_{k<=n} h*(grad_sq[k]/2 + lap_sq[k])``.  ``gronwall_bound`` is
    ``(b_integral[0] + beta*omega*T) * exp(beta*T)`` — the explicit
    constant the growth argument produces; every ``b_integral`` entry
    and the final cumulative dissipation must sit below it.
    """

    times: np.ndarray
    b_integral: np.ndarray
    grad_sq: np.ndarray
    lap_sq: np.ndarray
    cum_dissipation: np.ndarray
    gronwall_bound: float
    h: float
    beta: float
    omega: float
    newton_tol: float

    def __post_init__(self) -> None:
        for name in ("times", "b_integral", "grad_sq", "lap_sq", "cum_dissipation"):
            arr = getattr(self, name)
            arr.setflags(write=False)
            if arr.shape != self.times.shape:
                raise DiagnosticsError(f"{name} must align with times")

    def inequality_defect(self) -> np.ndarray:
        """Left minus right side of the per-step energy inequality.

        For each n >= 1:

            B_int[n] + cum_dissipation[n]
                <= B_int[0] + beta*omega*t_n + beta*h*sum_{k<=n} B_int[k]

        Returns the n >= 1 defects; nonpositive entries (up to Newton
        slack) mean the inequality holds.
        """
        lhs = self.b_integral[1:] + self.cum_dissipation[1:]
        rhs = (
            self.b_integral[0]
            + self.beta * self.omega * self.times[1:]
            + self.beta * self.h * np.cumsum(self.b_integral[1:])
        )
        return lhs - rhs

    def energy_inequality_ok(self) -> bool:
        """Per-step inequality with slack 10*newton_tol*n."""
        if self.times.size == 1:
            return True
        slack = 10.0 * self.newton_tol * np.arange(1, self.times.size)
        return bool(np.all(self.inequality_defect() <= slack))

    def gronwall_ok(self) -> bool:
        return bool(
            np.max(self.b_integral) <= self.gronwall_bound
            and self.cum_dissipation[-1] <= self.gronwall_bound
        )


def energy_report(
    traj: Trajectory, cfg: StepConfig, table: KirchhoffTable
) -> EnergyReport:
    """Energy ledger of a trajectory produced under ``cfg``."""
    col = traj.states[0].column
    n = traj.times.size
    b_int = np.empty(n)
    grad_sq = np.empty(n)
    lap_sq = np.empty(n)
    for i, state in enumerate(traj.states):
        b_int[i] = integrate(Field(table.legendre_B(state.values), col))
        grad_sq[i] = h1_seminorm(state) ** 2
        lap = laplacian_clamped(state)
        lap_sq[i] = cfg.gamma * integrate(Field(lap.values**2, col))
    cum = np.zeros(n)
    cum[1:] = np.cumsum(cfg.h * (0.5 * grad_sq[1:] + lap_sq[1:]))
    t_final = float(traj.times[-1])
    bound = (b_int[0] + cfg.beta * col.length * t_final) * np.exp(cfg.beta * t_final)
    return EnergyReport(
        times=traj.times.copy(),
        b_integral=b_int,
        grad_sq=grad_sq,
        lap_sq=lap_sq,
        cum_dissipation=cum,
        gronwall_bound=float(bound),
        h=cfg.h,
        beta=cfg.beta,
        omega=col.length,
        newton_tol=cfg.newton_tol,
    )


def _lag_steps(traj: Trajectory, delta: float) -> int:
    if traj.times.size < 2:
        raise DiagnosticsError("trajectory has no steps to difference")
    h = float(traj.times[1] - traj.times[0])
    k = delta / h
    k_round = int(round(k))
    if k_round < 1 or abs(k - k_round) > 1.0e-9:
        raise DiagnosticsError(
            f"delta={delta!r} is not a positive integer multiple of h={h!r}"
        )
    return k_round


def time_quotient_check(traj: Trajectory, delta: float, table: KirchhoffTable) -> float:
    """Backward-difference energy at lag ``delta`` (must be k*h, k >= 1).

    Computes (1/delta) * sum_n h * integral of
    (b(u^n) - b(u^{n-k})) * (u^n - u^{n-k}); nonnegative because the
    storage coefficient is monotone, and bounded independently of h —
    the discrete compactness quantity.
    """
    k = _lag_steps(traj, delta)
    col = traj.states[0].column
    h = float(traj.times[1] - traj.times[0])
    total = 0.0
    for n in range(k, traj.times.size):
        du = traj.states[n].values - traj.states[n - k].values
        db = table.b_of_u(traj.states[n].values) - table.b_of_u(
            traj.states[n - k].values
        )
        total += h * integrate(Field(db * du, col))
    return total / delta


def regularity_monitor(traj: Trajectory) -> float:
    """Discrete time-derivative energy sum_n h * integral((du/h)^2).

    Uniform boundedness under h-refinement is the smoothing signature:
    blow-up here means the march is resolving a kink, not a solution.
    """
    if traj.times.size < 2:
        return 0.0
    col = traj.states[0].column
    h = float(traj.times[1] - traj.times[0])
    total = 0.0
    for n in range(1, traj.times.size):
        quot = (traj.states[n].values - traj.states[n - 1].values) / h
        total += h * integrate(Field(quot**2, col))
    return total


def uniqueness_probe(
    u0: Field,
    cfg: StepConfig,
    table: KirchhoffTable,
    perturbation: float = 1.0e-3,
    seed: int = 0,
) -> float:
    """Max L2 gap between a warm-started march and a guess-perturbed one.

    The second march jitters every Newton initial guess by
    ``perturbation``-scaled noise; if the per-step root is unique within
    the basin, both land on the same states and the gap stays at solver
    tolerance.  ``perturbation=0`` reproduces the march bitwise.
    """
    base = run(u0, cfg, table)
    rng = np.random.default_rng(seed)
    col = u0.column
    state = project_initial(u0)
    gap = 0.0
    for n in range(1, cfg.n_steps + 1):
        noise = perturbation * rng.standard_normal(col.n_cells)
        guess = Field(state.values + noise, col)
        state = step(state, cfg, table, initial_guess=guess)
        gap = max(gap, l2_norm(Field(state.values - base.states[n].values, col)))
    return gap


def max_principle_check(traj: Trajectory) -> float:
    """Overshoot above the invariant ceiling max(max u0, 0).

    Zero (within solver noise) is mandatory for the second-order model;
    with the fourth-order term a positive value is the measured
    overshoot amplitude — reported, never asserted away.
    """
    ceiling = max(float(np.max(traj.states[0].values)), 0.0)
    peak = max(float(np.max(s.values)) for s in traj.states)
    return max(0.0, peak - ceiling)


def initial_condition_check(
    traj: Trajectory, u0: Field, table: KirchhoffTable
) -> float:
    """L2 distance between stored initial saturation and b(projected u0)."""
    projected = project_initial(u0)
    db = table.b_of_u(traj.states[0].values) - table.b_of_u(projected.values)
    return l2_norm(Field(db, u0.column))
