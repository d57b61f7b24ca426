"""Dipole inversion: TKD, Tikhonov, and framelet-regularised split Bregman.

The three framelet models share one engine and differ only in which blocks
are active and which forward symbol is used:

``frame_int``
    ``1/2 ||A chi - b_l||_S^2 + ||gamma . W chi||_{1,2}``
``frame_diff``
    ``1/2 ||L A chi - L b_l||_S^2 + ||gamma . W chi||_{1,2}``
``frame_hire``
    ``1/2 ||A chi + v - b_l||_S^2 + lam ||L v||_1 + ||gamma . W chi||_{1,2}``

Here ``A`` is circular convolution with the dipole symbol, ``L`` the
periodic 7-point negative Laplacian, ``W`` the Haar framelet analysis and
``S`` the diagonal SNR weight.  The splitting is ``d = W chi``,
``e = L v``, ``f = A chi`` (``L A chi`` for ``frame_diff``) and ``g = v``
with scaled multipliers ``p, q, r, s``.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import framelet
from .errors import Diverged, GridMismatch
from .spectral import dipole_symbol, fourier_multiply, neglap_array, neglap_discrete_symbol
from .volume import RoiMask, ScalarVolume

__all__ = [
    "METHODS",
    "ReconConfig",
    "SnrWeight",
    "SolverState",
    "ConvergenceTrace",
    "SplitBregman",
    "ReconResult",
    "MaxIterWarning",
    "build_sigma",
    "tkd",
    "tikhonov",
    "run_split_bregman",
    "frame_int",
    "frame_diff",
    "reconstruct",
    "objective",
]

METHODS = ("tkd", "tikhonov", "frame_int", "frame_diff", "frame_hire")
SIGMA_POLICIES = ("ones", "roi", "estimated")


class MaxIterWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class ReconConfig:
    """Method choice and parameters.  ``lam`` defaults to ``5 * nu``."""

    method: str = "frame_hire"
    hbar: float = 0.125
    eps: float = 0.01
    nu: float = 5e-4
    lam: float | None = None
    beta: float = 0.05
    levels: int = 1
    tol: float = 5e-3
    max_iter: int = 200
    sigma_policy: str = "ones"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.sigma_policy not in SIGMA_POLICIES:
            raise ValueError(f"unknown sigma policy {self.sigma_policy!r}")
        if self.lam is None:
            object.__setattr__(self, "lam", 5.0 * self.nu)
        for name in ("hbar", "eps", "nu", "lam", "beta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.method.startswith("frame") and self.beta <= 0:
            raise ValueError("beta must be > 0 for split Bregman methods")
        if self.tol <= 0 or self.max_iter < 1 or self.levels < 1:
            raise ValueError("need tol > 0, max_iter >= 1 and levels >= 1")

    def replace(self, **changes) -> ReconConfig:
        if "nu" in changes and "lam" not in changes:
            changes["lam"] = None
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ReconConfig:
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(frozen=True, eq=False)
class SnrWeight:
    """Diagonal fidelity weight, entries in ``[0, 1]``."""

    weights: ScalarVolume

    def __post_init__(self):
        w = self.weights.data
        if np.any(w < 0):
            raise ValueError("SNR weights must be non-negative")

    @property
    def grid(self):
        return self.weights.grid


def build_sigma(policy: str, roi: RoiMask, estimated: ScalarVolume | None = None) -> SnrWeight:
    """``ones``: all 1; ``roi``: indicator of the ROI; ``estimated``: a given weight map."""
    if policy == "ones":
        return SnrWeight(ScalarVolume(roi.grid, np.ones(roi.grid.shape)))
    if policy == "roi":
        if roi.count == 0:
            raise ValueError("ROI is empty")
        return SnrWeight(roi.indicator())
    if policy == "estimated":
        if estimated is None:
            raise ValueError("the 'estimated' policy needs a weight estimate")
        if estimated.grid != roi.grid:
            raise GridMismatch("weight estimate grid differs from ROI grid")
        w = estimated.data
        peak = w[roi.member].max() if roi.count else w.max()
        return SnrWeight(estimated.like(np.clip(w / peak, 0.0, 1.0) if peak > 0 else w))
    raise ValueError(f"unknown sigma policy {policy!r}")


# -- direct methods -----------------------------------------------------------

def tkd(b_l: ScalarVolume, hbar: float = 0.125) -> ScalarVolume:
    """Truncated k-space division, ``sign(D) / max(|D|, hbar)``, with ``sign(0) = 0``."""
    if hbar <= 0:
        raise ValueError("hbar must be > 0")
    D = dipole_symbol(b_l.grid).half
    inv = np.sign(D) / np.maximum(np.abs(D), hbar)
    return b_l.like(fourier_multiply(b_l.data, inv))


def tikhonov(b_l: ScalarVolume, eps: float = 0.01) -> ScalarVolume:
    """Closed-form minimiser of ``1/2 ||A chi - b_l||^2 + eps ||chi||^2``."""
    if eps <= 0:
        raise ValueError("eps must be > 0")
    D = dipole_symbol(b_l.grid).half
    return b_l.like(fourier_multiply(b_l.data, D / (D**2 + 2.0 * eps)))


# -- split Bregman ------------------------------------------------------------

@dataclass
class SolverState:
    """Iterates of the split Bregman loop (raw arrays; ``d``/``p`` are band stacks)."""

    chi: np.ndarray
    v: np.ndarray
    d: np.ndarray
    e: np.ndarray
    f: np.ndarray
    g: np.ndarray
    p: np.ndarray
    q: np.ndarray
    r: np.ndarray
    s: np.ndarray
    iter: int = 0
    last_rel_change: float = float("inf")

    @classmethod
    def zeros(cls, shape, n_bands: int) -> SolverState:
        z = lambda: np.zeros(shape)  # noqa: E731
        return cls(chi=z(), v=z(), d=np.zeros((n_bands,) + tuple(shape)), e=z(), f=z(),
                   g=z(), p=np.zeros((n_bands,) + tuple(shape)), q=z(), r=z(), s=z())

    def copy(self) -> SolverState:
        return SolverState(**{k: (np.array(v, copy=True) if isinstance(v, np.ndarray) else v)
                              for k, v in self.__dict__.items()})


@dataclass
class ConvergenceTrace:
    """Per-iteration diagnostics of one split Bregman run."""

    rel_change: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    residuals: dict = field(default_factory=dict)
    initial_objective: float = float("nan")
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.rel_change)

    @property
    def status(self) -> str:
        return "converged" if self.converged else "max_iter"

    def to_dict(self) -> dict:
        return {"rel_change": self.rel_change, "objective": self.objective,
                "residuals": self.residuals, "initial_objective": self.initial_objective,
                "converged": self.converged, "iterations": self.iterations}


class SplitBregman:
    """Split Bregman / ADMM engine for the framelet models.

    Both linear subproblems are diagonal in Fourier space because every
    operator is periodic, and ``W^T W = I`` makes the chi system
    ``(F^T F + I)`` invertible even where the dipole symbol vanishes.
    """

    def __init__(self, b_l: ScalarVolume, sigma: SnrWeight | None, cfg: ReconConfig):
        if cfg.method not in ("frame_int", "frame_diff", "frame_hire"):
            raise ValueError(f"{cfg.method} is not a split Bregman method")
        if sigma is None:
            sigma = SnrWeight(ScalarVolume(b_l.grid, np.ones(b_l.grid.shape)))
        if sigma.grid != b_l.grid:
            raise GridMismatch("SNR weight and data grids differ")
        self.cfg = cfg
        self.grid = b_l.grid
        self.spacing = b_l.grid.spacing
        self.bank = framelet.FilterBank(levels=cfg.levels)
        self.gammas = framelet.ThresholdSchedule.from_nu(cfg.nu, cfg.levels).gammas
        self.hire = cfg.method == "frame_hire"
        self.sigma = sigma.weights.data

        D = dipole_symbol(self.grid).half
        self.lap_sym = neglap_discrete_symbol(self.grid).half
        if cfg.method == "frame_diff":
            self.fwd_sym = self.lap_sym * D
            self.data = neglap_array(b_l.data, self.spacing)
        else:
            self.fwd_sym = D
            self.data = np.array(b_l.data)
        self.chi_den = self.fwd_sym**2 + 1.0
        self.v_den = self.lap_sym**2 + 1.0
        self.state = SolverState.zeros(self.grid.shape, self.bank.n_bands)
        self.trace = ConvergenceTrace()
        self.trace.initial_objective = self.objective(self.state)
        names = ["Wchi-d", "Achi-f"] + (["Lv-e", "v-g"] if self.hire else [])
        self.trace.residuals = {n: [] for n in names}

    # forward operators on raw arrays
    def forward(self, chi):
        return fourier_multiply(chi, self.fwd_sym)

    def lap(self, v):
        return neglap_array(v, self.spacing)

    def objective(self, st: SolverState) -> float:
        resid = self.forward(st.chi) - self.data
        if self.hire:
            resid = resid + st.v
        val = 0.5 * float(np.sum(self.sigma * resid**2))
        val += framelet.l12_norm_array(framelet.analyze_array(st.chi, self.bank),
                                       self.gammas, self.cfg.levels)
        if self.hire:
            val += self.cfg.lam * float(np.abs(self.lap(st.v)).sum())
        return val

    # subproblem updates; each reads the current state and returns new values
    def chi_update(self, st: SolverState) -> np.ndarray:
        rhs_hat = np.fft.rfftn(st.f - st.r) * self.fwd_sym \
            + np.fft.rfftn(framelet.synthesize_array(st.d - st.p, self.bank))
        return np.fft.irfftn(rhs_hat / self.chi_den, s=st.chi.shape, axes=(0, 1, 2))

    def v_update(self, st: SolverState) -> np.ndarray:
        rhs = st.g - st.s + self.lap(st.e - st.q)
        return np.fft.irfftn(np.fft.rfftn(rhs) / self.v_den, s=st.v.shape, axes=(0, 1, 2))

    def d_update(self, Wchi, st: SolverState) -> np.ndarray:
        beta = self.cfg.beta
        return framelet.threshold_array(Wchi + st.p, [g / beta for g in self.gammas],
                                        self.cfg.levels)

    def e_update(self, Lv, st: SolverState) -> np.ndarray:
        z = Lv + st.q
        return np.maximum(np.abs(z) - self.cfg.lam / self.cfg.beta, 0.0) * np.sign(z)

    def f_update(self, Fchi, st: SolverState) -> np.ndarray:
        S, beta = self.sigma, self.cfg.beta
        return (S * (self.data - st.g) + beta * (Fchi + st.r)) / (S + beta)

    def g_update(self, f_new, st: SolverState) -> np.ndarray:
        S, beta = self.sigma, self.cfg.beta
        return (S * (self.data - f_new) + beta * (st.v + st.s)) / (S + beta)

    def step(self) -> float:
        """One full iteration; returns the relative change of chi."""
        st = self.state
        chi_old = st.chi
        chi = self.chi_update(st)
        Wchi = framelet.analyze_array(chi, self.bank)
        Fchi = self.forward(chi)
        st.chi = chi
        st.d = self.d_update(Wchi, st)
        if self.hire:
            st.v = self.v_update(st)
            Lv = self.lap(st.v)
            st.e = self.e_update(Lv, st)
        st.f = self.f_update(Fchi, st)
        if self.hire:
            st.g = self.g_update(st.f, st)
        st.p = st.p + Wchi - st.d
        st.r = st.r + Fchi - st.f
        if self.hire:
            st.q = st.q + Lv - st.e
            st.s = st.s + st.v - st.g

        if not (np.all(np.isfinite(chi)) and np.all(np.isfinite(st.v))):
            raise Diverged(f"non-finite iterate at iteration {st.iter + 1}", trace=self.trace)
        norm = np.linalg.norm(chi)
        diff = np.linalg.norm(chi - chi_old)
        if norm > 0:
            rel = diff / norm
        else:
            # chi is still zero after the first sweep from the zero start;
            # that is only a fixed point when there is no data at all
            rel = 0.0 if diff == 0 and not np.any(self.data) else float("inf")
        st.iter += 1
        st.last_rel_change = rel

        res = self.trace.residuals
        res["Wchi-d"].append(float(np.linalg.norm(Wchi - st.d)))
        res["Achi-f"].append(float(np.linalg.norm(Fchi - st.f)))
        if self.hire:
            res["Lv-e"].append(float(np.linalg.norm(Lv - st.e)))
            res["v-g"].append(float(np.linalg.norm(st.v - st.g)))
        self.trace.rel_change.append(float(rel))
        self.trace.objective.append(self.objective(st))
        return rel

    def run(self):
        while self.state.iter < self.cfg.max_iter:
            if self.step() <= self.cfg.tol:
                self.trace.converged = True
                break
        if not self.trace.converged:
            warnings.warn(f"{self.cfg.method} stopped at max_iter={self.cfg.max_iter} "
                          f"(rel change {self.state.last_rel_change:.2e})", MaxIterWarning,
                          stacklevel=3)
        return self.trace


def objective(b_l: ScalarVolume, chi: ScalarVolume, v: ScalarVolume | None,
              cfg: ReconConfig, sigma: SnrWeight | None = None) -> float:
    """Objective of ``cfg.method`` at ``(chi, v)``."""
    eng = SplitBregman(b_l, sigma, cfg)
    st = eng.state
    st.chi = np.array(chi.data)
    if v is not None:
        st.v = np.array(v.data)
    return eng.objective(st)


def _run(b_l, sigma, cfg, method):
    if cfg.method != method:
        raise ValueError(f"config method is {cfg.method!r}, expected {method!r}")
    eng = SplitBregman(b_l, sigma, cfg)
    trace = eng.run()
    return eng, trace


def run_split_bregman(b_l: ScalarVolume, sigma: SnrWeight | None, cfg: ReconConfig):
    """Frame-HIRE: returns ``(chi, v, trace)``."""
    eng, trace = _run(b_l, sigma, cfg, "frame_hire")
    return b_l.like(eng.state.chi), b_l.like(eng.state.v), trace


def frame_int(b_l: ScalarVolume, sigma: SnrWeight | None, cfg: ReconConfig):
    """Integral model (no incompatibility term): returns ``(chi, trace)``."""
    eng, trace = _run(b_l, sigma, cfg, "frame_int")
    return b_l.like(eng.state.chi), trace


def frame_diff(b_l: ScalarVolume, sigma: SnrWeight | None, cfg: ReconConfig):
    """Differential model, fidelity on ``L A chi - L b_l``: returns ``(chi, trace)``."""
    eng, trace = _run(b_l, sigma, cfg, "frame_diff")
    return b_l.like(eng.state.chi), trace


@dataclass(frozen=True, eq=False)
class ReconResult:
    method: str
    chi: ScalarVolume
    v: ScalarVolume | None = None
    trace: ConvergenceTrace | None = None
    wall_time_seconds: float = 0.0


def reconstruct(b_l: ScalarVolume, cfg: ReconConfig, sigma: SnrWeight | None = None) -> ReconResult:
    """Dispatch on ``cfg.method``."""
    t0 = time.perf_counter()
    v = trace = None
    if cfg.method == "tkd":
        chi = tkd(b_l, cfg.hbar)
    elif cfg.method == "tikhonov":
        chi = tikhonov(b_l, cfg.eps)
    elif cfg.method == "frame_int":
        chi, trace = frame_int(b_l, sigma, cfg)
    elif cfg.method == "frame_diff":
        chi, trace = frame_diff(b_l, sigma, cfg)
    else:
        chi, v, trace = run_split_bregman(b_l, sigma, cfg)
    return ReconResult(cfg.method, chi, v, trace, time.perf_counter() - t0)
