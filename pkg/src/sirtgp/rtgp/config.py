from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..errors import InvalidInputError

LINKS = ("probit", "logit")


@dataclass(frozen=True)
class RtgpConfig:
    """Sampler settings.

    The relaxation variance is held at ``xi2_start`` for ``warm_iters``
    sweeps, decays geometrically to ``xi2_end`` by the end of burn-in and
    stays there. Thresholds are pinned to 0 during the warm phase and drawn
    from an adaptive ``omega_points`` grid afterwards (unless
    ``adapt_thresholds`` is off, in which case they stay at 0).
    """

    link: str = "probit"
    use_interactions: bool = True
    iterations: int = 3000
    burn_in: int = 1000
    thin: int = 5
    sigma_e2: float = 10.0
    a_eta: float = 0.001
    b_eta: float = 0.001
    warm_iters: int = 200
    xi2_start: float = 1.0
    xi2_end: float = 1e-4
    omega_points: int = 10
    a_omega: float = 0.25
    b_omega: float = 0.90
    adapt_thresholds: bool = True
    check_cache: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.link not in LINKS:
            raise InvalidInputError(f"link must be one of {LINKS}, got {self.link!r}")
        if not (0 <= self.burn_in < self.iterations):
            raise InvalidInputError("need 0 <= burn_in < iterations")
        if not (0 <= self.warm_iters <= self.burn_in):
            raise InvalidInputError("need 0 <= warm_iters <= burn_in")
        if self.thin < 1:
            raise InvalidInputError("thin must be >= 1")
        if self.omega_points < 2:
            raise InvalidInputError("omega grid needs at least 2 points")
        if not (0.0 <= self.a_omega < self.b_omega <= 1.0):
            raise InvalidInputError("need 0 <= a_omega < b_omega <= 1")
        if min(self.sigma_e2, self.a_eta, self.b_eta, self.xi2_start, self.xi2_end) <= 0:
            raise InvalidInputError("variances and IG hyperparameters must be positive")

    @property
    def n_draws(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def xi2_at(self, it: int) -> float:
        """Relaxation variance used in 0-based sweep ``it``."""
        if it < self.warm_iters:
            return self.xi2_start
        span = self.burn_in - self.warm_iters
        if it >= self.burn_in or span == 0:
            return self.xi2_end
        frac = (it - self.warm_iters + 1) / span
        return float(self.xi2_start * (self.xi2_end / self.xi2_start) ** frac)

    def is_warm(self, it: int) -> bool:
        return it < self.warm_iters

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RtgpConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown sampler keys: {sorted(unknown)}")
        return cls(**d)
