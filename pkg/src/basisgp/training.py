"""Shared training-loop machinery: early stopping and run bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field


class NonFiniteError(Exception):
    """Objective or gradients became non-finite during training."""

    def __init__(self, iteration: int, what: str = "objective"):
        self.iteration = iteration
        super().__init__(f"non-finite {what} at iteration {iteration}")


@dataclass
class EarlyStopper:
    """Track the best validation NLL and decide when to stop.

    `update` is called at each validation check with the current step
    counter (iterations or epochs, whichever the loop uses); it returns
    True when the value improved. `should_stop` fires once the gap since
    the last improvement reaches the patience budget. With patience None
    only the best-so-far bookkeeping is active.
    """

    patience: int | None
    best_value: float = float("inf")
    best_step: int = -1

    def update(self, step: int, value: float) -> bool:
        if value < self.best_value:
            self.best_value = value
            self.best_step = step
            return True
        return False

    def should_stop(self, step: int) -> bool:
        if self.patience is None or self.best_step < 0:
            return False
        return step - self.best_step >= self.patience


@dataclass
class TrainResult:
    """What a fit returns besides the model itself.

    `log` is a list of JSON-ready records; it carries no wall-clock
    fields, so seed-fixed reruns serialize byte-identically. Step timing
    lives in the separate fields below.
    """

    log: list = field(default_factory=list)
    best_iteration: int = -1
    best_val_nll: float = float("nan")
    step_time_s: float = 0.0
    step_count: int = 0
