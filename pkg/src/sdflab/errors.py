"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or precondition on user-supplied parameters."""


class GridMismatchError(ValueError):
    """Two fields or caches that must share a grid do not."""


class GuardViolation(RuntimeError):
    """A runtime monitor of the flow was breached.

    ``guard`` names the monitor: ``"c1_bound"``, ``"degenerate_metric"``,
    ``"energy_bound"``, ``"volume_distance"``, ``"node_collision"`` or
    ``"nonfinite"``.
    """

    def __init__(self, guard: str, message: str):
        super().__init__(f"{guard}: {message}")
        self.guard = guard
