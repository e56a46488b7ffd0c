"""Exception hierarchy shared by every package."""


class WindPpdError(Exception):
    """Base class for all errors raised by wind-ppd-em."""


class DimensionError(WindPpdError, ValueError):
    pass


class CovarianceError(WindPpdError, ArithmeticError):
    """Raised when a covariance matrix cannot be Cholesky-factorized."""

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class ConditioningError(WindPpdError, ArithmeticError):
    pass


class ComponentCollapseError(WindPpdError, ArithmeticError):
    def __init__(self, component, mass):
        super().__init__(
            f"Component {component} collapsed: total responsibility {mass:.3e} < 1e-12"
        )
        self.component = component
        self.mass = mass


class DisconnectedTopologyError(WindPpdError, ValueError):
    pass


class NonConvergenceError(WindPpdError, RuntimeError):
    def __init__(self, message, residual=None, rounds=None):
        super().__init__(message)
        self.residual = residual
        self.rounds = rounds


class BroadcastIntegrityError(WindPpdError, RuntimeError):
    pass


class AgreementError(WindPpdError, RuntimeError):
    """Nodes disagree on a value that must be public knowledge."""


class KeyGenerationError(WindPpdError, RuntimeError):
    pass


class PlaintextRangeError(WindPpdError, ValueError):
    pass


class KeyMismatchError(WindPpdError, ValueError):
    pass


class CodecOverflowError(WindPpdError, OverflowError):
    pass


class HashBudgetError(WindPpdError, ArithmeticError):
    pass


class ProtocolError(WindPpdError, RuntimeError):
    """A distributed protocol step failed; ``tag`` locates the step."""

    def __init__(self, message, tag=None):
        super().__init__(f"{message} [{tag}]" if tag else message)
        self.tag = tag


class SimulationError(WindPpdError, RuntimeError):
    def __init__(self, node, tick, cause):
        super().__init__(f"Node {node} failed at tick {tick}: {cause}")
        self.node = node
        self.tick = tick
        self.cause = cause


class MalformedDataError(WindPpdError, ValueError):
    pass


class MetricError(WindPpdError, ArithmeticError):
    pass
