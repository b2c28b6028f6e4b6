class ContractViolation(RuntimeError):
    """A caller broke a sequencing rule the simulator relies on."""


class SimulationTimeout(RuntimeError):
    pass
