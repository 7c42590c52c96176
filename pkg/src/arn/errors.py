"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes are incompatible with the requested operation."""


class ContractError(RuntimeError):
    """A caller violated an operation precondition."""


class ConfigError(ValueError):
    """A configuration value is outside its admissible range or unknown."""


class ValidationError(ValueError):
    """A data file (manifest, clip record) failed validation."""


class SamplingError(ValueError):
    """An episode cannot be drawn from the requested split."""


class CheckpointError(ValueError):
    """A checkpoint does not match the model it is loaded into."""
