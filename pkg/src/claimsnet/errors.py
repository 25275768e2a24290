"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration or invalid call arguments."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class DataIntegrityError(ValueError):
    """Loaded data breaks a claim or transaction invariant."""

    def __init__(self, message, claim_id=None):
        super().__init__(message if claim_id is None else f"claim {claim_id}: {message}")
        self.claim_id = claim_id


class ParseError(ValueError):
    """Malformed row in a transaction file."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ShapeError(ValueError):
    pass


class AlignmentError(ValueError):
    """Two prediction sets do not cover the same observations."""


class MetricDomainError(ValueError):
    pass


class TuningError(RuntimeError):
    pass


class DependencyError(RuntimeError):
    """A pipeline stage is missing an upstream artifact."""

    def __init__(self, stage, missing):
        super().__init__(f"stage '{stage}' requires {missing}; run the upstream stage first")
        self.stage = stage
        self.missing = missing


class StageError(RuntimeError):
    def __init__(self, stage, dataset_id, cause):
        super().__init__(f"[{stage}] dataset {dataset_id}: {cause}")
        self.stage = stage
        self.dataset_id = dataset_id
