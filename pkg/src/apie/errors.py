"""Error taxonomy shared across the package.

Exit-code mapping in the CLI: ConfigError -> 2, DataError -> 3, BackendError -> 4.
"""


class ApieError(Exception):
    pass


class ConfigError(ApieError):
    """Invalid run configuration. `kind` is a stable machine-readable tag."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class ContractViolation(ApieError):
    """An operation was called outside its stated preconditions."""


class DataError(ApieError):
    """Problems with datasets, templates, or on-disk artifacts."""


class EmptySurface(DataError):
    """A surface string became empty after whitespace canonicalization."""


class SchemaMismatch(DataError):
    """A label or exemplar failed strict schema validation."""

    def __init__(self, failure_kind: str, message: str = ""):
        super().__init__(message or f"schema mismatch: {failure_kind}")
        self.failure_kind = failure_kind


class TemplateError(DataError):
    pass


class SelectionError(DataError):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class MissingGold(DataError):
    def __init__(self, sample_id: str):
        super().__init__(f"sample {sample_id!r} has no gold extraction set")
        self.sample_id = sample_id


class MissingPrediction(DataError):
    def __init__(self, sample_id: str):
        super().__init__(f"no prediction recorded for sample {sample_id!r}")
        self.sample_id = sample_id


class IncompleteArchive(DataError):
    pass


class ManifestDigestMismatch(DataError):
    pass


class BackendError(ApieError):
    """Transport-level or protocol-level generation failure."""


class BackendUnreachable(BackendError):
    pass


class HttpError(BackendError):
    def __init__(self, status: int, message: str = ""):
        super().__init__(message or f"HTTP {status}")
        self.status = status


class MalformedResponse(BackendError):
    pass


class MockFixtureMiss(BackendError):
    """The scripted mock has no entry for a prompt digest (stale fixture)."""


class AnnotationTimeout(ApieError):
    pass


class UnknownSample(ApieError):
    def __init__(self, sample_id: str):
        super().__init__(f"unknown sample {sample_id!r}")
        self.sample_id = sample_id


class VersionConflict(ApieError):
    def __init__(self, current_version: int):
        super().__init__(f"stale write, current version is {current_version}")
        self.current_version = current_version


class IncompleteSelection(ApieError):
    def __init__(self, pending_ids: list):
        super().__init__(f"pending labels: {', '.join(pending_ids)}")
        self.pending_ids = list(pending_ids)


class NoSelectionLoaded(ApieError):
    pass
