"""Exception hierarchy and process exit codes."""

from __future__ import annotations

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STAGE_FAILURE = 3
EXIT_ENVIRONMENT = 4


class LecternError(Exception):
    """Base class for all pipeline errors."""

    exit_code = EXIT_STAGE_FAILURE


class ValidationError(LecternError):
    """Structurally invalid input or model output."""

    exit_code = EXIT_VALIDATION


class FormatError(ValidationError):
    """Model output did not match the demanded format after the allowed re-ask."""

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class WorkspaceExistsError(LecternError):
    exit_code = EXIT_VALIDATION


class EnvironmentError_(LecternError):
    """Missing credentials, harness, or other environment prerequisites."""

    exit_code = EXIT_ENVIRONMENT


class CassetteMissError(LecternError):
    """Replay requested for a request fingerprint the cassette does not hold."""

    def __init__(self, role_tag: str, fingerprint: str):
        super().__init__(f"cassette miss for role '{role_tag}' (fingerprint {fingerprint})")
        self.role_tag = role_tag
        self.fingerprint = fingerprint


class ProviderError(LecternError):
    """Provider call failed after retries were exhausted."""

    def __init__(self, role_tag: str, message: str):
        super().__init__(f"provider error for role '{role_tag}': {message}")
        self.role_tag = role_tag


class StageError(LecternError):
    """A pipeline stage could not complete."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage


class SectionFailure(StageError):
    """One or more sections failed; carries the partial results."""

    def __init__(self, stage: str, failed_ids: list[str], results=None):
        super().__init__(stage, f"sections failed: {', '.join(failed_ids)}")
        self.failed_ids = failed_ids
        self.results = results or []
