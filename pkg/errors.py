"""
Exception hierarchy shared by the pipeline stages.
Library code raises these; only main.py turns them into exit codes.
"""


class ModelTablesError(Exception):
    """Base class for every pipeline error."""


class SnapshotError(ModelTablesError):
    """The snapshot directory is missing or unusable."""


class ValidationError(ModelTablesError):
    """Input data violates a precondition of an operation."""


class MissingStageError(ModelTablesError):
    """A CLI command needs the output of a stage that has not run yet."""

    def __init__(self, stage: str, needed_by: str):
        self.stage = stage
        self.needed_by = needed_by
        super().__init__(f"'{needed_by}' needs the '{stage}' stage; run `{stage}` first")


class WorkspaceLockedError(ModelTablesError):
    """Another command currently owns the workspace."""
