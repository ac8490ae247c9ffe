"""
Error types raised by the laboratory modules.

Every error carries a stable string ``code`` so that the HTTP views, the
management command and the harness can report failures uniformly.
"""
from typing import Dict, Optional


class LabError(Exception):
    """Base class for all laboratory errors."""
    code = 'lab-error'

    def __init__(self, message: str, details: Optional[Dict] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def as_dict(self) -> Dict:
        return {'error': self.message, 'code': self.code, 'details': self.details}


class MomentUnavailable(LabError):
    code = 'moment-unavailable'


class ContractViolation(LabError):
    code = 'contract-violation'


class EigensolverNoConvergence(LabError):
    code = 'eigensolver-no-convergence'


class ResolventSolveUnstable(LabError):
    code = 'resolvent-solve-unstable'


class IdentityDegenerate(LabError):
    code = 'identity-degenerate'


class EigenvalueCollision(LabError):
    code = 'eigenvalue-collision'


class InsufficientSamples(LabError):
    code = 'insufficient-samples'


class ConfigurationError(LabError):
    code = 'configuration-error'


class ExperimentFailed(LabError):
    """All trials of an experiment failed; ``details['causes']`` lists them."""
    code = 'experiment-failed'
