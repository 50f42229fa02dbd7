# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Exceptions and warnings raised across the pipeline."""


class ResinDesignError(Exception):
    """Base class for failures a command reports back to the user."""


class InvalidParameters(ResinDesignError, ValueError):
    pass


class DegenerateRange(ResinDesignError):
    """Melting point equals crystallization temperature."""


class NumericBlowup(ResinDesignError):
    """A simulated field became non-finite."""


class DegenerateInterface(ResinDesignError):
    """Level set vanished exactly at a node."""


class SingularElement(ResinDesignError):
    """A subelement is too small to integrate on."""


class SolveFailure(ResinDesignError):
    """The linear solve did not reach the residual tolerance."""


class DegenerateModuli(ResinDesignError):
    pass


class ShapeError(ResinDesignError, ValueError):
    pass


class FrequencyDomainError(ResinDesignError, ValueError):
    """Temperature outside the IPPT frequency map's domain."""


class NonFiniteLoss(ResinDesignError):
    pass


class PoissonLimit(ResinDesignError, ValueError):
    """Poisson's ratio at or beyond the incompressible limit."""


class BoundsViolation(UserWarning):
    """Homogenized stiffness outside the Voigt-Reuss bounds."""


class OutOfRange(UserWarning):
    """Condition outside the training min/max, clamped."""
