"""Exception types raised across the package."""

from __future__ import annotations


class WingbeatError(Exception):
    """Base class for all package errors."""


class EmptyInput(WingbeatError, ValueError):
    pass


class EmptyBand(WingbeatError, ValueError):
    pass


class BinMismatch(WingbeatError, ValueError):
    """Two spectra (or a spectrum and a profile/model) disagree on bin geometry."""


class NoPeak(WingbeatError, ValueError):
    pass


class NotEnoughBackground(WingbeatError, ValueError):
    pass


class InvalidTemplate(WingbeatError, ValueError):
    pass


class UnknownClass(WingbeatError, KeyError):
    pass


class DegeneratePosterior(WingbeatError, ArithmeticError):
    """Every class received zero probability mass."""


class NotEnoughData(WingbeatError, ValueError):
    pass


class NotEnoughVariance(WingbeatError, ValueError):
    pass


class InvalidInput(WingbeatError, ValueError):
    pass


class InvalidTask(WingbeatError, ValueError):
    pass
