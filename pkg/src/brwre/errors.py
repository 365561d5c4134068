"""Exception types shared across the toolkit."""


class DomainError(ValueError):
    """A transform argument lies outside the finiteness domain."""


class NoSignChangeError(RuntimeError):
    """The tilt equation has no root inside the supplied bracket."""


class DegenerateLawError(ValueError):
    """A reproduction law cannot produce any child, so tilting is undefined."""


class InvalidLawError(ValueError):
    """A law violates a structural requirement (e.g. zero step variance)."""


class ParameterError(ValueError):
    """An auxiliary-construction parameter is outside its admissible range."""


class ConfigError(ValueError):
    """An experiment config failed validation; message carries the key path."""
