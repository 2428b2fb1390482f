"""Exception types shared across the package."""


class NumericRangeError(ArithmeticError):
    """An intensity or iterate left the representable range (overflow / non-finite).

    Carries enough context to locate the offending entry: ``neuron`` / ``bin``
    for intensity evaluations, ``source`` / ``lag_index`` / ``sweep`` for
    estimator updates. Unused fields are None.
    """

    def __init__(self, message, *, neuron=None, bin=None, source=None,
                 slot=None, sweep=None):
        parts = [message]
        ctx = {"neuron": neuron, "bin": bin, "source": source,
               "slot": slot, "sweep": sweep}
        tags = [f"{k}={v}" for k, v in ctx.items() if v is not None]
        if tags:
            parts.append("(" + ", ".join(tags) + ")")
        super().__init__(" ".join(parts))
        self.neuron = neuron
        self.bin = bin
        self.source = source
        self.slot = slot
        self.sweep = sweep


class FormatError(ValueError):
    """A file did not match its expected on-disk format.

    ``location`` is a human-readable pointer (line number or field name).
    """

    def __init__(self, message, *, path=None, location=None):
        parts = []
        if path is not None:
            parts.append(str(path))
        if location is not None:
            parts.append(str(location))
        prefix = ": ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.path = path
        self.location = location


class GenerationError(RuntimeError):
    """Spike generation produced an invalid thinning setup (bin probability >= 1)."""

    def __init__(self, message, *, violations=0, total_bins=0, max_prob=None):
        super().__init__(message)
        self.violations = violations
        self.total_bins = total_bins
        self.max_prob = max_prob
