"""Error type shared by every module; each failure carries a stable code."""


class LabError(Exception):
    """Raised with a machine-readable ``code`` such as ``EMPTY_BODY``."""

    def __init__(self, code, message="", **context):
        self.code = code
        self.context = context
        text = f"{code}: {message}" if message else code
        if context:
            text += " " + ", ".join(f"{k}={v!r}" for k, v in context.items())
        super().__init__(text)
