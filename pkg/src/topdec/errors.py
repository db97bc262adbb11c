"""Exception hierarchy shared across the toolkit."""


class TopdecError(Exception):
    """Base class for all library errors."""


class DataFormatError(TopdecError):
    """A dataset, vocabulary, or matrix file does not match its format."""


class UnbalancedBrackets(TopdecError):
    """Bracketed serialization has unmatched or misplaced brackets."""


class TokenMismatch(TopdecError):
    """Leaf tokens do not line up with the tokenized query."""


class IllegalNesting(TopdecError):
    """Intent under intent, slot under slot, or a non-intent root."""


class IllegalLabel(TopdecError):
    """A symbol label is missing its IN:/SL: prefix."""


class EmptyCorpus(TopdecError):
    """An operation that needs training examples received none."""


class UnknownSymbol(TopdecError):
    """A tree uses a symbol absent from the vocabulary."""


class ReplicaBudgetExceeded(TopdecError):
    """A symbol occurs more often than its replica budget allows."""


class InvalidParse(TopdecError):
    """A parse tree violates a structural invariant.

    ``reason`` carries a stable machine-readable category used by
    evaluation reports.
    """

    def __init__(self, reason: str, message: str = ""):
        self.reason = reason
        super().__init__(message or reason)


class UnanchoredSubtree(TopdecError):
    """A retained symbol subtree has no token yield, so child order is undefined."""


class MaskMismatch(TopdecError):
    """A supervision mask references an edge absent from the parse."""


class InfeasibleGraph(TopdecError):
    """No valid tree exists: some node has no usable parent edge."""


class NoRootCandidate(TopdecError):
    """No node can serve as the single child of the root."""


class TooLarge(TopdecError):
    """Instance exceeds the exhaustive-search size bound."""


class NonFiniteLoss(TopdecError):
    """Training produced a NaN or infinite loss."""


class VocabMismatch(TopdecError):
    """Vocabulary hash does not match the checkpoint or file header."""


class BadPercentages(TopdecError):
    """Supervision split percentages do not sum to 100."""
