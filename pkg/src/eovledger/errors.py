"""Exception hierarchy shared by every stage of the pipeline."""


class EovError(Exception):
    """Base class for all errors raised by this package."""


# membership
class MembershipError(EovError):
    pass


class DuplicateId(MembershipError):
    pass


class UnknownIdentity(MembershipError):
    pass


class MalformedSignature(MembershipError):
    pass


# codec
class DecodeError(EovError):
    pass


# chaincode
class ChaincodeError(EovError):
    """A smart-contract level refusal.

    ``reads`` holds the (key, version) pairs observed before the refusal so
    callers can check that nothing beyond the registry was touched.
    """

    def __init__(self, message: str = "", reads=()):
        super().__init__(message)
        self.reads = tuple(reads)


class UnknownCaller(ChaincodeError):
    pass


class SharedKeyMismatch(ChaincodeError):
    pass


class UnknownKey(ChaincodeError):
    pass


class NotAdmin(ChaincodeError):
    pass


class InvalidArgs(ChaincodeError):
    pass


class DanglingPolicyRef(ChaincodeError):
    pass


class DuplicateDevice(ChaincodeError):
    pass


class EmptyRegistry(ChaincodeError):
    pass


# endorsement
class EndorsementError(EovError):
    pass


class PolicySyntaxError(EndorsementError):
    pass


class BadClientSignature(EndorsementError):
    pass


class MalformedProposal(EndorsementError):
    pass


class NotEndorser(EndorsementError):
    pass


class ChaincodeRejection(EndorsementError):
    def __init__(self, inner: ChaincodeError):
        super().__init__(f"{type(inner).__name__}: {inner}")
        self.inner = inner


class DivergentResults(EndorsementError):
    pass


class PolicyUnsatisfied(EndorsementError):
    pass


class BadEndorserSignature(EndorsementError):
    pass


# ordering
class OrderingError(EovError):
    pass


class WrongChannel(OrderingError):
    pass


class DuplicateTxId(OrderingError):
    pass


class DeliveryDenied(OrderingError):
    pass


# ledger
class LedgerError(EovError):
    pass


class BrokenChain(LedgerError):
    pass


class StorageFailure(LedgerError):
    pass


class TruncatedFile(LedgerError):
    pass


class BadLedgerFormat(LedgerError):
    pass


# simulation / configuration
class ConfigInvalid(EovError):
    pass
