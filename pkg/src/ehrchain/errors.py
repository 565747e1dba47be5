"""Exception hierarchy shared by every layer of the simulator."""


class EHRError(Exception):
    """Base class for all protocol, storage and chain errors."""


# crypto
class CryptoError(EHRError):
    pass


class SecretTooShort(CryptoError):
    pass


class MalformedKey(CryptoError):
    pass


class DecryptionFailure(CryptoError):
    pass


class WrongPassword(CryptoError):
    pass


class CorruptKeyfile(CryptoError):
    pass


# content-addressed storage
class StorageError(EHRError):
    pass


class NodeOffline(StorageError):
    pass


class UnknownNode(StorageError):
    pass


class NoOnlineProvider(StorageError):
    pass


class UnknownHash(StorageError):
    pass


class NotAProvider(StorageError):
    pass


class InsufficientNodes(StorageError):
    pass


class BadSignature(EHRError):
    """A signature did not verify (transaction or name record)."""


class StaleSequence(StorageError):
    pass


class UnknownName(StorageError):
    pass


# chain
class ChainError(EHRError):
    pass


class BadNonce(ChainError):
    pass


class NotYourTurn(ChainError):
    pass


class NotAnAuthority(ChainError):
    pass


class ChainVerificationError(ChainError):
    pass


# contracts
class ContractError(EHRError):
    """A contract call was rejected; the transaction is logged as failed."""


class BadHashLength(ContractError):
    pass


class NonBase58Character(ContractError):
    pass


class MalformedPart(ContractError):
    pass


class InvalidPatientSignature(ContractError):
    pass


class UnregisteredHospital(ContractError):
    pass


class NoSuchEntry(ContractError):
    pass


class BatchTooSmall(ContractError):
    pass


class EmptyPointer(ContractError):
    pass


class StaleMap(ContractError):
    pass


class UnknownOperation(ContractError):
    pass


# protocol
class ProtocolError(EHRError):
    pass


class DuplicateFingerprint(ProtocolError):
    pass


class NotApproved(ProtocolError):
    def __init__(self, message, account=None):
        super().__init__(message)
        self.account = account


class UnknownPatient(ProtocolError):
    pass


class UnknownHospital(ProtocolError):
    pass


class NoSuchRecord(ProtocolError):
    pass


class NoSuchGrant(ProtocolError):
    pass


class ParseError(EHRError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


# Contract failures carry a stable short code into the chain log.
FAILURE_CODES = {
    cls.__name__: cls
    for cls in (
        BadSignature,
        BadNonce,
        BadHashLength,
        NonBase58Character,
        MalformedPart,
        MalformedKey,
        InvalidPatientSignature,
        UnregisteredHospital,
        NoSuchEntry,
        BatchTooSmall,
        EmptyPointer,
        StaleMap,
        UnknownOperation,
        NotAnAuthority,
    )
}
