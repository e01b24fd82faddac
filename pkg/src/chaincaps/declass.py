"""Signed one-shot declassification tokens.

A token authorizes exactly one otherwise-denied sink call. It is bound to
the session, the exact requirement set, and a digest of the contributing
lineage, carries a fresh nonce and an expiry, and is authenticated with
HMAC-SHA256. Verification consumes the nonce atomically, so replays fail;
any binding mismatch or payload tamper fails as well. Tokens never widen a
stored budget.

Wire form: ``base64url(payload) . base64url(mac)``, presented through the
reserved ``_chaincaps_token`` argument on a tool call.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import secrets
import threading
import time
from dataclasses import dataclass
from typing import Iterable, Optional

from .algebra import SinkPrivilege
from .lineage import SessionState

__all__ = [
    "WeakKeyError",
    "MalformedToken",
    "DeclassToken",
    "NonceLedger",
    "TOKEN_ARG",
    "ACCEPT",
    "REJECT_BAD_MAC",
    "REJECT_WRONG_BINDING",
    "REJECT_EXPIRED",
    "REJECT_REPLAYED",
    "lineage_digest",
    "mint_token",
    "verify_and_consume",
]

TOKEN_ARG = "_chaincaps_token"

ACCEPT = "accept"
REJECT_BAD_MAC = "bad_mac"
REJECT_WRONG_BINDING = "wrong_binding"
REJECT_EXPIRED = "expired"
REJECT_REPLAYED = "replayed"

_FS = b"\x1f"  # unit separator between length-prefixed payload fields
_MIN_KEY_LEN = 32


class WeakKeyError(ValueError):
    """Signing key shorter than 32 bytes."""


class MalformedToken(ValueError):
    """Token wire form that cannot be decoded."""


@dataclass(frozen=True)
class DeclassToken:
    payload: bytes
    mac: bytes

    def wire(self) -> str:
        return (
            _b64e(self.payload) + "." + _b64e(self.mac)
        )

    @classmethod
    def from_wire(cls, text: str) -> "DeclassToken":
        parts = text.split(".")
        if len(parts) != 2:
            raise MalformedToken("token must be payload.mac")
        try:
            payload = _b64d(parts[0])
            mac = _b64d(parts[1])
        except Exception as e:
            raise MalformedToken(f"bad base64: {e}") from e
        return cls(payload=payload, mac=mac)


def _b64e(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).decode("ascii").rstrip("=")


def _b64d(text: str) -> bytes:
    pad = "=" * (-len(text) % 4)
    return base64.urlsafe_b64decode(text + pad)


class NonceLedger:
    """Consumed nonces for one key epoch. check-and-insert is atomic, so a
    token is accepted at most once under any interleaving."""

    def __init__(self) -> None:
        self._seen: set[bytes] = set()
        self._lock = threading.Lock()

    def consume_if_fresh(self, nonce: bytes) -> bool:
        with self._lock:
            if nonce in self._seen:
                return False
            self._seen.add(nonce)
            return True

    def __len__(self) -> int:
        return len(self._seen)


def lineage_digest(state: SessionState, deps: Iterable[int]) -> str:
    """Order-independent digest of the (origin, content digest) pairs of all
    transitive source ancestors of ``deps``."""
    pairs = sorted(
        {(v.origins and min(v.origins) or "", v.content_digest)
         for v in state.source_ancestors(deps)}
    )
    h = hashlib.sha256()
    for origin, digest in pairs:
        item = origin.encode("utf-8") + b"\x00" + digest.encode("ascii")
        h.update(len(item).to_bytes(4, "big"))
        h.update(item)
    return h.hexdigest()


def _encode_fields(fields: list[bytes]) -> bytes:
    out = bytearray()
    for f in fields:
        out += str(len(f)).encode("ascii") + b":" + f + _FS
    return bytes(out)


def _decode_fields(payload: bytes) -> list[bytes]:
    fields = []
    i = 0
    while i < len(payload):
        j = payload.index(b":", i)
        n = int(payload[i:j])
        f = payload[j + 1 : j + 1 + n]
        if payload[j + 1 + n : j + 2 + n] != _FS:
            raise ValueError("missing field separator")
        fields.append(f)
        i = j + 2 + n
    return fields


def _req_text(req: Iterable[SinkPrivilege]) -> bytes:
    return ",".join(sorted(p.text() for p in req)).encode("utf-8")


def mint_token(
    key: bytes,
    session_id: str,
    req: Iterable[SinkPrivilege],
    digest: str,
    ttl_seconds: int,
    _now: Optional[float] = None,
    _nonce: Optional[bytes] = None,
) -> DeclassToken:
    """Mint a one-shot token for one (session, requirement, lineage) triple.

    ``_now``/``_nonce`` exist for tests; production minting uses the clock
    and a fresh 128-bit random nonce.
    """
    if len(key) < _MIN_KEY_LEN:
        raise WeakKeyError(f"key must be at least {_MIN_KEY_LEN} bytes")
    nonce = _nonce if _nonce is not None else secrets.token_bytes(16)
    if len(nonce) < 16:
        raise ValueError("nonce must be at least 128 bits")
    now = time.time() if _now is None else _now
    expiry = int(now) + int(ttl_seconds)
    payload = _encode_fields(
        [
            b"v1",
            session_id.encode("utf-8"),
            _req_text(req),
            digest.encode("ascii"),
            nonce.hex().encode("ascii"),
            str(expiry).encode("ascii"),
        ]
    )
    mac = hmac.new(key, payload, hashlib.sha256).digest()
    return DeclassToken(payload=payload, mac=mac)


def verify_and_consume(
    key: bytes,
    token: DeclassToken,
    session_id: str,
    req: Iterable[SinkPrivilege],
    digest: str,
    ledger: NonceLedger,
    _now: Optional[float] = None,
) -> str:
    """Check mac, binding, expiry, and freshness; consume the nonce with the
    accept decision. Returns ``accept`` or one of the reject reasons."""
    if len(key) < _MIN_KEY_LEN:
        raise WeakKeyError(f"key must be at least {_MIN_KEY_LEN} bytes")
    expected = hmac.new(key, token.payload, hashlib.sha256).digest()
    if not hmac.compare_digest(expected, token.mac):
        return REJECT_BAD_MAC
    try:
        version, sid, req_text, dig, nonce_hex, expiry_text = _decode_fields(
            token.payload
        )
        expiry = int(expiry_text)
        nonce = bytes.fromhex(nonce_hex.decode("ascii"))
    except Exception:
        return REJECT_WRONG_BINDING
    if version != b"v1":
        return REJECT_WRONG_BINDING
    if (
        sid != session_id.encode("utf-8")
        or req_text != _req_text(req)
        or dig != digest.encode("ascii")
    ):
        return REJECT_WRONG_BINDING
    now = time.time() if _now is None else _now
    if now >= expiry:
        return REJECT_EXPIRED
    if not ledger.consume_if_fresh(nonce):
        return REJECT_REPLAYED
    return ACCEPT
