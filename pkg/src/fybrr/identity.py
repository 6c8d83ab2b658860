"""Peer identities, content hashing, message sealing, and signatures.

A peer holds two key pairs: an X25519 pair for authenticated public-key
encryption of message bodies, and an Ed25519 pair for signing queue
entries, ballots, and protocol records. The peer id is the SHA-256 of the
two public keys, so the identity is self-certifying: anyone handed the
public halves can recompute the id and detect a swapped key.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)

from . import xsalsa
from .errors import KeyFileError, MalformedInput

NONCE_LEN = xsalsa.NONCE_LEN
SIG_LEN = 64
_SIG_SEED_CONTEXT = b"fybrr/sig-seed/v1"

KEY_FILE_HEADER = "FYBRR-KEY-V1"


def content_id(data: bytes) -> bytes:
    """32-byte SHA-256 digest; the address of `data` everywhere in the system."""
    return hashlib.sha256(data).digest()


def _check_len(name: str, value: bytes, expected: int) -> bytes:
    if not isinstance(value, (bytes, bytearray)) or len(value) != expected:
        raise MalformedInput(f"{name} must be {expected} bytes")
    return bytes(value)


@dataclass(frozen=True)
class SealedBox:
    """Authenticated ciphertext: 24-byte nonce plus tag(16) || ciphertext."""

    nonce: bytes
    ciphertext: bytes

    def __post_init__(self):
        _check_len("nonce", self.nonce, NONCE_LEN)


@dataclass(frozen=True)
class PeerIdentity:
    """Key material for one peer. Only the two public keys ever leave the device."""

    enc_secret: bytes
    enc_public: bytes
    sig_secret: bytes
    sig_public: bytes
    peer_id: bytes

    def __post_init__(self):
        for name in ("enc_secret", "enc_public", "sig_secret", "sig_public", "peer_id"):
            _check_len(name, getattr(self, name), 32)

    @classmethod
    def from_secrets(cls, enc_secret: bytes, sig_secret: bytes) -> "PeerIdentity":
        _check_len("enc_secret", enc_secret, 32)
        _check_len("sig_secret", sig_secret, 32)
        enc_public = (
            X25519PrivateKey.from_private_bytes(enc_secret).public_key().public_bytes_raw()
        )
        sig_public = (
            Ed25519PrivateKey.from_private_bytes(sig_secret).public_key().public_bytes_raw()
        )
        return cls(
            enc_secret=bytes(enc_secret),
            enc_public=enc_public,
            sig_secret=bytes(sig_secret),
            sig_public=sig_public,
            peer_id=derive_peer_id(enc_public, sig_public),
        )


def derive_peer_id(enc_public: bytes, sig_public: bytes) -> bytes:
    _check_len("enc_public", enc_public, 32)
    _check_len("sig_public", sig_public, 32)
    return content_id(enc_public + sig_public)


def generate_identity(seed: bytes | None = None) -> PeerIdentity:
    """Create an identity, deterministically when a 32-byte seed is given.

    The seed is used directly as the X25519 scalar; the Ed25519 seed is
    derived from it so the two key pairs never share bytes.
    """
    if seed is None:
        enc_secret = os.urandom(32)
        sig_secret = os.urandom(32)
    else:
        enc_secret = _check_len("seed", seed, 32)
        sig_secret = content_id(_SIG_SEED_CONTEXT + enc_secret)
    return PeerIdentity.from_secrets(enc_secret, sig_secret)


def _box_key(secret: bytes, public: bytes) -> bytes:
    """Shared secretbox key: HSalsa20 over the raw X25519 point, as in crypto_box."""
    _check_len("public key", public, 32)
    shared = X25519PrivateKey.from_private_bytes(secret).exchange(
        X25519PublicKey.from_public_bytes(public)
    )
    return xsalsa.hsalsa20(shared, bytes(16))


def seal(
    plaintext: bytes,
    sender: PeerIdentity,
    recipient_public: bytes,
    nonce: bytes | None = None,
) -> SealedBox:
    """Encrypt so only the recipient can read, authenticated to the sender.

    A fresh random nonce is drawn when none is supplied; callers providing
    their own must never reuse one for the same sender/recipient pair.
    """
    if nonce is None:
        nonce = os.urandom(NONCE_LEN)
    _check_len("nonce", nonce, NONCE_LEN)
    key = _box_key(sender.enc_secret, recipient_public)
    return SealedBox(nonce=nonce, ciphertext=xsalsa.secretbox_seal(plaintext, nonce, key))


def open_box(box: SealedBox, recipient: PeerIdentity, sender_public: bytes) -> bytes:
    """Decrypt a SealedBox; raises AuthenticationError on any tamper or key mismatch."""
    key = _box_key(recipient.enc_secret, sender_public)
    return xsalsa.secretbox_open(box.ciphertext, box.nonce, key)


def sign(data: bytes, signer: PeerIdentity) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(signer.sig_secret).sign(data)


def verify(data: bytes, signature: bytes, sig_public: bytes) -> bool:
    _check_len("signature", signature, SIG_LEN)
    _check_len("sig_public", sig_public, 32)
    try:
        Ed25519PublicKey.from_public_bytes(sig_public).verify(signature, data)
        return True
    except InvalidSignature:
        return False


def save_identity(identity: PeerIdentity, path: str) -> None:
    """Write the key file: one header line, then 128 key bytes hex-encoded."""
    blob = identity.enc_secret + identity.enc_public + identity.sig_secret + identity.sig_public
    with open(path, "w", encoding="ascii") as f:
        f.write(f"{KEY_FILE_HEADER}\n{blob.hex()}\n")
    try:
        os.chmod(path, 0o600)
    except OSError:
        pass


def load_identity(path: str) -> PeerIdentity:
    try:
        with open(path, encoding="ascii") as f:
            lines = f.read().splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise KeyFileError(f"cannot read key file {path}: {e}") from e
    if not lines or lines[0].strip() != KEY_FILE_HEADER:
        raise KeyFileError(f"{path}: missing {KEY_FILE_HEADER} header")
    body = "".join(lines[1:]).strip()
    try:
        blob = bytes.fromhex(body)
    except ValueError as e:
        raise KeyFileError(f"{path}: key body is not hex") from e
    if len(blob) != 128:
        raise KeyFileError(f"{path}: expected 128 key bytes, got {len(blob)}")
    identity = PeerIdentity.from_secrets(blob[:32], blob[64:96])
    if identity.enc_public != blob[32:64] or identity.sig_public != blob[96:128]:
        raise KeyFileError(f"{path}: public keys do not match the stored secrets")
    return identity
