"""XSalsa20 stream cipher and the secretbox authenticated-encryption construction.

This is the symmetric half of the classic curve25519-xsalsa20-poly1305 box:
a 32-byte key (here always derived from an X25519 exchange), a 24-byte
nonce, and a 16-byte Poly1305 tag prepended to the ciphertext. No package
on the index ships XSalsa20, so the stream cipher is implemented here.
Short payloads (the chat-message common case) run a plain-integer Salsa20
core; longer ones switch to a numpy core that computes all 64-byte blocks
of the keystream at once. Poly1305 comes from `cryptography`.
"""

from __future__ import annotations

import struct

import numpy as np
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.poly1305 import Poly1305

from .errors import AuthenticationError, MalformedInput

KEY_LEN = 32
NONCE_LEN = 24
TAG_LEN = 16

_SIGMA = (0x61707865, 0x3320646E, 0x79622D32, 0x6B206574)

# (a, b, c, d) index tuples: one column round then one row round.
_QUARTERROUNDS = (
    (0, 4, 8, 12), (5, 9, 13, 1), (10, 14, 2, 6), (15, 3, 7, 11),
    (0, 1, 2, 3), (5, 6, 7, 4), (10, 11, 8, 9), (15, 12, 13, 14),
)

_MASK = 0xFFFFFFFF

# below this many blocks the vectorised core loses to its own call overhead
_NUMPY_CUTOFF_BLOCKS = 16


def _scalar_rounds(x: list[int]) -> list[int]:
    """Ten Salsa20 double rounds over a 16-word state of Python ints.

    Unrolled with the state in locals: this runs per frame on the message
    path, and attribute/index traffic would dominate a looped version.
    """
    M = _MASK
    x0, x1, x2, x3, x4, x5, x6, x7, x8, x9, x10, x11, x12, x13, x14, x15 = x
    for _ in range(10):
        t = (x0 + x12) & M; x4 ^= ((t << 7) & M) | (t >> 25)
        t = (x4 + x0) & M; x8 ^= ((t << 9) & M) | (t >> 23)
        t = (x8 + x4) & M; x12 ^= ((t << 13) & M) | (t >> 19)
        t = (x12 + x8) & M; x0 ^= ((t << 18) & M) | (t >> 14)
        t = (x5 + x1) & M; x9 ^= ((t << 7) & M) | (t >> 25)
        t = (x9 + x5) & M; x13 ^= ((t << 9) & M) | (t >> 23)
        t = (x13 + x9) & M; x1 ^= ((t << 13) & M) | (t >> 19)
        t = (x1 + x13) & M; x5 ^= ((t << 18) & M) | (t >> 14)
        t = (x10 + x6) & M; x14 ^= ((t << 7) & M) | (t >> 25)
        t = (x14 + x10) & M; x2 ^= ((t << 9) & M) | (t >> 23)
        t = (x2 + x14) & M; x6 ^= ((t << 13) & M) | (t >> 19)
        t = (x6 + x2) & M; x10 ^= ((t << 18) & M) | (t >> 14)
        t = (x15 + x11) & M; x3 ^= ((t << 7) & M) | (t >> 25)
        t = (x3 + x15) & M; x7 ^= ((t << 9) & M) | (t >> 23)
        t = (x7 + x3) & M; x11 ^= ((t << 13) & M) | (t >> 19)
        t = (x11 + x7) & M; x15 ^= ((t << 18) & M) | (t >> 14)
        t = (x0 + x3) & M; x1 ^= ((t << 7) & M) | (t >> 25)
        t = (x1 + x0) & M; x2 ^= ((t << 9) & M) | (t >> 23)
        t = (x2 + x1) & M; x3 ^= ((t << 13) & M) | (t >> 19)
        t = (x3 + x2) & M; x0 ^= ((t << 18) & M) | (t >> 14)
        t = (x5 + x4) & M; x6 ^= ((t << 7) & M) | (t >> 25)
        t = (x6 + x5) & M; x7 ^= ((t << 9) & M) | (t >> 23)
        t = (x7 + x6) & M; x4 ^= ((t << 13) & M) | (t >> 19)
        t = (x4 + x7) & M; x5 ^= ((t << 18) & M) | (t >> 14)
        t = (x10 + x9) & M; x11 ^= ((t << 7) & M) | (t >> 25)
        t = (x11 + x10) & M; x8 ^= ((t << 9) & M) | (t >> 23)
        t = (x8 + x11) & M; x9 ^= ((t << 13) & M) | (t >> 19)
        t = (x9 + x8) & M; x10 ^= ((t << 18) & M) | (t >> 14)
        t = (x15 + x14) & M; x12 ^= ((t << 7) & M) | (t >> 25)
        t = (x12 + x15) & M; x13 ^= ((t << 9) & M) | (t >> 23)
        t = (x13 + x12) & M; x14 ^= ((t << 13) & M) | (t >> 19)
        t = (x14 + x13) & M; x15 ^= ((t << 18) & M) | (t >> 14)
    return [x0, x1, x2, x3, x4, x5, x6, x7, x8, x9, x10, x11, x12, x13, x14, x15]


def _rotl(x: np.ndarray, n: int) -> np.ndarray:
    return (x << np.uint32(n)) | (x >> np.uint32(32 - n))


def _numpy_rounds(x: np.ndarray) -> None:
    """The same ten double rounds, over shape (16, nblocks) uint32."""
    for _ in range(10):
        for a, b, c, d in _QUARTERROUNDS:
            x[b] ^= _rotl(x[a] + x[d], 7)
            x[c] ^= _rotl(x[b] + x[a], 9)
            x[d] ^= _rotl(x[c] + x[b], 13)
            x[a] ^= _rotl(x[d] + x[c], 18)


def _state_words(key: bytes, nonce8: bytes, counter: int) -> list[int]:
    k = struct.unpack("<8I", key)
    n = struct.unpack("<2I", nonce8)
    return [
        _SIGMA[0], k[0], k[1], k[2], k[3], _SIGMA[1], n[0], n[1],
        counter & _MASK, (counter >> 32) & _MASK, _SIGMA[2], k[4], k[5], k[6], k[7], _SIGMA[3],
    ]


def _stream_scalar(key: bytes, nonce8: bytes, nblocks: int) -> bytes:
    out = bytearray()
    for counter in range(nblocks):
        state = _state_words(key, nonce8, counter)
        z = _scalar_rounds(list(state))
        out += struct.pack("<16I", *((z[i] + state[i]) & _MASK for i in range(16)))
    return bytes(out)


def _stream_numpy(key: bytes, nonce8: bytes, nblocks: int) -> bytes:
    k = np.frombuffer(key, dtype="<u4")
    n = np.frombuffer(nonce8, dtype="<u4")
    ctr = np.arange(nblocks, dtype=np.uint64)
    x = np.empty((16, nblocks), dtype=np.uint32)
    x[0] = _SIGMA[0]
    x[1:5] = k[:4, None]
    x[5] = _SIGMA[1]
    x[6] = n[0]
    x[7] = n[1]
    x[8] = (ctr & 0xFFFFFFFF).astype(np.uint32)
    x[9] = (ctr >> np.uint64(32)).astype(np.uint32)
    x[10] = _SIGMA[2]
    x[11:15] = k[4:, None]
    x[15] = _SIGMA[3]
    z = x.copy()
    _numpy_rounds(z)
    z += x
    return z.T.astype("<u4").tobytes()


def _salsa20_stream(key: bytes, nonce8: bytes, nblocks: int) -> bytes:
    """Keystream of `nblocks` 64-byte Salsa20 blocks, counter starting at 0."""
    if nblocks <= _NUMPY_CUTOFF_BLOCKS:
        return _stream_scalar(key, nonce8, nblocks)
    return _stream_numpy(key, nonce8, nblocks)


def hsalsa20(key: bytes, block16: bytes) -> bytes:
    """Key derivation core: 32-byte subkey from a 32-byte key and 16 input bytes."""
    if len(key) != KEY_LEN or len(block16) != 16:
        raise MalformedInput("hsalsa20 needs a 32-byte key and 16 input bytes")
    k = struct.unpack("<8I", key)
    i = struct.unpack("<4I", block16)
    x = [
        _SIGMA[0], k[0], k[1], k[2], k[3], _SIGMA[1], i[0], i[1],
        i[2], i[3], _SIGMA[2], k[4], k[5], k[6], k[7], _SIGMA[3],
    ]
    z = _scalar_rounds(x)
    return struct.pack("<8I", z[0], z[5], z[10], z[15], z[6], z[7], z[8], z[9])


def xsalsa20_stream(key: bytes, nonce: bytes, length: int) -> bytes:
    """First `length` keystream bytes for (key, 24-byte nonce)."""
    if len(key) != KEY_LEN:
        raise MalformedInput(f"key must be {KEY_LEN} bytes, got {len(key)}")
    if len(nonce) != NONCE_LEN:
        raise MalformedInput(f"nonce must be {NONCE_LEN} bytes, got {len(nonce)}")
    subkey = hsalsa20(key, nonce[:16])
    nblocks = (length + 63) // 64
    return _salsa20_stream(subkey, nonce[16:], nblocks)[:length]


def _xor(a: bytes, b: bytes) -> bytes:
    if len(a) > 256:
        out = np.frombuffer(a, dtype=np.uint8) ^ np.frombuffer(b[: len(a)], dtype=np.uint8)
        return out.tobytes()
    return bytes(x ^ y for x, y in zip(a, b))


def secretbox_seal(plaintext: bytes, nonce: bytes, key: bytes) -> bytes:
    """Encrypt and authenticate; returns tag(16) || ciphertext."""
    stream = xsalsa20_stream(key, nonce, 32 + len(plaintext))
    ciphertext = _xor(plaintext, stream[32:])
    tag = Poly1305.generate_tag(stream[:32], ciphertext)
    return tag + ciphertext


def secretbox_open(boxed: bytes, nonce: bytes, key: bytes) -> bytes:
    """Verify and decrypt tag(16) || ciphertext; raises AuthenticationError."""
    if len(boxed) < TAG_LEN:
        raise MalformedInput("boxed message shorter than the 16-byte tag")
    tag, ciphertext = boxed[:TAG_LEN], boxed[TAG_LEN:]
    stream = xsalsa20_stream(key, nonce, 32 + len(ciphertext))
    try:
        Poly1305.verify_tag(stream[:32], ciphertext, tag)
    except InvalidSignature:
        raise AuthenticationError("secretbox tag verification failed") from None
    return _xor(ciphertext, stream[32:])
