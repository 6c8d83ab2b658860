import asyncio
import ctypes
import ctypes.util

import pytest


class Sodium:
    """Thin ctypes handle to libsodium, used only as an independent oracle."""

    def __init__(self, lib):
        self.lib = lib

    def scalarmult_base(self, sk: bytes) -> bytes:
        out = ctypes.create_string_buffer(32)
        assert self.lib.crypto_scalarmult_base(out, sk) == 0
        return out.raw

    def box_easy(self, msg: bytes, nonce: bytes, pk: bytes, sk: bytes) -> bytes:
        out = ctypes.create_string_buffer(len(msg) + 16)
        rc = self.lib.crypto_box_easy(out, msg, ctypes.c_ulonglong(len(msg)), nonce, pk, sk)
        assert rc == 0
        return out.raw

    def box_open_easy(self, boxed: bytes, nonce: bytes, pk: bytes, sk: bytes) -> bytes | None:
        out = ctypes.create_string_buffer(max(len(boxed) - 16, 0))
        rc = self.lib.crypto_box_open_easy(
            out, boxed, ctypes.c_ulonglong(len(boxed)), nonce, pk, sk
        )
        return out.raw if rc == 0 else None

    def stream_xsalsa20(self, n: int, nonce: bytes, key: bytes) -> bytes:
        out = ctypes.create_string_buffer(n)
        assert self.lib.crypto_stream_xsalsa20(out, ctypes.c_ulonglong(n), nonce, key) == 0
        return out.raw

    def sign_detached(self, msg: bytes, seed: bytes) -> bytes:
        sk = ctypes.create_string_buffer(64)
        pk = ctypes.create_string_buffer(32)
        assert self.lib.crypto_sign_seed_keypair(pk, sk, seed) == 0
        sig = ctypes.create_string_buffer(64)
        slen = ctypes.c_ulonglong(0)
        assert self.lib.crypto_sign_detached(
            sig, ctypes.byref(slen), msg, ctypes.c_ulonglong(len(msg)), sk
        ) == 0
        return sig.raw


@pytest.fixture(scope="session")
def sodium():
    name = ctypes.util.find_library("sodium") or "libsodium.so.23"
    try:
        lib = ctypes.CDLL(name)
    except OSError:
        pytest.skip("libsodium not available for oracle checks")
    if lib.sodium_init() < 0:
        pytest.skip("libsodium failed to initialise")
    return Sodium(lib)


def run(coro, timeout=120):
    """Drive an async test body from a synchronous pytest function."""
    return asyncio.run(asyncio.wait_for(coro, timeout))
