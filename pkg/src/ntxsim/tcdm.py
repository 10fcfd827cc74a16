"""Banked scratchpad memory shared by the NTX units, core and DMA."""

from __future__ import annotations

import numpy as np

WORD = 4


class AddressFault(Exception):
    """Access outside the scratchpad or not word aligned."""

    def __init__(self, msg: str, index: tuple | None = None):
        super().__init__(msg)
        self.index = index


class Tcdm:
    """Word-interleaved scratchpad: byte address ``a`` lives in bank ``(a/4) % banks``."""

    def __init__(self, size: int = 128 * 1024, banks: int = 32):
        if size % (WORD * banks):
            raise ValueError("size must be a whole number of bank rows")
        self.size = size
        self.banks = banks
        self.words = np.zeros(size // WORD, dtype=np.uint32)

    @property
    def f32(self) -> np.ndarray:
        return self.words.view(np.float32)

    def bank_of(self, addr):
        return (np.asarray(addr) // WORD) % self.banks

    def check(self, addr) -> None:
        addr = np.asarray(addr)
        if addr.size == 0:
            return
        bad = (addr < 0) | (addr + WORD > self.size) | (addr % WORD != 0)
        if bad.any():
            first = int(np.flatnonzero(bad.ravel())[0])
            raise AddressFault(f"bad TCDM address {int(addr.ravel()[first])}")

    def read(self, addr) -> np.ndarray:
        self.check(addr)
        return self.f32[np.asarray(addr) // WORD]

    def write(self, addr, values) -> None:
        self.check(addr)
        self.f32[np.asarray(addr) // WORD] = np.asarray(values, dtype=np.float32)

    def load(self, addr: int, array) -> None:
        """Copy a float32 array into consecutive words starting at ``addr``."""
        flat = np.asarray(array, dtype=np.float32).ravel()
        self.check(np.array([addr, addr + WORD * (flat.size - 1)]) if flat.size else np.array([addr]))
        start = addr // WORD
        self.f32[start:start + flat.size] = flat

    def dump(self, addr: int, count: int) -> np.ndarray:
        start = addr // WORD
        if addr % WORD or addr < 0 or (start + count) * WORD > self.size:
            raise AddressFault(f"bad TCDM range {addr}+{count} words")
        return self.f32[start:start + count].copy()
