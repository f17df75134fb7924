"""Adaptive binary arithmetic coding.

A 32-bit integer-state arithmetic coder over the binary alphabet, driven by
per-context adaptive frequency counts.  Values larger than a bit are
binarized Elias-gamma style (unary length prefix, then mantissa bits), each
bit position carrying its own context model.  Encoder and decoder update
their models identically, so decode is a bit-exact inverse of encode for any
sequence of (model, value) pairs.

Frequency counts start at 1 per symbol and are halved (rounding up, so they
never reach zero) when their total reaches 2**16, which keeps the coder's
range subdivision valid and bounds adaptation memory.

Bit I/O is inlined into the coder state: this code sits on the hot path of
the compressed container codec, where every attribute access per bit counts.
"""

from __future__ import annotations

_STATE_BITS = 32
_FULL = 1 << _STATE_BITS
_MASK = _FULL - 1
_TOP = _FULL >> 1
_SECOND = _FULL >> 2
_MAX_TOTAL = 1 << 16

# Bit positions beyond these caps share the last context; keeps models small.
_LEN_CTX = 25
_BIT_CTX = 33


class BinaryModel:
    """Adaptive counts for one binary context."""

    __slots__ = ("c0", "c1")

    def __init__(self) -> None:
        self.c0 = 1
        self.c1 = 1

    def update(self, bit: int) -> None:
        if bit:
            self.c1 += 1
        else:
            self.c0 += 1
        if self.c0 + self.c1 >= _MAX_TOTAL:
            self.c0 = (self.c0 + 1) >> 1
            self.c1 = (self.c1 + 1) >> 1


class UintModel:
    """Context set for gamma-binarized unsigned integers."""

    __slots__ = ("len_models", "bit_models")

    def __init__(self) -> None:
        self.len_models = [BinaryModel() for _ in range(_LEN_CTX)]
        self.bit_models = [BinaryModel() for _ in range(_BIT_CTX)]


class Encoder:
    """Binary arithmetic encoder accumulating an internal byte buffer."""

    __slots__ = ("_low", "_high", "_pending", "_buf", "_cur", "_n")

    def __init__(self) -> None:
        self._low = 0
        self._high = _MASK
        self._pending = 0
        self._buf = bytearray()
        self._cur = 0
        self._n = 0

    def encode(self, model: BinaryModel, bit: int) -> None:
        c0 = model.c0
        total = c0 + model.c1
        low = self._low
        high = self._high
        split = low + ((high - low + 1) * c0) // total - 1
        if bit:
            low = split + 1
            model.c1 += 1
        else:
            high = split
            model.c0 += 1
        if total + 1 >= _MAX_TOTAL:
            model.c0 = (model.c0 + 1) >> 1
            model.c1 = (model.c1 + 1) >> 1

        cur = self._cur
        n = self._n
        buf = self._buf
        pending = self._pending
        while True:
            if (low ^ high) & _TOP == 0:
                b = low >> 31
                cur = (cur << 1) | b
                n += 1
                if n == 8:
                    buf.append(cur)
                    cur = 0
                    n = 0
                if pending:
                    inv = b ^ 1
                    while pending:
                        cur = (cur << 1) | inv
                        n += 1
                        if n == 8:
                            buf.append(cur)
                            cur = 0
                            n = 0
                        pending -= 1
                low = (low << 1) & _MASK
                high = ((high << 1) & _MASK) | 1
            elif low & ~high & _SECOND:
                pending += 1
                low = (low << 1) & (_MASK >> 1)
                high = ((high << 1) & (_MASK >> 1)) | _TOP | 1
            else:
                break
        self._low = low
        self._high = high
        self._pending = pending
        self._cur = cur
        self._n = n

    def encode_uint(self, um: UintModel, value: int) -> None:
        """Gamma binarization: unary bit-length prefix, then mantissa bits."""
        n = value + 1
        k = n.bit_length() - 1
        lm = um.len_models
        for i in range(k):
            self.encode(lm[i] if i < _LEN_CTX else lm[-1], 1)
        self.encode(lm[k] if k < _LEN_CTX else lm[-1], 0)
        bm = um.bit_models
        for i in range(k - 1, -1, -1):
            self.encode(bm[i] if i < _BIT_CTX else bm[-1], (n >> i) & 1)

    def finish(self) -> bytes:
        # low < HALF <= high always holds here, so "1" followed by implicit
        # zeros (the decoder's past-end reads) lands inside [low, high].
        cur = (self._cur << 1) | 1
        n = self._n + 1
        buf = self._buf
        if n == 8:
            buf.append(cur)
        else:
            buf.append((cur << (8 - n)) & 0xFF)
        self._cur = 0
        self._n = 0
        return bytes(buf)


class Decoder:
    """Binary arithmetic decoder; mirror image of :class:`Encoder`."""

    __slots__ = ("_low", "_high", "_code", "_data", "_pos", "_cur", "_n")

    def __init__(self, data: bytes) -> None:
        self._low = 0
        self._high = _MASK
        self._data = data
        self._pos = 0
        self._cur = 0
        self._n = 0
        code = 0
        for _ in range(_STATE_BITS):
            code = (code << 1) | self._read_bit()
        self._code = code

    def _read_bit(self) -> int:
        # past-end reads yield zeros, matching the encoder's finish()
        if self._n == 0:
            if self._pos >= len(self._data):
                return 0
            self._cur = self._data[self._pos]
            self._pos += 1
            self._n = 8
        self._n -= 1
        return (self._cur >> self._n) & 1

    def decode(self, model: BinaryModel) -> int:
        c0 = model.c0
        total = c0 + model.c1
        low = self._low
        high = self._high
        split = low + ((high - low + 1) * c0) // total - 1
        code = self._code
        if code > split:
            bit = 1
            low = split + 1
            model.c1 += 1
        else:
            bit = 0
            high = split
            model.c0 += 1
        if total + 1 >= _MAX_TOTAL:
            model.c0 = (model.c0 + 1) >> 1
            model.c1 = (model.c1 + 1) >> 1

        data = self._data
        size = len(data)
        pos = self._pos
        cur = self._cur
        n = self._n
        while True:
            if (low ^ high) & _TOP == 0:
                low = (low << 1) & _MASK
                high = ((high << 1) & _MASK) | 1
                if n == 0:
                    if pos < size:
                        cur = data[pos]
                        pos += 1
                        n = 8
                if n:
                    n -= 1
                    code = ((code << 1) & _MASK) | ((cur >> n) & 1)
                else:
                    code = (code << 1) & _MASK
            elif low & ~high & _SECOND:
                low = (low << 1) & (_MASK >> 1)
                high = ((high << 1) & (_MASK >> 1)) | _TOP | 1
                if n == 0:
                    if pos < size:
                        cur = data[pos]
                        pos += 1
                        n = 8
                if n:
                    n -= 1
                    fresh = (cur >> n) & 1
                else:
                    fresh = 0
                code = (code & _TOP) | ((code << 1) & (_MASK >> 1)) | fresh
            else:
                break
        self._low = low
        self._high = high
        self._code = code
        self._pos = pos
        self._cur = cur
        self._n = n
        return bit

    def decode_uint(self, um: UintModel) -> int:
        lm = um.len_models
        k = 0
        while self.decode(lm[k] if k < _LEN_CTX else lm[-1]):
            k += 1
        n = 1
        bm = um.bit_models
        for i in range(k - 1, -1, -1):
            n = (n << 1) | self.decode(bm[i] if i < _BIT_CTX else bm[-1])
        return n - 1
