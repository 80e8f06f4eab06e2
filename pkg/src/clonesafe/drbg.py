"""CTR_DRBG (NIST SP 800-90A, section 10.2.1) over AES.

The default configuration is AES-128 without a derivation function and
without prediction resistance. AES-256 and the block-cipher derivation
function are supported so the implementation can be checked against the
published CAVS known-answer sets, which exist for those variants.
"""

from __future__ import annotations

from dataclasses import dataclass

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

BLOCK_LEN = 16
RESEED_INTERVAL = 1 << 48
MAX_REQUEST_BYTES = 1 << 16

_MASK128 = (1 << 128) - 1


class DrbgError(Exception):
    pass


class ReseedRequired(DrbgError):
    """The reseed counter passed the reseed interval."""


class EntropyUnavailable(DrbgError):
    """The entropy source could not supply enough bytes."""


def _xor(a: bytes, b: bytes) -> bytes:
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(len(a), "big")


def _keystream(key: bytes, v: bytes, nbytes: int) -> tuple[bytes, bytes]:
    """Encrypt V+1, V+2, ... under ``key``; return (output, final V).

    CTR_DRBG increments the full 128-bit block, which is exactly what AES-CTR
    does with the counter block as its nonce, so the whole sequence is one
    CTR-mode call over zeros.
    """
    nblocks = -(-nbytes // BLOCK_LEN)
    start = (int.from_bytes(v, "big") + 1) & _MASK128
    enc = Cipher(algorithms.AES(key), modes.CTR(start.to_bytes(16, "big"))).encryptor()
    out = enc.update(bytes(nblocks * BLOCK_LEN))
    last = (start + nblocks - 1) & _MASK128
    return out[:nbytes], last.to_bytes(16, "big")


def _ecb(key: bytes, block: bytes) -> bytes:
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc.update(block) + enc.finalize()


def block_cipher_df(data: bytes, nbytes: int, keylen: int) -> bytes:
    """Block_Cipher_df (SP 800-90A 10.3.2)."""
    s = len(data).to_bytes(4, "big") + nbytes.to_bytes(4, "big") + data + b"\x80"
    s += bytes(-len(s) % BLOCK_LEN)

    df_key = bytes(range(keylen))
    temp = b""
    i = 0
    while len(temp) < keylen + BLOCK_LEN:
        chain = bytes(BLOCK_LEN)
        for block in _blocks(i.to_bytes(4, "big") + bytes(12) + s):
            chain = _ecb(df_key, _xor(chain, block))
        temp += chain
        i += 1

    k, x = temp[:keylen], temp[keylen : keylen + BLOCK_LEN]
    out = b""
    while len(out) < nbytes:
        x = _ecb(k, x)
        out += x
    return out[:nbytes]


def _blocks(data: bytes):
    for i in range(0, len(data), BLOCK_LEN):
        yield data[i : i + BLOCK_LEN]


@dataclass
class DrbgState:
    key: bytes
    v: bytes
    reseed_counter: int = 1

    def copy(self) -> "DrbgState":
        return DrbgState(self.key, self.v, self.reseed_counter)


class CtrDrbg:
    """A CTR_DRBG instance.

    ``keylen`` is 16 (AES-128) or 32 (AES-256). With ``use_df=False`` entropy
    input must be exactly ``seedlen`` bytes and the nonce is unused.
    """

    def __init__(self, keylen: int = 16, use_df: bool = False,
                 reseed_interval: int = RESEED_INTERVAL):
        if keylen not in (16, 24, 32):
            raise ValueError(f"unsupported AES key length {keylen}")
        self.keylen = keylen
        self.use_df = use_df
        self.seedlen = keylen + BLOCK_LEN
        self.reseed_interval = reseed_interval
        self.state: DrbgState | None = None

    @property
    def entropy_len(self) -> int:
        """Bytes of entropy pulled per instantiate/reseed."""
        return self.seedlen if not self.use_df else self.keylen

    def _update(self, provided: bytes) -> None:
        st = self.state
        temp, _ = _keystream(st.key, st.v, self.seedlen)
        temp = _xor(temp, provided)
        st.key = temp[: self.keylen]
        st.v = temp[self.keylen :]

    def _seed_material(self, data: bytes, entropy: bytes | None) -> bytes:
        if self.use_df:
            return block_cipher_df(data, self.seedlen, self.keylen)
        if len(data) > self.seedlen:
            raise ValueError(f"input longer than seedlen ({len(data)} > {self.seedlen})")
        padded = data + bytes(self.seedlen - len(data))
        return padded if entropy is None else _xor(entropy, padded)

    def _check_entropy(self, entropy: bytes) -> None:
        need = self.seedlen if not self.use_df else self.keylen
        if len(entropy) < need:
            raise EntropyUnavailable(f"need {need} entropy bytes, got {len(entropy)}")
        if not self.use_df and len(entropy) != self.seedlen:
            raise ValueError(f"no-df entropy input must be exactly {self.seedlen} bytes")

    def instantiate(self, entropy: bytes, nonce: bytes = b"",
                    personalization: bytes = b"") -> None:
        self._check_entropy(entropy)
        if self.use_df:
            seed = self._seed_material(entropy + nonce + personalization, None)
        else:
            seed = self._seed_material(personalization, entropy)
        self.state = DrbgState(bytes(self.keylen), bytes(BLOCK_LEN))
        self._update(seed)
        self.state.reseed_counter = 1

    def reseed(self, entropy: bytes, additional: bytes = b"") -> None:
        if self.state is None:
            raise DrbgError("DRBG not instantiated")
        self._check_entropy(entropy)
        if self.use_df:
            seed = self._seed_material(entropy + additional, None)
        else:
            seed = self._seed_material(additional, entropy)
        self._update(seed)
        self.state.reseed_counter = 1

    def generate(self, nbytes: int, additional: bytes = b"") -> bytes:
        st = self.state
        if st is None:
            raise DrbgError("DRBG not instantiated")
        if nbytes < 0 or nbytes > MAX_REQUEST_BYTES:
            raise ValueError(f"request of {nbytes} bytes out of range")
        if st.reseed_counter > self.reseed_interval:
            raise ReseedRequired(f"reseed_counter={st.reseed_counter}")
        if additional:
            additional = self._seed_material(additional, None)
            self._update(additional)
        else:
            additional = bytes(self.seedlen)
        # Output blocks and the closing Update use the same key and a
        # contiguous counter run, so one cipher call covers both.
        out_len = -(-nbytes // BLOCK_LEN) * BLOCK_LEN
        stream, _ = _keystream(st.key, st.v, out_len + self.seedlen)
        temp = _xor(stream[out_len:], additional)
        st.key = temp[: self.keylen]
        st.v = temp[self.keylen :]
        st.reseed_counter += 1
        return stream[:nbytes]
