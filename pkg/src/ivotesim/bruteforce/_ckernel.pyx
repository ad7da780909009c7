# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled PBKDF2-HMAC-SHA1 search kernel.

HMAC pads are compressed once per candidate password, so every PBKDF2
iteration costs exactly two SHA-1 block transforms (OpenSSL's
``SHA1_Transform``, which picks up SHA-NI/AVX2 where the CPU has them).
The search loop runs without the GIL.
"""

from libc.stdint cimport uint8_t, uint32_t
from libc.string cimport memcmp, memcpy, memset

cdef extern from "openssl/sha.h" nogil:
    ctypedef struct SHA_CTX:
        unsigned int h0
        unsigned int h1
        unsigned int h2
        unsigned int h3
        unsigned int h4
    int SHA1_Init(SHA_CTX *c)
    int SHA1_Update(SHA_CTX *c, const void *data, size_t n)
    int SHA1_Final(unsigned char *md, SHA_CTX *c)
    void SHA1_Transform(SHA_CTX *c, const unsigned char *data)
    unsigned char *SHA1(const unsigned char *d, size_t n, unsigned char *md)
    unsigned char *SHA256(const unsigned char *d, size_t n, unsigned char *md)

cdef enum:
    _STOP_EVERY = 256

BACKEND = "cython"
STOP_CHECK_INTERVAL = _STOP_EVERY

cdef const char *B64 = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/"


cdef inline void _state_out(const SHA_CTX *c, uint8_t *out) noexcept nogil:
    cdef uint32_t w[5]
    cdef int i
    w[0] = c.h0; w[1] = c.h1; w[2] = c.h2; w[3] = c.h3; w[4] = c.h4
    for i in range(5):
        out[4 * i] = (w[i] >> 24) & 0xff
        out[4 * i + 1] = (w[i] >> 16) & 0xff
        out[4 * i + 2] = (w[i] >> 8) & 0xff
        out[4 * i + 3] = w[i] & 0xff


cdef inline void _copy_state(SHA_CTX *dst, const SHA_CTX *src) noexcept nogil:
    dst.h0 = src.h0; dst.h1 = src.h1; dst.h2 = src.h2
    dst.h3 = src.h3; dst.h4 = src.h4


cdef struct HmacKey:
    SHA_CTX inner
    SHA_CTX outer
    uint8_t ipad[64]
    uint8_t opad[64]


cdef void _hmac_prepare(HmacKey *hk, const uint8_t *key, size_t klen) noexcept nogil:
    cdef uint8_t k[64]
    cdef int i
    memset(k, 0, 64)
    if klen > 64:
        SHA1(key, klen, k)
    else:
        memcpy(k, key, klen)
    for i in range(64):
        hk.ipad[i] = k[i] ^ 0x36
        hk.opad[i] = k[i] ^ 0x5c
    SHA1_Init(&hk.inner)
    SHA1_Transform(&hk.inner, hk.ipad)
    SHA1_Init(&hk.outer)
    SHA1_Transform(&hk.outer, hk.opad)


cdef void _hmac_full(const HmacKey *hk, const uint8_t *msg, size_t n, uint8_t *out) noexcept nogil:
    cdef SHA_CTX c
    cdef uint8_t inner[20]
    SHA1_Init(&c)
    SHA1_Update(&c, hk.ipad, 64)
    SHA1_Update(&c, msg, n)
    SHA1_Final(inner, &c)
    SHA1_Init(&c)
    SHA1_Update(&c, hk.opad, 64)
    SHA1_Update(&c, inner, 20)
    SHA1_Final(out, &c)


cdef void _pbkdf2_block(const HmacKey *hk, const uint8_t *salt, size_t slen,
                        uint32_t block_index, long iterations, uint8_t *out) noexcept nogil:
    """One 20-byte PBKDF2 output block T_i."""
    cdef uint8_t msg[512]
    cdef uint8_t blk[64]
    cdef uint8_t acc[20]
    cdef SHA_CTX c
    cdef long it
    cdef int j
    # salt is at most 508 bytes; callers enforce
    memcpy(msg, salt, slen)
    msg[slen] = (block_index >> 24) & 0xff
    msg[slen + 1] = (block_index >> 16) & 0xff
    msg[slen + 2] = (block_index >> 8) & 0xff
    msg[slen + 3] = block_index & 0xff
    _hmac_full(hk, msg, slen + 4, blk)
    memcpy(acc, blk, 20)
    # padded single block for a 20-byte message following a 64-byte key block
    memset(blk + 20, 0, 44)
    blk[20] = 0x80
    blk[62] = 0x02
    blk[63] = 0xa0
    for it in range(1, iterations):
        _copy_state(&c, &hk.inner)
        SHA1_Transform(&c, blk)
        _state_out(&c, blk)
        _copy_state(&c, &hk.outer)
        SHA1_Transform(&c, blk)
        _state_out(&c, blk)
        for j in range(20):
            acc[j] ^= blk[j]
    memcpy(out, acc, 20)


cdef void _pbkdf2(const uint8_t *pw, size_t plen, const uint8_t *salt, size_t slen,
                  long iterations, uint8_t *out, size_t dklen) noexcept nogil:
    cdef HmacKey hk
    cdef uint8_t t[20]
    cdef uint32_t i = 1
    cdef size_t done = 0, take
    _hmac_prepare(&hk, pw, plen)
    while done < dklen:
        _pbkdf2_block(&hk, salt, slen, i, iterations, t)
        take = dklen - done
        if take > 20:
            take = 20
        memcpy(out + done, t, take)
        done += take
        i += 1


cdef int _b64_32(const uint8_t *src, char *dst) noexcept nogil:
    """Standard padded Base64 of exactly 32 bytes into 44 chars."""
    cdef int i = 0, o = 0
    cdef uint32_t v
    while i + 3 <= 30:
        v = (src[i] << 16) | (src[i + 1] << 8) | src[i + 2]
        dst[o] = B64[(v >> 18) & 63]
        dst[o + 1] = B64[(v >> 12) & 63]
        dst[o + 2] = B64[(v >> 6) & 63]
        dst[o + 3] = B64[v & 63]
        i += 3
        o += 4
    v = (src[30] << 16) | (src[31] << 8)
    dst[o] = B64[(v >> 18) & 63]
    dst[o + 1] = B64[(v >> 12) & 63]
    dst[o + 2] = B64[(v >> 6) & 63]
    dst[o + 3] = b'='
    return o + 4


cdef inline void _digits(long long value, int width, char *dst) noexcept nogil:
    cdef int k
    for k in range(width - 1, -1, -1):
        dst[k] = <char>(48 + value % 10)
        value //= 10


def pbkdf2_hmac_sha1(bytes password, bytes salt, long iterations, Py_ssize_t dklen):
    """PBKDF2-HMAC-SHA1 with the same contract as ``hashlib.pbkdf2_hmac('sha1', ...)``."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if dklen < 1:
        raise ValueError("dklen must be >= 1")
    if len(salt) > 508:
        raise ValueError("salt longer than 508 bytes is not supported by the kernel")
    out = bytearray(dklen)
    cdef const uint8_t *pw = password
    cdef const uint8_t *s = salt
    cdef size_t plen = len(password), slen = len(salt)
    cdef uint8_t[::1] view = out
    with nogil:
        _pbkdf2(pw, plen, s, slen, iterations, &view[0], <size_t>dklen)
    return bytes(out)


def scan_range(long long start, long long end, int pin_digits, int id_digits,
               fixed_id, bytes target, long iterations, unsigned char[::1] stop,
               bytes suffix=b"voterid"):
    """Search candidate indices ``[start, end)`` for a login-id match.

    Index layout: with ``fixed_id`` the index is the PIN value; otherwise
    ``index = id * 10**pin_digits + pin``. Returns ``(found_index, tried)``
    where ``found_index`` is -1 if nothing matched or the stop flag was raised.
    """
    cdef bytes fid = b"" if fixed_id is None else fixed_id
    if len(target) != 16:
        raise ValueError("target must be 16 bytes")
    if fixed_id is not None and len(fid) != id_digits:
        raise ValueError("fixed id length must equal id_digits")
    if len(suffix) > 32 or id_digits > 16 or pin_digits > 18:
        raise ValueError("candidate layout too large")

    cdef char pw[128]
    cdef char pin[24]
    cdef uint8_t digest[32]
    cdef uint8_t salt[20]
    cdef uint8_t out[16]
    cdef const uint8_t *tgt = target
    cdef const char *fidp = fid
    cdef const char *sfx = suffix
    cdef int sfx_len = len(suffix)
    cdef long long pin_space = 1
    cdef long long idx, tried = 0, found = -1
    cdef int k, plen, base
    cdef bint fixed = fixed_id is not None
    for k in range(pin_digits):
        pin_space *= 10
    memset(salt, 0, 20)

    with nogil:
        if fixed:
            memcpy(pw, fidp, id_digits)
        idx = start
        while idx < end:
            if (tried & (_STOP_EVERY - 1)) == 0 and stop[0]:
                break
            if fixed:
                _digits(idx, pin_digits, pin)
            else:
                _digits(idx // pin_space, id_digits, pw)
                _digits(idx % pin_space, pin_digits, pin)
            base = id_digits
            pw[base] = b','
            SHA256(<const uint8_t *>pin, pin_digits, digest)
            base = base + 1 + _b64_32(digest, pw + base + 1)
            pw[base] = b','
            memcpy(pw + base + 1, sfx, sfx_len)
            plen = base + 1 + sfx_len
            _pbkdf2(<const uint8_t *>pw, plen, salt, 20, iterations, out, 16)
            tried += 1
            if memcmp(out, tgt, 16) == 0:
                found = idx
                break
            idx += 1
    return found, tried
