"""Pure-Python search kernel; same contract as the compiled ``_ckernel``."""

import base64
import hashlib

BACKEND = "python"
STOP_CHECK_INTERVAL = 256


def pbkdf2_hmac_sha1(password, salt, iterations, dklen):
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if dklen < 1:
        raise ValueError("dklen must be >= 1")
    return hashlib.pbkdf2_hmac("sha1", password, salt, iterations, dklen)


def scan_range(start, end, pin_digits, id_digits, fixed_id, target, iterations, stop,
               suffix=b"voterid"):
    if len(target) != 16:
        raise ValueError("target must be 16 bytes")
    if fixed_id is not None and len(fixed_id) != id_digits:
        raise ValueError("fixed id length must equal id_digits")
    pin_space = 10 ** pin_digits
    salt = bytes(20)
    tail = b"," + suffix
    pbkdf2 = hashlib.pbkdf2_hmac
    tried = 0
    for idx in range(start, end):
        if tried % STOP_CHECK_INTERVAL == 0 and stop[0]:
            break
        if fixed_id is not None:
            ident, pin = fixed_id, b"%0*d" % (pin_digits, idx)
        else:
            ident = b"%0*d" % (id_digits, idx // pin_space)
            pin = b"%0*d" % (pin_digits, idx % pin_space)
        pw = ident + b"," + base64.b64encode(hashlib.sha256(pin).digest()) + tail
        tried += 1
        if pbkdf2("sha1", pw, salt, iterations, 16) == target:
            return idx, tried
    return -1, tried
