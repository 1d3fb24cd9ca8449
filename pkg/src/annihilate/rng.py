"""Counter-based, label-keyed random streams.

Every random quantity in a run is a pure function of ``(root seed, domain,
site, j, salt, counter)``.  A stream key is built by chaining the SplitMix64
finalizer over those fields; the ``c``-th draw of a stream is the finalizer
applied to ``key + (c + 1) * golden``.  Two systems built with the same root
seed therefore share instructions label by label, and re-sampling one
particle is just a change of its salt.

Stream layout per domain:

* ``PARTICLE``: counter 0 is the braveness; jump ``k`` (1-based) uses counter
  ``2k - 1`` for its holding time and ``2k`` for its kernel step.
* ``TRACER_CLOCK``: ring ``k`` (0-based) uses ``2k`` for the holding time and
  ``2k + 1`` for the "also a B-ring" mark.
* ``TRACER_WALK`` / ``ENTANGLE_WALK``: step ``n`` uses counter ``n``.
* ``WANDER`` / ``ESCAPE`` (free continuous-time walks): jump ``k`` (0-based)
  uses ``2k`` for the holding time and ``2k + 1`` for the step.
"""
import numba as nb
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# stream domains
PARTICLE = 1
TRACER_CLOCK = 2
TRACER_WALK = 3
WANDER = 4
ENTANGLE_WALK = 5
INITIAL = 6
COUPLING = 7
ESCAPE = 8
ENTANGLE_CLOCK = 9
MASK64 = (1 << 64) - 1


@nb.njit(cache=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(cache=True)
def _zigzag(j):
    if j >= 0:
        return np.uint64(2 * j)
    return np.uint64(-2 * j - 1)


@nb.njit(cache=True)
def stream_key(seed, domain, site, j, salt):
    """Key of the stream for label ``(site, j)``; all arguments are integers."""
    k = mix64(np.uint64(seed) + GOLDEN)
    k = mix64(k ^ np.uint64(domain))
    k = mix64(k ^ _zigzag(site))
    k = mix64(k ^ _zigzag(j))
    return mix64(k ^ np.uint64(salt))


@nb.njit(cache=True)
def uniform(key, counter):
    """Draw ``counter`` of stream ``key`` as a double in [0, 1)."""
    x = mix64(key + np.uint64(counter + 1) * GOLDEN)
    return np.float64(x >> _S11) * _INV53


@nb.njit(cache=True)
def exponential(key, counter, rate):
    return -np.log(1.0 - uniform(key, counter)) / rate


@nb.njit(cache=True)
def step_index(cum, lo, hi, u):
    """First entry ``e`` in ``[lo, hi)`` with ``u < cum[e]``; cum is a row CDF."""
    a = lo
    b = hi - 1
    while a < b:
        mid = (a + b) // 2
        if u < cum[mid]:
            b = mid
        else:
            a = mid + 1
    return a


@nb.njit(cache=True)
def site_uniforms(seed, domain, n_sites, counter):
    out = np.empty(n_sites)
    for x in range(n_sites):
        out[x] = uniform(stream_key(seed, domain, x, 0, 0), counter)
    return out


def to_seed(seed):
    """Normalise a Python integer seed to the unsigned 64-bit range."""
    return np.uint64(int(seed) & MASK64)


class Stream:
    """Python-side handle on one counter-based stream."""

    __slots__ = ("key",)

    def __init__(self, seed, domain, site, j=0, salt=0):
        self.key = np.uint64(stream_key(to_seed(seed), np.uint64(domain), int(site),
                                        int(j), to_seed(salt)))

    def uniform(self, counter):
        return uniform(self.key, counter)

    def exponential(self, counter, rate):
        return exponential(self.key, counter, rate)
