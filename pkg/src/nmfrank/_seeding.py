"""Order-free seed derivation based on the splitmix64 finalizer."""

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# Reserved stream indices, so seeds for different purposes never collide.
STREAM_DATA = 1
STREAM_FIT = 2
STREAM_ERROR_DATA = 3
STREAM_ERROR_FIT = 4
STREAM_ORIGINAL_FIT = 5
STREAM_STEP = 6
STREAM_MASK = 7
STREAM_IMPUTE_FIT = 8
STREAM_FEATURES = 9
STREAM_REPLICATE = 10
STREAM_CV = 11


def splitmix64(x):
    x = (x + _GOLDEN) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(*keys):
    """Hash an arbitrary sequence of integers into a 64-bit seed.

    The result depends only on the keys, never on call order, which is what
    lets replicates and multi-starts run in any order or in parallel.
    """
    state = 0
    for key in keys:
        state = splitmix64(state ^ (int(key) & _MASK))
    return state
