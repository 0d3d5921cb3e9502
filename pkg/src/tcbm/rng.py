"""Counter-based, splittable random number streams.

Every stochastic object in the toolkit draws from a Philox generator keyed
by ``(master_seed, path_index, stream_id)``.  Philox is counter-based, so
streams are statistically independent by construction and reproducible
regardless of worker count or evaluation order.
"""

import numpy as np

# Stream identifiers.  The time-change and the Brownian driver must never
# share a stream: their independence is a modelling assumption, not a
# numerical convenience.
STREAM_LAMBDA = 0
STREAM_W = 1
STREAM_AUX = 2


def stream(master_seed: int, path_index: int = 0, stream_id: int = 0) -> np.random.Generator:
    """Return the Generator for one (seed, path, stream) triple."""
    ss = np.random.SeedSequence(entropy=int(master_seed),
                                spawn_key=(int(path_index), int(stream_id)))
    return np.random.Generator(np.random.Philox(seed=ss))
