"""Error of each batching strategy as the batch-shift scale grows."""
import numpy as np

from screenode.batch_error import BatchExperimentConfig, compare_strategies, default_batch_screen

spec, perts, medias, t = default_batch_screen()
scales = [0.01, 0.02, 0.05, 0.1, 0.2]
print("scale," + ",".join(["per_media", "random", "control_everywhere"]))
for s in scales:
    eps = {r.strategy: r.epsilon for r in compare_strategies(BatchExperimentConfig(spec, perts, medias, t, noise_scale=s))}
    print(f"{s}," + ",".join(f"{eps[k]:.3e}" for k in ("per_media", "random", "control_everywhere")))
