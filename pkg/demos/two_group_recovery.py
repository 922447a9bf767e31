"""Two groups, three structures: what can be recovered from the data?

Mixing weights come back accurately even when individual rows are hard
to classify.  The Bayes classifier that knows the true weights sets the
ceiling for per-row accuracy, and that ceiling rises with replication.
"""

import numpy as np

from gammarank import (
    ExperimentLayout,
    SharedParams,
    SimulationConfig,
    assign_bayes,
    em_fit,
    enumerate_ordered_structures,
    log_density_matrix,
    simulate,
)

params = SharedParams(alpha=10, alpha0=3, nu0=32.0)
catalog = enumerate_ordered_structures(2)
truth = np.array([0.2, 0.5, 0.3])
print("catalog:", ", ".join(map(str, catalog)), " true weights:", truth)

for m in (3, 10, 30):
    layout = ExperimentLayout.balanced(2, m)
    sim = simulate(SimulationConfig(layout, params, catalog, truth, 5000, seed=m))
    L = log_density_matrix(sim.data, catalog, layout, params)
    fit = em_fit(L, max_iters=2000, rel_tol=1e-12)
    acc = np.mean(assign_bayes(fit.posterior).best == sim.labels)
    oracle = np.mean(np.argmax(L + np.log(truth), axis=1) == sim.labels)
    print(
        f"m={m:2d}  fitted {np.round(fit.weights, 3)}  max error {np.abs(fit.weights - truth).max():.3f}"
        f"  row accuracy {acc:.3f}  (true-weight ceiling {oracle:.3f}, mean max posterior {fit.posterior.max(axis=1).mean():.3f})"
    )
