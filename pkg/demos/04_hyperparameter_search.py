"""Three samplers on one search space, with cross-validated studies.

First the samplers alone on a transparent 1-D objective, then full
run_study searches (fold-averaged concordance) comparing random search,
the Parzen-estimator sampler and the evolution strategy.
"""

import numpy as np

from survkit import ParamSpec, run_study, synth_cohort
from survkit.hpo import Trial, sample_cmaes, sample_random, sample_tpe

# --- sampler behavior on a known objective ----------------------------------

space = [ParamSpec("x", "float", 0.0, 1.0)]
for name, sampler in [("random", sample_random), ("tpe", sample_tpe),
                      ("cmaes", sample_cmaes)]:
    history = []
    for t in range(60):
        rng = np.random.default_rng((0, t))
        params = sampler(space, history, rng)
        value = -(params["x"] - 0.7) ** 2
        history.append(Trial(index=t, params=params, value=value,
                             fold_values=[value]))
    best = max(history, key=lambda tr: tr.value)
    print(f"{name:>6}: best x={best.params['x']:.4f} "
          f"(target 0.7) after 60 trials")

# --- cross-validated studies on a boosted Cox model --------------------------

cohort = synth_cohort(n=400, d=3, model="ph", beta=[1.0, 0.5, 0.0],
                      censor_rate=0.3, seed=11)
model_space = [
    ParamSpec("n_rounds", "int", 20, 120),
    ParamSpec("learning_rate", "float", 0.02, 0.3, log=True),
    ParamSpec("max_depth", "int", 1, 4),
]

print("\nrun_study: 20 trials x 3 folds per sampler (objective: mean C-index)")
for sampler in ("random", "tpe", "cmaes"):
    study = run_study(cohort, "gb_cox", model_space, sampler=sampler,
                      n_trials=20, k_folds=3, seed=5)
    best = study.best_trial
    print(f"{sampler:>6}: best mean C={best.value:.4f} with {best.params}")
