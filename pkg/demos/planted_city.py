"""Run the elimination loop on a synthetic city with a planted proxy.

The default city carries a redundant pair: ``group0.member1`` mirrors the
census bias field while ``group0.member0`` carries the same crime signal
without it. We train, strip the race columns, and walk the rounds for
``nonwhite.percentage``.

    python3 demos/planted_city.py [seed]
"""
import sys

from fairtrim.dataset import holdout_last
from fairtrim.debias import BiasConfig, PipelineOptions, run_experiment
from fairtrim.gbt import GbtParams
from fairtrim.synth import SynthConfig, generate_city

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
table, truth = generate_city(SynthConfig(seed=seed))
print(f"{len(table)} chronons, {len(table.feature_names)} columns, "
      f"crime prevalence {table.presence.mean():.3f}")

pool, test = holdout_last(table, 0.2)
traces, cors = run_experiment(pool, test, BiasConfig(threshold_tau=0.05), GbtParams(),
                              PipelineOptions(bootstrap_resamples=500), reps=1, seed=seed,
                              mitigate_vars=["nonwhite.percentage"])

rho = cors[cors.RaceVar == "nonwhite.percentage"].set_index("Feature").correlation
for name in ("group0.member1", "group0.member0"):
    print(f"{name}: rho = {rho[name]:+.3f}")

trace = traces[0]
print(f"\n{'round':<10} {'AUC':>6}  {'95% CI':<15} removed")
for r in trace.rounds:
    ci = f"[{r.auc_low:.3f}, {r.auc_high:.3f}]"
    top = ", ".join(f"{f} {g:.2f}" for f, g in list(r.importances)[:3])
    print(f"{r.label:<10} {r.auc:6.3f}  {ci:<15} {', '.join(r.removed) or '-'}")
    print(f"{'':<10} top gains: {top}")
print(f"stop: {trace.stop_reason}")
