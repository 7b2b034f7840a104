"""Honest failure: heavy tails bias the answer, funnels refuse to answer.

A Gaussian integral around each peak is only as good as the Gaussian
assumption. On a Student-t (nu=3) the tails carry mass the local
curvature cannot see: the evidence is *underestimated*, the bias grows
with dimension, and the run says so out loud via the tail diagnostic.
On a funnel there is no interior maximum at all - the pipeline raises a
typed error instead of returning a confident number.
"""

import numpy as np

from laplev import NoModesFoundError, get_target, preset_config, run

print("Student-t nu=3: underestimation grows with dimension")
for dim in (2, 8, 16):
    target = get_target("student-t-3", dim)
    result = run(target.problem, preset_config("slow", seed=1))
    err = np.expm1(result.log_z_total - target.true_log_integral)
    flags = "; ".join(result.warnings) or "-"
    print(f"  d={dim:<3d} ratio error {err:+.1%}   warnings: {flags}")

print()
print("Funnel (sigma=3): no interior mode exists")
for dim in (4, 6):
    target = get_target("funnel-3", dim)
    try:
        run(target.problem, preset_config("slow", seed=1))
        print(f"  d={dim}: unexpectedly returned a result")
    except NoModesFoundError as err:
        print(f"  d={dim}: refused loudly -> {type(err).__name__} "
              f"[stage {err.stage}]")
