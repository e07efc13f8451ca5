"""Wall-clock growth of the pipeline over a two-decade size ladder.

Fixed (s, psi, t) keep the per-point work constant, so total time should
grow close to linearly in n. Prints per-stage seconds for each rung and the
fitted log-log slope. Uses a shortened ladder; pass --full for the
four-decade version (takes a minute or two).

Run: python3 demos/scaling_ladder.py [--full]
"""

import sys

from masscluster import ClusterParams
from masscluster.analysis import scaleup

SIZES = [1_500, 15_000, 150_000]
if "--full" in sys.argv[1:]:
    SIZES.append(1_500_000)

params = ClusterParams(k=3, s=256, tau=0.4, kernel_kind="ik_voronoi",
                       psi=32, t=50, seed=0, max_refine_iters=5)
report = scaleup("scaleup_arc_mix", SIZES, params, seed=0)

header = ("n", "fit", "embed", "seed", "assign", "refine", "total")
print(("{:>9} " * len(header)).format(*header))
for i, n in enumerate(report.sizes):
    st = report.stage_seconds[i]
    print(f"{int(n):>9} {st['fit']:>9.3f} {st['embed']:>9.3f} {st['seed']:>9.3f} "
          f"{st['assign']:>9.3f} {st['refine']:>9.3f} {report.total_seconds[i]:>9.3f}")

print(f"\nlog-log slope over n={list(map(int, report.fitted_sizes))}: "
      f"{report.slope:.3f}")
for note in report.notes:
    print("note:", note)
