"""Show how a contracting output gain drives the envelope down to r0.

Prints the schedule of levels and waiting times for one data set and the
constant of the synthesized certificate.
"""

import numpy as np

from smallgain.comparison import exp_kl, plf
from smallgain.small_gain import SmallGainData, build_schedule, synthesize_certificate


def main():
    r0 = 0.5
    gamma = plf([(0.0, 0.25), (r0, r0), (r0 + 1.0, r0 + 0.5)], "monotone")
    data = SmallGainData(exp_kl(2.0, 1.0), gamma, r0, C=0.2, time_step=1e-2)
    sched = build_schedule(data, 10.0, depth=12)
    print(" i   level      elapsed")
    for i, (lv, el) in enumerate(zip(sched.levels, sched.elapsed)):
        print(f"{i:2d}  {lv:9.5f}  {el:8.3f}")
    grid = np.geomspace(1e-2, 1e2, 17)
    cert = synthesize_certificate(data, grid, max(data.C, r0) + grid)
    print(f"certificate constant {cert.C} (3 * max(C, r0) = {3 * max(data.C, r0)})")


if __name__ == "__main__":
    main()
