#!/usr/bin/env python3
"""Energy-balance defect of the dissipative magnetization run vs step size.

The stored energy plus the time-integrated dissipation should be constant
along the flow; the defect of that identity converges at the order of the
time integrator. Prints one line per step size with the observed order.
"""

import dataclasses
import math
from pathlib import Path

from maxmat import dissipation_integral, ll_energy, load_scenario, run

ROOT = Path(__file__).resolve().parent.parent


def balance_defect(scn, dt):
    cfg = dataclasses.replace(scn.integrator, dt=dt)
    system = scn.build_system()
    state = scn.initial_state(system)
    e0 = ll_energy(system, state)[0]
    final, _, series = run(
        system, state, cfg, channels={"rate": lambda s, st: ll_energy(s, st)[1]}
    )
    e1 = ll_energy(system, final)[0]
    return abs(e1 + dissipation_integral(series["rate"], dt) - e0) / e0


if __name__ == "__main__":
    scn = load_scenario(ROOT / "scenarios" / "ll_energy.yaml")
    prev = None
    for dt in (4e-3, 2e-3, 1e-3):
        rel = balance_defect(scn, dt)
        order = f"order {math.log2(prev / rel):5.2f}" if prev else " " * 11
        print(f"dt={dt:.0e}  relative defect {rel:.3e}  {order}")
        prev = rel
