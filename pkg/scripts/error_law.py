"""Measure the sqrt(hbar) error law of a ground-state packet in V = x^2/2 + 0.1 x^4.

The packet starts at q0 = 1 (away from the centre, where the cubic term of the
local expansion would vanish) and is compared to a split-step reference at t = 1.
"""
import numpy as np

from paultrap.hagedorn import PacketState, anharmonic_potential, packet_wavefunction, propagate_packet
from paultrap.oracle import EvolvedState, GridSpec, l2_distance, split_step_evolve

# (hbar, grid points, half width, dt)
SETTINGS = [(1e-2, 2**12, 2.0, 1e-3), (1e-3, 2**13, 2.0, 5e-4), (1e-4, 2**14, 1.5, 2e-4)]


def main():
    V = anharmonic_potential(1.0, 0.1)
    Vg = lambda t, X: 0.5 * X[..., 0] ** 2 + 0.1 * X[..., 0] ** 4
    errors = []
    for hbar, n, half, dt in SETTINGS:
        st = PacketState.standard(1.0, 0.0, hbar=hbar)
        final = propagate_packet(V, st, 1.0).final
        grid = GridSpec(n, half)
        psi0 = EvolvedState.from_function(grid, lambda X: packet_wavefunction(st, X))
        ref = split_step_evolve(Vg, psi0, dt, int(round(1.0 / dt)), hbar=hbar)
        err = l2_distance(ref, EvolvedState(grid, packet_wavefunction(final, grid.points()), 1.0))
        errors.append(err)
        print(f"hbar = {hbar:.0e}  L2 error = {err:.4e}  error/sqrt(hbar) = {err / np.sqrt(hbar):.4f}")
    slope = np.polyfit(np.log([s[0] for s in SETTINGS]), np.log(errors), 1)[0]
    print(f"fitted slope d log(err) / d log(hbar) = {slope:.4f}")


if __name__ == "__main__":
    main()
