import numpy as np
import pytest

from qftcausal.classical import (
    InteractionSpec,
    Lattice,
    LatticeError,
    WindowSpec,
    discrete_energy,
    generate_solution,
    lattice_delta,
    move_support,
    scatter_first_order,
    solve_advanced,
    solve_retarded,
)
from qftcausal.geometry import Point, Rect
from qftcausal.smearing import BumpSpec


def bump(t, x, amp=10.0, a=0.4):
    return BumpSpec(Point(t, x), a, amp, "cosine_bump")


def slab_lattice(fns, w, dx=0.02):
    box = fns[0].support()
    return Lattice.covering(fns, dx, extra=[Rect(w.t1, w.t2, box.x_lo, box.x_hi)])


def outside_error(f, g, m, lat, w):
    pf = generate_solution(f, m, lat).values
    pg = generate_solution(g, m, lat).values
    out = (lat.t < w.t1) | (lat.t > w.t2)
    return np.abs(pf - pg)[out].max() / np.abs(pf).max()


def node_times(s):
    rows = np.nonzero(np.any(s.values != 0, axis=1))[0]
    return s.origin.t + rows * s.spacing


class TestLattice:
    def test_cfl(self):
        with pytest.raises(LatticeError, match="CFL"):
            Lattice(0.05, 0.04, Rect(0, 1, 0, 1))

    def test_source_at_edge(self):
        f = bump(0, 0)
        lat = Lattice.covering([f], 0.02, t_pad=0.0)
        with pytest.raises(LatticeError):
            solve_retarded(f, 1.0, lat)

    def test_nodes_on_multiples(self):
        lat = Lattice.covering([bump(0.013, 0.0)], 0.02)
        np.testing.assert_allclose(lat.t / 0.02, np.round(lat.t / 0.02), atol=1e-9)


class TestSolutions:
    f = bump(0, 0, 1.0, 0.2)

    def test_massless_point_source_gives_half(self):
        # deep inside the future cone the retarded massless solution is half the total source
        lat = Lattice.covering([self.f], 0.02, extra=[Rect(0, 3, -0.5, 0.5)])
        phi = solve_retarded(self.f, 0.0, lat).values
        total = lat.sample(self.f).sum() * lat.dt * lat.dx
        i = np.argmin(np.abs(lat.t - 3.0))
        j = np.argmin(np.abs(lat.x))
        assert phi[i, j] / total == pytest.approx(0.5, abs=1e-10)

    def test_retarded_vanishes_in_past(self):
        lat = Lattice.covering([self.f], 0.02)
        phi = solve_retarded(self.f, 1.0, lat).values
        assert not np.any(phi[lat.t < -0.2])

    def test_advanced_vanishes_in_future(self):
        lat = Lattice.covering([self.f], 0.02)
        phi = solve_advanced(self.f, 1.0, lat).values
        assert not np.any(phi[lat.t > 0.2])

    def test_energy_conserved_after_source(self):
        lat = Lattice.covering([self.f], 0.02, extra=[Rect(0, 2, -0.2, 0.2)])
        e = discrete_energy(generate_solution(self.f, 1.0, lat).values, 1.0, lat)
        tail = e[lat.t[:-1] > 0.25]
        assert np.ptp(tail) < 1e-12 * tail.max()

    def test_lattice_delta_antisymmetric(self):
        f, g = bump(0, 0), bump(1.5, 1.8)
        lat = Lattice.covering([f, g], 0.04)
        np.testing.assert_allclose(lattice_delta(f, g, 1.0, lat), -lattice_delta(g, f, 1.0, lat), rtol=1e-10)


class TestMover:
    @pytest.mark.parametrize("slab", [(1.0, 2.0), (1.013, 1.987)])
    def test_agrees_outside_slab(self, slab):
        f = bump(0, 0)
        w = WindowSpec(*slab)
        lat = slab_lattice([f], w)
        g = move_support(f, 1.0, lat, w)
        assert outside_error(f, g, 1.0, lat, w) < 1e-10
        ts = node_times(g)
        assert ts.min() >= w.t1 and ts.max() <= w.t2

    def test_slab_outside_window(self):
        f = bump(0, 0)
        lat = Lattice.covering([f], 0.02)
        with pytest.raises(LatticeError):
            move_support(f, 1.0, lat, WindowSpec(5.0, 6.0))

    def test_needs_square_cells(self):
        f = bump(0, 0)
        lat = Lattice(0.01, 0.02, Rect(-1, 3, -5, 5))
        with pytest.raises(LatticeError):
            move_support(f, 1.0, lat, WindowSpec(1.0, 2.0))

    def test_bad_window(self):
        with pytest.raises(LatticeError):
            WindowSpec(2.0, 1.0)


class TestScatter:
    f = bump(0, 0)
    chi = bump(1.2, 0.3, 1.0)
    w = WindowSpec(2.0, 2.6)

    def lattice(self):
        return slab_lattice([self.f, self.chi], self.w)

    def test_kappa_zero_is_mover(self):
        lat = self.lattice()
        h = scatter_first_order(self.f, 1.0, lat, InteractionSpec(0.0, self.chi), self.w)
        g = move_support(self.f, 1.0, lat, self.w)
        assert np.array_equal(h.values, g.values)

    def test_chi_zero_is_mover(self):
        lat = self.lattice()
        zero = bump(1.2, 0.3, 0.0)
        h = scatter_first_order(self.f, 1.0, lat, InteractionSpec(0.7, zero), self.w)
        g = move_support(self.f, 1.0, lat, self.w)
        assert np.array_equal(h.values, g.values)

    def test_h1_quadratic_in_source(self):
        lat = self.lattice()
        inter = InteractionSpec(0.1, self.chi)
        a = scatter_first_order(self.f, 1.0, lat, inter, self.w, return_parts=True).h1
        b = scatter_first_order(bump(0, 0, 20.0), 1.0, lat, inter, self.w, return_parts=True).h1
        np.testing.assert_allclose(b.values, 4.0 * a.values, rtol=1e-12, atol=1e-12 * np.abs(b.values).max())

    def test_slab_must_follow_interaction(self):
        with pytest.raises(LatticeError, match="interaction"):
            scatter_first_order(self.f, 1.0, self.lattice(), InteractionSpec(0.1, self.chi), WindowSpec(1.0, 2.0))
