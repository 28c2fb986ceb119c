"""Error metrics between trajectories and physical probes of a state."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..mesh import WALL, FacetKind, FacetTag, inlet


def _trapezoid(t: np.ndarray, f: np.ndarray) -> float:
    if len(t) == 1:
        return float(f[0])
    return float(np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(t)))


def compute_errors(system, fom_states, rom_states, times) -> tuple[float, float]:
    """Time-integrated relative broken-norm errors ``(e_u, e_p)``.

    Both state lists use the full-order layout of ``system``; velocity errors
    are measured in the block H1 norms and pressure errors in L2.  The time
    integral uses the trapezoidal rule over ``times``.
    """
    times = np.asarray(times, dtype=float)
    if len(fom_states) != len(rom_states) or len(fom_states) != len(times):
        raise ValueError("trajectories must share the same time grid")
    if len(times) == 0:
        raise ValueError("empty trajectory")
    nb = len(system.subdomains)
    du, nu, dp, npr = (np.zeros(len(times)) for _ in range(4))
    for k, (Yh, YN) in enumerate(zip(fom_states, rom_states)):
        if Yh.shape != YN.shape or Yh.shape != (system.size,):
            raise ValueError("state vectors do not match the system layout")
        for j in range(nb):
            ops = system.subdomains[j].ops
            uh, uN = system.velocity(Yh, j), system.velocity(YN, j)
            ph, pN = system.pressure(Yh, j), system.pressure(YN, j)
            e = uh - uN
            du[k] += e @ (ops.Xu @ e)
            nu[k] += uh @ (ops.Xu @ uh)
            q = ph - pN
            dp[k] += q @ (ops.Xp @ q)
            npr[k] += ph @ (ops.Xp @ ph)
    e_u = np.sqrt(_trapezoid(times, du) / _trapezoid(times, nu)) if _trapezoid(times, nu) > 0 else 0.0
    e_p = np.sqrt(_trapezoid(times, dp) / _trapezoid(times, npr)) if _trapezoid(times, npr) > 0 else 0.0
    return float(e_u), float(e_p)


def _values(basis, u: np.ndarray) -> np.ndarray:
    return np.einsum("cqik,ci->cqk", basis.values, u[basis.vdofs])


def flow_rate(space, u: np.ndarray, tag: FacetTag) -> float:
    """Outward flux ``int u . n`` through a port."""
    b, w, n = space.facet_quadrature(tag)
    return float(np.einsum("fq,fqk,fqk->", w, _values(b, u), n))


def mean_pressure(space, p: np.ndarray, tag: FacetTag) -> float:
    b, w, _ = space.facet_quadrature(tag)
    pq = np.einsum("cqa,ca->cq", b.p_values, p[b.pdofs])
    return float((w * pq).sum() / w.sum())


def wall_shear_stress(space, u: np.ndarray, p: np.ndarray, mu: float) -> np.ndarray:
    """Facet-averaged magnitude of the tangential part of ``sigma(u, p) n`` on every wall facet."""
    b, w, n = space.facet_quadrature(WALL)
    g = np.einsum("cqikl,ci->cqkl", b.grads, u[b.vdofs])
    pq = np.einsum("cqa,ca->cq", b.p_values, p[b.pdofs])
    sigma = mu * (g + np.swapaxes(g, -1, -2)) - pq[..., None, None] * np.eye(space.dim)
    tr = np.einsum("fqkl,fql->fqk", sigma, n)
    tang = tr - np.einsum("fqk,fqk->fq", tr, n)[..., None] * n
    mag = np.linalg.norm(tang, axis=-1)
    return (w * mag).sum(1) / w.sum(1)


@dataclass
class BlockProbes:
    wss: np.ndarray
    port_flow: dict[str, float]
    inlet_pressure: float


def probe_block(space, u: np.ndarray, p: np.ndarray, mu: float) -> BlockProbes:
    flows = {}
    for tag in space.mesh.tags():
        if tag.kind in (FacetKind.INLET, FacetKind.OUTLET):
            flows[str(tag)] = flow_rate(space, u, tag)
    return BlockProbes(wall_shear_stress(space, u, p, mu), flows, mean_pressure(space, p, inlet(0)))


@dataclass
class Probes:
    """Probes of a whole tree.

    ``inflow`` is the flow rate entering the root inlet; ``outflow`` lists
    the flow rates leaving the free outlets.
    """

    inlet_pressure: float
    inflow: float
    outflow: list[float]
    wss: list[np.ndarray] = field(default_factory=list)

    @property
    def wss_max(self) -> float:
        return float(max(w.max() for w in self.wss)) if self.wss else 0.0

    @property
    def wss_mean(self) -> float:
        return float(np.mean(np.concatenate(self.wss))) if self.wss else 0.0


def free_outlets(system) -> list[tuple[int, FacetTag]]:
    used = {(iface.blocks[0], iface.tags[0]) for iface in system.interfaces}
    out = []
    for j, sub in enumerate(system.subdomains):
        for tag in sub.space.mesh.tags():
            if tag.kind is FacetKind.OUTLET and (j, tag) not in used:
                out.append((j, tag))
    return out


def probes(system, Y: np.ndarray) -> Probes:
    """Inlet pressure, inflow, free-outlet flow rates and wall shear stress of a state."""
    root = system.inlets[0]
    sp0 = system.subdomains[root.block].space
    u0 = system.velocity(Y, root.block)
    p0 = system.pressure(Y, root.block)
    wss = [wall_shear_stress(s.space, system.velocity(Y, j), system.pressure(Y, j), s.ops.mu)
           for j, s in enumerate(system.subdomains)]
    outs = [flow_rate(system.subdomains[j].space, system.velocity(Y, j), tag) for j, tag in free_outlets(system)]
    return Probes(mean_pressure(sp0, p0, root.tag), -flow_rate(sp0, u0, root.tag), outs, wss)
