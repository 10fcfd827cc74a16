"""From one cube to a mesh of cubes, and to a server's worth of them."""

from ntxsim.datacenter import CubeOffer, ServerBaseline, same_compute, same_tdp
from ntxsim.mesh import MeshConfig, mesh_energy, mesh_grid, mesh_time

m = MeshConfig(16)
t = mesh_time(m, 8192)
print(f"16x16 mesh: one wave {t.t_pass * 1e3:.2f} ms, full update {t.t_update * 1e3:.1f} ms")

for n in (4, 8, 12, 16):
    cfg = MeshConfig(n)
    t, e = mesh_time(cfg, 8192), mesh_energy(cfg, 8192)
    print(f"{n * n:4d} cubes: speedup {t.speedup:6.1f}  parallel {t.parallel_eff:6.1%}  energy {e.energy_eff:6.1%}")

# Larger batches amortise the update.
for n, batch, s, pe, ee in mesh_grid([8], [256, 1024, 4096, 8192]):
    print(f"  N={n} batch {batch:5d}: speedup {s:5.1f}")

b = ServerBaseline()
sc = same_compute(b, CubeOffer(2.007, 20.0))
print(f"same peak: {sc.cubes} cubes at {sc.cube_power:.0f} W, server power down {sc.reduction:.1f}x, "
      f"${sc.dollars_per_year:.0f} per year")
st = same_tdp(b, CubeOffer(2.007, 2400 / 129))
print(f"same power: {st.cubes} cubes, {st.tflops:.1f} TFLOP/s, {st.speedup:.1f}x the GPUs")
