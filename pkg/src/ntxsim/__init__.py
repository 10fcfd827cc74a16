"""Functional and analytical models of a near-memory training accelerator.

Submodules: accumulator, tcdm, ntx, special and cluster model one processing
cluster; kernels lowers DNN layers onto it; workload, perf, mesh and
datacenter are the analytical models; cli ties them together.
"""

__version__ = "0.1.0"

SEED_ENV = "NTXSIM_SEED"
DEFAULT_SEED = 1234
