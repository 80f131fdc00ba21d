"""
Orthogonal initialization of TT cores
=====================================

Cores built from orthonormal slice vectors give a table with orthonormal
columns, without ever materializing the table. Gaussian cores do not.
"""
# %%
from ttemb import InitSpec, TTConfig, init_gaussian, init_ortho_core, verify_claim1
from ttemb.initializer import ortho_feasible

cfg = TTConfig(4096, 64, (16, 16, 16), (4, 4, 4), (1, 4, 4, 1))
print("ortho:   ", verify_claim1(init_ortho_core(cfg, InitSpec("ortho_core", seed=1))))
print("gaussian:", verify_claim1(init_gaussian(cfg, InitSpec("gaussian", seed=1))))

# %%
# Each core must fit ``n_k R_(k-1)`` orthonormal vectors in ``m_k R_k``
# dimensions. Large ranks on a thin last core break that.
too_big = TTConfig(4096, 64, (16, 16, 16), (4, 4, 4), (1, 8, 8, 1))
print("violations (core, need, room):", ortho_feasible(too_big))
