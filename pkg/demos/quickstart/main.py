# Trains a width-512 tanh network by GD on a noiseless teacher, measures the
# on-average stability over a few replicates and compares it with the bounds.

import logging

from src.snn_stability_lab import *


logging.basicConfig(level=logging.INFO)

act = certify_bounds("tanh")
init = ModelState.initialize(d=5, m=512, activation=act)
teacher = make_teacher(d=5, m_teacher=8, activation=act, seed=11)
dist = TeacherDistribution(teacher)

config = TrainConfig(eta=0.1, horizon=30)
S = sample_dataset(dist, n=48, seed=1, init=init)
traj = gd_run(S, config, init)
print("L_S(W_T)         ", traj.final.empirical_risk(S))

gap, se = empirical_generalization_gap(traj.final, S, dist, n_mc=20_000, seed=2)
print("generalization gap", gap, "+-", se)

report = estimate_on_average_stability(dist, n=48, config=config, replicates=3, base_seed=7, init=init)
print("epsilon^2         ", report.on_average_sq, "+-", report.on_average_se)
print("GD bound          ", report.bound_gd_on_avg)
print("uniform bound     ", report.bound_gd_uniform, "max distance", max(report.per_index_max_distance))

c = TheoryConstants(act, dist.c_x, dist.c_y, dist.certified_c0(init), init.m)
print("rho               ", c.rho, "max step", c.max_step())
print("m-bound           ", threshold_m_bound(c, n=48, eta=0.1, T=30))
