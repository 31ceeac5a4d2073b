"""Zone-based evacuation planning toolkit.

Solvers for assigning one evacuation path and a departure schedule to each
residential zone of a road network, maximizing the number of evacuees that
reach safety on a time-expanded graph. Five methods are provided:

- direct_mip: joint path/schedule MIP (ground truth at desk scale)
- benders_nc: Benders decomposition, non-convergent paths
- benders_conv: Benders decomposition, convergent paths, Pareto-optimal cuts
- cpg: conflict-based path generation heuristic
- colgen: column generation over non-preemptive time-response plans

plus minimum-clearance-time search, plan validation, instance generation,
and a command-line driver.
"""

__version__ = "0.1.0"
