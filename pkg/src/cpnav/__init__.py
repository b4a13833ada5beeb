"""Conformal-prediction motion planning for dynamic 2-D environments.

Modules:
    envsim     - workspace, obstacles, seeded predictors, collision queries
    conformal  - split-CP scores, quantile tables, the spatial confidence field
    spacetime  - confidence-augmented space-time A*
    sipp       - CP-augmented safe interval path planning
    acp        - KS exchangeability gate and online adaptive conformal scale
    rrt        - time-aware conformal RRT with receding-horizon execution
    metrics    - ground-truth evaluation and Monte Carlo aggregation
    experiment - calibrate/plan/run/evaluate pipelines
    verify     - named acceptance checks
    cli        - command-line interface
"""

__version__ = "0.1.0"
