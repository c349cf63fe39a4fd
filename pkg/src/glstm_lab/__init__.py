"""Graph associative-memory networks with a synthetic-task probe suite.

The package is organised around a small tape-based autodiff engine
(float64 numpy arrays, explicit tapes, deterministic replay); graph
utilities and exact distance computations; the gLSTM model and a GCN
baseline built on shared sparse aggregation kernels; synthetic task
generators with exact oracle targets; first- and second-order
sensitivity probes; a deterministic training loop; and a config-driven
command line (``glstm-lab``).
"""

__version__ = "0.1.0"
