"""Emergency-department flow simulator and synthetic-EHR evaluation pipeline.

The package is organised around one module per pipeline stage:

- ``eventlog``   -- event-log parsing, trajectory reconstruction, waiting-time
                    removal via temporal conformance checking
- ``corpus``     -- deterministic desk-scale corpus generator with ground truth
- ``patients``   -- patient records, conditional sampling pool
- ``simulation`` -- the discrete-time ED model (arrivals, beds, treatment)
- ``scenarios``  -- baseline/MCI parameter perturbations and Monte Carlo sweeps
- ``metrics``    -- LOS fidelity, coverage/width, and classifier robustness
- ``cli``        -- the ``edsynth`` command-line front end
"""

__version__ = "0.1.0"
