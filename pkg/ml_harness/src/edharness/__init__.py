"""Classifier harness for long-stay prediction on emergency-department CSVs.

The harness consumes the file formats produced by the `edsynth` command line
tool (a patient features CSV and per-scenario dataset CSVs) and emits a
predictions CSV that the same tool can score.  All coupling between the two
packages goes through those files: nothing here imports the simulator.
"""

__all__ = ["__version__"]

__version__ = "0.1.0"
