"""Multi-pattern anomaly detection in the frequency domain.

Modules: ``core`` (types, windows, normalisation), ``dualconv`` (power
convolutions), ``patex`` (per-service Fourier bases), ``autoenc`` (the shared
reconstruction model), ``detector`` (scoring pipeline), ``theory`` (numerical
checks of the analysis) and ``bench`` (data, fixtures, metrics, experiments).
"""

__version__ = "0.1.0"
