"""Flying-insect classification from wingbeat sounds.

Modules
-------
signal    audio clips, magnitude spectra, spectral subtraction, WAV I/O
detect    sliding-window event detector producing 1-s snippets
features  circadian rhythms and location weights
bayes     naive Bayes over pluggable features with kNN spectrum likelihoods
evaluate  Bayes error, leave-one-out harnesses and experiment drivers
synth     seeded synthetic wingbeat data
cli       the ``wingbeat`` command
"""

__version__ = "0.1.0"
