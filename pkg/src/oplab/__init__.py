"""oplab: a neural-operator workbench.

Spectral (FNO) and convolutional (CNO) neural operators built on a small
reverse-mode tensor core, trained on synthetically generated PDE datasets,
with TPE suggestion and ASHA early stopping for hyperparameter search.
"""

__version__ = "0.1.0"
