"""Online predictive-quality engine for pulsed gas metal arc welding.

Submodules: signal (waveform types and cycle segmentation), simulator
(synthetic annotated welds), features (per-cycle statistics and windows),
nn (from-scratch autoencoder and LSTM classifier), continual (EWC/MAS
updates and drift detection), model_io (checkpoints), store (series and
model persistence), pipeline (batch training), service (online engine and
live server), benchmark (two-task forgetting study), cli (entry points).
"""

__version__ = "0.1.0"
