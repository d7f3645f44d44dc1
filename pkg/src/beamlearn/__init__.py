"""beamlearn: unsupervised mask-estimator training for acoustic beamforming.

Trains a neural time-frequency mask estimator without supervision by
backpropagating the likelihood of multichannel observations under a complex
angular-central-Gaussian mixture model through a single EM step, then drives
a GEV (max-SNR) beamformer with the estimated masks.
"""

__version__ = "0.1.0"
