"""Post-detection toolkit for dental panoramic radiograph pipelines.

Takes per-tooth detector outputs (class probabilities, boxes, masks) plus a
functional segmentation map and provides:

* coherence decoding of tooth-number assignments (a quadratic assignment
  problem over detection probabilities and mask overlaps),
* score-function policy-gradient training against the coherence reward using
  tooth-missingness weak labels,
* explainable per-tooth finding summaries with ROC/AUC evaluation,
* detection metrics (AP, DA/FA, per-image IoU, per-class segmentation IoU),
* a seeded synthetic study generator for desk-scale experiments.
"""

__version__ = "0.1.0"
