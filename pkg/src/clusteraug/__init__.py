"""clusteraug: cluster-to-cluster data augmentation for slot-filling corpora.

Reconstructs clusters of same-frame training utterances into clusters of
novel expressions, then refills slot values to produce fully annotated
synthetic instances, with diversity metrics and a downstream tagger harness
to measure the effect.
"""

__version__ = "0.1.0"
