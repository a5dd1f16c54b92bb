"""crossgen: desk-scale any-to-any multimodal generation on a synthetic
three-modality dataset (two rendered views plus a token report).

Subpackages follow the pipeline stages: shared-latent alignment
(``bridging``), multi-prompt conditioning (``conditioning``), per-modality
latent diffusion (``diffusion``), coupled joint generation (``jointgen``)
and the evaluation battery (``evalkit``), all built on the ``tensor``
autodiff core and the ``toydata`` generator.
"""

__version__ = "0.1.0"
