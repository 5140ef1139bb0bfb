"""Expert-guided multimodal fusion at desk scale.

Multimodal encoders, cross-modal attention fusion, a three-expert
bottleneck enhancer with hierarchical dynamic gating, and pseudo-token
injection into a tiny frozen decoder LM with LoRA adapters, all on a
self-contained f64 autodiff core.
"""

__version__ = "0.1.0"

from egmf.tensor import Parameter, Tensor, tensor  # noqa: F401
