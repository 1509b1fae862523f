"""Template-program induction for compositional visual concepts.

A concept is represented as a *template program*: a partial program in a
small visual DSL whose holes and parameter relations capture what a group
of images shares, while its instantiations capture how members differ.
The package provides the program IR, two executors (2D primitive layout
and pen-stroke drawing), synthetic concept sampling, trainable proposal
models, objective-guided beam-search inference, bootstrapped fine-tuning,
and downstream generation/segmentation tasks.
"""

from .domains import DomainSpec, get_domain, domain_names, get_vocab
from .program import (FREE, Call, Hole, Pinned, Program, ProgramError,
                      Shared, conforms, description_length, expand,
                      instantiate)
from .proposal import GrammarPrior, NeuralProposal
from .sampler import (GroupTriplet, SampleError, SamplerConfig, TrainingExample,
                      collapse, format_targets, load_triplets, make_dataset,
                      sample_concept, sample_group, sample_program,
                      save_triplets)
from .search import (BeamConfig, InferenceFailure, InferenceResult,
                     ObjectiveWeights, infer_concepts, infer_group, objective)
from .bootstrap import FinetuneConfig, finetune, pretrain
from .tasks import (CosegResult, cosegment, cosegment_group,
                    few_shot_generate, generation_metrics, miou,
                    transfer_labels, unconditional_generate)

__version__ = "0.1.0"

__all__ = [
    "BeamConfig", "Call", "CosegResult", "DomainSpec", "FREE",
    "FinetuneConfig", "GrammarPrior", "GroupTriplet", "Hole",
    "InferenceFailure", "InferenceResult", "NeuralProposal",
    "ObjectiveWeights", "Pinned", "Program", "ProgramError", "SampleError",
    "SamplerConfig", "Shared", "TrainingExample", "__version__", "collapse",
    "conforms", "cosegment", "cosegment_group", "description_length", "domain_names",
    "expand", "few_shot_generate", "finetune", "format_targets",
    "generation_metrics", "get_domain", "get_vocab", "infer_concepts",
    "infer_group", "instantiate", "load_triplets", "make_dataset", "miou",
    "objective", "pretrain", "sample_concept",
    "sample_group", "sample_program", "save_triplets", "transfer_labels",
    "unconditional_generate",
]
