"""Open-vocabulary classifier construction and evaluation.

Classifiers for novel categories are built from text-description embeddings
(mean of encodings), from image-exemplar embeddings (trainable transformer
set encoder with a CLS token), or from both (normalized addition), and
evaluated with a sigmoid scoring head, retrieval metrics, and box average
precision grouped by class-frequency bucket.
"""

from .aggregator import (AggregatorConfig, AggregatorModel, aggregate,
                         init_model, load_model, save_model)
from .autodiff import (ParamSet, Tensor, evaluate_with_gradients,
                       finite_diff_gradient)
from .average_precision import (DetectionRecord, EvalResult, GroundTruthBox,
                                compute_ap, iou)
from .bank import (ClassEntry, ClassifierBank, EmbeddingBank, load_bank,
                   load_classifier_bank, load_vocabulary, save_bank,
                   save_classifier_bank, save_vocabulary)
from .exemplars import (Candidate, CandidatePool, ExemplarCatalog,
                        resolve_exemplars)
from .fusion import (TtaRecipe, fuse_multimodal, get_recipe, mean_baseline,
                     plan_tta)
from .optim import AdamWConfig, AdamWState, adamw_step
from .scoring import ScoringHead, evaluate_retrieval, score_queries
from .synthetic import (ClusterSpec, gen_cluster_bank, gen_cluster_split,
                        gen_detection_fixture)
from .text import (DescriptionSet, PromptTemplate, build_text_classifier,
                   ingest_descriptions, render_prompt)
from .training import (NegativeQueue, TrainConfig, TrainReport, info_nce_loss,
                       queue_push, sample_training_pair, train)

__version__ = "0.1.0"
