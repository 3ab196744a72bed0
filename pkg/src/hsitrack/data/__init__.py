from .modality import (
    STANDARD_REGISTRY, HsiCube, Modality, SequenceRecord, make_registry, max_bands,
    modality_schedule, pad_band_axis, pad_bands,
)
from .hcube import (
    BadMagicError, HcubeError, SizeMismatchError, TruncatedError, find_sequences,
    load_sequence, read_hcube, save_sequence, write_hcube,
)
from .synthetic import (
    InfeasibleSceneError, ObjectSpec, SceneSpec, ambiguous_partner, crossing_scene,
    default_signatures, false_color_matrix, generate_corpus, generate_synthetic_sequence,
    null_direction, spectral_angle,
)
