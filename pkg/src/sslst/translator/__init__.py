from .hybrid import HybridModel, build_hybrid, hybrid_schedule
from .model import DecoderConfig, EncoderDecoder, EncoderOutput, Seq2Seq, Seq2SeqConfig, reduced_length

__all__ = [
    "DecoderConfig",
    "EncoderDecoder",
    "EncoderOutput",
    "HybridModel",
    "Seq2Seq",
    "Seq2SeqConfig",
    "build_hybrid",
    "hybrid_schedule",
    "reduced_length",
]
