"""soniclex: knowledge-augmented bioacoustic spectrogram classification.

Pipeline: audio -> spectrogram -> natural-language pattern description
(via a vision-language backend or a deterministic mock) -> quality/novelty
gated knowledge base -> TF-IDF n-gram similarity classification, plus an
experiment harness and an expert curation service.
"""

__version__ = "0.1.0"
