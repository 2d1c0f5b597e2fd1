"""Python access to the memeface core.

Images are float64 numpy arrays of shape (3, H, W) with pixels in [-1, 1].
"""

import json

from . import _core
from ._core import (
    CheckpointError,
    Vocabulary,
    aggregate_annotations,
    batch_matching_loss,
    decode_png,
    file_sha256,
    kl_regularizer,
    load_png,
    read_checkpoint_header,
    run_pipeline,
    save_png,
    sha256_hex,
    tokenize,
    write_toy_corpus,
)

__all__ = [
    "CheckpointError",
    "DemoService",
    "Vocabulary",
    "aggregate_annotations",
    "batch_matching_loss",
    "decode_png",
    "file_sha256",
    "kl_regularizer",
    "load_png",
    "read_checkpoint_header",
    "run_pipeline",
    "save_png",
    "sha256_hex",
    "tokenize",
    "write_toy_corpus",
]


class DemoService:
    """Runs a prompt through every checkpoint in a directory, oldest first."""

    def __init__(self, checkpoint_dir, template_dir, vocab_path=None, cache_size=4, output_resolution=0):
        checkpoint_dir = str(checkpoint_dir)
        if vocab_path is None:
            vocab_path = checkpoint_dir + "/vocab.txt"
        self._svc = _core.DemoService(checkpoint_dir, str(vocab_path), str(template_dir), cache_size, output_resolution)

    def health(self):
        return json.loads(self._svc.health_json())

    def templates(self):
        return json.loads(self._svc.templates_json())

    def generate(self, text, template_id=None, seed=None):
        """Returns {frames: [{epoch, image_b64, elapsed_ms}], log, resolution, seed, template_id}."""
        return json.loads(self._svc.generate_json(text, template_id, seed))
