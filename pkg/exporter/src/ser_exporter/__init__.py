"""Embedding exporter: bridges pre-trained acoustic and linguistic models to
the EMB1/TEMB interchange formats consumed by the emotion-regression toolkit."""

from .export import ExportJob, export_acoustic, export_linguistic
from .errors import ExporterError, InputError, ModelError
from .models import load_acoustic_model, load_linguistic_model

__version__ = "0.1.0"
