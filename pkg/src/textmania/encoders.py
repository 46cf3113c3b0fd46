"""Text encoder backends producing sentence embeddings.

``toy-hash`` is a dependency-free oracle: every token gets a fixed pseudo-random
unit vector and a sentence is the sum of its token vectors, so
``embed("... red dog") - embed("... dog") == vec("red")`` holds exactly.
The pretrained adapters wrap Hugging Face models and are loaded lazily.
"""

from __future__ import annotations

import enum
import hashlib
import os
import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import BackendUnavailableError, ConfigError, TextManiaError

CACHE_ENV = "TEXTMANIA_CACHE"

# Toy vectors live on a 2**-21 grid: any sum of a few of them is exact in float32,
# which keeps difference vectors bit-exact.
_GRID = 2.0**21


class Pooling(str, enum.Enum):
    NATIVE_SENTENCE = "native_sentence"
    MEAN_TOKENS = "mean_tokens"
    SUM_TOKENS = "sum_tokens"


@dataclass(frozen=True)
class TextEmbedding:
    vector: np.ndarray
    backend_id: str
    text: str


class EncoderBackend:
    """Adapter contract: ``id``, ``dim``, ``pooling`` and ``embed(text) -> float32[dim]``."""

    id: str
    dim: int
    pooling: Pooling

    def embed(self, text: str) -> np.ndarray:
        raise NotImplementedError

    def embed_many(self, texts) -> np.ndarray:
        return np.stack([self.embed(t) for t in texts]) if texts else np.zeros((0, self.dim), np.float32)


def toy_token_vector(token: str, dim: int, seed: int = 0) -> np.ndarray:
    if dim < 2:
        raise ConfigError(f"toy vector dim must be >= 2, got {dim}")
    if not token:
        raise ConfigError("token must be nonempty")
    digest = hashlib.blake2b(f"{seed}\x00{token}".encode(), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    return (np.round(v * _GRID) / _GRID).astype(np.float32)


class ToyHashBackend(EncoderBackend):
    pooling = Pooling.SUM_TOKENS

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 2:
            raise ConfigError(f"toy backend dim must be >= 2, got {dim}")
        self.dim = dim
        self.seed = seed
        self.id = "toy-hash" if (dim, seed) == (64, 0) else f"toy-hash-d{dim}-s{seed}"
        self._cache: dict[str, np.ndarray] = {}

    def token_vector(self, token: str) -> np.ndarray:
        v = self._cache.get(token)
        if v is None:
            v = self._cache[token] = toy_token_vector(token, self.dim, self.seed)
        return v

    def embed(self, text: str) -> np.ndarray:
        tokens = text.lower().split()
        if not tokens:
            raise TextManiaError("cannot embed empty text")
        out = np.zeros(self.dim, dtype=np.float64)
        for tok in tokens:
            out += self.token_vector(tok)
        return out.astype(np.float32)


class HFTextBackend(EncoderBackend):
    """Hugging Face text encoder; weights are fetched/loaded on first use."""

    def __init__(self, id: str, model_name: str, dim: int, pooling: Pooling, kind: str):
        self.id = id
        self.model_name = model_name
        self.dim = dim
        self.pooling = Pooling(pooling)
        self.kind = kind
        self._model = None
        self._tokenizer = None
        self._lock = threading.Lock()

    def _load(self):
        with self._lock:
            if self._model is not None:
                return
            try:
                import torch  # noqa: F401
                import transformers
            except ImportError as exc:
                raise BackendUnavailableError(f"{self.id}: transformers/torch not installed") from exc
            kwargs = {"cache_dir": os.environ.get(CACHE_ENV)}
            if os.environ.get("HF_HUB_OFFLINE") == "1":
                kwargs["local_files_only"] = True
            try:
                if self.kind == "clip":
                    self._tokenizer = transformers.CLIPTokenizer.from_pretrained(self.model_name, **kwargs)
                    model = transformers.CLIPTextModelWithProjection.from_pretrained(self.model_name, **kwargs)
                else:
                    self._tokenizer = transformers.AutoTokenizer.from_pretrained(self.model_name, **kwargs)
                    model = transformers.AutoModel.from_pretrained(self.model_name, **kwargs)
            except Exception as exc:
                raise BackendUnavailableError(f"{self.id}: cannot load {self.model_name}: {exc}") from exc
            self._model = model.eval()

    def embed(self, text: str) -> np.ndarray:
        import torch

        if not text:
            raise TextManiaError("cannot embed empty text")
        self._load()
        try:
            batch = self._tokenizer(text, return_tensors="pt")
        except Exception as exc:
            raise TextManiaError(f"{self.id}: tokenizer failed on {text!r}: {exc}") from exc
        with torch.inference_mode():
            out = self._model(**batch)
            if self.pooling is Pooling.NATIVE_SENTENCE:
                vec = out.text_embeds[0]
            else:
                hidden = out.last_hidden_state[0]  # final layer
                mask = batch["attention_mask"][0].unsqueeze(-1).to(hidden.dtype)
                vec = (hidden * mask).sum(0)
                if self.pooling is Pooling.MEAN_TOKENS:
                    vec = vec / mask.sum()
        return vec.float().cpu().numpy().astype(np.float32)


_REGISTRY: dict[str, Callable[[], EncoderBackend]] = {}
_INSTANCES: dict[str, EncoderBackend] = {}
_REGISTRY_LOCK = threading.Lock()


def register_backend(backend_id: str, factory: Callable[[], EncoderBackend]) -> None:
    """Register a backend factory. Re-registering an id replaces the factory."""
    with _REGISTRY_LOCK:
        _REGISTRY[backend_id] = factory
        _INSTANCES.pop(backend_id, None)


def list_backends() -> list[str]:
    return sorted(_REGISTRY)


def get_backend(backend_id: str) -> EncoderBackend:
    with _REGISTRY_LOCK:
        inst = _INSTANCES.get(backend_id)
        if inst is None:
            try:
                factory = _REGISTRY[backend_id]
            except KeyError:
                raise BackendUnavailableError(
                    f"unknown backend {backend_id!r}; registered: {sorted(_REGISTRY)}"
                ) from None
            inst = _INSTANCES[backend_id] = factory()
        return inst


def embed_text(backend: EncoderBackend | str, text: str) -> TextEmbedding:
    if isinstance(backend, str):
        backend = get_backend(backend)
    if not text:
        raise TextManiaError("text must be nonempty")
    vec = np.asarray(backend.embed(text), dtype=np.float32)
    if vec.shape != (backend.dim,):
        raise TextManiaError(f"{backend.id} returned shape {vec.shape}, expected ({backend.dim},)")
    if not np.all(np.isfinite(vec)):
        raise TextManiaError(f"{backend.id} produced non-finite values for {text!r}")
    return TextEmbedding(vector=vec, backend_id=backend.id, text=text)


def _transformers_installed() -> bool:
    try:
        import importlib.util

        return importlib.util.find_spec("transformers") is not None
    except ValueError:
        return False


register_backend("toy-hash", ToyHashBackend)
if _transformers_installed():
    register_backend(
        "clip-vit-b32-text",
        lambda: HFTextBackend("clip-vit-b32-text", "openai/clip-vit-base-patch32", 512, Pooling.NATIVE_SENTENCE, "clip"),
    )
    register_backend(
        "bert-base",
        lambda: HFTextBackend("bert-base", "bert-base-uncased", 768, Pooling.MEAN_TOKENS, "auto"),
    )
    register_backend("gpt2", lambda: HFTextBackend("gpt2", "gpt2", 768, Pooling.MEAN_TOKENS, "auto"))
