"""Embedding providers: the contract, a deterministic synthetic provider,
an HTTP client for remote embedding services, and a memoizing cache.

Deterministic vector spec (language-neutral, mirrored by the mock adapter)
--------------------------------------------------------------------------
All synthetic vectors derive from one keyed stream:

1. ``h = FNV-1a-64(utf8(str(seed) + "|" + key))`` with offset basis
   ``0xcbf29ce484222325`` and prime ``0x100000001b3``.
2. SplitMix64 seeded with ``h``::

       state += 0x9e3779b97f4a7c15
       z = state
       z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9
       z = (z ^ (z >> 27)) * 0x94d049bb133111eb
       return z ^ (z >> 31)

3. Each component is ``((z >> 11) * 2**-53) * 2 - 1`` (float64, [-1, 1)),
   drawn in index order; the vector is then L2-normalized.

``anchor(seed, key, dim)`` denotes that normalized vector.  Text embeds as a
bag of token anchors: lowercase, strip non-alphanumerics, split on spaces,
sum ``anchor(token)`` with multiplicity, normalize.  A string matching the
spatial grammar ``[From the perspective of <ref>,] <subject> <relation>
<ref>[.]`` instead embeds as ``normalize(anchor("subj|<subject>") +
anchor("rel|<relation>") + anchor("ref|<ref>"))`` so the subject and
reference roles stay order-sensitive.

Synthetic scenes name camera images ``synthv1:<json>`` where ``<json>`` is a
list of ``[x0, y0, x1, y1, text]`` entries (milli-pixel integer rects).  An
image request embeds the entry whose rect best overlaps the requested one
(IoU > 0.3): ``normalize(embed_text(text) + noise * n)`` where ``n`` is the
unnormalized keyed stream for ``"noise|" + text`` (components in [-1, 1), so
the perturbation norm grows with the square root of the dimension and small
noise levels already disturb classification margins).  Unmatched requests
embed ``anchor("background")``.  Point requests return the zero vector: in
synthetic mode semantic signal flows through the image legs only, keeping
in-process and over-the-wire runs bit-identical.
"""

from __future__ import annotations

import json
import math
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from .errors import ProviderError

_MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_SM_GAMMA = 0x9E3779B97F4A7C15
_SM_MIX1 = 0xBF58476D1CE4E5B9
_SM_MIX2 = 0x94D049BB133111EB
_TO_UNIT = 2.0**-53

SYNTH_IMAGE_PREFIX = "synthv1:"
RELATION_PHRASES = ("in front of", "behind", "on the left of", "on the right of")
_PSP_TOKENS = ("from", "the", "perspective", "of")
_NON_ALNUM = re.compile(r"[^a-z0-9]+")


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


class SplitMix64:
    """Tiny 64-bit generator with exactly reproducible cross-language output."""

    def __init__(self, state: int):
        self.state = state & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _SM_GAMMA) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _SM_MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _SM_MIX2) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def next_unit(self) -> float:
        """float64 in [-1, 1) from the top 53 bits."""
        return ((self.next_u64() >> 11) * _TO_UNIT) * 2.0 - 1.0


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Unit-norm copy; the zero vector is returned unchanged.

    The squared norm accumulates left to right (not via BLAS) so other
    implementations of the vector spec reproduce results bit for bit.
    """
    out = np.asarray(v, dtype=np.float64)
    s = 0.0
    for x in out.tolist():
        s += x * x
    n = math.sqrt(s)
    if n == 0.0:
        return out.copy()
    return out / n


def raw_components(seed: int, key: str, dim: int) -> np.ndarray:
    """Unnormalized keyed stream: components in [-1, 1)."""
    sm = SplitMix64(fnv1a64(f"{seed}|{key}".encode("utf-8")))
    comps = np.empty(dim, dtype=np.float64)
    for i in range(dim):
        comps[i] = sm.next_unit()
    return comps


def anchor(seed: int, key: str, dim: int) -> np.ndarray:
    """Normalized deterministic vector for (seed, key)."""
    return l2_normalize(raw_components(seed, key, dim))


def canonical_tokens(text: str) -> list[str]:
    return [t for t in _NON_ALNUM.sub(" ", text.lower()).split(" ") if t]


def _find_relation(tokens: list[str]) -> tuple[int, tuple[str, ...]] | None:
    """Leftmost occurrence of a relation phrase as a token subsequence."""
    best: tuple[int, tuple[str, ...]] | None = None
    for phrase in RELATION_PHRASES:
        ptoks = tuple(phrase.split(" "))
        n = len(ptoks)
        for i in range(0, len(tokens) - n + 1):
            if tuple(tokens[i : i + n]) == ptoks:
                if best is None or i < best[0]:
                    best = (i, ptoks)
                break
    return best


def parse_spatial_text(text: str) -> tuple[str, str, str] | None:
    """Split a rendered pair prompt into (subject, relation, reference).

    Returns None for text that does not follow the spatial grammar.  The
    optional perspective prefix "from the perspective of <ref>" is stripped
    from the subject side when present.
    """
    tokens = canonical_tokens(text)
    hit = _find_relation(tokens)
    if hit is None:
        return None
    pos, ptoks = hit
    head = tokens[:pos]
    ref = tokens[pos + len(ptoks) :]
    if not head or not ref:
        return None
    prefix = list(_PSP_TOKENS) + ref
    if len(head) > len(prefix) and head[: len(prefix)] == prefix:
        head = head[len(prefix) :]
    if not head:
        return None
    return (" ".join(head), " ".join(ptoks), " ".join(ref))


# ---------------------------------------------------------------------------
# Provider contract


@dataclass(frozen=True)
class ProviderCapabilities:
    text: bool = True
    image: bool = True
    points: bool = True


class EmbeddingProvider(ABC):
    """Deterministic embedding source over text, image crops, and points.

    Implementations must be safe to call concurrently and must either be
    deterministic (same input, same output) or set ``deterministic`` False,
    which disables response caching.
    """

    dimension: int
    capabilities: ProviderCapabilities = ProviderCapabilities()
    deterministic: bool = True

    @abstractmethod
    def embed_text(self, texts: list[str]) -> np.ndarray:
        """(N, dim) array, one normalized row per input string."""

    @abstractmethod
    def embed_image(self, image_id: str, rect: tuple[float, float, float, float], hflip: bool = False) -> np.ndarray:
        """(dim,) embedding of the rect crop of the referenced image."""

    @abstractmethod
    def embed_points(self, points: np.ndarray) -> np.ndarray:
        """(dim,) embedding of a point set."""


# ---------------------------------------------------------------------------
# Synthetic provider


def _rect_iou(a, b) -> float:
    ix0, iy0 = max(a[0], b[0]), max(a[1], b[1])
    ix1, iy1 = min(a[2], b[2]), min(a[3], b[3])
    iw, ih = ix1 - ix0, iy1 - iy0
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0.0 else 0.0


def encode_synth_image_id(entries: list[tuple[tuple[float, float, float, float], str]]) -> str:
    """Serialize (rect, text) entries into a synthetic image reference.

    Rect coordinates are stored as milli-pixel integers so both sides of the
    wire reconstruct identical floats.
    """
    payload = [
        [
            int(math.floor(r[0] * 1000.0 + 0.5)),
            int(math.floor(r[1] * 1000.0 + 0.5)),
            int(math.floor(r[2] * 1000.0 + 0.5)),
            int(math.floor(r[3] * 1000.0 + 0.5)),
            text,
        ]
        for r, text in entries
    ]
    return SYNTH_IMAGE_PREFIX + json.dumps(payload, separators=(",", ":"))


def decode_synth_image_id(image_id: str) -> list[tuple[tuple[float, float, float, float], str]]:
    if not image_id.startswith(SYNTH_IMAGE_PREFIX):
        return []
    raw = json.loads(image_id[len(SYNTH_IMAGE_PREFIX) :])
    return [
        ((e[0] / 1000.0, e[1] / 1000.0, e[2] / 1000.0, e[3] / 1000.0), str(e[4]))
        for e in raw
    ]


class SyntheticProvider(EmbeddingProvider):
    """Oracle provider realizing the deterministic vector spec above.

    ``noise`` tilts every visual embedding along a fixed per-entry direction
    (``anchor("noise|" + text)``); zero noise reproduces the text anchors
    exactly, which makes end-to-end classification results predictable.
    """

    def __init__(self, seed: int, dim: int = 256, noise: float = 0.0):
        if dim <= 0:
            raise ProviderError(f"dimension must be positive, got {dim}")
        if noise < 0:
            raise ProviderError(f"noise must be non-negative, got {noise}")
        self.seed = int(seed)
        self.dimension = int(dim)
        self.noise = float(noise)
        self._anchors: dict[str, np.ndarray] = {}
        self._entries: dict[str, list] = {}

    # -- keyed anchors -------------------------------------------------------

    def _anchor(self, key: str) -> np.ndarray:
        vec = self._anchors.get(key)
        if vec is None:
            vec = anchor(self.seed, key, self.dimension)
            self._anchors[key] = vec
        return vec

    def text_vector(self, text: str) -> np.ndarray:
        spatial = parse_spatial_text(text)
        if spatial is not None:
            subj, rel, ref = spatial
            total = (
                self._anchor(f"subj|{subj}")
                + self._anchor(f"rel|{rel}")
                + self._anchor(f"ref|{ref}")
            )
            return l2_normalize(total)
        tokens = canonical_tokens(text)
        if not tokens:
            return self._anchor("")
        if len(tokens) == 1:
            return self._anchor(tokens[0])  # already unit norm, bit-exact
        total = self._anchor(tokens[0]).copy()
        for tok in tokens[1:]:
            total += self._anchor(tok)
        return l2_normalize(total)

    # -- contract ------------------------------------------------------------

    def embed_text(self, texts: list[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dimension), dtype=np.float64)
        for i, t in enumerate(texts):
            out[i] = self.text_vector(t)
        return out

    def embed_image(self, image_id, rect, hflip: bool = False) -> np.ndarray:
        entries = self._entries.get(image_id)
        if entries is None:
            entries = decode_synth_image_id(image_id)
            self._entries[image_id] = entries
        best_text = None
        best_iou = 0.3
        for entry_rect, text in entries:
            iou = _rect_iou(rect, entry_rect)
            if iou > best_iou:
                best_iou = iou
                best_text = text
        if best_text is None:
            return self._anchor("background")
        base = self.text_vector(best_text)
        if self.noise == 0.0:
            return base
        key = f"noise|{best_text}"
        tilt = self._anchors.get(key)
        if tilt is None:
            tilt = raw_components(self.seed, key, self.dimension)
            self._anchors[key] = tilt
        return l2_normalize(base + self.noise * tilt)

    def embed_points(self, points: np.ndarray) -> np.ndarray:
        return np.zeros(self.dimension, dtype=np.float64)


# ---------------------------------------------------------------------------
# Remote provider (wire protocol client)


class RemoteProvider(EmbeddingProvider):
    """Client for the HTTP embedding protocol.

    Endpoints: POST /v1/embed/text {"inputs": [...]}; /v1/embed/image
    {"image_id", "rect", "hflip"}; /v1/embed/points {"points": [[x,y,z]...]};
    responses {"dim": D, "vectors": [[...], ...]}.  Non-200 responses carry
    {"error", "retryable"}; retryable failures are retried with backoff.
    """

    def __init__(self, url: str, timeout: float = 10.0, retries: int = 2, session=None):
        import requests

        self.url = url.rstrip("/")
        self.timeout = float(timeout)
        self.retries = int(retries)
        self._session = session or requests.Session()
        self._dim: int | None = None

    @property
    def dimension(self) -> int:  # type: ignore[override]
        if self._dim is None:
            info = self._request("/v1/health", None, method="get")
            self._dim = int(info["dim"])
        return self._dim

    def _request(self, path: str, payload, method: str = "post") -> dict:
        import requests

        last_err: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                if method == "get":
                    resp = self._session.get(self.url + path, timeout=self.timeout)
                else:
                    resp = self._session.post(self.url + path, json=payload, timeout=self.timeout)
            except requests.RequestException as exc:
                last_err = exc
                continue
            if resp.status_code == 200:
                return resp.json()
            try:
                body = resp.json()
            except ValueError:
                body = {"error": resp.text, "retryable": False}
            if not body.get("retryable", False):
                raise ProviderError(str(body.get("error", "provider failure")), retryable=False)
            last_err = ProviderError(str(body.get("error")), retryable=True)
        raise ProviderError(f"provider unreachable after {self.retries + 1} attempts: {last_err}", retryable=True)

    def embed_text(self, texts: list[str]) -> np.ndarray:
        if not texts:
            return np.empty((0, self.dimension), dtype=np.float64)
        body = self._request("/v1/embed/text", {"inputs": list(texts)})
        self._dim = int(body["dim"])
        return np.asarray(body["vectors"], dtype=np.float64)

    def embed_image(self, image_id, rect, hflip: bool = False) -> np.ndarray:
        body = self._request(
            "/v1/embed/image",
            {"image_id": image_id, "rect": [float(v) for v in rect], "hflip": bool(hflip)},
        )
        self._dim = int(body["dim"])
        return np.asarray(body["vectors"][0], dtype=np.float64)

    def embed_points(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        body = self._request("/v1/embed/points", {"points": pts.tolist()})
        self._dim = int(body["dim"])
        return np.asarray(body["vectors"][0], dtype=np.float64)


# ---------------------------------------------------------------------------
# Caching wrapper


class CachingProvider(EmbeddingProvider):
    """Memoizes a deterministic provider keyed by canonical request content."""

    def __init__(self, inner: EmbeddingProvider):
        self.inner = inner
        self._text: dict[str, np.ndarray] = {}
        self._image: dict[tuple, np.ndarray] = {}
        self._points: dict[bytes, np.ndarray] = {}
        self.enabled = inner.deterministic

    @property
    def dimension(self) -> int:  # type: ignore[override]
        return self.inner.dimension

    @property
    def capabilities(self) -> ProviderCapabilities:  # type: ignore[override]
        return self.inner.capabilities

    def embed_text(self, texts: list[str]) -> np.ndarray:
        if not self.enabled:
            return self.inner.embed_text(texts)
        missing = [t for t in texts if t not in self._text]
        if missing:
            fetched = self.inner.embed_text(missing)
            for t, row in zip(missing, fetched):
                self._text[t] = row
        out = np.empty((len(texts), self.dimension), dtype=np.float64)
        for i, t in enumerate(texts):
            out[i] = self._text[t]
        return out

    def embed_image(self, image_id, rect, hflip: bool = False) -> np.ndarray:
        if not self.enabled:
            return self.inner.embed_image(image_id, rect, hflip)
        key = (image_id, tuple(float(v) for v in rect), bool(hflip))
        if key not in self._image:
            self._image[key] = self.inner.embed_image(image_id, rect, hflip)
        return self._image[key]

    def embed_points(self, points: np.ndarray) -> np.ndarray:
        if not self.enabled:
            return self.inner.embed_points(points)
        key = np.asarray(points, dtype=np.float64).tobytes()
        if key not in self._points:
            self._points[key] = self.inner.embed_points(points)
        return self._points[key]
