"""Contextual-bandit environments and their data ingestion."""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import InvalidInputError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

N_GENRES = 20
N_AUDIO_FEATURES = 10
N_TRACKS = 50


class FormatError(ValueError):
    """Malformed input file; the message names the field and byte offset."""


# ---------------------------------------------------------------------------
# IDX files


@dataclass
class LabeledImageSet:
    images: np.ndarray  # (n, rows*cols), entries in [0, 1]
    labels: np.ndarray  # (n,), ints
    shape: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise FormatError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "LabeledImageSet":
        return LabeledImageSet(self.images[idx], self.labels[idx], self.shape)


def _read_u32(buf, offset, field):
    if len(buf) < offset + 4:
        raise FormatError(f"truncated stream reading {field} at byte offset {offset}")
    return struct.unpack_from(">I", buf, offset)[0]


def _parse_idx(buf: bytes, magic: int, kind: str):
    got = _read_u32(buf, 0, f"{kind} magic")
    if got != magic:
        raise FormatError(
            f"{kind} magic at byte offset 0 is 0x{got:08x}, expected 0x{magic:08x}"
        )
    count = _read_u32(buf, 4, f"{kind} count")
    dims = [count]
    if kind == "image":
        dims.append(_read_u32(buf, 8, "image rows"))
        dims.append(_read_u32(buf, 12, "image cols"))
    header = 4 * (len(dims) + 1)
    need = int(np.prod(dims))
    if len(buf) - header < need:
        raise FormatError(
            f"truncated {kind} data: need {need} bytes from byte offset {header}, "
            f"have {len(buf) - header}"
        )
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=header)
    return data.reshape(dims)


def load_idx(image_bytes: bytes, label_bytes: bytes) -> LabeledImageSet:
    """Parse an IDX image/label pair into flattened images scaled to [0, 1]."""
    images = _parse_idx(bytes(image_bytes), IMAGE_MAGIC, "image")
    labels = _parse_idx(bytes(label_bytes), LABEL_MAGIC, "label")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"count mismatch: image count {images.shape[0]} (byte offset 4) vs "
            f"label count {labels.shape[0]} (byte offset 4)"
        )
    n, rows, cols = images.shape
    flat = images.reshape(n, rows * cols).astype(np.float64) / 255.0
    return LabeledImageSet(flat, labels.astype(np.int64), (rows, cols))


def load_idx_files(image_path, label_path) -> LabeledImageSet:
    return load_idx(Path(image_path).read_bytes(), Path(label_path).read_bytes())


def encode_idx(images: np.ndarray, labels: np.ndarray) -> tuple[bytes, bytes]:
    """Inverse of :func:`load_idx` for uint8 images of shape (n, rows, cols)."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    img = struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols) + images.tobytes()
    lab = struct.pack(">II", LABEL_MAGIC, len(labels)) + labels.tobytes()
    return img, lab


def digits_idx() -> tuple[bytes, bytes]:
    """scikit-learn's bundled 8x8 handwritten digits, packed as IDX bytes.

    This is the offline stand-in for MNIST: same ten labels, same [0, 1]
    pixel range after loading, no download.
    """
    from sklearn.datasets import load_digits

    d = load_digits()
    pix = np.rint(d.images * (255.0 / 16.0)).astype(np.uint8)
    return encode_idx(pix, d.target)


def load_digits_set() -> LabeledImageSet:
    return load_idx(*digits_idx())


# ---------------------------------------------------------------------------
# feature CSV


def read_feature_csv(source) -> tuple[list[str], np.ndarray]:
    """Read ``name,f1,...,f10`` rows; returns (names, matrix)."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    expected = ["name"] + [f"f{i}" for i in range(1, N_AUDIO_FEATURES + 1)]
    if header is None or [h.strip() for h in header] != expected:
        raise FormatError(f"feature CSV header must be {','.join(expected)}, got {header}")
    names, rows = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(expected):
            raise FormatError(f"line {lineno}: expected {len(expected)} fields, got {len(row)}")
        try:
            vals = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
        if any(not 0.0 <= v <= 1.0 for v in vals):
            raise FormatError(f"line {lineno}: feature values must lie in [0, 1]")
        names.append(row[0])
        rows.append(vals)
    return names, np.array(rows, dtype=np.float64).reshape(-1, N_AUDIO_FEATURES)


def write_feature_csv(path, names, matrix):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["name"] + [f"f{i}" for i in range(1, N_AUDIO_FEATURES + 1)])
        for name, row in zip(names, matrix):
            w.writerow([name] + [repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# environments


@dataclass
class EvalSet:
    states: np.ndarray
    aux: np.ndarray | None = None

    def __len__(self):
        return len(self.states)


def _check_actions(a, K):
    a = np.asarray(a)
    if a.size and (a.min() < 0 or a.max() >= K):
        raise InvalidInputError(f"action outside 0..{K - 1}: {a}")
    return a.astype(np.int64)


class ContextualBandit:
    """Common surface of all environments.

    States come in batches: ``sample_states`` returns the state matrix and a
    per-row ``aux`` array (labels for classification, ``None`` otherwise).
    ``rewards`` is vectorised over rows; ``expected_rewards`` returns the
    full (n, K) table when the reward can be enumerated, else ``None``.
    """

    name = "bandit"
    state_dim: int
    n_actions: int
    reward_values: tuple | None = None
    eval_set: EvalSet

    def sample_states(self, rng, n):
        raise NotImplementedError

    def sample_state(self, rng):
        X, aux = self.sample_states(rng, 1)
        return X[0], None if aux is None else aux[0]

    def rewards(self, X, aux, actions, rng=None) -> np.ndarray:
        raise NotImplementedError

    def reward(self, s, a, aux=None, rng=None) -> float:
        aux_arr = None if aux is None else np.asarray([aux])
        return float(self.rewards(np.asarray(s)[None, :], aux_arr, [a], rng)[0])

    def expected_rewards(self, X, aux):
        return None

    def _build_eval_set(self, rng, n):
        X, aux = self.sample_states(rng, n)
        X.setflags(write=False)
        self.eval_set = EvalSet(X, aux)

    def describe(self) -> dict:
        return {"env": self.name, "state_dim": self.state_dim, "n_actions": self.n_actions}


def classification_reward(label, a, incorrect: float = -1.0 / 9.0, n_classes: int = 10):
    """1 for the correct label, ``incorrect`` otherwise (vectorised)."""
    a = _check_actions(a, n_classes)
    return np.where(a == np.asarray(label), 1.0, incorrect)


class ClassificationBandit(ContextualBandit):
    """Image classification rewritten as a bandit.

    ``reward_mode='signed'`` pays 1 / -1/9 so a uniform policy is worth 0;
    ``'binary'`` pays 1 / 0 as in the linear sample experiment.
    """

    name = "classification"

    def __init__(self, train: LabeledImageSet, evaluation: LabeledImageSet,
                 n_classes: int = 10, reward_mode: str = "signed"):
        if reward_mode not in ("signed", "binary"):
            raise InvalidInputError(f"reward_mode must be signed or binary, got {reward_mode!r}")
        for part in (train, evaluation):
            if len(part) == 0:
                raise InvalidInputError("image sets must be nonempty")
            if part.images.min() < 0 or part.images.max() > 1:
                raise InvalidInputError("pixels must lie in [0, 1]")
        self.train = train
        self.n_actions = n_classes
        self.state_dim = train.images.shape[1]
        self.reward_mode = reward_mode
        self.incorrect = -1.0 / (n_classes - 1) if reward_mode == "signed" else 0.0
        self.reward_values = (1.0, self.incorrect)
        images = evaluation.images.copy()
        images.setflags(write=False)
        self.eval_set = EvalSet(images, evaluation.labels.copy())

    def sample_states(self, rng, n):
        idx = rng.integers(0, len(self.train), size=n)
        return self.train.images[idx], self.train.labels[idx]

    def rewards(self, X, aux, actions, rng=None):
        return classification_reward(aux, actions, self.incorrect, self.n_actions)

    def expected_rewards(self, X, aux):
        table = np.full((len(aux), self.n_actions), self.incorrect)
        table[np.arange(len(aux)), aux] = 1.0
        return table

    def describe(self):
        return {**super().describe(), "reward_mode": self.reward_mode,
                "train_size": len(self.train), "eval_size": len(self.eval_set)}


@dataclass
class GenreModel:
    genre_features: np.ndarray  # (G, F) raw, in [0, 1]
    track_features: np.ndarray  # (K, F) raw, in [0, 1]
    epsilon: float = 0.1

    def __post_init__(self):
        for m in (self.genre_features, self.track_features):
            if m.min() < 0 or m.max() > 1:
                raise InvalidInputError("raw audio features must lie in [0, 1]")
        self.genre_norm = self.genre_features - self.genre_features.mean(axis=0)
        self.track_norm = self.track_features - self.track_features.mean(axis=0)
        # s-independent part of p(s, a): (G, K)
        self.affinity = self.genre_norm @ self.track_norm.T

    @classmethod
    def random(cls, rng, n_genres=N_GENRES, n_tracks=N_TRACKS, epsilon=0.1):
        return cls(rng.uniform(size=(n_genres, N_AUDIO_FEATURES)),
                   rng.uniform(size=(n_tracks, N_AUDIO_FEATURES)), epsilon)

    def preference(self, X) -> np.ndarray:
        """p(s, a) for every row of X and every track, shape (n, K)."""
        return np.atleast_2d(X) @ self.affinity


def genre_sample_state(rng, n_genres: int = N_GENRES, max_liked: int = 5) -> np.ndarray:
    """Binary preference vector with 1..max_liked genres switched on."""
    s = np.zeros(n_genres)
    n = rng.integers(1, max_liked + 1)
    s[rng.choice(n_genres, size=n, replace=False)] = 1.0
    return s


def _bucket(p, eps):
    return np.where(p > eps, 1.0, np.where(p < -eps, -1.0, 0.0))


def genre_reward(model: GenreModel, s, a) -> float:
    a = int(_check_actions([a], model.track_features.shape[0])[0])
    p = float(np.asarray(s, dtype=np.float64) @ model.genre_norm @ model.track_norm[a])
    return float(_bucket(p, model.epsilon))


class GenreBandit(ContextualBandit):
    name = "genre"
    reward_values = (-1.0, 0.0, 1.0)

    def __init__(self, model: GenreModel, eval_size: int, rng):
        self.model = model
        self.state_dim = model.genre_features.shape[0]
        self.n_actions = model.track_features.shape[0]
        self._build_eval_set(rng, eval_size)

    def sample_states(self, rng, n):
        return np.stack([genre_sample_state(rng, self.state_dim) for _ in range(n)]), None

    def rewards(self, X, aux, actions, rng=None):
        actions = _check_actions(actions, self.n_actions)
        p = self.model.preference(X)[np.arange(len(actions)), actions]
        return _bucket(p, self.model.epsilon)

    def expected_rewards(self, X, aux):
        return _bucket(self.model.preference(X), self.model.epsilon)

    def describe(self):
        return {**super().describe(), "epsilon": self.model.epsilon}


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class ClickModel:
    """Logistic click model with a per-user reordering of the catalogue.

    A user s sees product a as catalogue item ``order(s)[a]`` where
    ``order(s) = argsort(ranking @ s)``; the click probability is
    ``sigmoid(temperature * <s, q>)`` for that item's embedding q.
    """

    product_embeddings: np.ndarray  # (K, d)
    ranking: np.ndarray  # (K, d)
    temperature: float = 2.0

    def __post_init__(self):
        if not self.temperature >= 0:
            raise InvalidInputError("temperature must be nonnegative")
        if not np.all(np.isfinite(self.product_embeddings)):
            raise InvalidInputError("product embeddings must be finite")

    @classmethod
    def random(cls, rng, n_products=50, dim=50, temperature=2.0):
        q = rng.normal(size=(n_products, dim)) / np.sqrt(dim)
        ranking = rng.normal(size=(n_products, dim))
        return cls(q, ranking, temperature)

    def catalogue_index(self, X, actions):
        X = np.atleast_2d(X)
        order = np.argsort(X @ self.ranking.T, axis=1, kind="stable")
        return order[np.arange(len(X)), actions]

    def logits(self, X, actions):
        X = np.atleast_2d(X)
        items = self.catalogue_index(X, actions)
        return self.temperature * np.einsum("nd,nd->n", X, self.product_embeddings[items])

    def click_probability(self, X, actions):
        return sigmoid(self.logits(X, actions))


def click_reward(model: ClickModel, s, a, rng) -> float:
    a = _check_actions([a], model.product_embeddings.shape[0])
    p = model.click_probability(np.asarray(s)[None, :], a)[0]
    return float(rng.random() < p)


class ClickBandit(ContextualBandit):
    name = "click"
    reward_values = (0.0, 1.0)

    def __init__(self, model: ClickModel, eval_size: int, rng):
        self.model = model
        self.n_actions, self.state_dim = model.product_embeddings.shape
        self._build_eval_set(rng, eval_size)

    def sample_states(self, rng, n):
        return rng.normal(size=(n, self.state_dim)), None

    def rewards(self, X, aux, actions, rng=None):
        if rng is None:
            raise InvalidInputError("click rewards need the reward stream")
        actions = _check_actions(actions, self.n_actions)
        p = self.model.click_probability(X, actions)
        return (rng.random(len(p)) < p).astype(np.float64)

    def describe(self):
        return {**super().describe(), "temperature": self.model.temperature}


@dataclass
class PreferenceModel:
    action_prototypes: np.ndarray  # (K, d)
    noise_scale: float = 0.0

    def __post_init__(self):
        if not self.noise_scale >= 0:
            raise InvalidInputError("noise_scale must be nonnegative")
        norms = np.linalg.norm(self.action_prototypes, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise InvalidInputError("prototypes must be nonzero")
        self.unit_prototypes = self.action_prototypes / norms

    @classmethod
    def random(cls, rng, n_actions=100, dim=100, noise_scale=0.0):
        return cls(rng.normal(size=(n_actions, dim)), noise_scale)

    def similarity(self, X) -> np.ndarray:
        """Cosine similarity of every row of X with every prototype, (n, K)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return (X / norms) @ self.unit_prototypes.T

    def best_action(self, X) -> np.ndarray:
        return np.argmax(self.similarity(X), axis=1)


def preference_reward(model: PreferenceModel, s, a, rng=None) -> float:
    a = int(_check_actions([a], model.action_prototypes.shape[0])[0])
    s = np.asarray(s, dtype=np.float64)
    proto = model.action_prototypes[a]
    ns = np.linalg.norm(s)
    r = 0.0 if ns == 0 else float(s @ proto / (ns * np.linalg.norm(proto)))
    if model.noise_scale > 0:
        if rng is None:
            raise InvalidInputError("noisy preference rewards need the reward stream")
        r += model.noise_scale * rng.normal()
    return r


class PreferenceBandit(ContextualBandit):
    name = "preference"

    def __init__(self, model: PreferenceModel, eval_size: int, rng):
        self.model = model
        self.n_actions, self.state_dim = model.action_prototypes.shape
        self._build_eval_set(rng, eval_size)

    def sample_states(self, rng, n):
        return rng.normal(size=(n, self.state_dim)), None

    def rewards(self, X, aux, actions, rng=None):
        actions = _check_actions(actions, self.n_actions)
        r = self.model.similarity(X)[np.arange(len(actions)), actions]
        if self.model.noise_scale > 0:
            if rng is None:
                raise InvalidInputError("noisy preference rewards need the reward stream")
            r = r + self.model.noise_scale * rng.normal(size=len(r))
        return r

    def expected_rewards(self, X, aux):
        if self.model.noise_scale > 0:
            return None
        return self.model.similarity(X)

    def best_action(self, X):
        return self.model.best_action(X)

    def describe(self):
        return {**super().describe(), "noise_scale": self.model.noise_scale}
