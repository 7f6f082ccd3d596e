"""Synthetic count and intensity matrices with known (or absent) NMF structure.

Desk-scale stand-ins for the microbiome-derived scenarios: features come
from a sparse gamma generator, sequencing depths from a log-normal surrogate.
"""

import configparser
import dataclasses
import enum
import hashlib
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._seeding import STREAM_FEATURES, STREAM_REPLICATE, derive_seed
from .data import DataMatrix, Family, Method, SelectionConfig, drop_zero_rows
from .exceptions import ConfigError
from .selection import select_rank

# Feature length used as the reference when translating distances to a
# smaller p (features summing to one have norm roughly proportional to p^-1/2).
REFERENCE_P = 2780


class ScenarioFamily(str, enum.Enum):
    POISSON_NMF = "poisson_nmf"
    NORMAL_NMF = "normal_nmf"
    NON_NMF = "non_nmf"


def gen_base_features(p, k, seed, normalize=True, shape=3.0, rate=2.0, density=0.7):
    """Sparse gamma features: Gamma(shape, rate) times Bernoulli(density).

    All-zero rows are dropped, so the result may have fewer than p rows.
    Columns are scaled to sum to one unless ``normalize`` is False.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    rng = np.random.default_rng(seed)

    def draw(size):
        return rng.gamma(shape, 1.0 / rate, size=size) * (rng.random(size) < density)

    F = draw((p, k))
    for j in range(k):
        while not F[:, j].any():
            F[:, j] = draw(p)
    F = F[F.any(axis=1)]
    if normalize:
        F = F / F.sum(axis=0, keepdims=True)
    return F


def _clip_normalize(f):
    f = np.maximum(f, 0.0)
    return f / f.sum()


def unit_ones(p):
    return np.full(p, 1.0 / math.sqrt(p))


def perturb_second_feature(f1, d):
    """Second feature at distance d from f1, on the line towards the unit
    all-equal vector; clipped at zero and renormalized to sum one."""
    f1 = np.asarray(f1, dtype=np.float64)
    direction = unit_ones(f1.size) - f1
    norm = np.linalg.norm(direction)
    if norm < 1e-12:
        raise ConfigError("first feature is proportional to the all-ones vector")
    if d == 0:
        return np.column_stack([f1, f1])
    f2 = f1 + d * direction / norm
    return np.column_stack([f1, _clip_normalize(f2)])


def _plane_basis(F3):
    f1 = F3[:, 0]
    Q, R = np.linalg.qr(np.column_stack([F3[:, 1] - f1, F3[:, 2] - f1]))
    if abs(R[1, 1]) < 1e-12 * max(abs(R[0, 0]), 1e-300):
        raise ConfigError("the three features are not affinely independent")
    return Q


def fourth_feature_direction(F3):
    """Unit vector orthogonal to the plane through the three features, obtained
    by removing the in-plane component of the normalized all-ones vector."""
    F3 = np.asarray(F3, dtype=np.float64)
    Q = _plane_basis(F3)
    u = unit_ones(F3.shape[0])
    u = u - Q @ (Q.T @ u)
    norm = np.linalg.norm(u)
    if norm < 1e-12:
        raise ConfigError("the all-ones vector lies in the plane of the features")
    return u / norm


def perturb_fourth_feature(F3, d, normalize=True):
    """Add a fourth feature whose perpendicular foot on the plane of the other
    three is their centroid, at distance d from that plane."""
    F3 = np.asarray(F3, dtype=np.float64)
    f4 = F3.mean(axis=1) + d * fourth_feature_direction(F3)
    if normalize:
        f4 = _clip_normalize(f4)
    return np.column_stack([F3, f4])


def distance_to_plane(F):
    """Distance of the last column from the affine plane through the first three."""
    F = np.asarray(F, dtype=np.float64)
    Q = _plane_basis(F[:, :3])
    r = F[:, 3] - F[:, 0]
    return float(np.linalg.norm(r - Q @ (Q.T @ r)))


def desk_distance(d, p, reference_p=REFERENCE_P):
    """Translate a separation distance quoted for ``reference_p``-long features
    to features of length ``p`` with comparable relative difficulty."""
    return d * math.sqrt(reference_p / p)


def lognormal_depths(n, seed, mean=5000.0, sdlog=0.3):
    rng = np.random.default_rng(seed)
    return rng.lognormal(math.log(mean), sdlog, size=n)


def gen_weights_poisson(k, n, depths, seed):
    """Uniform(0, 1) weights, each column rescaled to sum to its depth."""
    depths = np.asarray(depths, dtype=np.float64)
    if depths.shape != (n,) or np.any(depths <= 0):
        raise ConfigError("need n positive depths")
    rng = np.random.default_rng(seed)
    W = rng.uniform(0.0, 1.0, size=(k, n))
    return W * (depths / W.sum(axis=0))


def gen_weights_dirichlet(k, n, seed, concentration=1.5, total=10.0):
    rng = np.random.default_rng(seed)
    W = rng.dirichlet(np.full(k, concentration), size=n).T
    # Renormalizing makes k = 1 exactly ``total``.
    return total * (W / W.sum(axis=0))


def gen_poisson_data(T, W, seed):
    rng = np.random.default_rng(seed)
    return DataMatrix(rng.poisson(np.asarray(T) @ np.asarray(W)).astype(np.float64))


def gen_normal_data(T, W, seed, sigma2=1.0):
    """Normal(TW, sigma2) entries with negatives replaced by zero."""
    rng = np.random.default_rng(seed)
    X = rng.normal(np.asarray(T) @ np.asarray(W), math.sqrt(sigma2))
    return DataMatrix(np.maximum(X, 0.0))


def covariance_eigenvalues(p, low=3e-7, high=1.0):
    return np.linspace(low, high, p)


def random_orthogonal(p, rng):
    """Haar-distributed orthogonal matrix from the QR of a Gaussian matrix."""
    Q, R = np.linalg.qr(rng.standard_normal((p, p)))
    return Q * np.sign(np.diag(R))


def gen_non_nmf_data(p, n, depths, seed, loc=4.0, scale=3.0, eig_low=3e-7, eig_high=1.0):
    """Poisson counts whose log-means follow a multivariate normal per sample.

    Each sample's log-mean vector is shifted so that its means sum to that
    sample's depth.
    """
    depths = np.asarray(depths, dtype=np.float64)
    rng = np.random.default_rng(seed)
    mu = rng.normal(loc, scale, size=p)
    eig = covariance_eigenvalues(p, eig_low, eig_high)
    Q = random_orthogonal(p, rng)
    Z = mu[:, None] + Q @ (np.sqrt(eig)[:, None] * rng.standard_normal((p, n)))
    Z -= Z.max(axis=0, keepdims=True)
    means = np.exp(Z)
    means *= depths / means.sum(axis=0)
    return DataMatrix(rng.poisson(means).astype(np.float64))


# --------------------------------------------------------------------------
# Scenarios


@dataclass(frozen=True)
class SimScenario:
    family: ScenarioFamily
    p: int
    n: int
    true_rank: Optional[int] = None
    d: float = 0.0
    depth_mean: float = 5000.0
    depth_sdlog: float = 0.3
    sigma2: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", ScenarioFamily(self.family))
        if self.p < 1 or self.n < 1:
            raise ConfigError("dimensions must be positive")
        if self.d < 0:
            raise ConfigError("d must be >= 0")
        if self.family is not ScenarioFamily.NON_NMF and not self.true_rank:
            raise ConfigError("NMF scenarios need true_rank")

    @property
    def model(self):
        return Family.GAUSSIAN if self.family is ScenarioFamily.NORMAL_NMF else Family.POISSON


def scenario_features(scenario):
    """Feature matrix shared by every replicate of a scenario, plus metadata
    (the realized distance after clipping and renormalization)."""
    s = scenario
    seed = derive_seed(s.seed, STREAM_FEATURES)
    if s.family is ScenarioFamily.NON_NMF:
        return None, {}
    if s.family is ScenarioFamily.NORMAL_NMF:
        return gen_base_features(s.p, s.true_rank, seed, normalize=False), {}
    if s.true_rank == 2:
        f1 = gen_base_features(s.p, 1, seed)[:, 0]
        F = perturb_second_feature(f1, s.d)
        return F, {"realized_distance": float(np.linalg.norm(F[:, 1] - F[:, 0]))}
    if s.true_rank == 4:
        F = perturb_fourth_feature(gen_base_features(s.p, 3, seed), s.d)
        return F, {"realized_distance": distance_to_plane(F)}
    return gen_base_features(s.p, s.true_rank, seed), {}


def generate_replicate(scenario, replicate, features=None):
    """Data for one replicate: weights and noise redrawn, features fixed."""
    s = scenario
    if features is None and s.family is not ScenarioFamily.NON_NMF:
        features, _ = scenario_features(s)
    rseed = derive_seed(s.seed, STREAM_REPLICATE, replicate)
    depth_seed, weight_seed, noise_seed = (derive_seed(rseed, i) for i in range(3))
    if s.family is ScenarioFamily.NORMAL_NMF:
        W = gen_weights_dirichlet(features.shape[1], s.n, weight_seed)
        X = gen_normal_data(features, W, noise_seed, s.sigma2)
    else:
        depths = lognormal_depths(s.n, depth_seed, s.depth_mean, s.depth_sdlog)
        if s.family is ScenarioFamily.NON_NMF:
            X = gen_non_nmf_data(s.p, s.n, depths, noise_seed)
        else:
            W = gen_weights_poisson(features.shape[1], s.n, depths, weight_seed)
            X = gen_poisson_data(features, W, noise_seed)
    return drop_zero_rows(X)


def data_digest(data):
    return hashlib.sha256(np.ascontiguousarray(data.values).tobytes()).hexdigest()


def run_scenario(scenario, methods, replicates, config=None, opts=None, workers=None,
                 on_report=None):
    """Apply every method to the same data in each replicate.

    Returns rows ``{"replicate", "method", "selected_rank", "capped", "digest"}``.
    ``on_report(replicate, data, report)`` is called after each fit, e.g. to
    persist reports.
    """
    config = config or SelectionConfig()
    features = None
    if scenario.family is not ScenarioFamily.NON_NMF:
        features, _ = scenario_features(scenario)
    rows = []
    for r in range(replicates):
        data = generate_replicate(scenario, r, features)
        digest = data_digest(data)
        for method in methods:
            cfg = dataclasses.replace(config, model=scenario.model, method=Method(method),
                                      seed=derive_seed(config.seed, r))
            report = select_rank(data, cfg, opts, workers)
            if on_report is not None:
                on_report(r, data, report)
            rows.append({"replicate": r, "method": Method(method).value,
                         "selected_rank": report.selected_rank,
                         "capped": report.capped, "digest": digest})
    return rows


def summarize(rows, true_rank=None):
    """Per-method correct count, mean and sd of the selected ranks."""
    out = []
    for method in dict.fromkeys(r["method"] for r in rows):
        ranks = np.array([r["selected_rank"] for r in rows if r["method"] == method])
        out.append({
            "method": method,
            "replicates": int(ranks.size),
            "correct": None if true_rank is None else int(np.sum(ranks == true_rank)),
            "mean": float(ranks.mean()),
            "sd": float(ranks.std(ddof=1)) if ranks.size > 1 else 0.0,
        })
    return out


_SCENARIO_KEYS = {f.name for f in dataclasses.fields(SimScenario)}
_SELECTION_KEYS = {"alpha", "B", "m", "k_start", "k_max", "seed"}


def read_scenario_file(path):
    """Parse an INI-style scenario file.

    ``[scenario]`` holds SimScenario fields; an optional ``[selection]``
    section holds alpha, B, m, k_start, k_max and seed. Returns
    ``(SimScenario, SelectionConfig)``.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not read:
        raise ConfigError(f"{path}: cannot read scenario file")
    if not parser.has_section("scenario"):
        raise ConfigError(f"{path}: missing [scenario] section")
    raw = dict(parser["scenario"])
    unknown = set(raw) - _SCENARIO_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown scenario keys {sorted(unknown)}")
    missing = {"family", "p", "n"} - set(raw)
    if missing:
        raise ConfigError(f"{path}: missing scenario keys {sorted(missing)}")
    try:
        kw = {}
        for key, value in raw.items():
            if key == "family":
                kw[key] = ScenarioFamily(value.strip())
            elif key in ("p", "n", "true_rank", "seed"):
                kw[key] = int(value)
            else:
                kw[key] = float(value)
        scenario = SimScenario(**kw)
        sel = dict(parser["selection"]) if parser.has_section("selection") else {}
        unknown = set(sel) - _SELECTION_KEYS
        if unknown:
            raise ConfigError(f"{path}: unknown selection keys {sorted(unknown)}")
        sel_kw = {k: (float(v) if k == "alpha" else int(v)) for k, v in sel.items()}
        config = SelectionConfig(model=scenario.model, **sel_kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return scenario, config
