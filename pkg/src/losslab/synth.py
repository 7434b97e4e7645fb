"""Synthetic identities under a fine-grained condition lattice.

Samples are crossed from identities and four attributes: accessory (A1-A6),
illumination level on a 29-rung lux ladder, facial expression (E1-E3) and
pose (C1-C20).  The feature model is chosen so each attribute perturbs the
cosine geometry in a controlled, monotone way:

  feature = lux_gain * mask_accessory * (R_pose @ (prototype + expr_offset))
            + sigma(lux) * gaussian_noise

Identity prototypes live on the unit hypersphere.  Poses apply fixed
orthogonal rotations whose angle grows with pose extremity (C7 is frontal).
Accessories A2-A6 zero out disjoint coordinate blocks (A1 is bare).  Lux
acts three ways: a global gain drop plus extra noise make dark samples
intrinsically harder; a lux-dependent rotation misaligns samples taken at
different lux levels; and a subset of coordinates carries a lux-dependent
emphasis profile whose phase moves with log-lux, the way directional
lighting shadows different facial regions.  The profile is the learnable
part: an encoder tuned to the coordinates emphasized at its training lux
loses accuracy under any other lux, which is what gives matched train/test
illumination a real advantage.

Every feature vector is a pure function of (identity, condition, draw) and
the universe seed, so datasets regenerate bit-identically and samples can
be materialized lazily.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from .errors import InsufficientSamples, InvalidConfig
from .geometry import normalize_rows

ACCESSORIES = ("A1", "A2", "A3", "A4", "A5", "A6")
EXPRESSIONS = ("E1", "E2", "E3")
POSES = tuple(f"C{i}" for i in range(1, 21))
LUX_LADDER = tuple(float(v) for v in np.geomspace(40.0, 1000.0, 29))

TRAIN_SET_IDS = ("T1", "T2", "T3", "T4")
TEST_SET_IDS = ("Q1", "Q2", "Q3", "Q4")

# Full-scale set sizes that `table2_scaling` is a fraction of.
FULL_SCALE_TRAIN_IMAGES = {"T1": 2_590, "T2": 46_620, "T3": 654_160, "T4": 3_862_800}
FULL_SCALE_TEST_PAIRS = {"Q1": 1_000, "Q2": 100_000, "Q3": 100_000, "Q4": 100_000}

DATASET_FORMAT = "losslab-dataset-v1"
FLOAT_FMT = "%.9g"


def lux_in_range(lo: float, hi: float) -> tuple[float, ...]:
    """Ladder rungs inside [lo, hi] (inclusive, with rounding slack)."""
    return tuple(v for v in LUX_LADDER if lo * (1 - 1e-9) <= v <= hi * (1 + 1e-9))


def _ordered_subset(values, domain, what: str) -> tuple:
    sel = list(values)
    if not sel:
        raise InvalidConfig(f"{what} selection must be nonempty")
    out = []
    if what == "lux":
        for v in sel:
            matches = [d for d in domain if math.isclose(d, float(v), rel_tol=1e-9)]
            if not matches:
                raise InvalidConfig(f"lux value {v!r} is not on the ladder")
            out.append(matches[0])
    else:
        for v in sel:
            if v not in domain:
                raise InvalidConfig(f"{what} value {v!r} not in domain {domain}")
            out.append(v)
    ordered = tuple(d for d in domain if d in out)
    if len(ordered) != len(set(out)):
        raise InvalidConfig(f"duplicate {what} values in {sel!r}")
    return ordered


@dataclass(frozen=True)
class ConditionSpec:
    """Which accessory/lux/expression/pose values a dataset may use."""

    accessories: tuple[str, ...]
    lux_levels: tuple[float, ...]
    expressions: tuple[str, ...]
    poses: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "accessories", _ordered_subset(self.accessories, ACCESSORIES, "accessory")
        )
        object.__setattr__(
            self, "lux_levels", _ordered_subset(self.lux_levels, LUX_LADDER, "lux")
        )
        object.__setattr__(
            self, "expressions", _ordered_subset(self.expressions, EXPRESSIONS, "expression")
        )
        object.__setattr__(self, "poses", _ordered_subset(self.poses, POSES, "pose"))

    @classmethod
    def full(cls) -> "ConditionSpec":
        return cls(ACCESSORIES, LUX_LADDER, EXPRESSIONS, POSES)

    @property
    def n_conditions(self) -> int:
        return (
            len(self.accessories)
            * len(self.lux_levels)
            * len(self.expressions)
            * len(self.poses)
        )

    def condition_indices(self) -> np.ndarray:
        """All (a, l, e, p) domain-index tuples of this spec, row-major."""
        a = [ACCESSORIES.index(v) for v in self.accessories]
        l = [LUX_LADDER.index(v) for v in self.lux_levels]
        e = [EXPRESSIONS.index(v) for v in self.expressions]
        p = [POSES.index(v) for v in self.poses]
        return np.array(list(itertools.product(a, l, e, p)), dtype=np.int64)

    def contains(self, other: "ConditionSpec") -> bool:
        return (
            set(other.accessories) <= set(self.accessories)
            and set(other.lux_levels) <= set(self.lux_levels)
            and set(other.expressions) <= set(self.expressions)
            and set(other.poses) <= set(self.poses)
        )


def variance_row_spec(set_id: str) -> ConditionSpec:
    """Condition spec of a variance row; T_i and Q_i share row i."""
    row = set_id[-1]
    if set_id not in TRAIN_SET_IDS + TEST_SET_IDS or row not in "1234":
        raise InvalidConfig(f"unknown set id {set_id!r}")
    if row == "1":
        return ConditionSpec(("A1",), lux_in_range(1000, 1000), ("E1",), POSES[3:10])
    if row == "2":
        return ConditionSpec(ACCESSORIES[:2], lux_in_range(400, 1000), ("E1",), POSES[3:10])
    if row == "3":
        return ConditionSpec(ACCESSORIES[:4], lux_in_range(200, 1000), EXPRESSIONS[:2], POSES[3:13])
    return ConditionSpec.full()


def _pose_angle(pose_index: int, max_angle: float) -> float:
    # C7 (index 6) is frontal; extremity grows toward C20 and, milder, C1.
    return max_angle * abs(pose_index + 1 - 7) / 13.0


class Universe:
    """Lazy, deterministic sample generator (identities x conditions)."""

    NOISE_STREAM = 1

    def __init__(
        self,
        n_train_ids: int,
        n_test_ids: int,
        spec: ConditionSpec | None = None,
        d_in: int = 32,
        seed: int = 0,
        *,
        noise: float = 0.05,
        signal_gain: float = 1.2,
        lux_gain_exponent: float = 0.15,
        low_lux_extra_noise: float = 0.3,
        lux_rotation_max: float = 0.5,
        lux_profile_frac: float = 0.55,
        lux_profile_floor: float = 0.2,
        lux_profile_speed: float = 2.2,
        expression_scale: float = 0.12,
        accessory_mask_size: int = 4,
        pose_max_angle: float = 0.9,
    ):
        spec = spec if spec is not None else ConditionSpec.full()
        if n_train_ids < 2 or n_test_ids < 2:
            raise InvalidConfig("need at least 2 train and 2 test identities")
        if d_in < 2:
            raise InvalidConfig(f"d_in must be >= 2, got {d_in}")
        if seed < 0:
            raise InvalidConfig("seed must be a non-negative integer")
        if noise <= 0:
            raise InvalidConfig("noise must be positive")
        masked = [ACCESSORIES.index(a) for a in spec.accessories if a != "A1"]
        if masked and max(masked) * accessory_mask_size > d_in:
            raise InvalidConfig(
                f"d_in={d_in} too small for accessory masks of size {accessory_mask_size}"
            )

        self.n_train_ids = int(n_train_ids)
        self.n_test_ids = int(n_test_ids)
        self.spec = spec
        self.d_in = int(d_in)
        self.seed = int(seed)
        self.noise = float(noise)
        self.signal_gain = float(signal_gain)
        self.lux_gain_exponent = float(lux_gain_exponent)
        self.low_lux_extra_noise = float(low_lux_extra_noise)
        self.lux_rotation_max = float(lux_rotation_max)
        self.lux_profile_frac = float(lux_profile_frac)
        self.lux_profile_floor = float(lux_profile_floor)
        self.lux_profile_speed = float(lux_profile_speed)
        self.expression_scale = float(expression_scale)
        self.accessory_mask_size = int(accessory_mask_size)
        self.pose_max_angle = float(pose_max_angle)

        n_ids = self.n_train_ids + self.n_test_ids
        self._prototypes = normalize_rows(
            np.random.default_rng((seed, 101)).standard_normal((n_ids, d_in))
        )

        expr_rng = np.random.default_rng((seed, 102))
        self._expr_offsets = np.zeros((len(EXPRESSIONS), d_in))
        for e in range(1, len(EXPRESSIONS)):
            v = expr_rng.standard_normal(d_in)
            self._expr_offsets[e] = expression_scale * v / np.linalg.norm(v)

        self._masks = np.ones((len(ACCESSORIES), d_in))
        perm = np.random.default_rng((seed, 103)).permutation(d_in)
        for a in range(1, len(ACCESSORIES)):
            block = perm[(a - 1) * accessory_mask_size : a * accessory_mask_size]
            self._masks[a, block] = 0.0

        self._pose_transforms = {}
        for pose in spec.poses:
            p = POSES.index(pose)
            gen = np.random.default_rng((seed, 104, p))
            a = gen.standard_normal((d_in, d_in))
            a = 0.5 * (a - a.T)
            a /= np.linalg.norm(a, 2)
            self._pose_transforms[p] = expm(_pose_angle(p, pose_max_angle) * a)

        lux_gen = np.random.default_rng((seed, 105))
        a = lux_gen.standard_normal((d_in, d_in))
        a = 0.5 * (a - a.T)
        a /= np.linalg.norm(a, 2)
        profiled = lux_gen.permutation(d_in)[: int(round(lux_profile_frac * d_in))]
        phases = lux_gen.uniform(0.0, 2.0 * math.pi, d_in)
        self._lux_transforms = {}
        self._lux_gains = {}
        for lux in spec.lux_levels:
            l = LUX_LADDER.index(lux)
            angle = lux_rotation_max * (1.0 - lux / LUX_LADDER[-1])
            self._lux_transforms[l] = expm(angle * a)
            gains = np.full(d_in, signal_gain * (lux / LUX_LADDER[-1]) ** lux_gain_exponent)
            emphasis = 0.5 * (1.0 + np.cos(phases + lux_profile_speed * math.log(LUX_LADDER[-1] / lux)))
            gains[profiled] *= lux_profile_floor + (1.0 - lux_profile_floor) * emphasis[profiled]
            self._lux_gains[l] = gains

    @property
    def n_identities(self) -> int:
        return self.n_train_ids + self.n_test_ids

    @property
    def train_identities(self) -> range:
        return range(self.n_train_ids)

    @property
    def test_identities(self) -> range:
        return range(self.n_train_ids, self.n_identities)

    def config(self) -> dict:
        """Everything needed to rebuild this universe exactly."""
        return {
            "n_train_ids": self.n_train_ids,
            "n_test_ids": self.n_test_ids,
            "d_in": self.d_in,
            "seed": self.seed,
            "noise": self.noise,
            "signal_gain": self.signal_gain,
            "lux_gain_exponent": self.lux_gain_exponent,
            "low_lux_extra_noise": self.low_lux_extra_noise,
            "lux_rotation_max": self.lux_rotation_max,
            "lux_profile_frac": self.lux_profile_frac,
            "lux_profile_floor": self.lux_profile_floor,
            "lux_profile_speed": self.lux_profile_speed,
            "expression_scale": self.expression_scale,
            "accessory_mask_size": self.accessory_mask_size,
            "pose_max_angle": self.pose_max_angle,
            "spec": {
                "accessories": list(self.spec.accessories),
                "lux_levels": list(self.spec.lux_levels),
                "expressions": list(self.spec.expressions),
                "poses": list(self.spec.poses),
            },
        }

    def noise_sigma(self, lux: float) -> float:
        return self.noise * (1.0 + self.low_lux_extra_noise * (1.0 - lux / LUX_LADDER[-1]))

    def _sample_index(self, identity: int, cond: tuple[int, int, int, int], draw: int) -> int:
        a, l, e, p = cond
        idx = identity
        for value, size in (
            (a, len(ACCESSORIES)),
            (l, len(LUX_LADDER)),
            (e, len(EXPRESSIONS)),
            (p, len(POSES)),
            (draw, 64),
        ):
            idx = idx * size + value
        return idx

    def feature(self, identity: int, cond: tuple[int, int, int, int], draw: int = 0) -> np.ndarray:
        """Feature vector of one sample; pure in (identity, cond, draw, seed)."""
        a, l, e, p = (int(v) for v in cond)
        if not (0 <= identity < self.n_identities):
            raise InvalidConfig(f"identity {identity} out of range")
        if POSES[p] not in self.spec.poses:
            raise InvalidConfig(f"pose {POSES[p]} outside this universe's spec")
        if l not in self._lux_transforms:
            raise InvalidConfig(f"lux level {LUX_LADDER[l]:g} outside this universe's spec")
        lux = LUX_LADDER[l]
        base = self._prototypes[identity] + self._expr_offsets[e]
        vec = self._lux_transforms[l] @ (self._pose_transforms[p] @ base)
        vec = self._lux_gains[l] * vec
        vec = vec * self._masks[a]
        counter = self._sample_index(identity, (a, l, e, p), draw)
        gen = np.random.Generator(
            np.random.Philox(key=self.seed, counter=[0, 0, counter, self.NOISE_STREAM])
        )
        return vec + self.noise_sigma(lux) * gen.standard_normal(self.d_in)

    def features_for(self, keys) -> np.ndarray:
        """Materialize a feature matrix for (identity, (a,l,e,p), draw) keys."""
        out = np.empty((len(keys), self.d_in))
        for i, (identity, cond, draw) in enumerate(keys):
            out[i] = self.feature(identity, cond, draw)
        return out


def generate_dataset(
    n_train_ids: int,
    n_test_ids: int,
    spec: ConditionSpec | None = None,
    d_in: int = 32,
    seed: int = 0,
    **knobs,
) -> Universe:
    """Build the deterministic sample universe (lazy; nothing materialized)."""
    return Universe(n_train_ids, n_test_ids, spec, d_in, seed, **knobs)


@dataclass
class SampleSet:
    """Materialized samples with identity labels and condition indices."""

    features: np.ndarray
    labels: np.ndarray
    conditions: np.ndarray

    @property
    def n(self) -> int:
        return self.features.shape[0]


@dataclass
class PairCollection:
    """Materialized verification pairs."""

    features_a: np.ndarray
    features_b: np.ndarray
    same: np.ndarray

    @property
    def n(self) -> int:
        return self.same.size


@dataclass
class SampleTable:
    features: np.ndarray
    identities: np.ndarray
    conditions: np.ndarray  # n x 4 domain indices
    draws: np.ndarray


@dataclass
class DatasetSplit:
    """The four nested training sets plus the four test pair sets."""

    samples: SampleTable
    train_indices: dict
    test_pairs: dict  # set id -> (n_pairs x 3) [row_a, row_b, same]
    n_train_identities: int
    n_test_identities: int
    seed: int
    table2_scaling: float

    def train_set(self, set_id: str) -> SampleSet:
        idx = self.train_indices[set_id]
        return SampleSet(
            features=self.samples.features[idx],
            labels=self.samples.identities[idx],
            conditions=self.samples.conditions[idx],
        )

    def pair_collection(self, set_id: str) -> PairCollection:
        pairs = self.test_pairs[set_id]
        return PairCollection(
            features_a=self.samples.features[pairs[:, 0]],
            features_b=self.samples.features[pairs[:, 1]],
            same=pairs[:, 2].astype(bool),
        )


class _KeyInterner:
    """Dedupe (identity, condition, draw) keys into table row numbers."""

    def __init__(self):
        self.rows = {}
        self.keys = []

    def row(self, key) -> int:
        r = self.rows.get(key)
        if r is None:
            r = len(self.keys)
            self.rows[key] = r
            self.keys.append(key)
        return r


def _sample_train_rows(rng, universe, spec, budget):
    cond = spec.condition_indices()
    space = universe.n_train_ids * len(cond)
    budget = min(budget, space)
    flat = np.sort(rng.choice(space, size=budget, replace=False))
    identities = flat // len(cond)
    conds = cond[flat % len(cond)]
    return identities, conds


def _sample_pairs(rng, identities, cond, n_pos, n_neg):
    """Unique positive and negative pairs over identities x conditions."""
    n_cond = len(cond)
    n_ids = len(identities)
    pos_avail = n_ids * (n_cond * (n_cond - 1)) // 2
    neg_avail = (n_ids * (n_ids - 1)) // 2 * n_cond * n_cond
    if n_pos > pos_avail:
        raise InsufficientSamples(f"{n_pos} positive pairs requested, {pos_avail} unique exist")
    if n_neg > neg_avail:
        raise InsufficientSamples(f"{n_neg} negative pairs requested, {neg_avail} unique exist")

    seen = set()
    pairs = []
    while len(pairs) < n_pos:
        identity = identities[rng.integers(n_ids)]
        ca, cb = rng.choice(n_cond, size=2, replace=False)
        ca, cb = (ca, cb) if ca < cb else (cb, ca)
        key = (identity, int(ca), int(cb))
        if key in seen:
            continue
        seen.add(key)
        pairs.append(((identity, tuple(cond[ca]), 0), (identity, tuple(cond[cb]), 0), 1))

    seen = set()
    while len(pairs) < n_pos + n_neg:
        ia, ib = rng.choice(n_ids, size=2, replace=False)
        ida, idb = identities[ia], identities[ib]
        if ida > idb:
            ida, idb = idb, ida
        ca, cb = int(rng.integers(n_cond)), int(rng.integers(n_cond))
        key = (ida, ca, idb, cb)
        if key in seen:
            continue
        seen.add(key)
        pairs.append(((ida, tuple(cond[ca]), 0), (idb, tuple(cond[cb]), 0), 0))
    return pairs


def build_splits(
    universe: Universe,
    table2_scaling: float = 0.01,
    *,
    train_budget_cap: int = 4000,
    train_budget_floor_per_id: int = 4,
) -> DatasetSplit:
    """Draw the nested train sets and the 1:1 verification pair sets.

    Train-set sizes follow the full-scale image counts times the scaling
    fraction, floored at a few samples per identity and capped so the
    high-variance rows stay trainable in CPU-minutes.  Pair counts are the
    full-scale pair counts times the scaling fraction, forced even so the
    positive:negative ratio is exactly 1:1.
    """
    if not (0.0 < table2_scaling <= 1.0):
        raise InvalidConfig(f"table2_scaling must lie in (0, 1], got {table2_scaling}")
    if not universe.spec.contains(variance_row_spec("T4")):
        raise InvalidConfig("universe spec must cover the full T4/Q4 condition lattice")

    rng = np.random.default_rng((universe.seed, 201))
    interner = _KeyInterner()

    train_indices = {}
    for tid in TRAIN_SET_IDS:
        spec = variance_row_spec(tid)
        budget = max(
            train_budget_floor_per_id * universe.n_train_ids,
            int(round(table2_scaling * FULL_SCALE_TRAIN_IMAGES[tid])),
        )
        budget = min(budget, train_budget_cap)
        identities, conds = _sample_train_rows(rng, universe, spec, budget)
        train_indices[tid] = np.array(
            [interner.row((int(i), tuple(c), 0)) for i, c in zip(identities, conds)],
            dtype=np.int64,
        )

    test_ids = np.array(universe.test_identities, dtype=np.int64)
    test_pairs = {}
    for qid in TEST_SET_IDS:
        spec = variance_row_spec(qid)
        count = 2 * max(1, int(round(table2_scaling * FULL_SCALE_TEST_PAIRS[qid] / 2)))
        n_pos = count // 2
        pairs = _sample_pairs(rng, test_ids, spec.condition_indices(), n_pos, count - n_pos)
        test_pairs[qid] = np.array(
            [(interner.row(a), interner.row(b), flag) for a, b, flag in pairs],
            dtype=np.int64,
        )

    features = universe.features_for(interner.keys)
    table = SampleTable(
        features=features,
        identities=np.array([k[0] for k in interner.keys], dtype=np.int64),
        conditions=np.array([k[1] for k in interner.keys], dtype=np.int64),
        draws=np.array([k[2] for k in interner.keys], dtype=np.int64),
    )
    return DatasetSplit(
        samples=table,
        train_indices=train_indices,
        test_pairs=test_pairs,
        n_train_identities=universe.n_train_ids,
        n_test_identities=universe.n_test_ids,
        seed=universe.seed,
        table2_scaling=table2_scaling,
    )


ATTRIBUTES = ("accessory", "lux", "expression")


@dataclass
class SingleConditionGrid:
    """Per-value training sets and attribute-converted test pair sets."""

    attribute: str
    values: list
    train_sets: list
    test_pairs: list


def _default_attribute_values(universe: Universe, attribute: str):
    if attribute == "accessory":
        return list(universe.spec.accessories)
    if attribute == "expression":
        return list(universe.spec.expressions)
    levels = universe.spec.lux_levels
    if len(levels) <= 5:
        return list(levels)
    picks = np.linspace(0, len(levels) - 1, 5).round().astype(int)
    return [levels[i] for i in picks]


def single_condition_grid(
    universe: Universe,
    attribute: str,
    base: dict | None = None,
    *,
    values=None,
    pair_budget: int = 500,
    train_budget: int = 1500,
) -> SingleConditionGrid:
    """Vary one attribute at a time, everything else held at a base point.

    For every attribute value there is a training set (train identities,
    attribute fixed to that value, poses free) and a test pair set: one
    base pool of pairs over the test identities whose varied attribute is
    converted to the value, so cells differ only in the attribute.
    """
    if attribute not in ATTRIBUTES:
        raise InvalidConfig(f"attribute must be one of {ATTRIBUTES}, got {attribute!r}")
    base = dict(base or {})
    base.setdefault("accessory", "A1")
    base.setdefault("lux", LUX_LADDER[-1])
    base.setdefault("expression", "E1")
    base.setdefault("poses", universe.spec.poses)

    values = list(values) if values is not None else _default_attribute_values(universe, attribute)
    if not values:
        raise InvalidConfig("need at least one attribute value")

    def spec_for(value) -> ConditionSpec:
        parts = {
            "accessories": (base["accessory"],),
            "lux_levels": (base["lux"],),
            "expressions": (base["expression"],),
            "poses": tuple(base["poses"]),
        }
        key = {"accessory": "accessories", "lux": "lux_levels", "expression": "expressions"}
        parts[key[attribute]] = (value,)
        spec = ConditionSpec(**parts)
        if not universe.spec.contains(spec):
            raise InvalidConfig(f"value {value!r} not available in this universe")
        return spec

    attr_tag = ATTRIBUTES.index(attribute)
    rng = np.random.default_rng((universe.seed, 202, attr_tag))

    train_sets = []
    for value in values:
        spec = spec_for(value)
        identities, conds = _sample_train_rows(
            rng, universe, spec, min(train_budget, universe.n_train_ids * spec.n_conditions)
        )
        keys = [(int(i), tuple(c), 0) for i, c in zip(identities, conds)]
        train_sets.append(
            SampleSet(
                features=universe.features_for(keys),
                labels=identities.astype(np.int64),
                conditions=conds,
            )
        )

    # One base pair pool; each test set converts the varied attribute only.
    test_ids = np.array(universe.test_identities, dtype=np.int64)
    base_spec = spec_for(values[0])
    n_pos = pair_budget // 2
    base_pairs = _sample_pairs(
        rng, test_ids, base_spec.condition_indices(), n_pos, pair_budget - n_pos
    )

    attr_pos = {"accessory": 0, "lux": 1, "expression": 2}[attribute]
    domains = (ACCESSORIES, LUX_LADDER, EXPRESSIONS)

    def convert(cond: tuple, value) -> tuple:
        c = list(cond)
        c[attr_pos] = domains[attr_pos].index(value)
        return tuple(c)

    test_pairs = []
    for value in values:
        keys_a = [(ida, convert(ca, value), d) for (ida, ca, d), _, _ in base_pairs]
        keys_b = [(idb, convert(cb, value), d) for _, (idb, cb, d), _ in base_pairs]
        test_pairs.append(
            PairCollection(
                features_a=universe.features_for(keys_a),
                features_b=universe.features_for(keys_b),
                same=np.array([flag for _, _, flag in base_pairs], dtype=bool),
            )
        )

    return SingleConditionGrid(
        attribute=attribute, values=values, train_sets=train_sets, test_pairs=test_pairs
    )


# ---------------------------------------------------------------------------
# Persistence: meta.json, samples.csv, pairs_Q*.csv plus two index files.
# ---------------------------------------------------------------------------


def write_dataset(split: DatasetSplit, universe: Universe, out_dir) -> Path:
    """Persist a split as CSV/JSON (UTF-8, LF, 9 significant digits)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    meta = {
        "format": DATASET_FORMAT,
        "universe": universe.config(),
        "table2_scaling": split.table2_scaling,
        "n_samples": int(split.samples.features.shape[0]),
        "train_counts": {k: int(v.size) for k, v in split.train_indices.items()},
        "pair_counts": {k: int(v.shape[0]) for k, v in split.test_pairs.items()},
    }
    (out / "meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n"
    )

    d = universe.d_in
    with open(out / "samples.csv", "w", encoding="utf-8", newline="\n") as fh:
        header = ["id", "accessory", "lux", "expression", "pose"]
        header += [f"f{j:03d}" for j in range(d)]
        fh.write(",".join(header) + "\n")
        for i in range(split.samples.features.shape[0]):
            a, l, e, p = split.samples.conditions[i]
            row = [
                str(int(split.samples.identities[i])),
                ACCESSORIES[a],
                FLOAT_FMT % LUX_LADDER[l],
                EXPRESSIONS[e],
                POSES[p],
            ]
            row += [FLOAT_FMT % v for v in split.samples.features[i]]
            fh.write(",".join(row) + "\n")

    for qid, pairs in split.test_pairs.items():
        with open(out / f"pairs_{qid}.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("idx_a,idx_b,same_flag\n")
            for ia, ib, flag in pairs:
                fh.write(f"{ia},{ib},{flag}\n")

    with open(out / "train_sets.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("set_id,sample_index\n")
        for tid in TRAIN_SET_IDS:
            for idx in split.train_indices[tid]:
                fh.write(f"{tid},{idx}\n")

    with open(out / "identities.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("identity,split\n")
        for i in universe.train_identities:
            fh.write(f"{i},train\n")
        for i in universe.test_identities:
            fh.write(f"{i},test\n")

    return out


def universe_from_meta(meta: dict) -> Universe:
    cfg = dict(meta["universe"])
    spec_cfg = cfg.pop("spec")
    spec = ConditionSpec(
        accessories=tuple(spec_cfg["accessories"]),
        lux_levels=tuple(spec_cfg["lux_levels"]),
        expressions=tuple(spec_cfg["expressions"]),
        poses=tuple(spec_cfg["poses"]),
    )
    return Universe(
        cfg.pop("n_train_ids"), cfg.pop("n_test_ids"), spec,
        cfg.pop("d_in"), cfg.pop("seed"), **cfg,
    )


def read_dataset(dataset_dir) -> tuple[DatasetSplit, dict]:
    """Load a persisted split; features keep their written 9-digit values."""
    root = Path(dataset_dir)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no dataset at {root} (missing meta.json)")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("format") != DATASET_FORMAT:
        raise InvalidConfig(f"unsupported dataset format {meta.get('format')!r}")

    identities, conditions, feats, draws = [], [], [], []
    with open(root / "samples.csv", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            identities.append(int(row[0]))
            lux = float(row[2])
            l_idx = int(np.argmin([abs(v - lux) for v in LUX_LADDER]))
            conditions.append(
                (
                    ACCESSORIES.index(row[1]),
                    l_idx,
                    EXPRESSIONS.index(row[3]),
                    POSES.index(row[4]),
                )
            )
            feats.append([float(v) for v in row[5:]])
            draws.append(0)

    table = SampleTable(
        features=np.array(feats, dtype=np.float64),
        identities=np.array(identities, dtype=np.int64),
        conditions=np.array(conditions, dtype=np.int64),
        draws=np.array(draws, dtype=np.int64),
    )

    train_indices = {tid: [] for tid in TRAIN_SET_IDS}
    with open(root / "train_sets.csv", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for set_id, idx in reader:
            train_indices[set_id].append(int(idx))
    train_indices = {k: np.array(v, dtype=np.int64) for k, v in train_indices.items()}

    test_pairs = {}
    for qid in TEST_SET_IDS:
        rows = []
        with open(root / f"pairs_{qid}.csv", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for ia, ib, flag in reader:
                rows.append((int(ia), int(ib), int(flag)))
        test_pairs[qid] = np.array(rows, dtype=np.int64)

    split = DatasetSplit(
        samples=table,
        train_indices=train_indices,
        test_pairs=test_pairs,
        n_train_identities=meta["universe"]["n_train_ids"],
        n_test_identities=meta["universe"]["n_test_ids"],
        seed=meta["universe"]["seed"],
        table2_scaling=meta["table2_scaling"],
    )
    return split, meta
