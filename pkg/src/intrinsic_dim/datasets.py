"""Benchmark manifolds and the two corruption protocols.

All sampling goes through numpy's PCG64 generator. A cloud is a pure function of
(spec, n, seed). The affine datasets also use a fixed per-dataset embedding seed,
so every draw lands on the same subspace.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .geometry import PointCloud

TAU = 2.0 * np.pi


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    n: int
    seed: int = 0
    params: dict = field(default_factory=dict)


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed))


def _affine(d, D, key):
    # fixed injection: orthonormal columns scaled into [0.8, 1.2], plus an offset
    g = np.random.default_rng(key)
    q, _ = np.linalg.qr(g.standard_normal((D, d)))
    A = q * g.uniform(0.8, 1.2, size=d)
    return A, g.uniform(-1, 1, size=D)


def _affine_gen(d, D, key):
    def gen(n, rng):
        A, b = _affine(d, D, key)
        return rng.uniform(size=(n, d)) @ A.T + b
    return gen


def _pair_map(p, copies):
    # each coordinate j is turned into the pair (p_{j+s} cos 2pi p_j, p_{j+s} sin 2pi p_j)
    d = p.shape[1]
    blocks = []
    for s in range(1, copies + 1):
        amp = np.roll(p, -s, axis=1)
        blocks.append(amp * np.cos(TAU * p))
        blocks.append(amp * np.sin(TAU * p))
    return np.concatenate(blocks, axis=1)


def _nonlinear(d, copies, beta=False):
    def gen(n, rng):
        p = rng.beta(0.5, 0.5, size=(n, d)) if beta else rng.uniform(size=(n, d))
        return _pair_map(p, copies)
    return gen


def _m3(n, rng):
    p = rng.uniform(size=(n, 4))
    a, b, c, e = p.T
    return np.column_stack([
        b**2 * np.cos(TAU * a),
        c**2 * np.sin(TAU * a),
        b + c + (b - e) ** 2,
        b - 2 * c + (a - e) ** 2,
        -b - 2 * c + (c - e) ** 2,
        a**2 - b**2 + c**2 - e**2,
    ])


def _helix(n, rng):
    t = TAU * rng.uniform(size=n)
    rad = 2 + np.cos(8 * t)
    return np.column_stack([rad * np.cos(t), rad * np.sin(t), np.sin(8 * t)])


def _helicoid(n, rng):
    r = 10 * np.pi * rng.uniform(size=n)
    p = 10 * np.pi * rng.uniform(size=n)
    return np.column_stack([r * np.cos(p), r * np.sin(p), 0.5 * p])


def _roll(n, rng):
    t = 1.5 * np.pi * (1 + 2 * rng.uniform(size=n))
    h = 21 * rng.uniform(size=n)
    return np.column_stack([t * np.cos(t), h, t * np.sin(t)])


def _cube_boundary(d):
    # boundary of [0,1]^(d+1): all 2(d+1) faces have equal area, so pick one uniformly per point
    def gen(n, rng):
        D = d + 1
        X = rng.uniform(size=(n, D))
        face = rng.integers(0, 2 * D, size=n)
        X[np.arange(n), face // 2] = (face % 2).astype(float)
        return X
    return gen


def _moebius(n, rng):
    phi = TAU * rng.uniform(size=n)
    rad = rng.uniform(-1, 1, size=n)
    w = 1 + 0.5 * rad * np.cos(5 * phi)
    return np.column_stack([w * np.cos(phi), w * np.sin(phi), 0.5 * rad * np.sin(5 * phi)])


def _norm(n, rng):
    return rng.standard_normal((n, 20))


def _scurve(n, rng):
    t = 3 * np.pi * (rng.uniform(size=n) - 0.5)
    return np.column_stack([np.sin(t), 2 * rng.uniform(size=n), np.sign(t) * (np.cos(t) - 1)])


def _spiral(n, rng):
    t = rng.uniform(size=n)
    cols = []
    for j in range(1, 7):
        cols += [np.cos(TAU * j * t) / j, np.sin(TAU * j * t) / j]
    return np.column_stack(cols + [t])


def _embedded_paraboloid(d):
    def gen(n, rng):
        x = rng.uniform(-1, 1, size=(n, d))
        v = np.column_stack([x, (x**2).sum(axis=1)])
        return np.concatenate([v, np.sin(v), np.cos(v)], axis=1)
    return gen


# name -> (d, D, generator(n, rng))
NAMED = {
    "M1_Sphere": (10, 11, None),
    "M2_Affine_3to5": (3, 5, _affine_gen(3, 5, 35)),
    "M3_Nonlinear_4to6": (4, 6, _m3),
    "M4_Nonlinear": (4, 8, _nonlinear(4, 1)),
    "M5a_Helix1d": (1, 3, _helix),
    "M5b_Helix2d": (2, 3, _helicoid),
    "M6_Nonlinear": (6, 36, _nonlinear(6, 3)),
    "M7_Roll": (2, 3, _roll),
    "M8_Nonlinear": (12, 72, _nonlinear(12, 3)),
    "M9_Affine": (20, 20, _affine_gen(20, 20, 2020)),
    "M10a_Cubic": (10, 11, _cube_boundary(10)),
    "M10b_Cubic": (17, 18, _cube_boundary(17)),
    "M10c_Cubic": (24, 25, _cube_boundary(24)),
    "M10d_Cubic": (70, 71, _cube_boundary(70)),
    "M11_Moebius": (2, 3, _moebius),
    "M12_Norm": (20, 20, _norm),
    "M13a_Scurve": (2, 3, _scurve),
    "M13b_Spiral": (1, 13, _spiral),
    "Mbeta": (10, 40, _nonlinear(10, 2, beta=True)),
    "Mn1_Nonlinear": (18, 72, _nonlinear(18, 2)),
    "Mn2_Nonlinear": (24, 96, _nonlinear(24, 2)),
    "Mp1_Paraboloid": (3, 12, _embedded_paraboloid(3)),
    "Mp2_Paraboloid": (6, 21, _embedded_paraboloid(6)),
    "Mp3_Paraboloid": (9, 30, _embedded_paraboloid(9)),
}

FAMILIES = ("Sphere", "SOn", "Torus", "Paraboloid")

PARABOLOID_HALF_WIDTH = 1.0


def sphere_points(n, d, D, rng):
    g = rng.standard_normal((n, d + 1))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    if D > d + 1:
        g = np.hstack([g, np.zeros((n, D - d - 1))])
    return g


def son_points(n, m, rng):
    out = np.empty((n, m * m))
    for i in range(n):
        q, r = np.linalg.qr(rng.standard_normal((m, m)))
        q = q * np.sign(np.diag(r))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        out[i] = q.ravel()
    return out


def torus_angles(n, R, r, rng):
    """Area-uniform (tube angle, rotation angle) pairs by rejection on the tube angle."""
    tube = np.empty(0)
    while tube.size < n:
        th = TAU * rng.uniform(size=2 * (n - tube.size) + 16)
        keep = rng.uniform(size=th.size) < (R + r * np.cos(th)) / (R + r)
        tube = np.concatenate([tube, th[keep]])
    tube = tube[:n]
    return tube, TAU * rng.uniform(size=n)


def torus_embed(tube, rot, R, r):
    w = R + r * np.cos(tube)
    return np.column_stack([w * np.cos(rot), w * np.sin(rot), r * np.sin(tube)])


def paraboloid_points(n, b, sign, rng, half_width=PARABOLOID_HALF_WIDTH):
    xy = rng.uniform(-half_width, half_width, size=(n, 2))
    z = 2 * xy[:, 0] ** 2 + sign * xy[:, 1] ** 2 / b**2
    return np.column_stack([xy, z])


def dataset_dims(name: str, params: dict | None = None) -> tuple[int, int]:
    params = params or {}
    if name in NAMED:
        return NAMED[name][:2]
    if name == "Sphere":
        d = int(params["d"])
        return d, int(params.get("D", d + 1))
    if name == "SOn":
        m = int(params["n"])
        return m * (m - 1) // 2, m * m
    if name in ("Torus", "Paraboloid"):
        return 2, 3
    raise ParameterError(f"unknown dataset {name!r}")


def generate(spec: DatasetSpec) -> PointCloud:
    n = int(spec.n)
    if n < 1:
        raise ParameterError("n must be at least 1")
    rng = _rng(spec.seed)
    p = dict(spec.params)
    d, D = dataset_dims(spec.name, p)
    meta = {"name": spec.name, "d": d, "D": D, "seed": spec.seed}
    if spec.name == "M1_Sphere":
        X = sphere_points(n, 10, 11, rng)
    elif spec.name in NAMED:
        X = NAMED[spec.name][2](n, rng)
    elif spec.name == "Sphere":
        if D < d + 1:
            raise ParameterError(f"Sphere needs D >= d+1, got d={d}, D={D}")
        X = sphere_points(n, d, D, rng)
    elif spec.name == "SOn":
        X = son_points(n, int(p["n"]), rng)
    elif spec.name == "Torus":
        R, r = float(p.get("R", 2.0)), float(p.get("r", 1.0))
        if not R > r > 0:
            raise ParameterError("Torus needs R > r > 0")
        tube, rot = torus_angles(n, R, r, rng)
        X = torus_embed(tube, rot, R, r)
        meta.update(R=R, r=r, tube_angle=tube)
    elif spec.name == "Paraboloid":
        b, sign = float(p.get("b", 1.0)), int(p.get("sign", 1))
        if b <= 0 or sign not in (1, -1):
            raise ParameterError("Paraboloid needs b > 0 and sign in {+1, -1}")
        X = paraboloid_points(n, b, sign, rng)
        meta.update(b=b, sign=sign)
    else:
        raise ParameterError(f"unknown dataset {spec.name!r}")
    assert X.shape == (n, D), (spec.name, X.shape, D)
    return PointCloud(X, meta)


def add_gaussian_noise(cloud: PointCloud, sigma2: float, seed) -> PointCloud:
    if sigma2 < 0:
        raise ParameterError("sigma2 is a variance and must be nonnegative")
    if sigma2 == 0:
        return cloud.with_points(cloud.points, noise_var=0.0)
    rng = _rng(seed)
    X = cloud.points + rng.normal(0.0, np.sqrt(sigma2), size=cloud.points.shape)
    return cloud.with_points(X, noise_var=float(sigma2))


def add_outliers(cloud: PointCloud, n_out: int, seed) -> PointCloud:
    n_out = int(n_out)
    if not 0 <= n_out <= cloud.n:
        raise ParameterError(f"n_out must lie in 0..{cloud.n}")
    X = np.array(cloud.points)
    if n_out:
        rng = _rng(seed)
        rows = rng.choice(cloud.n, size=n_out, replace=False)
        X[rows] *= rng.uniform(3.0, 6.0, size=(n_out, cloud.ambient_dim))
    else:
        rows = np.empty(0, dtype=int)
    return cloud.with_points(X, outlier_rows=np.sort(rows))
