"""
Surface geometry from Iwasawa data.

The extended frame F, conjugated by diag(1, i) and composed with the orbit
representative, is fed to the Sym–Bobenko formula at λ = 1. The result is
an element of su(1,1), read in the chart
M = [[i·x3, x1 + i·x2], [x1 − i·x2, −i·x3]], so that
x1² + x2² − x3² = −det M is the Minkowski norm of R^{2,1} (x3 timelike).
"""
from __future__ import annotations

import cmath
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import integrate

from ttstar.config import DEFAULT_LOOP_CONFIG, LoopConfig
from ttstar.errors import (
    DomainError,
    GridTooCoarse,
    NonRealResult,
    NotInRealForm,
    OffBigCell,
    SingularLoop,
)
from ttstar.factorization import IwasawaFactors, Orbit, iwasawa_su11, orbit_representative
from ttstar.loops import D, TruncatedLoop, compose, lambda_derivative
from ttstar.qc_frames import FramePoint, frame_bundle

MEAN_CURVATURE = 0.5
SLIT_MARGIN = 1e-3
SU11_TOL = 1e-8
SLIT_SPAN = 30.0

FRAME_GAUGE = np.diag([1.0, 1.0j])
MINKOWSKI = np.diag([1.0, 1.0, -1.0])

# Per-vertex failures that leave a gap in the mesh instead of aborting it
VERTEX_ERRORS = (OffBigCell, SingularLoop, NonRealResult, NotInRealForm)
ORBIT_CROSSING = "orbit_crossing"


def to_matrix(point: Sequence[float]) -> np.ndarray:
    x1, x2, x3 = point
    return np.array([[1j * x3, x1 + 1j * x2], [x1 - 1j * x2, -1j * x3]])


def from_matrix(M: np.ndarray) -> Tuple[float, float, float]:
    x1 = (M[0, 1] + M[1, 0]) / 2.0
    x2 = (M[0, 1] - M[1, 0]) / 2.0j
    return float(x1.real), float(x2.real), float(M[0, 0].imag)


def minkowski(x: Sequence[float], y: Sequence[float]) -> float:
    return float(np.asarray(x) @ MINKOWSKI @ np.asarray(y))


def conformal_factor(k: float, H: float = MEAN_CURVATURE) -> float:
    """e^u = k²/H."""
    return k * k / H


def hopf_coefficient(z: complex, H: float = MEAN_CURVATURE) -> complex:
    return 2.0 / (z * H)


def sym_bobenko(F: TruncatedLoop, orbit: Orbit, H: float = MEAN_CURVATURE,
                tol: float = SU11_TOL, config: Optional[LoopConfig] = None) -> Tuple[float, float, float]:
    """
    Immersion point from an extended frame.

    Args:
        F: Real twisted frame from the Iwasawa factorization
        orbit: Orbit flag of the factorization
        H: Mean curvature (nonzero)
        tol: Relative tolerance on the su(1,1) membership defect
        config: Loop configuration used to compose F with w

    Returns:
        Coordinates (x1, x2, x3) in R^{2,1}

    Raises:
        NotInRealForm: If the Sym matrix is not in su(1,1)
    """
    if H == 0:
        raise DomainError("mean curvature must be nonzero")
    frame = compose(F, orbit_representative(orbit), config).conjugated(FRAME_GAUGE)
    value = frame.evaluate(1.0)
    slope = lambda_derivative(frame).evaluate(1.0)
    inverse = np.linalg.inv(value)
    M = -(1j / (2.0 * H)) * (value @ D @ inverse + 2.0 * slope @ inverse)
    defect = max(float(np.abs(M + D @ M.conj().T @ D).max()), abs(np.trace(M)))
    if defect > tol * (1.0 + float(np.abs(M).max())):
        raise NotInRealForm(f"Sym matrix leaves su(1,1) by {defect:.3e}")
    return from_matrix(M)


def _is_uniform(values: np.ndarray) -> bool:
    steps = np.diff(values)
    return bool(np.allclose(steps, steps[0], rtol=1e-9, atol=0.0))


def _radial_defect(r: Sequence[float], u: Sequence[float], H: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Interior radii and the radial Gauss–Codazzi defect multiplied by 4r².

    On a log-uniform grid s = log r this is u_ss − 4H²r²e^{2u} + (4/H²)e^{−2u};
    on a uniform r grid the Laplacian is r²(u_rr + u_r/r). Second-order central
    differences at interior points.
    """
    r = np.asarray(r, dtype=float)
    u = np.asarray(u, dtype=float)
    if r.ndim != 1 or r.shape != u.shape:
        raise DomainError("r and u must be matching one-dimensional arrays")
    if r.size < 5:
        raise GridTooCoarse(f"need at least 5 radial points, got {r.size}")
    if np.any(r <= 0) or np.any(np.diff(r) <= 0):
        raise DomainError("radii must be positive and increasing")

    s = np.log(r)
    if _is_uniform(s):
        h = s[1] - s[0]
        laplacian = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h ** 2
    elif _is_uniform(r):
        h = r[1] - r[0]
        inner = r[1:-1]
        u_rr = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h ** 2
        u_r = (u[2:] - u[:-2]) / (2.0 * h)
        laplacian = inner ** 2 * (u_rr + u_r / inner)
    else:
        raise DomainError("grid must be uniform in r or in log r")
    inner_r, inner_u = r[1:-1], u[1:-1]
    coupling = -4.0 * H * H * inner_r ** 2 * np.exp(2.0 * inner_u) + (4.0 / (H * H)) * np.exp(-2.0 * inner_u)
    return inner_r, laplacian + coupling


def gauss_codazzi_residual(r: Sequence[float], u: Sequence[float], H: float = MEAN_CURVATURE) -> float:
    """
    Largest residual of the radial Gauss–Codazzi equation
    (1/4)(u_rr + u_r/r) − H²e^{2u} + e^{−2u}/(H²r²) = 0 at interior grid points.

    The e^{−2u}/r² term makes this quantity grow like 1/r² toward the origin;
    scaled_gauss_codazzi_residual is the form that stays O(1) there.

    Raises:
        GridTooCoarse: With fewer than five points
        DomainError: For nonpositive, unsorted or irregular grids
    """
    inner_r, defect = _radial_defect(r, u, H)
    return float(np.max(np.abs(defect / (4.0 * inner_r ** 2))))


def scaled_gauss_codazzi_residual(r: Sequence[float], u: Sequence[float], H: float = MEAN_CURVATURE) -> float:
    """Largest residual of the radial Gauss–Codazzi equation multiplied by 4r²."""
    _, defect = _radial_defect(r, u, H)
    return float(np.max(np.abs(defect)))


def asymptotic_conformal_factor(a: float) -> Callable[[float], float]:
    """Small-r law e^u ≈ −2(a + 2 log r) for H = 1/2."""
    return lambda r: -2.0 * (a + 2.0 * math.log(r))


def asymptotic_slit_length(a: float, t0: float, T: float) -> float:
    """∫_{t0}^{T} 2e^{−t}(4t − 2a) dt in closed form."""
    return 2.0 * math.exp(-t0) * (4.0 * t0 + 4.0 - 2.0 * a) - 2.0 * math.exp(-T) * (4.0 * T + 4.0 - 2.0 * a)


class SurfaceSample(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    z: complex
    t: complex
    point: Tuple[float, float, float]
    u: float
    k: float
    orbit: Orbit
    H: float
    Q: complex
    residual: float
    condition: float

    @property
    def r(self) -> float:
        return math.exp(self.t.real)

    @property
    def theta(self) -> float:
        return self.t.imag


class MeshGrid(BaseModel):
    """Polar grid on the slit plane; θ stays slit_margin away from ±π."""
    r_min: float
    r_max: float
    nr: int
    ntheta: int
    slit_margin: float = SLIT_MARGIN

    @field_validator("r_min")
    @classmethod
    def _positive_radius(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("r_min must be positive")
        return value

    @field_validator("nr", "ntheta")
    @classmethod
    def _two_points(cls, value: int) -> int:
        if value < 2:
            raise ValueError("grid needs at least two points per direction")
        return value

    @field_validator("slit_margin")
    @classmethod
    def _margin(cls, value: float) -> float:
        if not 0 < value < math.pi:
            raise ValueError("slit_margin must lie in (0, π)")
        return value

    @model_validator(mode="after")
    def _ordered(self) -> "MeshGrid":
        if self.r_max <= self.r_min:
            raise ValueError("r_max must exceed r_min")
        return self

    def radii(self) -> np.ndarray:
        return np.linspace(self.r_min, self.r_max, self.nr)

    def angles(self) -> np.ndarray:
        edge = math.pi - self.slit_margin
        return np.linspace(-edge, edge, self.ntheta)


class SurfaceMesh(BaseModel):
    """
    Vertices in row-major (r, θ) order; index = i_r * ntheta + i_θ.

    A vertex is singular when its factorization failed (no sample), and
    flagged when it is singular or borders an orbit change.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    a: float
    grid: MeshGrid
    vertices: List[Optional[SurfaceSample]]
    flags: List[Optional[str]]
    faces: List[Tuple[int, int, int, int]]
    dropped_faces: int

    @property
    def singular_count(self) -> int:
        return sum(1 for v in self.vertices if v is None)

    @property
    def flagged_count(self) -> int:
        return sum(1 for f in self.flags if f is not None)

    def flag_counts(self) -> Dict[str, int]:
        return dict(Counter(f for f in self.flags if f is not None))

    def max_residual(self) -> float:
        return max((v.residual for v in self.vertices if v is not None), default=0.0)

    def reflection_defect(self) -> float:
        """Largest |f(z̄) − (x1, −x2, x3)(f(z))| over vertex pairs mirrored in θ."""
        nt = self.grid.ntheta
        worst = 0.0
        for i in range(self.grid.nr):
            for j in range(nt // 2):
                here, there = self.vertices[i * nt + j], self.vertices[i * nt + nt - 1 - j]
                if here is None or there is None:
                    continue
                x1, x2, x3 = here.point
                worst = max(worst, float(np.linalg.norm(np.array(there.point) - np.array([x1, -x2, x3]))))
        return worst

    def annotations(self) -> Dict[str, dict]:
        radii, angles = self.grid.radii(), self.grid.angles()
        out = {}
        for index, (sample, flag) in enumerate(zip(self.vertices, self.flags)):
            i, j = divmod(index, self.grid.ntheta)
            entry = {"r": float(radii[i]), "theta": float(angles[j]), "flag": flag}
            if sample is not None:
                entry.update(u=sample.u, k=sample.k, orbit=sample.orbit.value,
                             residual=sample.residual, condition=sample.condition)
            out[str(index)] = entry
        return out


class LocalInvariants(BaseModel):
    g11: float
    g12: float
    g22: float
    predicted_g: float
    conformality: float
    orthogonality: float
    mean_curvature: float


class SurfaceService:
    """
    Service computing surface samples, meshes and curve lengths for one
    loop configuration.
    """

    def __init__(self, config: Optional[LoopConfig] = None, H: float = MEAN_CURVATURE, workers: int = 1):
        """
        Args:
            config: Loop truncation and tolerances
            H: Mean curvature of the surfaces produced
            workers: Thread count for per-vertex work
        """
        if not H > 0:
            raise DomainError("mean curvature of a spacelike surface sample must be positive")
        self.config = config or DEFAULT_LOOP_CONFIG
        self.H = H
        self.workers = max(1, int(workers))
        logger.info(
            f"Surface service initialized: degree={self.config.degree}, "
            f"samples={self.config.sample_count}, H={self.H}, workers={self.workers}"
        )

    def factor(self, a: float, t: complex) -> IwasawaFactors:
        """Iwasawa factors of γ0(a)⁻¹·L at the point with coordinate t."""
        bundle = frame_bundle(FramePoint.from_t(t, a), self.config)
        return iwasawa_su11(bundle.dressed, self.config)

    def sample(self, a: float, t: complex) -> SurfaceSample:
        point = FramePoint.from_t(t, a)
        factors = iwasawa_su11(frame_bundle(point, self.config).dressed, self.config)
        xyz = sym_bobenko(factors.F, factors.orbit, self.H, config=self.config)
        return SurfaceSample(
            z=point.z,
            t=point.t,
            point=xyz,
            u=math.log(conformal_factor(factors.k, self.H)),
            k=factors.k,
            orbit=factors.orbit,
            H=self.H,
            Q=hopf_coefficient(point.z, self.H),
            residual=factors.residual,
            condition=factors.condition,
        )

    def radial_u(self, a: float, radii: Sequence[float]) -> np.ndarray:
        """Metric exponent u along the positive real axis."""
        return np.array([math.log(conformal_factor(self.factor(a, math.log(r)).k, self.H)) for r in radii])

    def _vertex(self, a: float, t: complex):
        try:
            return self.sample(a, t), None
        except VERTEX_ERRORS as exc:
            logger.debug(f"Vertex at t={t} flagged: {exc.code}: {exc}")
            return None, exc.code

    def build_mesh(self, a: float, grid: MeshGrid) -> SurfaceMesh:
        """
        Sample the surface on a polar grid.

        Per-vertex failures never abort the mesh: the vertex is flagged and
        every face touching a flagged vertex is dropped.

        Args:
            a: Dressing parameter
            grid: Polar grid specification

        Returns:
            SurfaceMesh with quads that never span the slit
        """
        radii, angles = grid.radii(), grid.angles()
        nt = grid.ntheta
        coordinates = [complex(math.log(r), theta) for r in radii for theta in angles]
        logger.info(f"Building mesh for a={a}: {grid.nr}x{nt} vertices")

        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(lambda t: self._vertex(a, t), coordinates))
        else:
            results = [self._vertex(a, t) for t in coordinates]

        vertices = [sample for sample, _ in results]
        flags = [code for _, code in results]

        # An orbit change between neighbours brackets a singular locus
        for i in range(grid.nr):
            for j in range(nt):
                here = i * nt + j
                for there in ((i + 1) * nt + j if i + 1 < grid.nr else None,
                              here + 1 if j + 1 < nt else None):
                    if there is None or vertices[here] is None or vertices[there] is None:
                        continue
                    if vertices[here].orbit != vertices[there].orbit:
                        for index in (here, there):
                            if flags[index] is None:
                                flags[index] = ORBIT_CROSSING

        faces, dropped = [], 0
        for i in range(grid.nr - 1):
            for j in range(nt - 1):
                quad = (i * nt + j, (i + 1) * nt + j, (i + 1) * nt + j + 1, i * nt + j + 1)
                if any(flags[index] is not None for index in quad):
                    dropped += 1
                else:
                    faces.append(quad)

        mesh = SurfaceMesh(a=a, grid=grid, vertices=vertices, flags=flags, faces=faces, dropped_faces=dropped)
        logger.info(
            f"Mesh for a={a}: {mesh.singular_count} singular, {mesh.flagged_count} flagged, "
            f"{len(faces)} faces kept, {dropped} dropped"
        )
        return mesh

    def slit_curve_length(self, a: float, t_range: Tuple[float, Optional[float]] = (3.0, None),
                          conformal: Optional[Callable[[float], float]] = None) -> float:
        """
        Length of the curve z = e^{−t}, t ∈ [t0, T], in the induced metric.

        Args:
            a: Dressing parameter
            t_range: (t0, T); T defaults to t0 + 30
            conformal: Optional replacement r ↦ e^u for the computed factor

        Returns:
            ∫ 2e^{−t}·e^{u(e^{−t})} dt
        """
        t0, T = t_range
        if T is None:
            T = t0 + SLIT_SPAN
        if T <= t0:
            raise DomainError(f"empty parameter range ({t0}, {T})")

        def integrand(t: float) -> float:
            r = math.exp(-t)
            factor = conformal(r) if conformal is not None else conformal_factor(self.factor(a, -t).k, self.H)
            return 2.0 * r * factor

        value, error = integrate.quad(integrand, t0, T, epsabs=1e-12, epsrel=1e-10, limit=200)
        logger.info(f"Slit curve length for a={a} on [{t0}, {T}]: {value:.12g} (quadrature error {error:.1e})")
        return float(value)

    def local_invariants(self, a: float, z: complex, h: float = 1e-3) -> LocalInvariants:
        """
        Finite-difference metric and mean curvature at z (5-point stencil in x, y).

        The normal is the Minkowski dual J(f_x × f_y), normalized to be a unit
        timelike vector; H is estimated as |⟨Δf, N⟩| / (g11 + g22).
        """
        z = complex(z)

        def position(dz: complex) -> np.ndarray:
            return np.array(self.sample(a, cmath.log(z + dz)).point)

        center = self.sample(a, cmath.log(z))
        f0 = np.array(center.point)
        east, west = position(h), position(-h)
        north, south = position(1j * h), position(-1j * h)
        fx, fy = (east - west) / (2 * h), (north - south) / (2 * h)
        laplacian = (east + west + north + south - 4.0 * f0) / h ** 2

        g11, g12, g22 = minkowski(fx, fx), minkowski(fx, fy), minkowski(fy, fy)
        normal = MINKOWSKI @ np.cross(fx, fy)
        normal = normal / math.sqrt(abs(minkowski(normal, normal)))
        mean = abs(minkowski(laplacian, normal)) / (g11 + g22)
        return LocalInvariants(
            g11=g11, g12=g12, g22=g22,
            predicted_g=4.0 * math.exp(2.0 * center.u),
            conformality=abs(g11 - g22) / g11,
            orthogonality=abs(g12) / g11,
            mean_curvature=mean,
        )


def build_mesh(a: float, grid: MeshGrid, config: Optional[LoopConfig] = None, workers: int = 1) -> SurfaceMesh:
    return SurfaceService(config, workers=workers).build_mesh(a, grid)


def slit_curve_length(a: float, t_range: Tuple[float, Optional[float]] = (3.0, None),
                      config: Optional[LoopConfig] = None,
                      conformal: Optional[Callable[[float], float]] = None) -> float:
    return SurfaceService(config).slit_curve_length(a, t_range, conformal)
