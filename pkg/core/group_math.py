"""
core/group_math.py -- Teoria de representaciones para SO(2), SO(3) y SE(d).

Responsabilidades:
  - Identificadores de irreps (IrrepId) y elementos de grupo (GroupElement).
  - Evaluacion de irreps: e^{ik theta} en SO(2), matrices D de Wigner en SO(3).
  - Armonicos esfericos en la misma convencion que las matrices D, de modo que
    Y(R x) = D(R) Y(x).
  - Coeficientes de Clebsch-Gordan con aritmetica racional exacta (Racah).
  - Muestreo Haar, ley de grupo de SE(d) y transformada de Fourier discreta en SO(2).

Convenciones:
  - SO(2): la rotacion de parametro theta tiene matriz [[cos, sin], [-sin, cos]];
    la irrep k vale e^{ik theta} y la codificacion e^{-ik phi(x)} es steerable con ella.
  - SO(3): angulos de Euler z-y-z, R = R_z(alpha) R_y(beta) R_z(gamma) con las
    rotaciones activas usuales. D^l_{mn} = e^{im alpha} d^l_{mn}(beta) e^{in gamma},
    indices m, n = -l..l en orden ascendente.
  - Todo en doble precision.
"""
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from itertools import permutations, product
from typing import Iterable, Optional, Union

import numpy as np
from loguru import logger

from core.errors import InvalidArgumentError

TWO_PI = 2.0 * math.pi
UNIT_TOLERANCE = 1e-9


class Group(str, Enum):
    """Grupos de rotacion soportados."""
    SO2 = "SO2"
    SO3 = "SO3"

    @classmethod
    def for_dim(cls, dim: int) -> "Group":
        if dim == 2:
            return cls.SO2
        if dim == 3:
            return cls.SO3
        raise InvalidArgumentError(f"Dimension espacial no soportada: {dim} (se esperaba 2 o 3)")

    @property
    def spatial_dim(self) -> int:
        return 2 if self is Group.SO2 else 3


# ---------------------------------------------------------------------------
# Irreps
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class IrrepId:
    """
    Identifica una irrep: frecuencia k (SO2) o grado l >= 0 (SO3).

    Atributos:
        group: Grupo al que pertenece.
        index: k en Z para SO2, l en Z>=0 para SO3.
    """
    group: Group
    index: int

    def __post_init__(self):
        if self.group is Group.SO3 and self.index < 0:
            raise InvalidArgumentError(f"Grado SO3 negativo: l={self.index}")

    @property
    def dim(self) -> int:
        return 1 if self.group is Group.SO2 else 2 * self.index + 1

    @property
    def is_trivial(self) -> bool:
        return self.index == 0

    def __str__(self) -> str:
        return f"k={self.index}" if self.group is Group.SO2 else f"l={self.index}"


def irrep_indices(dim: int, cutoff: int) -> list[int]:
    """Indices de irreps en orden ascendente: -K..K (2D) o 0..L (3D)."""
    if cutoff < 0:
        raise InvalidArgumentError(f"cutoff negativo: {cutoff}")
    if Group.for_dim(dim) is Group.SO2:
        return list(range(-cutoff, cutoff + 1))
    return list(range(0, cutoff + 1))


def irreps_for(dim: int, cutoff: int) -> list[IrrepId]:
    group = Group.for_dim(dim)
    return [IrrepId(group, i) for i in irrep_indices(dim, cutoff)]


def irrep_dim(dim: int, index: int) -> int:
    return 1 if dim == 2 else 2 * index + 1


def trivial_index(dim: int, cutoff: int) -> int:
    """Posicion de la irrep trivial dentro de irrep_indices(dim, cutoff)."""
    return cutoff if dim == 2 else 0


# ---------------------------------------------------------------------------
# Matrices de rotacion y elementos de grupo
# ---------------------------------------------------------------------------

def _wrap_angle(value: float) -> float:
    wrapped = math.fmod(value, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    if wrapped >= TWO_PI:
        wrapped = 0.0
    return wrapped


def rotation_matrix_2d(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s, c]], dtype=np.float64)


def _rz(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]], dtype=np.float64)


def _ry(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]], dtype=np.float64)


def rotation_matrix_3d(alpha: float, beta: float, gamma: float) -> np.ndarray:
    return _rz(alpha) @ _ry(beta) @ _rz(gamma)


def euler_from_matrix(matrix: np.ndarray) -> tuple[float, float, float]:
    """
    Recupera (alpha, beta, gamma) z-y-z de una matriz de rotacion 3x3.

    alpha + gamma se lee del bloque superior cuando beta <= pi/2 y alpha - gamma
    cuando beta > pi/2; asi los casos cercanos a beta = 0 y beta = pi conservan la
    matriz a precision de maquina aunque gamma quede mal condicionado.
    """
    r = np.asarray(matrix, dtype=np.float64)
    beta = math.atan2(math.hypot(r[0, 2], r[1, 2]), r[2, 2])
    if math.hypot(r[2, 0], r[2, 1]) > 0.0:
        gamma = math.atan2(r[2, 1], -r[2, 0])
    else:
        gamma = 0.0
    if beta <= 0.5 * math.pi:
        alpha = math.atan2(r[1, 0] - r[0, 1], r[0, 0] + r[1, 1]) - gamma
    else:
        alpha = math.atan2(-(r[1, 0] + r[0, 1]), r[1, 1] - r[0, 0]) + gamma
    return _wrap_angle(alpha), beta, _wrap_angle(gamma)


@dataclass(frozen=True)
class GroupElement:
    """
    Elemento de SE(2) o SE(3): traslacion + rotacion.

    Atributos:
        translation: Vector de traslacion en unidades de la rejilla.
        angles: (theta,) para SO2 o (alpha, beta, gamma) z-y-z para SO3.
    """
    translation: tuple[float, ...]
    angles: tuple[float, ...]

    def __post_init__(self):
        if len(self.angles) not in (1, 3):
            raise InvalidArgumentError(f"Se esperaban 1 o 3 angulos, encontrados {len(self.angles)}")
        expected = 2 if len(self.angles) == 1 else 3
        if len(self.translation) != expected:
            raise InvalidArgumentError(
                f"Traslacion de dimension {len(self.translation)} para un elemento de SE({expected})"
            )

    # -- Constructores --

    @classmethod
    def from_angle(cls, theta: float, translation: Iterable[float] = (0.0, 0.0)) -> "GroupElement":
        return cls(tuple(float(t) for t in translation), (_wrap_angle(float(theta)),))

    @classmethod
    def from_euler(cls, alpha: float, beta: float, gamma: float,
                   translation: Iterable[float] = (0.0, 0.0, 0.0)) -> "GroupElement":
        if 0.0 <= beta <= math.pi:
            angles = (_wrap_angle(alpha), float(beta), _wrap_angle(gamma))
        else:
            angles = euler_from_matrix(rotation_matrix_3d(alpha, beta, gamma))
        return cls(tuple(float(t) for t in translation), angles)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, translation: Optional[Iterable[float]] = None) -> "GroupElement":
        r = np.asarray(matrix, dtype=np.float64)
        d = r.shape[0]
        t = tuple(float(x) for x in translation) if translation is not None else (0.0,) * d
        if r.shape == (2, 2):
            return cls(t, (_wrap_angle(math.atan2(r[0, 1], r[0, 0])),))
        if r.shape == (3, 3):
            return cls(t, euler_from_matrix(r))
        raise InvalidArgumentError(f"Matriz de rotacion con forma {r.shape}")

    @classmethod
    def identity(cls, dim: int) -> "GroupElement":
        if dim == 2:
            return cls((0.0, 0.0), (0.0,))
        return cls((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))

    # -- Propiedades --

    @property
    def dim(self) -> int:
        return len(self.translation)

    @property
    def group(self) -> Group:
        return Group.for_dim(self.dim)

    @property
    def is_identity(self) -> bool:
        return all(a == 0.0 for a in self.angles) and all(t == 0.0 for t in self.translation)

    def rotation_matrix(self) -> np.ndarray:
        if self.dim == 2:
            return rotation_matrix_2d(self.angles[0])
        return rotation_matrix_3d(*self.angles)

    def translation_vector(self) -> np.ndarray:
        return np.array(self.translation, dtype=np.float64)

    def rotation_only(self) -> "GroupElement":
        return GroupElement((0.0,) * self.dim, self.angles)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "translation": list(self.translation), "angles": list(self.angles)}

    @classmethod
    def from_dict(cls, data: dict) -> "GroupElement":
        return cls(tuple(float(t) for t in data["translation"]), tuple(float(a) for a in data["angles"]))


def _check_same_dim(*elements: GroupElement):
    dims = {g.dim for g in elements}
    if len(dims) != 1:
        raise InvalidArgumentError(f"Elementos de grupo de dimensiones distintas: {sorted(dims)}")


def se_compose(g1: GroupElement, g2: GroupElement) -> GroupElement:
    """(t1, R1)(t2, R2) = (t1 + R1 t2, R1 R2)."""
    _check_same_dim(g1, g2)
    r1 = g1.rotation_matrix()
    t = g1.translation_vector() + r1 @ g2.translation_vector()
    if g1.dim == 2:
        return GroupElement.from_angle(g1.angles[0] + g2.angles[0], t)
    return GroupElement.from_matrix(r1 @ g2.rotation_matrix(), t)


def se_inverse(g: GroupElement) -> GroupElement:
    """(t, R)^-1 = (-R^T t, R^T)."""
    r_inv = g.rotation_matrix().T
    t = -(r_inv @ g.translation_vector())
    if g.dim == 2:
        return GroupElement.from_angle(-g.angles[0], t)
    return GroupElement.from_matrix(r_inv, t)


def se_apply(g: GroupElement, x: np.ndarray) -> np.ndarray:
    """Accion (t, R) . x = R x + t sobre un punto [d] o un lote de puntos [N, d]."""
    pts = np.asarray(x, dtype=np.float64)
    if pts.shape[-1] != g.dim:
        raise InvalidArgumentError(
            f"Punto de dimension {pts.shape[-1]} para un elemento de SE({g.dim})"
        )
    return pts @ g.rotation_matrix().T + g.translation_vector()


# ---------------------------------------------------------------------------
# Wigner
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _small_d_terms(l: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Terminos de la suma explicita de Wigner para d^l(beta).

    Retorna (coeficientes, potencias de cos(beta/2), potencias de sin(beta/2),
    inicios de cada entrada (m, n) en orden fila-mayor) para usar con reduceat.
    """
    f = math.factorial
    coefs, cpows, spows, starts = [], [], [], []
    for m in range(-l, l + 1):
        for n in range(-l, l + 1):
            starts.append(len(coefs))
            pref = f(l + m) * f(l - m) * f(l + n) * f(l - n)
            for s in range(max(0, n - m), min(l + n, l - m) + 1):
                denom = f(l + n - s) * f(s) * f(m - n + s) * f(l - m - s)
                sign = -1.0 if (m - n + s) % 2 else 1.0
                coefs.append(sign * math.sqrt(pref / (denom * denom)))
                cpows.append(2 * l + n - m - 2 * s)
                spows.append(m - n + 2 * s)
    return (np.array(coefs), np.array(cpows, dtype=np.int64),
            np.array(spows, dtype=np.int64), np.array(starts, dtype=np.int64))


def wigner_small_d(l: int, beta) -> np.ndarray:
    """
    Matriz d^l(beta) real, vectorizada sobre beta: forma beta.shape + (2l+1, 2l+1).
    """
    if l < 0:
        raise InvalidArgumentError(f"Grado negativo: {l}")
    b = np.asarray(beta, dtype=np.float64)
    coefs, cpows, spows, starts = _small_d_terms(l)
    c = np.cos(0.5 * b)[..., None]
    s = np.sin(0.5 * b)[..., None]
    terms = coefs * c ** cpows * s ** spows
    size = 2 * l + 1
    values = np.add.reduceat(terms, starts, axis=-1)
    return values.reshape(b.shape + (size, size))


def wigner_d(l: int, alpha: float, beta: float, gamma: float) -> np.ndarray:
    """D^l(alpha, beta, gamma) con fases e^{im alpha} y e^{in gamma}."""
    m = np.arange(-l, l + 1)
    d = wigner_small_d(l, beta)
    return np.exp(1j * m * alpha)[:, None] * d * np.exp(1j * m * gamma)[None, :]


def irrep_eval(irrep: IrrepId, rotation: GroupElement) -> np.ndarray:
    """Matriz unitaria [d_rho x d_rho] de la irrep evaluada en la rotacion."""
    if irrep.group is not rotation.group:
        raise InvalidArgumentError(
            f"Irrep de {irrep.group.value} evaluada en un elemento de {rotation.group.value}"
        )
    if irrep.group is Group.SO2:
        return np.array([[np.exp(1j * irrep.index * rotation.angles[0])]], dtype=np.complex128)
    return wigner_d(irrep.index, *rotation.angles)


def irrep_matrices(dim: int, cutoff: int, rotation: GroupElement) -> dict[int, np.ndarray]:
    """Todas las matrices de irrep hasta el cutoff, indexadas por k o l."""
    return {ir.index: irrep_eval(ir, rotation) for ir in irreps_for(dim, cutoff)}


# ---------------------------------------------------------------------------
# Armonicos esfericos
# ---------------------------------------------------------------------------

def spherical_harmonics_batch(l: int, vectors: np.ndarray) -> np.ndarray:
    """
    Y^l evaluado en las direcciones de vectors [..., 3] -> [..., 2l+1].

    Usa Y^l_m(x) = sqrt((2l+1)/4pi) D^l_{m0}(alpha, beta, 0) con (beta, alpha)
    los angulos polar y azimutal de x. Los vectores no se normalizan aqui:
    solo se usa su direccion; el vector nulo produce ceros.
    """
    v = np.asarray(vectors, dtype=np.float64)
    rho = np.hypot(v[..., 0], v[..., 1])
    beta = np.arctan2(rho, v[..., 2])
    alpha = np.arctan2(v[..., 1], v[..., 0])
    m = np.arange(-l, l + 1)
    d_col = wigner_small_d(l, beta)[..., :, l]
    y = math.sqrt((2 * l + 1) / (4.0 * math.pi)) * np.exp(1j * m * alpha[..., None]) * d_col
    zero = np.linalg.norm(v, axis=-1) == 0.0
    if np.any(zero):
        y = np.where(zero[..., None], 0.0, y)
    return y


def spherical_harmonics(l: int, direction: np.ndarray) -> np.ndarray:
    """Vector complejo Y^l(direction) de longitud 2l+1 para una direccion unitaria."""
    if l < 0:
        raise InvalidArgumentError(f"Grado negativo: {l}")
    x = np.asarray(direction, dtype=np.float64)
    if x.shape != (3,):
        raise InvalidArgumentError(f"Direccion con forma {x.shape}, se esperaba (3,)")
    norm = float(np.linalg.norm(x))
    if abs(norm - 1.0) > UNIT_TOLERANCE:
        raise InvalidArgumentError(f"Direccion no unitaria: |x| = {norm:.12g}")
    return spherical_harmonics_batch(l, x)


# ---------------------------------------------------------------------------
# Clebsch-Gordan
# ---------------------------------------------------------------------------

def _triangle(l1: int, l2: int, l: int) -> bool:
    return abs(l1 - l2) <= l <= l1 + l2


@lru_cache(maxsize=None)
def _cg_exact(l1: int, m1: int, l2: int, m2: int, l: int, m: int) -> float:
    """<l1 m1; l2 m2 | l m> por la formula cerrada de Racah con Fraction."""
    if m1 + m2 != m or not _triangle(l1, l2, l):
        return 0.0
    if abs(m1) > l1 or abs(m2) > l2 or abs(m) > l:
        return 0.0
    f = math.factorial
    pref = Fraction(
        (2 * l + 1) * f(l + l1 - l2) * f(l - l1 + l2) * f(l1 + l2 - l),
        f(l1 + l2 + l + 1),
    ) * (f(l + m) * f(l - m) * f(l1 - m1) * f(l1 + m1) * f(l2 - m2) * f(l2 + m2))
    total = Fraction(0)
    k_min = max(0, l2 - l - m1, l1 - l + m2)
    k_max = min(l1 + l2 - l, l1 - m1, l2 + m2)
    for k in range(k_min, k_max + 1):
        denom = (f(k) * f(l1 + l2 - l - k) * f(l1 - m1 - k) * f(l2 + m2 - k)
                 * f(l - l2 + m1 + k) * f(l - l1 - m2 + k))
        total += Fraction(-1 if k % 2 else 1, denom)
    if total == 0:
        return 0.0
    magnitude = math.sqrt(float(total * total * pref))
    return magnitude if total > 0 else -magnitude


class CGTable:
    """
    Tabla de bloques de Clebsch-Gordan.

    Cada bloque (l1, l2, l) es un arreglo real de forma (2l1+1, 2l2+1, 2l+1),
    indices m ascendentes. precompute(cutoff) construye todos los bloques con
    grados <= cutoff y congela la tabla: desde entonces el dict no se modifica y
    un bloque ausente se calcula sin guardarse.

    Atributos:
        entries: {(l1, l2, l): bloque}.
        frozen_cutoff: Cutoff congelado o None.
    """

    def __init__(self):
        self.entries: dict[tuple[int, int, int], np.ndarray] = {}
        self.frozen_cutoff: Optional[int] = None

    @staticmethod
    def _build(l1: int, l2: int, l: int) -> np.ndarray:
        out = np.zeros((2 * l1 + 1, 2 * l2 + 1, 2 * l + 1), dtype=np.float64)
        if _triangle(l1, l2, l):
            for m1 in range(-l1, l1 + 1):
                for m2 in range(-l2, l2 + 1):
                    m = m1 + m2
                    if abs(m) <= l:
                        out[m1 + l1, m2 + l2, m + l] = _cg_exact(l1, m1, l2, m2, l, m)
        out.flags.writeable = False
        return out

    def precompute(self, cutoff: int) -> int:
        """Construye los bloques con l1, l2, l <= cutoff y congela la tabla."""
        if cutoff < 0:
            raise InvalidArgumentError(f"cutoff negativo: {cutoff}")
        if self.frozen_cutoff is not None and self.frozen_cutoff >= cutoff:
            return len(self.entries)
        entries = dict(self.entries)
        for key in product(range(cutoff + 1), repeat=3):
            if key not in entries:
                entries[key] = self._build(*key)
        self.entries = entries
        self.frozen_cutoff = cutoff
        logger.debug(f"[GROUP] Tabla CG congelada hasta l={cutoff}: {len(entries)} bloques")
        return len(entries)

    def block(self, l1: int, l2: int, l: int) -> np.ndarray:
        if min(l1, l2, l) < 0:
            raise InvalidArgumentError(f"Grados CG negativos: ({l1}, {l2}, {l})")
        key = (l1, l2, l)
        found = self.entries.get(key)
        if found is not None:
            return found
        out = self._build(l1, l2, l)
        if self.frozen_cutoff is None:
            self.entries[key] = out
            logger.debug(f"[GROUP] Bloque CG construido: {key}")
        return out


CG_TABLE = CGTable()


def clebsch_gordan(l1: int, l2: int, l: int) -> np.ndarray:
    """Bloque CG (l1, l2, l); ceros si falla la desigualdad triangular."""
    return CG_TABLE.block(l1, l2, l)


# ---------------------------------------------------------------------------
# Muestreo
# ---------------------------------------------------------------------------

RngLike = Union[int, None, np.random.Generator]


def as_generator(seed: RngLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def haar_random_rotation(group: Union[Group, str], seed: RngLike = None) -> GroupElement:
    """Rotacion Haar-uniforme (traslacion nula); determinista para una semilla fija."""
    group = Group(group)
    rng = as_generator(seed)
    if group is Group.SO2:
        return GroupElement.from_angle(rng.uniform(0.0, TWO_PI))
    alpha = rng.uniform(0.0, TWO_PI)
    # densidad sin(beta)/2 en [0, pi]
    beta = math.acos(1.0 - 2.0 * rng.uniform(0.0, 1.0))
    gamma = rng.uniform(0.0, TWO_PI)
    return GroupElement.from_euler(alpha, beta, gamma)


def random_se_element(dim: int, seed: RngLike = None, translation_scale: float = 1.0) -> GroupElement:
    """Rotacion Haar + traslacion gaussiana de escala translation_scale."""
    rng = as_generator(seed)
    rot = haar_random_rotation(Group.for_dim(dim), rng)
    t = rng.normal(0.0, translation_scale, size=dim)
    return GroupElement(tuple(float(x) for x in t), rot.angles)


@lru_cache(maxsize=None)
def _lattice_matrices(dim: int) -> tuple[tuple[tuple[int, ...], ...], ...]:
    mats = []
    for perm in permutations(range(dim)):
        for signs in product((1, -1), repeat=dim):
            m = np.zeros((dim, dim), dtype=np.int64)
            for row, (col, sign) in enumerate(zip(perm, signs)):
                m[row, col] = sign
            if round(np.linalg.det(m)) == 1:
                mats.append(tuple(tuple(int(v) for v in r) for r in m))
    return tuple(mats)


def lattice_rotations(dim: int) -> list[GroupElement]:
    """Las 4 (2D) o 24 (3D) rotaciones que permutan la rejilla entera."""
    Group.for_dim(dim)
    return [GroupElement.from_matrix(np.array(m, dtype=np.float64)) for m in _lattice_matrices(dim)]


def random_lattice_element(dim: int, seed: RngLike = None, max_shift: int = 0) -> GroupElement:
    """Rotacion de rejilla aleatoria con traslacion entera en [-max_shift, max_shift]."""
    rng = as_generator(seed)
    rots = lattice_rotations(dim)
    rot = rots[int(rng.integers(0, len(rots)))]
    t = rng.integers(-max_shift, max_shift + 1, size=dim) if max_shift > 0 else np.zeros(dim)
    return GroupElement(tuple(float(x) for x in t), rot.angles)


# ---------------------------------------------------------------------------
# Fourier en SO(2)
# ---------------------------------------------------------------------------

def _so2_nodes(num_samples: int) -> np.ndarray:
    return TWO_PI * np.arange(num_samples) / num_samples


def fourier_so2(samples: np.ndarray, cutoff: int) -> np.ndarray:
    """
    Coeficientes f_hat(k) = (1/A) sum_a f(theta_a) e^{ik theta_a}, k = -K..K.

    Retorna un arreglo de longitud 2K+1 indexado por k + K.
    """
    f = np.asarray(samples, dtype=np.complex128)
    num = f.shape[-1]
    if cutoff < 0:
        raise InvalidArgumentError(f"cutoff negativo: {cutoff}")
    if num <= 2 * cutoff:
        raise InvalidArgumentError(
            f"Aliasing: A = {num} muestras no supera 2K = {2 * cutoff}"
        )
    ks = np.arange(-cutoff, cutoff + 1)
    basis = np.exp(1j * np.outer(ks, _so2_nodes(num)))
    return f @ basis.T / num


def inverse_fourier_so2(coefficients: np.ndarray, num_samples: int) -> np.ndarray:
    """Sintesis f(theta_a) = sum_k f_hat(k) e^{-ik theta_a} sobre A nodos uniformes."""
    c = np.asarray(coefficients, dtype=np.complex128)
    size = c.shape[-1]
    if size % 2 != 1:
        raise InvalidArgumentError(f"Se esperaban 2K+1 coeficientes, encontrados {size}")
    cutoff = size // 2
    if num_samples <= 2 * cutoff:
        raise InvalidArgumentError(
            f"Aliasing: A = {num_samples} muestras no supera 2K = {2 * cutoff}"
        )
    ks = np.arange(-cutoff, cutoff + 1)
    basis = np.exp(-1j * np.outer(ks, _so2_nodes(num_samples)))
    return c @ basis
