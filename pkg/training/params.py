"""
training/params.py -- Almacen plano de parametros y checkpoints STCK.

ParamStore mantiene un unico vector real float64 con todos los parametros del
modelo. Cada parametro ocupa un slice con nombre, forma y tipo:

  - real:    valores reales tal cual.
  - complex: pares (re, im) intercalados; el gradiente de la parte real y el
             de la imaginaria quedan en las posiciones correspondientes.
  - buffer:  estado no entrenable (estadisticas de batch norm); sin gradiente,
             sin Adam, sin weight decay.

Convencion de gradientes complejos: para un parametro z = a + ib, las capas
acumulan g_z = dL/da + i dL/db, que se guarda como el par (dL/da, dL/db).

Checkpoint STCK (little-endian):
    magic "STCK" | u16 version | u32 longitud del manifiesto | manifiesto JSON
    | theta f64 | momento m f64 | momento v f64
"""
import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
from loguru import logger

from core.errors import CheckpointError, InvalidArgumentError

KIND_REAL = "real"
KIND_COMPLEX = "complex"
KIND_BUFFER = "buffer"
KINDS = (KIND_REAL, KIND_COMPLEX, KIND_BUFFER)

CHECKPOINT_MAGIC = b"STCK"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sHI")


# ---------------------------------------------------------------------------
# Registro
# ---------------------------------------------------------------------------

@dataclass
class ParamSlice:
    """
    Entrada del registro de parametros.

    Atributos:
        name: Nombre con puntos ("conv1.weight").
        shape: Forma logica del parametro.
        kind: "real", "complex" o "buffer".
        offset: Inicio dentro del vector plano.
        size: Numero de reales ocupados (2x para complejos).
    """
    name: str
    shape: tuple[int, ...]
    kind: str
    offset: int
    size: int

    @property
    def trainable(self) -> bool:
        return self.kind != KIND_BUFFER

    @property
    def stop(self) -> int:
        return self.offset + self.size

    def to_dict(self) -> dict:
        data = asdict(self)
        data["shape"] = list(self.shape)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ParamSlice":
        valid_keys = {f.name for f in cls.__dataclass_fields__.values()}
        clean = {k: v for k, v in data.items() if k in valid_keys}
        clean["shape"] = tuple(clean.get("shape", ()))
        return cls(**clean)


class ParamStore:
    """
    Vector plano de parametros con registro de slices, gradiente y estado de Adam.

    Atributos:
        theta: Parametros.
        grad: Gradiente (misma longitud que theta).
        adam_m, adam_v: Momentos de Adam.
        step: Contador de pasos de Adam.
    """

    def __init__(self):
        self._slices: dict[str, ParamSlice] = {}
        self.theta = np.zeros(0, dtype=np.float64)
        self.grad = np.zeros(0, dtype=np.float64)
        self.adam_m = np.zeros(0, dtype=np.float64)
        self.adam_v = np.zeros(0, dtype=np.float64)
        self.step = 0

    # -- Registro --

    def register(self, name: str, shape: tuple[int, ...], kind: str = KIND_REAL,
                 init: Optional[np.ndarray] = None) -> ParamSlice:
        """Agrega un parametro al final del vector; init opcional con la forma logica."""
        if name in self._slices:
            raise InvalidArgumentError(f"Parametro duplicado: {name}")
        if kind not in KINDS:
            raise InvalidArgumentError(f"Tipo de parametro desconocido: {kind!r}")
        shape = tuple(int(s) for s in shape)
        count = int(np.prod(shape)) if shape else 1
        size = 2 * count if kind == KIND_COMPLEX else count
        values = np.zeros(size, dtype=np.float64)
        if init is not None:
            values = self._flatten(np.asarray(init), shape, kind, name)
        entry = ParamSlice(name, shape, kind, self.theta.size, size)
        self._slices[name] = entry
        self.theta = np.concatenate([self.theta, values])
        self.grad = np.concatenate([self.grad, np.zeros(size)])
        self.adam_m = np.concatenate([self.adam_m, np.zeros(size)])
        self.adam_v = np.concatenate([self.adam_v, np.zeros(size)])
        logger.debug(f"[PARAMS] Registrado {name} {shape} ({kind})")
        return entry

    @staticmethod
    def _flatten(value: np.ndarray, shape: tuple[int, ...], kind: str, name: str) -> np.ndarray:
        if value.shape != shape:
            raise InvalidArgumentError(f"{name}: valor con forma {value.shape}, se esperaba {shape}")
        if kind == KIND_COMPLEX:
            pairs = np.stack([value.real, value.imag], axis=-1)
            return np.ascontiguousarray(pairs, dtype=np.float64).ravel()
        if np.iscomplexobj(value):
            raise InvalidArgumentError(f"{name}: valor complejo para un parametro real")
        return np.asarray(value, dtype=np.float64).ravel().copy()

    def slice(self, name: str) -> ParamSlice:
        try:
            return self._slices[name]
        except KeyError:
            raise InvalidArgumentError(f"Parametro desconocido: {name}") from None

    def slices(self) -> list[ParamSlice]:
        return list(self._slices.values())

    def names(self) -> list[str]:
        return list(self._slices.keys())

    def __contains__(self, name: str) -> bool:
        return name in self._slices

    def __len__(self) -> int:
        return int(self.theta.size)

    # -- Acceso --

    def _assemble(self, vec: np.ndarray, entry: ParamSlice) -> np.ndarray:
        raw = vec[entry.offset:entry.stop]
        if entry.kind == KIND_COMPLEX:
            pairs = raw.reshape(entry.shape + (2,))
            return pairs[..., 0] + 1j * pairs[..., 1]
        return raw.reshape(entry.shape)

    def get(self, name: str) -> np.ndarray:
        """Valor actual: copia compleja ensamblada o vista real."""
        return self._assemble(self.theta, self.slice(name))

    def grad_of(self, name: str) -> np.ndarray:
        return self._assemble(self.grad, self.slice(name))

    def set(self, name: str, value: np.ndarray):
        entry = self.slice(name)
        self.theta[entry.offset:entry.stop] = self._flatten(np.asarray(value), entry.shape, entry.kind, name)

    def accumulate(self, name: str, g: np.ndarray):
        """Suma g al gradiente del parametro (g complejo para parametros complejos)."""
        entry = self.slice(name)
        if entry.kind == KIND_BUFFER:
            return
        g = np.asarray(g)
        if g.shape != entry.shape:
            raise InvalidArgumentError(f"{name}: gradiente con forma {g.shape}, se esperaba {entry.shape}")
        target = self.grad[entry.offset:entry.stop]
        if entry.kind == KIND_COMPLEX:
            pairs = target.reshape(entry.shape + (2,))
            pairs[..., 0] += g.real
            pairs[..., 1] += g.imag
        else:
            target += g.real.ravel() if np.iscomplexobj(g) else g.ravel()

    def zero_grad(self):
        self.grad[:] = 0.0

    def trainable_mask(self) -> np.ndarray:
        mask = np.zeros(self.theta.size, dtype=bool)
        for entry in self._slices.values():
            if entry.trainable:
                mask[entry.offset:entry.stop] = True
        return mask

    def owner_of(self, index: int) -> tuple[str, int]:
        """Nombre del slice y posicion local de la coordenada index."""
        for entry in self._slices.values():
            if entry.offset <= index < entry.stop:
                return entry.name, index - entry.offset
        raise InvalidArgumentError(f"Coordenada fuera de rango: {index}")

    def num_trainable(self) -> int:
        return int(self.trainable_mask().sum())

    def manifest(self) -> list[dict]:
        return [entry.to_dict() for entry in self._slices.values()]

    # -- Checkpoints --

    def save_checkpoint(self, path: Union[str, Path], extra: Optional[dict[str, Any]] = None) -> Path:
        """Escribe theta, momentos de Adam y manifiesto en un archivo STCK."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        manifest = json.dumps(
            {"slices": self.manifest(), "step": self.step, "extra": extra or {}},
            sort_keys=True,
        ).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(manifest)))
            fh.write(manifest)
            for vec in (self.theta, self.adam_m, self.adam_v):
                fh.write(np.ascontiguousarray(vec, dtype="<f8").tobytes())
        logger.info(f"[PARAMS] Checkpoint guardado: {path} ({len(self)} coordenadas, paso {self.step})")
        return path

    @staticmethod
    def _read_checkpoint(path: Path) -> tuple[dict, np.ndarray]:
        try:
            buf = path.read_bytes()
        except OSError as e:
            raise CheckpointError(f"No se pudo leer el checkpoint {path}: {e}") from e
        if len(buf) < _CKPT_HEADER.size:
            raise CheckpointError(f"Checkpoint truncado: {len(buf)} bytes, cabecera de {_CKPT_HEADER.size}")
        magic, version, length = _CKPT_HEADER.unpack_from(buf)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"Magic STCK invalido: {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"Version STCK {version} no soportada (se esperaba {CHECKPOINT_VERSION})")
        start = _CKPT_HEADER.size
        try:
            manifest = json.loads(buf[start:start + length].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"Manifiesto STCK ilegible: {e}") from e
        payload = buf[start + length:]
        total = sum(int(s["size"]) for s in manifest.get("slices", []))
        if len(payload) != 3 * 8 * total:
            raise CheckpointError(
                f"Payload STCK de {len(payload)} bytes, se esperaban {3 * 8 * total}"
            )
        return manifest, np.frombuffer(payload, dtype="<f8").astype(np.float64)

    @classmethod
    def load_checkpoint(cls, path: Union[str, Path]) -> tuple["ParamStore", dict]:
        """Reconstruye un ParamStore completo desde un archivo STCK."""
        path = Path(path)
        manifest, flat = cls._read_checkpoint(path)
        store = cls()
        offset = 0
        for raw in manifest["slices"]:
            entry = ParamSlice.from_dict(raw)
            if entry.offset != offset:
                raise CheckpointError(f"Registro STCK no contiguo en {entry.name}")
            store._slices[entry.name] = entry
            offset = entry.stop
        n = offset
        store.theta, store.adam_m, store.adam_v = flat[:n].copy(), flat[n:2 * n].copy(), flat[2 * n:].copy()
        store.grad = np.zeros(n)
        store.step = int(manifest.get("step", 0))
        logger.info(f"[PARAMS] Checkpoint cargado: {path} ({n} coordenadas)")
        return store, manifest.get("extra", {})

    def restore(self, path: Union[str, Path]) -> dict:
        """Carga un checkpoint sobre este store exigiendo el mismo registro."""
        loaded, extra = ParamStore.load_checkpoint(path)
        if loaded.manifest() != self.manifest():
            mine, theirs = set(self.names()), set(loaded.names())
            raise CheckpointError(
                f"El registro del checkpoint no coincide con el modelo "
                f"(faltan {sorted(mine - theirs)[:5]}, sobran {sorted(theirs - mine)[:5]})"
            )
        self.theta[:] = loaded.theta
        self.adam_m[:] = loaded.adam_m
        self.adam_v[:] = loaded.adam_v
        self.step = loaded.step
        self.zero_grad()
        return extra
