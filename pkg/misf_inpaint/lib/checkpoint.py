"""Checkpoint directories: one MTF1 file per tensor plus a text manifest.

``manifest.txt`` starts with ``key = value`` lines (variant, preset,
config_hash, step) followed by a ``[tensors]`` section listing
``name shape role crc32`` for every stored tensor. The checksum covers the
whole MTF1 file and is checked on load. Roles are ``param`` or an
optimizer moment (``gen-first``, ``gen-second``, ``disc-first``,
``disc-second``). The resolved run config is kept beside it as ``config.txt``.
"""

from __future__ import annotations

import logging
import pathlib
import zlib
from dataclasses import dataclass, field

import numpy as np

from misf_inpaint.lib import kvfile, mtf
from misf_inpaint.lib.errors import CheckpointError, ContractError
from misf_inpaint.lib.networks import MisfModel
from misf_inpaint.lib.optim import AdamState

MANIFEST = "manifest.txt"
CONFIG = "config.txt"
MOMENT_ROLES = ("gen-first", "gen-second", "disc-first", "disc-second")


@dataclass
class TensorEntry:
    name: str
    shape: tuple[int, ...]
    role: str
    crc32: int | None = None

    @property
    def filename(self) -> str:
        if self.role == "param":
            return f"{self.name}.mtf"
        return f"{self.name}.{self.role}.mtf"

    def line(self) -> str:
        fields = [self.name, "x".join(map(str, self.shape)) or "scalar", self.role]
        if self.crc32 is not None:
            fields.append(f"{self.crc32:08x}")
        return " ".join(fields)

    @classmethod
    def parse(cls, line: str) -> TensorEntry:
        fields = line.split()
        if len(fields) not in (3, 4):
            raise CheckpointError(line, "manifest lines are 'name shape role [crc32]'")
        name, shape, role = fields[:3]
        try:
            dims = () if shape == "scalar" else tuple(int(d) for d in shape.split("x"))
            crc = int(fields[3], 16) if len(fields) == 4 else None
        except ValueError as err:
            raise CheckpointError(name, f"bad manifest line {line!r}") from err
        return cls(name, dims, role, crc)


@dataclass
class CheckpointManifest:
    variant: str
    preset: str
    config_hash: str
    step: int
    gen_step: int = 0
    disc_step: int = 0
    tensors: list[TensorEntry] = field(default_factory=list)

    def to_text(self) -> str:
        header = [
            f"variant = {self.variant}",
            f"preset = {self.preset}",
            f"config_hash = {self.config_hash}",
            f"step = {self.step}",
            f"gen_step = {self.gen_step}",
            f"disc_step = {self.disc_step}",
            "",
            "[tensors]",
        ]
        return "\n".join(header + [entry.line() for entry in self.tensors]) + "\n"


def read_manifest(directory: str | pathlib.Path) -> CheckpointManifest:
    path = pathlib.Path(directory) / MANIFEST
    if not path.is_file():
        raise CheckpointError(MANIFEST, f"no manifest in {directory}")
    parsed = kvfile.parse_file(path)
    values = parsed.values
    try:
        return CheckpointManifest(
            variant=values["variant"],
            preset=values["preset"],
            config_hash=values["config_hash"],
            step=int(values["step"]),
            gen_step=int(values.get("gen_step", 0)),
            disc_step=int(values.get("disc_step", 0)),
            tensors=[TensorEntry.parse(line) for line in parsed.sections.get("tensors", [])],
        )
    except KeyError as err:
        raise CheckpointError(MANIFEST, f"missing manifest key {err}") from err


def read_config_text(directory: str | pathlib.Path) -> str:
    path = pathlib.Path(directory) / CONFIG
    if not path.is_file():
        raise CheckpointError(CONFIG, f"no run config in {directory}")
    return path.read_text(encoding="utf-8")


def save_checkpoint(
    directory: str | pathlib.Path,
    model: MisfModel,
    step: int,
    config_text: str,
    config_hash: str,
    gen_state: AdamState | None = None,
    disc_state: AdamState | None = None,
) -> pathlib.Path:
    """Write every parameter and optimizer moment; returns the directory."""
    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays: list[tuple[TensorEntry, np.ndarray]] = []
    for name, param in model.named_parameters().items():
        arrays.append((TensorEntry(name, param.shape, "param"), param.data))
    for prefix, state in (("gen", gen_state), ("disc", disc_state)):
        if state is None:
            continue
        for kind, moments in (("first", state.first), ("second", state.second)):
            for name, value in moments.items():
                arrays.append((TensorEntry(name, value.shape, f"{prefix}-{kind}"), value))

    for entry, value in arrays:
        path = directory / entry.filename
        mtf.save(path, value)
        entry.crc32 = zlib.crc32(path.read_bytes())
    manifest = CheckpointManifest(
        variant=model.variant.value,
        preset=model.config.preset.name,
        config_hash=config_hash,
        step=step,
        gen_step=gen_state.step if gen_state else 0,
        disc_step=disc_state.step if disc_state else 0,
        tensors=[entry for entry, _ in arrays],
    )
    (directory / CONFIG).write_text(config_text, encoding="utf-8")
    (directory / MANIFEST).write_text(manifest.to_text(), encoding="utf-8")
    logging.info("saved checkpoint at step %d to %s", step, directory)
    return directory


def _read_tensor(directory: pathlib.Path, entry: TensorEntry) -> np.ndarray:
    path = directory / entry.filename
    try:
        raw = path.read_bytes()
    except FileNotFoundError as err:
        raise CheckpointError(entry.name, f"missing tensor file {entry.filename}") from err
    if entry.crc32 is not None and zlib.crc32(raw) != entry.crc32:
        raise CheckpointError(entry.name, f"checksum mismatch in {entry.filename}")
    try:
        value = mtf.load(path)
    except ContractError as err:
        raise CheckpointError(entry.name, f"corrupt tensor file: {err}") from err
    if value.shape != entry.shape:
        raise CheckpointError(
            entry.name, f"file holds shape {value.shape}, manifest says {entry.shape}"
        )
    return value


def load_checkpoint(
    directory: str | pathlib.Path,
    model: MisfModel,
    gen_state: AdamState | None = None,
    disc_state: AdamState | None = None,
    expected_hash: str | None = None,
) -> CheckpointManifest:
    """Restore parameters (and optimizer state when given) in place.

    Every model parameter must be present with a matching shape. A differing
    config hash only logs a warning.
    """
    directory = pathlib.Path(directory)
    manifest = read_manifest(directory)
    if manifest.variant != model.variant.value:
        raise CheckpointError(
            "variant", f"checkpoint is {manifest.variant}, model is {model.variant.value}"
        )
    if expected_hash is not None and expected_hash != manifest.config_hash:
        logging.warning(
            "config hash %s differs from checkpoint's %s", expected_hash, manifest.config_hash
        )

    params = {e.name: e for e in manifest.tensors if e.role == "param"}
    loaded: dict[str, np.ndarray] = {}
    for name, param in model.named_parameters().items():
        entry = params.get(name)
        if entry is None:
            raise CheckpointError(name, "parameter missing from checkpoint")
        if entry.shape != param.shape:
            raise CheckpointError(name, f"shape {entry.shape} does not match model {param.shape}")
        loaded[name] = _read_tensor(directory, entry)
    for name, param in model.named_parameters().items():
        param.data[...] = loaded[name]
        param.grad = None

    states = {"gen": gen_state, "disc": disc_state}
    for prefix, state in states.items():
        if state is None:
            continue
        state.first.clear()
        state.second.clear()
        state.step = manifest.gen_step if prefix == "gen" else manifest.disc_step
    for entry in manifest.tensors:
        if entry.role not in MOMENT_ROLES:
            continue
        prefix, kind = entry.role.split("-")
        state = states[prefix]
        if state is None:
            continue
        target = state.first if kind == "first" else state.second
        target[entry.name] = _read_tensor(directory, entry).astype(model.dtype)
    logging.info("loaded checkpoint step %d from %s", manifest.step, directory)
    return manifest
