"""On-disk formats: perturbation artifacts, victim manifests, corpora."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .errors import ArtifactError
from .numerics import ScaleMask, read_mmt, write_mmt
from .optimizer import AttackCorpus
from .perturbation import PromptDelta, TextureUAP
from .victim import CaptionBank, ToyVictim, build_toy_victim

log = logging.getLogger(__name__)

UAP_FILE = "uap.mmt"
DELTA_FILE = "delta.mmt"
META_FILE = "artifact.txt"


def _kv_lines(items) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items)


def _parse_kv(path: Path) -> list[tuple[str, str]]:
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise ArtifactError(f"{path}:{lineno}: expected 'key = value'")
        k, v = s.split("=", 1)
        out.append((k.strip(), v.strip()))
    return out


def save_artifact(directory, uap: TextureUAP, delta: PromptDelta, metadata: dict | None = None) -> Path:
    """Write ``uap.mmt``, ``delta.mmt`` and the ``artifact.txt`` sidecar."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_mmt(d / UAP_FILE, uap.base_patch)
    write_mmt(d / DELTA_FILE, delta.vector.reshape(1, -1, 1))
    meta = {
        "eps_v": repr(float(uap.eps_v)),
        "s_k": str(uap.s_k),
        "levels": str(uap.mask.levels),
        "keep_approx": str(int(uap.mask.keep_approx)),
        "keep_detail": ",".join(str(int(k)) for k in uap.mask.keep_detail),
        "level_weights": ",".join(repr(w) for w in uap.mask.level_weights),
        "eps_t": repr(float(delta.eps_t)),
    }
    for k, v in (metadata or {}).items():
        meta.setdefault(k, str(v))
    (d / META_FILE).write_text("# perturbation artifact\n" + _kv_lines(meta.items()))
    return d


def load_artifact(directory, expected_hash: str | None = None):
    """Return ``(uap, delta, metadata)``; raises :class:`ArtifactError` on any
    malformed file. A differing ``config_hash`` only logs a warning."""
    d = Path(directory)
    meta_path = d / META_FILE
    if not meta_path.is_file():
        raise ArtifactError(f"missing artifact metadata: {meta_path}")
    meta = dict(_parse_kv(meta_path))
    patch = read_mmt(d / UAP_FILE)
    vec = read_mmt(d / DELTA_FILE)
    try:
        mask = ScaleMask(
            bool(int(meta["keep_approx"])),
            tuple(bool(int(x)) for x in meta["keep_detail"].split(",")),
            tuple(float(x) for x in meta["level_weights"].split(",")),
        )
        uap = TextureUAP(patch, int(meta["s_k"]), float(meta["eps_v"]), mask)
        delta = PromptDelta(vec.reshape(-1), float(meta["eps_t"]))
    except (KeyError, ValueError) as exc:
        raise ArtifactError(f"{meta_path}: invalid metadata ({exc})") from None
    if expected_hash is not None and meta.get("config_hash") not in (None, expected_hash):
        log.warning(
            "artifact %s was produced under config hash %s, current config hash is %s",
            d, meta.get("config_hash"), expected_hash,
        )
    return uap, delta, meta


def save_victim_manifest(path, victim: ToyVictim) -> None:
    h, w, c = victim.image_shape
    items = [
        ("seed", victim.seed),
        ("tau", repr(victim.tau)),
        ("family_share", repr(victim.family_share)),
        ("image_shape", f"{h},{w},{c}"),
    ]
    items += [("caption", f"{e.task}\t{e.caption}") for e in victim.bank.entries]
    Path(path).write_text("# victim manifest; parameters regenerate from seed\n" + _kv_lines(items))


def load_victim_manifest(path) -> ToyVictim:
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"missing victim manifest: {path}")
    fields, captions = {}, []
    for k, v in _parse_kv(path):
        if k == "caption":
            task, _, text = v.partition("\t")
            captions.append((task.strip(), text.strip()))
        else:
            fields[k] = v
    try:
        shape = tuple(int(x) for x in fields["image_shape"].split(","))
        return build_toy_victim(
            int(fields["seed"]), float(fields["tau"]), CaptionBank.from_captions(captions),
            shape, float(fields["family_share"]),
        )
    except (KeyError, ValueError) as exc:
        raise ArtifactError(f"{path}: invalid victim manifest ({exc})") from None


def save_corpus(directory, corpus: AttackCorpus) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    train_i, train_p = set(corpus.train_images), set(corpus.train_prompts)
    lines = ["index\tsplit\tfile"]
    for n, img in enumerate(corpus.images):
        name = f"image_{n:03d}.mmt"
        write_mmt(d / name, img)
        lines.append(f"{n}\t{'train' if n in train_i else 'heldout'}\t{name}")
    (d / "images.tsv").write_text("\n".join(lines) + "\n")
    lines = ["index\tsplit\ttask\ttext"]
    for n, (text, task) in enumerate(corpus.prompts):
        lines.append(f"{n}\t{'train' if n in train_p else 'heldout'}\t{task}\t{text}")
    (d / "prompts.tsv").write_text("\n".join(lines) + "\n")
