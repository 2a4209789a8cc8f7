"""On-disk persistence for the dual memory and its embedding index.

Layout under the memory root:

    agents/<id>.json            one agent per file, key-sorted JSON
    tools/<name>/manifest.json  manifest fields, key-sorted JSON
    tools/<name>/impl.src       verbatim module source
    experience/<kind>/<id>.md   rendered markdown, '## ' first line,
                                trailing metadata comment for round-trip
    index/embeddings.jsonl      one {id, kind, vector} record per key
    manifest.json               format_version, counts, content hash

All serialization is deterministic (sorted keys, UTF-8, LF), so saving the
same memory twice produces a byte-identical tree, and the content hash
detects any tampering on load.
"""
from __future__ import annotations

import gzip
import hashlib
import json
import logging
import os
import shutil
import tarfile
import tempfile
from dataclasses import dataclass
from pathlib import Path

from ..errors import (
    HashMismatch,
    PersistenceError,
    UnsupportedVersion,
    ValidationError,
)
from ..memory import (
    AgentSpec,
    AssetMemory,
    ExperienceItem,
    ExperienceMemory,
    Memories,
    ToolEntry,
    validate_agent_spec,
    validate_experience_item,
    validate_tool_entry,
)
from ..retrieval import EmbeddingIndex, EmbeddingProvider

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
EMBEDDINGS_PATH = "index/embeddings.jsonl"
META_PREFIX = "<!-- meta "
META_SUFFIX = " -->"


def _dump_json(value) -> str:
    return json.dumps(value, indent=2, ensure_ascii=False, sort_keys=True) + "\n"


@dataclass(frozen=True)
class MemorySnapshot:
    root: Path
    format_version: int
    counts: dict[str, int]
    content_hash: str


def _iter_tree_files(root: Path) -> list[Path]:
    # Only the root manifest is excluded; tool manifests are content.
    files = [
        p for p in root.rglob("*")
        if p.is_file() and str(p.relative_to(root)) != MANIFEST_NAME
    ]
    return sorted(files, key=lambda p: str(p.relative_to(root)))


def compute_content_hash(root: Path) -> str:
    digest = hashlib.sha256()
    for path in _iter_tree_files(root):
        rel = str(path.relative_to(root)).replace(os.sep, "/")
        digest.update(rel.encode("utf-8"))
        digest.update(b"\0")
        digest.update(hashlib.sha256(path.read_bytes()).digest())
        digest.update(b"\0")
    return digest.hexdigest()


def _experience_file_body(item: ExperienceItem, seq: int) -> str:
    meta = dict(item.to_dict())
    del meta["content"]
    meta["seq"] = seq
    return (
        item.rendered().rstrip("\n")
        + "\n\n"
        + META_PREFIX
        + json.dumps(meta, ensure_ascii=False, sort_keys=True)
        + META_SUFFIX
        + "\n"
    )


def _parse_experience_file(text: str, path: Path) -> tuple[ExperienceItem, int]:
    marker = text.rfind(META_PREFIX)
    if marker == -1 or not text.rstrip().endswith(META_SUFFIX):
        raise ValidationError(f"{path}: missing experience metadata comment")
    meta_json = text.rstrip()[marker + len(META_PREFIX):-len(META_SUFFIX)]
    try:
        meta = json.loads(meta_json)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: unreadable experience metadata: {exc}") from exc
    content = text[:marker].rstrip("\n")
    seq = meta.pop("seq")
    meta["content"] = content
    item = ExperienceItem.from_dict(meta)
    validate_experience_item(item)
    return item, seq


def _write_tree(assets: AssetMemory, experiences: ExperienceMemory, root: Path,
                index: EmbeddingIndex) -> None:
    (root / "agents").mkdir(parents=True, exist_ok=True)
    (root / "tools").mkdir(parents=True, exist_ok=True)
    (root / "experience").mkdir(parents=True, exist_ok=True)
    (root / "index").mkdir(parents=True, exist_ok=True)

    for agent_id in sorted(assets.agents):
        agent = assets.agents[agent_id]
        (root / "agents" / f"{agent_id}.json").write_text(_dump_json(agent.to_dict()), encoding="utf-8")

    for name in sorted(assets.tools):
        tool = assets.tools[name]
        tool_dir = root / "tools" / name
        tool_dir.mkdir(parents=True, exist_ok=True)
        (tool_dir / "manifest.json").write_text(_dump_json(tool.manifest_dict()), encoding="utf-8")
        (tool_dir / "impl.src").write_text(tool.impl_source, encoding="utf-8")

    for seq, item in enumerate(experiences.items):
        kind_dir = root / "experience" / item.kind
        kind_dir.mkdir(parents=True, exist_ok=True)
        (kind_dir / f"{item.id}.md").write_text(_experience_file_body(item, seq), encoding="utf-8")

    lines = []
    for (kind, key), vector in sorted(index.entries().items()):
        lines.append(json.dumps({"id": key, "kind": kind, "vector": list(vector)}, sort_keys=True))
    (root / EMBEDDINGS_PATH).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    manifest = {
        "format_version": FORMAT_VERSION,
        "counts": {
            "agents": len(assets.agents),
            "tools": len(assets.tools),
            "experiences": len(experiences),
        },
        "content_hash": compute_content_hash(root),
    }
    (root / MANIFEST_NAME).write_text(_dump_json(manifest), encoding="utf-8")


def save_memory(
    assets: AssetMemory,
    experiences: ExperienceMemory,
    root: str | Path,
    provider: EmbeddingProvider,
    index: EmbeddingIndex | None = None,
) -> MemorySnapshot:
    """Write the full memory tree atomically (staging dir + rename into place)."""
    root = Path(root)
    if index is None:
        from ..memory import AssetView

        index = EmbeddingIndex.build(provider, AssetView(assets), experiences.items)
    root.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{root.name}.staging-", dir=root.parent))
    try:
        _write_tree(assets, experiences, staging, index)
        if root.exists():
            old = root.with_name(f".{root.name}.old-{os.getpid()}")
            os.rename(root, old)
            os.rename(staging, root)
            shutil.rmtree(old, ignore_errors=True)
        else:
            os.rename(staging, root)
    except OSError as exc:
        shutil.rmtree(staging, ignore_errors=True)
        raise PersistenceError(f"could not write memory tree at {root}: {exc}") from exc
    manifest = json.loads((root / MANIFEST_NAME).read_text(encoding="utf-8"))
    return MemorySnapshot(
        root=root,
        format_version=manifest["format_version"],
        counts=manifest["counts"],
        content_hash=manifest["content_hash"],
    )


def _read_manifest(root: Path) -> dict:
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise PersistenceError(f"no memory manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"memory format_version {version!r} unsupported (expected {FORMAT_VERSION})")
    return manifest


def verify_snapshot(root: str | Path) -> None:
    root = Path(root)
    manifest = _read_manifest(root)
    actual = compute_content_hash(root)
    if actual != manifest.get("content_hash"):
        raise HashMismatch(
            f"memory tree at {root} does not match its manifest hash "
            f"(expected {manifest.get('content_hash')}, got {actual})"
        )


def load_memory(root: str | Path, verify: bool = True) -> Memories:
    """Load and fully re-validate a memory tree; every invariant is re-checked."""
    root = Path(root)
    _read_manifest(root)
    if verify:
        verify_snapshot(root)

    assets = AssetMemory()
    tools: list[ToolEntry] = []
    tools_dir = root / "tools"
    if tools_dir.is_dir():
        for tool_dir in sorted(p for p in tools_dir.iterdir() if p.is_dir()):
            manifest_path = tool_dir / "manifest.json"
            impl_path = tool_dir / "impl.src"
            if not manifest_path.is_file():
                raise ValidationError(f"{manifest_path}: missing tool manifest")
            if not impl_path.is_file():
                raise ValidationError(f"{impl_path}: missing tool implementation source")
            record = json.loads(manifest_path.read_text(encoding="utf-8"))
            record["impl_source"] = impl_path.read_text(encoding="utf-8")
            tools.append(validate_tool_entry(record))

    agents: list[AgentSpec] = []
    tool_names = {t.name for t in tools}
    roles_seen: list[str] = []
    agents_dir = root / "agents"
    if agents_dir.is_dir():
        for agent_path in sorted(agents_dir.glob("*.json")):
            record = json.loads(agent_path.read_text(encoding="utf-8"))
            agent = validate_agent_spec(record, tools=tool_names, existing_roles=roles_seen)
            roles_seen.append(agent.role)
            agents.append(agent)

    assets.insert([*tools, *agents])

    experiences = ExperienceMemory()
    experience_dir = root / "experience"
    loaded: list[tuple[int, ExperienceItem]] = []
    if experience_dir.is_dir():
        for item_path in sorted(experience_dir.rglob("*.md")):
            item, seq = _parse_experience_file(item_path.read_text(encoding="utf-8"), item_path)
            loaded.append((seq, item))
    loaded.sort(key=lambda pair: pair[0])
    experiences.insert([item for _, item in loaded])

    return Memories(assets=assets, experiences=experiences)


def load_index(
    root: str | Path,
    provider: EmbeddingProvider,
    memories: Memories,
) -> tuple[EmbeddingIndex, bool]:
    """Load the persisted embedding index, rebuilding when it is stale.

    A rebuild is always safe because embedding is deterministic per provider.
    Returns (index, rebuilt).
    """
    from ..memory import AssetView

    root = Path(root)
    index = EmbeddingIndex(provider)
    path = root / EMBEDDINGS_PATH
    if path.is_file():
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            record = json.loads(line)
            index.set_vector(record["kind"], record["id"], record["vector"])
        expected = {
            ("agent", key) for key in memories.assets.agents
        } | {
            ("tool", key) for key in memories.assets.tools
        } | {
            ("experience", item.id) for item in memories.experiences.items
        }
        if set(index.entries()) == expected:
            return index, False
        logger.warning("embedding index at %s is stale; rebuilding", path)
    index.refresh(AssetView(memories.assets), memories.experiences.items)
    return index, True


# --- archives ---------------------------------------------------------------

def export_memory(root: str | Path, archive_path: str | Path) -> Path:
    """Pack a memory tree into a deterministic gzip tarball."""
    root = Path(root)
    _read_manifest(root)
    archive_path = Path(archive_path)
    archive_path.parent.mkdir(parents=True, exist_ok=True)

    def normalize(info: tarfile.TarInfo) -> tarfile.TarInfo:
        info.uid = info.gid = 0
        info.uname = info.gname = ""
        info.mtime = 0
        info.mode = 0o644 if info.isfile() else 0o755
        return info

    members = sorted(
        [p for p in root.rglob("*")], key=lambda p: str(p.relative_to(root))
    )
    # A bare GzipFile with empty filename and zero mtime keeps the archive
    # byte-identical across exports of the same tree.
    with open(archive_path, "wb") as raw:
        with gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0, compresslevel=9) as gz:
            with tarfile.open(fileobj=gz, mode="w") as tar:
                for member in members:
                    tar.add(member, arcname=str(member.relative_to(root)), recursive=False, filter=normalize)
    return archive_path


def import_memory(archive_path: str | Path, root: str | Path) -> Memories:
    """Unpack an exported archive and validate it before installing at root.

    A tampered archive (hash mismatch, invalid entries) is refused and the
    target root is left untouched.
    """
    root = Path(root)
    archive_path = Path(archive_path)
    if root.exists() and any(root.iterdir()):
        raise PersistenceError(f"import target {root} exists and is not empty")
    root.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".import-", dir=root.parent))
    try:
        with tarfile.open(archive_path, mode="r:gz") as tar:
            for member in tar.getmembers():
                member_path = Path(member.name)
                if member_path.is_absolute() or ".." in member_path.parts:
                    raise PersistenceError(f"archive member escapes the tree: {member.name!r}")
            tar.extractall(staging)
        memories = load_memory(staging, verify=True)
        if root.exists():
            root.rmdir()
        os.rename(staging, root)
        return memories
    except (tarfile.TarError, OSError) as exc:
        raise PersistenceError(f"could not import archive {archive_path}: {exc}") from exc
    finally:
        shutil.rmtree(staging, ignore_errors=True)
