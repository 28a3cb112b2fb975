"""Flatten JSON-like documents into dotted scalar paths and back."""

import logging

log = logging.getLogger(__name__)

DEFAULT_LIST_CAP = 16
DEFAULT_DEPTH_CAP = 16


class FlatRecord(dict):
    """``{dotted.path: scalar}``; ``truncated`` counts list items and subtrees cut by the caps."""

    def __init__(self, *args, truncated=0, **kwargs):
        super().__init__(*args, **kwargs)
        self.truncated = truncated


def flatten(document, list_cap=DEFAULT_LIST_CAP, depth_cap=DEFAULT_DEPTH_CAP):
    out = FlatRecord()

    def walk(node, prefix, depth):
        if isinstance(node, dict) or isinstance(node, list):
            if depth >= depth_cap:
                out.truncated += 1
                return
            if isinstance(node, dict):
                items = ((str(k), v) for k, v in node.items())
            else:
                if len(node) > list_cap:
                    out.truncated += len(node) - list_cap
                items = ((str(i), v) for i, v in enumerate(node[:list_cap]))
            for key, value in items:
                walk(value, f"{prefix}.{key}" if prefix else key, depth + 1)
        else:
            out[prefix] = node

    walk(document, "", 0)
    if out.truncated:
        log.warning("flatten truncated %d list items or nested subtrees", out.truncated)
    return out


def unflatten(record):
    """Inverse of ``flatten`` for records without truncation (numeric segments become list indices)."""
    if set(record) == {""}:
        return record[""]
    root = {}
    for path, value in record.items():
        parts = path.split(".")
        node = root
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value

    def fix(node):
        if not isinstance(node, dict):
            return node
        node = {k: fix(v) for k, v in node.items()}
        if node and all(k.isdigit() for k in node):
            return [node[k] for k in sorted(node, key=int)]
        return node

    return fix(root)
