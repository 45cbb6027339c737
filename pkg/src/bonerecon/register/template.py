"""Labelled part libraries and template assembly."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import InputError, LabelLookupError, ParseError
from ..geom import TriMesh, concatenate, is_watertight, load_mesh, save_mesh


@dataclass
class TemplateLibrary:
    parts: dict = field(default_factory=dict)  # label -> TriMesh

    def __post_init__(self):
        for label, mesh in self.parts.items():
            if not is_watertight(mesh):
                raise InputError("template part %s is not watertight" % label)

    @property
    def labels(self):
        return list(self.parts)

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        index = {}
        for label, mesh in self.parts.items():
            name = "%s.off" % label
            save_mesh(mesh, directory / name)
            index[label] = name
        with open(directory / "index.json", "w") as fh:
            json.dump(index, fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        try:
            with open(directory / "index.json") as fh:
                index = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError("%s: bad library index (%s)" % (directory / "index.json", exc)) from None
        return cls({label: load_mesh(directory / name) for label, name in sorted(index.items())})


def read_regions(path):
    """One label per line; blank lines and '#' comments are ignored."""
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                out.append(line)
    return out


def write_regions(path, labels):
    with open(path, "w") as fh:
        fh.write("".join("%s\n" % lab for lab in labels))


def assemble_template(library, regions):
    """Concatenate the selected parts; ``labels`` maps each vertex to its part in ``part_names``."""
    if not regions:
        raise InputError("region list is empty")
    chosen = list(dict.fromkeys(regions))
    for lab in chosen:
        if lab not in library.parts:
            raise LabelLookupError("unknown template label %r" % lab)
    meshes = [library.parts[lab] for lab in chosen]
    out = concatenate(meshes)
    labels = np.concatenate([np.full(m.n_vertices, i, dtype=np.int64) for i, m in enumerate(meshes)])
    return TriMesh(out.vertices, out.faces, labels, tuple(chosen))
