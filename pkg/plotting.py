"""
Result Artifacts
CSV histories, mesh snapshots (SVG via jinja2, PNG via pillow), log-log
convergence charts (matplotlib) and run summaries
"""

import csv
import json
import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from jinja2 import Environment, FileSystemLoader, select_autoescape  # noqa: E402
from PIL import Image, ImageDraw, ImageFont  # noqa: E402

from amr import CSV_FIELDS, ConvergenceHistory, LevelRecord  # noqa: E402
from interface_geometry import InterfaceClassification, MismatchRegion  # noqa: E402
from mesh import Mesh  # noqa: E402

logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).parent / "templates"
matplotlib.rcParams['svg.hashsalt'] = 'ifem-results'

_env = Environment(loader=FileSystemLoader(str(TEMPLATE_DIR)),
                   autoescape=select_autoescape(['svg', 'xml', 'j2']),
                   trim_blocks=False, lstrip_blocks=False)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def export_results_csv(history: ConvergenceHistory, path):
    """Header `level,n_dof,...,wall_ms` then one row per level."""
    with open(Path(path), 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(CSV_FIELDS)
        for record in history:
            writer.writerow([_fmt(v) for v in record.csv_row()])


class ResultsWriter:
    """Streams level records into a CSV file as they are produced."""

    def __init__(self, path):
        self.path = Path(path)
        with open(self.path, 'w', newline='', encoding='utf-8') as f:
            csv.writer(f).writerow(CSV_FIELDS)

    def __call__(self, record: LevelRecord, state=None):
        with open(self.path, 'a', newline='', encoding='utf-8') as f:
            csv.writer(f).writerow([_fmt(v) for v in record.csv_row()])


def read_results_csv(path, label: Optional[str] = None) -> ConvergenceHistory:
    path = Path(path)
    history = ConvergenceHistory(label=label or path.parent.name or path.stem)
    with open(path, newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f)
        missing = set(CSV_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            estimator = float(row['estimator'])
            history.records.append(LevelRecord(
                level=int(row['level']),
                n_dof=int(row['n_dof']),
                n_elements=int(row['n_elements']),
                n_interface_elements=int(row['n_interface_elements']),
                energy_error=float(row['energy_error']),
                estimator=estimator,
                eff_index=float(row['eff_index']),
                min_angle_deg=float(row['min_angle_deg']),
                wall_ms=float(row['wall_ms']),
                eta=estimator,
                xi=float('nan'),
            ))
    return history


class _Frame:
    """Maps domain coordinates to image pixels (y axis flipped)."""

    def __init__(self, mesh: Mesh, size: int, margin: int):
        d = mesh.domain
        self.margin = margin
        self.scale = (size - 2 * margin) / max(d.x1 - d.x0, d.y1 - d.y0)
        self.x0, self.y1 = d.x0, d.y1
        self.width = int(round(2 * margin + self.scale * (d.x1 - d.x0)))
        self.height = int(round(2 * margin + self.scale * (d.y1 - d.y0)))

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        px = self.margin + self.scale * (points[..., 0] - self.x0)
        py = self.margin + self.scale * (self.y1 - points[..., 1])
        return np.stack([px, py], axis=-1)


def _interface_lines(classification: Optional[InterfaceClassification],
                     mismatch: Optional[Dict[int, MismatchRegion]]) -> List[np.ndarray]:
    if classification is None:
        return []
    lines = []
    for k in sorted(classification.cuts):
        if mismatch and k in mismatch:
            lines.append(mismatch[k].polyline)
        else:
            cut = classification.cuts[k]
            lines.append(np.array([cut.D, cut.E]))
    return lines


def export_mesh_svg(mesh: Mesh, classification: Optional[InterfaceClassification], path,
                    mismatch: Optional[Dict[int, MismatchRegion]] = None,
                    title: str = "mesh", size: int = 800):
    """One <polygon> per triangle, interface elements highlighted, the interface as polylines."""
    frame = _Frame(mesh, size, margin=30)
    pix = frame(mesh.element_coords())
    tags = classification.tags if classification is not None else np.ones(mesh.n_elements)
    fills = {0: '#fde68a', 1: '#e0f2fe', -1: '#dcfce7'}
    triangles = [{'points': " ".join(f"{x:.2f},{y:.2f}" for x, y in tri), 'fill': fills[int(t)]}
                 for tri, t in zip(pix, tags)]
    curves = [" ".join(f"{x:.2f},{y:.2f}" for x, y in frame(line))
              for line in _interface_lines(classification, mismatch)]
    n_iface = 0 if classification is None else classification.n_interface
    svg = _env.get_template("mesh.svg.j2").render(
        width=frame.width, height=frame.height, margin=frame.margin, title=title,
        stroke=max(0.15, min(1.0, 40.0 / math.sqrt(mesh.n_elements))),
        triangles=triangles, curves=curves,
        caption=f"{title}: {mesh.n_elements} elements, {n_iface} interface elements",
    )
    Path(path).write_text(svg, encoding='utf-8')
    return Path(path)


def mesh_image(mesh: Mesh, classification: Optional[InterfaceClassification] = None,
               size: int = 640) -> Image.Image:
    frame = _Frame(mesh, size, margin=12)
    img = Image.new('RGB', (frame.width, frame.height), '#ffffff')
    draw = ImageDraw.Draw(img)
    tags = classification.tags if classification is not None else np.ones(mesh.n_elements)
    fills = {0: '#fde68a', 1: '#e0f2fe', -1: '#dcfce7'}
    for tri, t in zip(frame(mesh.element_coords()), tags):
        draw.polygon([tuple(p) for p in tri], fill=fills[int(t)], outline='#4b5563')
    for line in _interface_lines(classification, None):
        draw.line([tuple(p) for p in frame(line)], fill='#dc2626', width=2)
    return img


def side_by_side(images: Sequence[Image.Image], labels: Sequence[str], path, title: str = ""):
    """Paste images in a row under a title bar with one label per image."""
    gap = 20
    height = max(im.height for im in images)
    total_width = sum(im.width for im in images) + gap * (len(images) - 1)
    combined = Image.new('RGB', (total_width, height + 100), '#f5f5f5')
    draw = ImageDraw.Draw(combined)
    try:
        title_font = ImageFont.truetype("arial.ttf", 28)
        label_font = ImageFont.truetype("arial.ttf", 20)
    except OSError:
        title_font = ImageFont.load_default()
        label_font = ImageFont.load_default()

    bbox = draw.textbbox((0, 0), title, font=title_font)
    draw.text(((total_width - (bbox[2] - bbox[0])) // 2, 20), title, fill='#1a1a1a', font=title_font)
    x = 0
    for im, label in zip(images, labels):
        draw.text((x + 10, 70), label, fill='#1d4ed8', font=label_font)
        combined.paste(im, (x, 100))
        x += im.width + gap
    combined.save(path)
    return Path(path)


def export_convergence_svg(histories: Iterable[ConvergenceHistory], path,
                           fields: Sequence[str] = ('energy_error', 'estimator'),
                           title: str = "convergence"):
    """Log-log DOF vs error / estimator for each history, with a slope -1/2 reference."""
    histories = [h for h in histories if len(h)]
    fig, ax = plt.subplots(figsize=(7, 5))
    markers = ['o', 's', '^', 'v', 'D', 'x']
    anchor = None
    for i, history in enumerate(histories):
        dof = history.column('n_dof')
        for j, name in enumerate(fields):
            values = history.column(name)
            keep = (dof > 0) & (values > 0) & np.isfinite(values)
            if not keep.any():
                continue
            label_name = history.estimator if name == 'estimator' else name.replace('_', ' ')
            ax.loglog(dof[keep], values[keep], marker=markers[(2 * i + j) % len(markers)],
                      linestyle='-' if j == 0 else '--', label=f"{history.label}: {label_name}")
            if anchor is None:
                anchor = (dof[keep][0], values[keep][0], dof[keep][-1])
    if anchor is not None:
        d0, v0, d1 = anchor
        ref = np.array([d0, d1])
        ax.loglog(ref, 0.5 * v0 * (ref / d0) ** -0.5, color='0.4', linestyle=':', label='slope -1/2')
    ax.set_xlabel('degrees of freedom')
    ax.set_ylabel('error / estimator')
    ax.set_title(title)
    ax.grid(True, which='both', alpha=0.3)
    if histories:
        ax.legend(fontsize=8)
    fig.savefig(path, format='svg', bbox_inches='tight', metadata={'Date': None})
    plt.close(fig)
    return Path(path)


def write_solution_csv(state, problem, path):
    """Vertex values x, y, u_h, u, |u - u_h|."""
    verts = state.mesh.vertices
    exact = problem.u(verts)
    with open(Path(path), 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['x', 'y', 'u_h', 'u', 'abs_error'])
        for (x, y), uh, u in zip(verts, state.solution.values, exact):
            writer.writerow([repr(float(x)), repr(float(y)), repr(float(uh)), repr(float(u)),
                             repr(float(abs(u - uh)))])


def write_summary_json(summary: dict, path):
    def clean(value):
        if isinstance(value, float) and not math.isfinite(value):
            return None
        if isinstance(value, dict):
            return {k: clean(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [clean(v) for v in value]
        if isinstance(value, np.generic):
            return clean(value.item())
        return value

    with open(Path(path), 'w', encoding='utf-8') as f:
        json.dump(clean(summary), f, indent=2, ensure_ascii=False)
