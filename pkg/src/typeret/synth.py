"""Procedural "typefaces" and page renderer for fixtures and smoke tests.

Each synthetic type is an alphabet of glyphs assembled from a family-specific
set of stroke primitives. Documents add their own paper tone, ink density,
blur and noise, so the same type looks slightly different across documents.
"""
from dataclasses import dataclass
import csv
import math
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

FAMILIES = ("vertical", "round", "slanted", "crossed")
SUPERSAMPLE = 4


@dataclass(frozen=True)
class TypeStyle:
    name: str
    glyphs: tuple  # float arrays in [0, 1], ink = 1
    height: int


def _draw_glyph(rng, family, w, h, stroke):
    ss = SUPERSAMPLE
    canvas = Image.new("L", (w * ss, h * ss), 0)
    draw = ImageDraw.Draw(canvas)
    sw = max(1, int(round(stroke * ss)))

    def pt(u, v):
        return (u * (w - 1) * ss, v * (h - 1) * ss)

    n_parts = int(rng.integers(2, 5))
    for _ in range(n_parts):
        if family == "vertical":
            u = rng.choice([0.2, 0.5, 0.8])
            v0, v1 = sorted(rng.choice([0.1, 0.3, 0.7, 0.9], 2, replace=False))
            draw.line([pt(u, v0), pt(u, v1)], fill=255, width=sw)
            draw.polygon([pt(u - 0.12, v1), pt(u, v1 + 0.08), pt(u + 0.12, v1), pt(u, v1 - 0.08)], fill=255)
        elif family == "round":
            cx, cy = rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7)
            r = rng.uniform(0.15, 0.35)
            start = float(rng.choice([0, 90, 180, 270]))
            box = [pt(cx - r, cy - r), pt(cx + r, cy + r)]
            draw.arc(box, start, start + rng.uniform(180, 330), fill=255, width=sw)
        elif family == "slanted":
            u0 = rng.uniform(0.0, 0.5)
            draw.line([pt(u0, 0.95), pt(u0 + 0.45, 0.05)], fill=255, width=sw)
            cx, cy = u0 + 0.4, rng.uniform(0.15, 0.35)
            draw.ellipse([pt(cx - 0.14, cy - 0.1), pt(cx + 0.14, cy + 0.1)], outline=255, width=max(1, sw // 2))
        else:
            cx, cy = rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75)
            a = rng.uniform(0.15, 0.3)
            draw.line([pt(cx - a, cy), pt(cx + a, cy)], fill=255, width=sw)
            draw.line([pt(cx, cy - a), pt(cx, cy + a)], fill=255, width=sw)
            d = 0.07
            draw.ellipse([pt(cx + a - d, cy + a - d), pt(cx + a + d, cy + a + d)], fill=255)
    small = canvas.resize((w, h), Image.BILINEAR)
    return np.asarray(small, dtype=np.float64) / 255.0


def make_type(name, family, seed, n_glyphs=12, height=14):
    rng = np.random.default_rng(seed)
    stroke = {"vertical": 2.4, "round": 1.6, "slanted": 1.2, "crossed": 1.8}[family]
    glyphs = []
    for _ in range(n_glyphs):
        w = int(rng.integers(int(height * 0.55), int(height * 0.95)))
        glyphs.append(_draw_glyph(rng, family, w, height, stroke))
    return TypeStyle(name, tuple(glyphs), height)


def document_params(rng):
    return {
        "paper": float(rng.uniform(200, 240)),
        "ink": float(rng.uniform(20, 60)),
        "blur": float(rng.uniform(0.3, 0.9)),
        "noise": float(rng.uniform(2, 6)),
        "scale": float(rng.uniform(0.95, 1.05)),
    }


def render_page(style, rng, params=None, size=(160, 160)):
    """Render a grayscale page (dark ink on light paper) of random text."""
    if params is None:
        params = document_params(rng)
    h, w = size
    ink = np.zeros(size)
    scale = params["scale"]
    glyphs = style.glyphs
    if abs(scale - 1.0) > 1e-3:
        glyphs = tuple(ndimage.zoom(g, scale, order=1) for g in glyphs)
    gh = max(g.shape[0] for g in glyphs)
    line_h = int(math.ceil(gh * 1.45))
    y = int(rng.integers(2, 6))
    while y + gh < h - 2:
        x = int(rng.integers(2, 8))
        while True:
            g = glyphs[int(rng.integers(len(glyphs)))]
            if x + g.shape[1] >= w - 2:
                break
            ink[y:y + g.shape[0], x:x + g.shape[1]] = np.maximum(ink[y:y + g.shape[0], x:x + g.shape[1]], g)
            x += g.shape[1] + 1
            if rng.random() < 0.15:
                x += int(gh * 0.6)
        y += line_h
    page = params["paper"] - (params["paper"] - params["ink"]) * ink
    page = ndimage.gaussian_filter(page, params["blur"])
    page = page + rng.normal(0, params["noise"], size)
    return np.clip(np.rint(page), 0, 255).astype(np.uint8)


def make_corpus(root, n_types=4, docs_per_type=3, images_per_doc=5, size=(160, 160), seed=0):
    """Write a ``<type>/<document>/<image>.png`` tree; returns the manifest rows.

    Type ``i`` uses family ``FAMILIES[i % 4]``; everything is derived from
    ``seed`` so the tree is reproducible.
    """
    root = Path(root)
    rows = []
    for ti in range(n_types):
        family = FAMILIES[ti % len(FAMILIES)]
        name = f"ty{ti:02d}"
        style = make_type(name, family, seed * 1000 + ti)
        for di in range(docs_per_type):
            doc = f"{name}-d{di}"
            drng = np.random.default_rng([seed, ti, di])
            params = document_params(drng)
            ddir = root / name / doc
            ddir.mkdir(parents=True, exist_ok=True)
            for ii in range(images_per_doc):
                irng = np.random.default_rng([seed, ti, di, ii, 1])
                page = render_page(style, irng, params, size)
                path = ddir / f"{doc}-p{ii}.png"
                Image.fromarray(page).save(path)
                rows.append((path.name, doc, name, str(path)))
    return rows


def write_manifest(path, rows, train_types):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["image_id", "document_id", "type_label", "split", "path"])
        for image_id, doc, label, p in rows:
            wr.writerow([image_id, doc, label, "train" if label in train_types else "test", p])
