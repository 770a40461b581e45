"""Ready-made domains used by the examples, tests and CLI."""

import math

import numpy as np

from . import geometry as geo


def rectangle(a=math.pi, b=math.pi, plus="horizontal", center=(0.0, 0.0)):
    """Flat rectangle ``a x b`` centered at ``center``.

    ``plus="horizontal"`` tags the top and bottom sides plus and the vertical
    sides minus; ``"vertical"`` swaps the roles.
    """
    cx, cy = center
    c = [
        (cx - a / 2, cy - b / 2),
        (cx + a / 2, cy - b / 2),
        (cx + a / 2, cy + b / 2),
        (cx - a / 2, cy + b / 2),
    ]
    h, v = ("plus", "minus") if plus == "horizontal" else ("minus", "plus")
    tags = [h, v, h, v]
    arcs = tuple(
        geo.segment(c[i], c[(i + 1) % 4], tag=tags[i], name=f"side{i}") for i in range(4)
    )
    return geo.PolygonalDomain(geo.MetricField.flat(), arcs, tuple(c), 0.0,
                               tuple((i, (i + 1) % 4) for i in range(4)), name="rectangle")


def scherk_square(side=math.pi):
    """The square on which ``log(cos x / cos y)`` lives, side ``side``.

    The graph tends to ``+inf`` on the horizontal sides (plus) and to
    ``-inf`` on the vertical sides (minus).
    """
    d = rectangle(side, side)
    return geo.PolygonalDomain(d.metric, d.arcs, d.corners, 0.0, d.arc_corners, name="scherk")


def annulus(r_in=1.0, r_out=2.0, plus="outer"):
    """Flat annulus with both boundary circles tagged."""
    outer = geo.circle_arc((0, 0), r_out, 0.0, 2 * math.pi, tag="plus" if plus == "outer" else "minus")
    # inner circle traversed clockwise so its outward normal points at the center
    inner = geo.circle_arc((0, 0), r_in, 2 * math.pi, 0.0, tag="minus" if plus == "outer" else "plus",
                           outward=1)
    return geo.PolygonalDomain(geo.MetricField.flat(), (outer, inner), (), 0.0, (None, None),
                               name="annulus")


def disk(radius=1.0, tag="plus", H0=0.0):
    circ = geo.circle_arc((0, 0), radius, 0.0, 2 * math.pi, tag=tag)
    return geo.PolygonalDomain(geo.MetricField.flat(), (circ,), (), H0, (None,), name="disk")


def crescent_lens(chord=1.0):
    """Two-corner flat domain with ``H0 = 1``.

    The domain is the unit disk around ``(0, -h)`` minus the unit disk around
    ``(0, h)``, ``h = sqrt(1 - chord^2 / 4)``. Its plus arc is the long arc of
    the first circle and its minus arc the short arc of the second circle
    bulging into it.
    """
    a = chord / 2
    h = math.sqrt(1 - a * a)
    alpha = math.atan2(h, a)
    p, q = (-a, 0.0), (a, 0.0)
    # counter-clockwise the long way round the lower circle, from p to q
    plus = geo.circle_arc((0.0, -h), 1.0, math.pi - alpha, alpha + 2 * math.pi, tag="plus")
    # clockwise along the upper circle from q back to p; outward points at its center
    minus = geo.circle_arc((0.0, h), 1.0, -alpha, alpha - math.pi, tag="minus", outward=1)
    return geo.PolygonalDomain(geo.MetricField.flat(), (plus, minus), (p, q), 1.0, name="crescent")
