"""Flat dotted-key run configuration.

One ``key = value`` pair per line; ``#`` starts a comment. Lists are comma
separated. Every key has a default except ``mode``.
"""

import hashlib
from dataclasses import dataclass

from .errors import ConfigError

MODES = ("solve-static", "simulate", "mms-convergence", "infsup-scan")


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "on", "yes", "1"):
        return True
    if t in ("false", "off", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _floats(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text):
    return tuple(int(t) for t in text.split(",") if t.strip())


def _choice(*options):
    def parse(text):
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {t!r}")
        return t
    return parse


# key -> (parser, default)
SCHEMA = {
    "mode": (_choice(*MODES), None),
    "fluid.nx": (int, 32),
    "fluid.ny": (int, 32),
    "fluid.bounds": (_floats, (0.0, 0.0, 1.0, 1.0)),
    "solid.kind": (_choice("disk", "curve", "square"), "disk"),
    "solid.center": (_floats, (0.5, 0.5)),
    "solid.radius": (float, 0.2),
    "solid.refine": (int, 2),
    "solid.segments": (int, 32),
    "solid.n": (int, 4),
    "solid.bounds": (_floats, (0.25, 0.25, 0.75, 0.75)),
    "initial.stretch": (_floats, (1.0, 1.0)),
    "physics.rho_f": (float, 1.0),
    "physics.rho_s": (float, 1.0),
    "physics.nu": (float, 0.1),
    "physics.kappa": (float, 1.0),
    "scheme.dt": (float, 1e-2),
    "scheme.n_steps": (int, 10),
    "scheme.convection": (_bool, False),
    "scheme.coupling": (_choice("L2", "H1"), "L2"),
    "scheme.codim": (int, -1),  # -1: derived from solid.kind
    "output.dir": (str, "output"),
    "output.cadence": (int, 0),
    "output.audit": (_choice("true", "false", "strict"), "true"),
    "tol.energy": (float, 1e-10),
    "tol.residual": (float, 1e-10),
    "tol.slope": (float, 0.9),
    "tol.mms": (float, 1e-8),
    "tol.infsup_factor": (float, 2.0),
    "mms.levels": (_ints, (8, 16, 32)),
    "mms.ratio": (float, 2.0),
    "mms.alpha": (float, 1.0),
    "mms.beta": (float, 1.0),
    "mms.gamma": (float, 1.0),
    "mms.nu": (float, 1.0),
    "infsup.ratios": (_floats, (0.5, 1.0, 2.0, 4.0)),
    "infsup.levels": (_ints, (8, 16, 32)),
}


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    values: tuple  # sorted (key, value) pairs

    def __getitem__(self, key):
        return dict(self.values)[key]

    def get(self, key, default=None):
        return dict(self.values).get(key, default)

    def as_dict(self):
        return dict(self.values)

    @property
    def mode(self):
        return self["mode"]

    @property
    def codim(self):
        return 1 if self["solid.kind"] == "curve" else 0

    @property
    def drho(self):
        return self["physics.rho_s"] - self["physics.rho_f"]

    def replace(self, **updates):
        """Copy with dotted keys given as ``fluid__nx=...`` or via a dict ``{'fluid.nx': ...}``."""
        d = self.as_dict()
        for k, v in updates.items():
            d[k.replace("__", ".")] = v
        return build_config(d)

    def serialize(self):
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.values)

    def digest(self):
        return hashlib.sha256(self.serialize().encode()).hexdigest()


def _validate(d):
    def need(key, ok, msg):
        if not ok:
            raise ConfigError(msg, key)

    if d["mode"] is None:
        raise ConfigError("required key is missing", "mode")
    for k in ("fluid.nx", "fluid.ny"):
        need(k, d[k] >= 1, "must be a positive integer")
    for k in ("fluid.bounds", "solid.bounds"):
        need(k, len(d[k]) == 4 and d[k][2] > d[k][0] and d[k][3] > d[k][1],
             "expected x0, y0, x1, y1 with x1 > x0 and y1 > y0")
    need("solid.center", len(d["solid.center"]) == 2, "expected two coordinates")
    # zero factors collapse B onto the center: X0 constant, zero elastic energy
    need("initial.stretch", len(d["initial.stretch"]) == 2 and min(d["initial.stretch"]) >= 0,
         "expected two nonnegative factors")
    need("solid.radius", d["solid.radius"] > 0, "must be positive")
    need("solid.refine", d["solid.refine"] >= 0, "must be >= 0")
    need("solid.segments", d["solid.segments"] >= 3, "must be >= 3")
    need("solid.n", d["solid.n"] >= 1, "must be >= 1")
    for k in ("physics.rho_f", "physics.rho_s", "physics.nu", "physics.kappa", "scheme.dt"):
        need(k, d[k] > 0, "must be positive")
    need("physics.rho_s", d["physics.rho_s"] >= d["physics.rho_f"],
         "the excess density drho = rho_s - rho_f must satisfy drho >= 0")
    need("scheme.n_steps", d["scheme.n_steps"] >= 0, "must be >= 0")
    need("output.cadence", d["output.cadence"] >= 0, "must be >= 0")
    codim = 1 if d["solid.kind"] == "curve" else 0
    need("scheme.codim", d["scheme.codim"] in (-1, codim),
         f"codim {d['scheme.codim']} contradicts solid.kind = {d['solid.kind']}")
    need("scheme.coupling", not (codim == 1 and d["scheme.coupling"] == "H1"),
         "the H1 coupling needs a thick solid")
    for k in ("tol.energy", "tol.residual", "tol.mms"):
        need(k, d[k] >= 0, "must be >= 0")
    need("tol.infsup_factor", d["tol.infsup_factor"] >= 1, "must be >= 1")
    need("mms.levels", len(d["mms.levels"]) >= 3 and all(n >= 4 for n in d["mms.levels"]),
         "need at least three fluid grids with nx >= 4")
    need("mms.ratio", d["mms.ratio"] > 0, "must be positive")
    for k in ("mms.alpha", "mms.beta", "mms.gamma", "mms.nu"):
        need(k, d[k] >= 0, "must be >= 0")
    need("infsup.ratios", len(d["infsup.ratios"]) >= 1 and min(d["infsup.ratios"]) > 0,
         "need positive ratios")
    need("infsup.levels", len(d["infsup.levels"]) >= 1, "need at least one level")


def build_config(mapping):
    """Validate a dict of already typed values; missing keys take defaults."""
    d = {k: default for k, (_, default) in SCHEMA.items()}
    for k, v in mapping.items():
        if k not in SCHEMA:
            raise ConfigError("unknown key", k)
        if isinstance(v, list):
            v = tuple(v)
        d[k] = v
    _validate(d)
    return RunConfig(tuple(sorted(d.items())))


def parse_config(text, overrides=None, defaults=None):
    """Parse config text.

    ``overrides`` (typed values) take precedence over the text; ``defaults``
    only fill keys the text leaves out.
    """
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (t.strip() for t in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError("unknown key", key)
        if key in raw:
            raise ConfigError("duplicate key", key)
        parser = SCHEMA[key][0]
        try:
            raw[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"bad value {value!r}: {exc}", key) from None
    raw = {**(defaults or {}), **raw, **(overrides or {})}
    return build_config(raw)


def load_config(path, overrides=None, defaults=None):
    with open(path) as fh:
        return parse_config(fh.read(), overrides, defaults)
