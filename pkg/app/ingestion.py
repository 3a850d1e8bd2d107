import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd
from pydantic import ValidationError

from .errors import DocumentError
from .lossmodel import switching_alpha
from .models import Branch, DispatchPlan, NetworkSpec, PwlCurve

logger = logging.getLogger(__name__)

TOP_KEYS = {"fs_hz", "load", "branches", "notes", "vin_floor"}
LOAD_KEYS = {"r_ohm", "v_min", "v_max"}
BRANCH_KEYS = {"name", "source", "rs", "r_cable", "rl", "rm", "rd", "vd", "alpha", "l_h",
               "is_min", "i_min", "g_max", "lambda", "mu", "notes"}
ALPHA_KEYS = {"tau_on_s", "tau_off_s"}
MEASUREMENT_KEYS = {"p_loss_w", "v_load", "vd", "r_cable", "rd", "rm", "r_load"}
DIODE_COLUMNS = ("current", "power")

# --- SOURCE HANDLERS ---


class SourceHandler:
    """Turns one `source` sub-document into a PwlCurve."""
    name: str
    keys: set

    def applies(self, doc: Dict[str, Any]) -> bool:
        return self.name in doc

    def build(self, doc: Dict[str, Any]) -> PwlCurve:
        raise NotImplementedError


class PiecesHandler(SourceHandler):
    name = "pieces"
    keys = {"pieces"}

    def build(self, doc):
        pieces = doc["pieces"]
        if not isinstance(pieces, list) or not pieces:
            raise DocumentError("source.pieces must be a non-empty list")
        try:
            return PwlCurve.from_pairs((float(p["beta"]), float(p["gamma"])) for p in pieces)
        except (KeyError, TypeError, ValueError) as exc:
            raise DocumentError(f"source.pieces entries need numeric beta and gamma ({exc})") from exc


class ConstantHandler(SourceHandler):
    name = "constant_v"
    keys = {"constant_v"}

    def build(self, doc):
        try:
            return PwlCurve.constant(float(doc["constant_v"]))
        except (TypeError, ValueError) as exc:
            raise DocumentError(f"source.constant_v must be a number ({exc})") from exc


class SourceRegistry:
    def __init__(self):
        self._handlers: List[SourceHandler] = []

    def register(self, handler: SourceHandler):
        self._handlers.append(handler)

    def find(self, doc: Dict[str, Any]) -> Optional[SourceHandler]:
        matches = [h for h in self._handlers if h.applies(doc)]
        if len(matches) > 1:
            raise DocumentError(f"source is ambiguous: {[h.name for h in matches]}")
        return matches[0] if matches else None


def default_registry() -> SourceRegistry:
    registry = SourceRegistry()
    registry.register(PiecesHandler())
    registry.register(ConstantHandler())
    return registry


# --- NETWORK DOCUMENTS ---


class NetworkLoader:
    """
    Parses network documents. Strict mode rejects unknown keys; lenient mode
    logs and drops them.
    """

    def __init__(self, strict: bool = True, registry: Optional[SourceRegistry] = None):
        self.strict = strict
        self.registry = registry or default_registry()

    def _check_keys(self, doc: Dict[str, Any], allowed: set, where: str) -> Dict[str, Any]:
        if not isinstance(doc, dict):
            raise DocumentError(f"{where} must be an object")
        unknown = sorted(set(doc) - allowed)
        if unknown:
            if self.strict:
                raise DocumentError(f"{where}: unknown keys {unknown}")
            logger.warning(f"{where}: ignoring unknown keys {unknown}")
        return {k: v for k, v in doc.items() if k in allowed}

    def _alpha(self, value, f_s: float, where: str) -> float:
        if isinstance(value, dict):
            value = self._check_keys(value, ALPHA_KEYS, f"{where}.alpha")
            try:
                return switching_alpha(float(value["tau_on_s"]), float(value["tau_off_s"]), f_s)
            except KeyError as exc:
                raise DocumentError(f"{where}.alpha needs tau_on_s and tau_off_s") from exc
        return float(value)

    def _branch(self, doc, f_s: float, index: int) -> Branch:
        where = f"branches[{index}]"
        doc = self._check_keys(doc, BRANCH_KEYS, where)
        source = doc.get("source")
        if not isinstance(source, dict):
            raise DocumentError(f"{where}.source must be an object")
        handler = self.registry.find(source)
        if handler is None:
            raise DocumentError(f"{where}.source: no handler for keys {sorted(source)}")
        self._check_keys(source, handler.keys, f"{where}.source")
        try:
            return Branch(
                name=str(doc.get("name", f"b{index + 1}")),
                curve=handler.build(source),
                rs=doc["rs"],
                r_cable=doc["r_cable"],
                r_l=doc["rl"],
                r_m=doc["rm"],
                r_d=doc["rd"],
                v_d=doc["vd"],
                alpha=self._alpha(doc["alpha"], f_s, where),
                inductance=doc.get("l_h"),
                is_min=doc.get("is_min"),
                i_min=doc.get("i_min"),
                g_max=doc.get("g_max"),
                lam=doc.get("lambda", 1.0),
                mu=doc.get("mu", 0.0),
            )
        except KeyError as exc:
            raise DocumentError(f"{where}: missing key {exc}") from exc
        except (ValidationError, TypeError, ValueError) as exc:
            raise DocumentError(f"{where}: {exc}") from exc

    def parse(self, doc: Dict[str, Any]) -> Tuple[NetworkSpec, Dict[str, Any]]:
        """Returns the network and the document options (`vin_floor`, `notes`)."""
        doc = self._check_keys(doc, TOP_KEYS, "document")
        load = self._check_keys(doc.get("load"), LOAD_KEYS, "load")
        branches = doc.get("branches")
        if not isinstance(branches, list):
            raise DocumentError("branches must be a list")
        try:
            f_s = float(doc["fs_hz"])
            spec = NetworkSpec(
                branches=tuple(self._branch(b, f_s, i) for i, b in enumerate(branches)),
                r_load=load["r_ohm"],
                v_load_min=load["v_min"],
                v_load_max=load["v_max"],
                f_s=f_s,
            )
        except KeyError as exc:
            raise DocumentError(f"missing key {exc}") from exc
        except (ValidationError, TypeError, ValueError) as exc:
            raise DocumentError(str(exc)) from exc
        options = {"vin_floor": bool(doc.get("vin_floor", False)), "notes": doc.get("notes")}
        return spec, options

    def load(self, path) -> Tuple[NetworkSpec, Dict[str, Any]]:
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, UnicodeDecodeError) as exc:
            raise DocumentError(f"cannot read {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DocumentError(f"{path}: invalid JSON ({exc})") from exc
        spec, options = self.parse(doc)
        logger.info(f"Loaded network '{path.name}' with {len(spec.branches)} branches.")
        return spec, options


def load_network(path, strict: bool = True) -> Tuple[NetworkSpec, Dict[str, Any]]:
    return NetworkLoader(strict=strict).load(path)


# --- MEASUREMENT FILES ---


def load_diode_samples(path) -> List[Tuple[float, float]]:
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DocumentError(f"cannot read diode samples from {path}: {exc}") from exc
    frame.columns = [str(c).strip().lower() for c in frame.columns]
    missing = [c for c in DIODE_COLUMNS if c not in frame.columns]
    if missing:
        raise DocumentError(f"{path}: header must contain {list(DIODE_COLUMNS)}, missing {missing}")
    try:
        data = frame[list(DIODE_COLUMNS)].astype(float)
    except ValueError as exc:
        raise DocumentError(f"{path}: non-numeric sample ({exc})") from exc
    if data.isna().any().any():
        raise DocumentError(f"{path}: empty cells in samples")
    return list(data.itertuples(index=False, name=None))


def load_alpha_measurement(path) -> Dict[str, float]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DocumentError(f"cannot read measurement {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise DocumentError(f"{path}: measurement must be an object")
    missing = sorted(MEASUREMENT_KEYS - set(doc))
    if missing:
        raise DocumentError(f"{path}: missing keys {missing}")
    try:
        return {k: float(doc[k]) for k in MEASUREMENT_KEYS}
    except (TypeError, ValueError) as exc:
        raise DocumentError(f"{path}: non-numeric value ({exc})") from exc


# --- PLANS ---


def plan_to_json(plan: DispatchPlan) -> str:
    return plan.model_dump_json(indent=2)


def plan_from_json(text: str) -> DispatchPlan:
    try:
        return DispatchPlan.model_validate_json(text)
    except ValidationError as exc:
        raise DocumentError(f"invalid plan document: {exc}") from exc


def load_plan(path) -> DispatchPlan:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DocumentError(f"cannot read plan {path}: {exc}") from exc
    return plan_from_json(text)
