"""HTTP session service: the budget loop driven by a live human expert.

One JSON document per session persists every durable transition (atomic
write-rename), so sessions survive restarts. Within a process, requests
for one session serialize on a per-session lock; while a refit runs, the
in-memory handle reports status "computing" and readers see the last
persisted snapshot. Responses are idempotent per iteration: resubmitting
the answered iteration replays the stored reply without double spending,
and a crash between commit and save simply re-runs the deterministic
commit on retry.
"""

import json
import math
import os
import threading
import uuid

import numpy as np
import torch

from .acquisition import CompareAction, EvaluateAction, posterior_utility
from .config import RunConfig
from .driver import (
    BudgetLoop,
    PendingStep,
    StepRecord,
    Trajectory,
    trajectory_csv,
    trajectory_summary,
)
from .errors import ConfigError
from .surrogate import (
    CompRecord,
    EvalRecord,
    PosteriorCache,
    VariationalState,
)

SLICE_POINTS = 21


class ApiError(Exception):
    """An error with a fixed HTTP status and a {code, message, field?} body."""

    def __init__(self, status, code, message, field=None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.field = field

    def body(self):
        doc = {"code": self.code, "message": str(self)}
        if self.field is not None:
            doc["field"] = self.field
        return doc


def _clean(value):
    """NaN-free plain-JSON form of a float."""
    value = float(value)
    return None if math.isnan(value) else value


# ---------------------------------------------------------------------------
# document serialization


def action_to_doc(action):
    if action.kind == "evaluate":
        return {"kind": "evaluate", "x": action.x.tolist(), "cost": action.cost}
    return {
        "kind": "compare",
        "x_a": action.x_a.tolist(),
        "x_b": action.x_b.tolist(),
        "cost": action.cost,
    }


def action_from_doc(doc):
    if doc["kind"] == "evaluate":
        return EvaluateAction(x=np.array(doc["x"], dtype=float), cost=doc["cost"])
    return CompareAction(
        x_a=np.array(doc["x_a"], dtype=float),
        x_b=np.array(doc["x_b"], dtype=float),
        cost=doc["cost"],
    )


def pending_to_doc(pending):
    return {
        "iteration": pending.iteration,
        "action": action_to_doc(pending.action),
        "recommendation": pending.recommendation.tolist(),
        "expected_utility": pending.expected_utility,
        "norm_utility": _clean(pending.norm_utility),
        "rule": pending.rule,
        "voi_eval_raw": pending.voi_eval_raw,
        "voi_comp_raw": pending.voi_comp_raw,
        "warm_fingerprint": pending.warm_fingerprint,
        "fitted_fingerprint": pending.fitted_fingerprint,
        "wall_ms": pending.wall_ms,
    }


def pending_from_doc(doc):
    nu = doc["norm_utility"]
    return PendingStep(
        iteration=doc["iteration"],
        action=action_from_doc(doc["action"]),
        recommendation=np.array(doc["recommendation"], dtype=float),
        expected_utility=doc["expected_utility"],
        norm_utility=math.nan if nu is None else nu,
        rule=doc["rule"],
        voi_eval_raw=doc["voi_eval_raw"],
        voi_comp_raw=doc["voi_comp_raw"],
        warm_fingerprint=doc["warm_fingerprint"],
        fitted_fingerprint=doc["fitted_fingerprint"],
        wall_ms=doc["wall_ms"],
    )


def step_to_doc(step):
    if step.action.kind == "evaluate":
        outcome = np.asarray(step.outcome, dtype=float).tolist()
    else:
        outcome = int(step.outcome)
    return {
        "iteration": step.iteration,
        "action": action_to_doc(step.action),
        "cost": step.cost,
        "cum_spend": step.cum_spend,
        "outcome": outcome,
        "recommendation": step.recommendation.tolist(),
        "norm_utility": _clean(step.norm_utility),
        "rule": step.rule,
        "voi_eval_raw": step.voi_eval_raw,
        "voi_comp_raw": step.voi_comp_raw,
        "warm_fingerprint": step.warm_fingerprint,
        "fitted_fingerprint": step.fitted_fingerprint,
        "wall_ms": step.wall_ms,
    }


def step_from_doc(doc):
    action = action_from_doc(doc["action"])
    outcome = (
        np.array(doc["outcome"], dtype=float)
        if action.kind == "evaluate"
        else int(doc["outcome"])
    )
    nu = doc["norm_utility"]
    return StepRecord(
        iteration=doc["iteration"],
        action=action,
        cost=doc["cost"],
        cum_spend=doc["cum_spend"],
        outcome=outcome,
        recommendation=np.array(doc["recommendation"], dtype=float),
        norm_utility=math.nan if nu is None else nu,
        rule=doc["rule"],
        voi_eval_raw=doc["voi_eval_raw"],
        voi_comp_raw=doc["voi_comp_raw"],
        warm_fingerprint=doc["warm_fingerprint"],
        fitted_fingerprint=doc["fitted_fingerprint"],
        wall_ms=doc["wall_ms"],
    )


def record_to_doc(record):
    if isinstance(record, EvalRecord):
        return {"type": "eval", "x": record.x.tolist(), "y": record.y.tolist()}
    return {
        "type": "comp",
        "x_a": record.x_a.tolist(),
        "x_b": record.x_b.tolist(),
        "d": record.d,
    }


def record_from_doc(doc):
    if doc["type"] == "eval":
        return EvalRecord(x=np.array(doc["x"], dtype=float), y=np.array(doc["y"], dtype=float))
    return CompRecord(
        x_a=np.array(doc["x_a"], dtype=float),
        x_b=np.array(doc["x_b"], dtype=float),
        d=doc["d"],
    )


def loop_from_doc(doc):
    """Rebuild the budget loop exactly as persisted, with no refits."""
    config = RunConfig.from_dict(doc["config"], require_affordable=False)
    loop = BudgetLoop(config)
    for rec in doc["records"]:
        record = record_from_doc(rec)
        if isinstance(record, EvalRecord):
            loop.data.evals.append(record)
        else:
            loop.data.comps.append(record)
    loop.spend = doc["spend"]
    loop.iteration = doc["iteration"]
    loop.steps = [step_from_doc(s) for s in doc["steps"]]
    if doc["state"] is not None:
        loop.state = VariationalState.from_json_dict(doc["state"])
    return loop


def loop_to_doc(loop, sid, status, pending, last_reply, final):
    return {
        "id": sid,
        "status": status,
        "config": loop.config.to_dict(),
        "iteration": loop.iteration,
        "spend": loop.spend,
        "records": [record_to_doc(r) for r in loop.data.evals + loop.data.comps],
        "steps": [step_to_doc(s) for s in loop.steps],
        "state": None if loop.state is None else loop.state.to_json_dict(),
        "pending": pending,
        "last_reply": last_reply,
        "final": final,
    }


# ---------------------------------------------------------------------------
# persistence


class SessionStore:
    """One JSON file per session under data_dir, with per-session locks."""

    def __init__(self, data_dir):
        self.data_dir = str(data_dir)
        os.makedirs(self.data_dir, exist_ok=True)
        self._guard = threading.Lock()
        self._locks = {}
        self._computing = set()

    def _path(self, sid):
        return os.path.join(self.data_dir, f"{sid}.json")

    def lock(self, sid):
        with self._guard:
            return self._locks.setdefault(sid, threading.Lock())

    def set_computing(self, sid, flag):
        with self._guard:
            if flag:
                self._computing.add(sid)
            else:
                self._computing.discard(sid)

    def is_computing(self, sid):
        with self._guard:
            return sid in self._computing

    def save(self, doc):
        path = self._path(doc["id"])
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            json.dump(doc, fh, allow_nan=False)
        os.replace(tmp, path)

    def load(self, sid):
        if not _valid_id(sid):
            raise ApiError(404, "not_found", f"unknown session {sid!r}")
        try:
            with open(self._path(sid)) as fh:
                return json.load(fh)
        except FileNotFoundError:
            raise ApiError(404, "not_found", f"unknown session {sid!r}")


def _valid_id(sid):
    return isinstance(sid, str) and 0 < len(sid) <= 64 and sid.replace("-", "").isalnum()


# ---------------------------------------------------------------------------
# views


def query_message(doc):
    pending = doc["pending"]
    action = pending["action"]
    coords = (
        {"x": action["x"]}
        if action["kind"] == "evaluate"
        else {"x_a": action["x_a"], "x_b": action["x_b"]}
    )
    return {
        "session": doc["id"],
        "iteration": pending["iteration"],
        "type": action["kind"],
        "cost": action["cost"],
        "coordinates": coords,
        "remaining_budget": doc["config"]["costs"]["budget"] - doc["spend"],
        "voi_eval_raw": pending["voi_eval_raw"],
        "voi_comp_raw": pending["voi_comp_raw"],
    }


def _status_view(store, doc):
    status = doc["status"]
    if status == "awaiting_response" and store.is_computing(doc["id"]):
        return "computing"
    return status


def _recommendation_view(doc):
    if doc["final"] is not None:
        return doc["final"]
    pending = doc["pending"]
    if pending is not None:
        return {
            "x": pending["recommendation"],
            "expected_utility": pending["expected_utility"],
            "norm_utility": pending["norm_utility"],
        }
    return None


def session_summary(store, doc):
    budget = doc["config"]["costs"]["budget"]
    view = {
        "id": doc["id"],
        "status": _status_view(store, doc),
        "iteration": doc["iteration"],
        "spend": doc["spend"],
        "remaining_budget": budget - doc["spend"],
    }
    if doc["status"] == "awaiting_response" and doc["pending"] is not None:
        view["query"] = query_message(doc)
    if doc["final"] is not None:
        view["recommendation"] = doc["final"]
    return view


def posterior_slice(loop, anchor):
    """Expected-utility display surface: full grid for d <= 2, else axis
    profiles through the anchor point."""
    if loop.state is None:
        return None
    cache = PosteriorCache(loop.state)
    axis = np.linspace(0.0, 1.0, SLICE_POINTS)
    d = loop.config.d
    with torch.no_grad():
        if d == 1:
            pts = torch.tensor(axis[:, None])
            values = posterior_utility(cache, loop.utility, pts)
            return {"kind": "grid", "axis": axis.tolist(), "values": values.tolist()}
        if d == 2:
            xx, yy = np.meshgrid(axis, axis, indexing="ij")
            pts = torch.tensor(np.column_stack([xx.ravel(), yy.ravel()]))
            values = posterior_utility(cache, loop.utility, pts)
            grid = values.reshape(SLICE_POINTS, SLICE_POINTS)
            return {"kind": "grid", "axis": axis.tolist(), "values": grid.tolist()}
        profiles = []
        for i in range(d):
            pts = np.tile(anchor, (SLICE_POINTS, 1))
            pts[:, i] = axis
            values = posterior_utility(cache, loop.utility, torch.tensor(pts))
            profiles.append(values.tolist())
        return {
            "kind": "profiles",
            "axis": axis.tolist(),
            "anchor": anchor.tolist(),
            "values": profiles,
        }


def session_state(store, doc):
    loop = loop_from_doc(doc)
    recommendation = _recommendation_view(doc)
    anchor = (
        np.array(recommendation["x"], dtype=float)
        if recommendation is not None
        else np.full(loop.config.d, 0.5)
    )
    view = {
        "id": doc["id"],
        "status": _status_view(store, doc),
        "config": doc["config"],
        "iteration": doc["iteration"],
        "budget": {
            "total": doc["config"]["costs"]["budget"],
            "spent": doc["spend"],
            "remaining": doc["config"]["costs"]["budget"] - doc["spend"],
        },
        "data": {"n_eval": loop.data.n_eval, "n_comp": loop.data.n_comp},
        "trajectory": doc["steps"],
        "recommendation": recommendation,
        "posterior_slice": posterior_slice(loop, anchor),
    }
    if doc["status"] == "awaiting_response" and doc["pending"] is not None:
        view["query"] = query_message(doc)
    return view


def export_doc(doc):
    loop = loop_from_doc(doc)
    final = doc["final"]
    trajectory = Trajectory(
        config=loop.config,
        steps=loop.steps,
        final_recommendation=(
            None if final is None else np.array(final["x"], dtype=float)
        ),
        final_expected_utility=(
            math.nan if final is None else final["expected_utility"]
        ),
        final_norm_utility=(
            math.nan
            if final is None or final["norm_utility"] is None
            else final["norm_utility"]
        ),
        final_fingerprint=None if final is None else final["fingerprint"],
        complete=doc["status"] == "finished",
    )
    return {
        "session": {
            "id": doc["id"],
            "status": doc["status"],
            "config": doc["config"],
            "records": doc["records"],
            "steps": doc["steps"],
            "final": final,
        },
        "trajectory_csv": trajectory_csv(trajectory),
        "summary": trajectory_summary(trajectory),
    }


# ---------------------------------------------------------------------------
# transitions


def _advance(loop):
    """Next pending query, or the final recommendation once budget runs out."""
    if loop.can_continue():
        pending = loop.propose()
        return "awaiting_response", pending_to_doc(pending), None
    trajectory = loop.finalize(complete=True)
    final = {
        "x": trajectory.final_recommendation.tolist(),
        "expected_utility": trajectory.final_expected_utility,
        "norm_utility": _clean(trajectory.final_norm_utility),
        "fingerprint": trajectory.final_fingerprint,
    }
    return "finished", None, final


def create_session(store, payload):
    if not isinstance(payload, dict):
        raise ApiError(400, "invalid_config", "body must be a JSON object")
    try:
        config = RunConfig.from_dict(payload, require_affordable=False)
    except ConfigError as exc:
        raise ApiError(400, "invalid_config", str(exc), field=exc.field)
    sid = uuid.uuid4().hex[:12]
    loop = BudgetLoop(config)
    store.set_computing(sid, True)
    try:
        status, pending, final = _advance(loop)
    finally:
        store.set_computing(sid, False)
    doc = loop_to_doc(loop, sid, status, pending, None, final)
    store.save(doc)
    return doc


def _parse_outcome(pending_doc, payload, m):
    kind = pending_doc["action"]["kind"]
    has_d = "d" in payload
    has_y = "y" in payload
    if has_d and has_y:
        raise ApiError(400, "invalid_payload", "give exactly one of d or y")
    if kind == "compare":
        if not has_d:
            raise ApiError(
                409,
                "wrong_response_type",
                "pending action is a comparison; expected {d: 0|1}",
                field="d",
            )
        d = payload["d"]
        if isinstance(d, bool) or d not in (0, 1):
            raise ApiError(400, "invalid_payload", "d must be 0 or 1", field="d")
        return int(d)
    if not has_y:
        raise ApiError(
            409,
            "wrong_response_type",
            "pending action is an evaluation; expected {y: [...]}",
            field="y",
        )
    y = payload["y"]
    ok = (
        isinstance(y, list)
        and len(y) == m
        and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in y)
    )
    if not ok:
        raise ApiError(
            400, "invalid_payload", f"y must be a list of {m} numbers", field="y"
        )
    y = [float(v) for v in y]
    if not all(math.isfinite(v) for v in y):
        raise ApiError(400, "invalid_payload", "y must be finite", field="y")
    return np.array(y, dtype=float)


def _normalize_payload(payload):
    """Canonical reply payload for idempotency comparison."""
    out = {}
    for key in ("d", "y", "abandon"):
        if key in payload:
            value = payload[key]
            if key == "y" and isinstance(value, list):
                value = [float(v) for v in value]
            out[key] = value
    return out


def submit_response(store, sid, payload):
    if not isinstance(payload, dict):
        raise ApiError(400, "invalid_payload", "body must be a JSON object")
    doc = store.load(sid)

    if payload.get("abandon") is True:
        if doc["status"] == "finished":
            raise ApiError(409, "conflict", "session already finished")
        doc["status"] = "abandoned"
        doc["pending"] = None
        store.save(doc)
        return {"session": sid, "status": "abandoned"}

    if "iteration" not in payload:
        raise ApiError(
            400, "invalid_payload", "iteration echo is required", field="iteration"
        )
    iteration = payload["iteration"]
    if isinstance(iteration, bool) or not isinstance(iteration, int):
        raise ApiError(
            400, "invalid_payload", "iteration must be an integer", field="iteration"
        )

    # Idempotent replay: a retry of the answered iteration returns the
    # stored reply; the same iteration with a different payload conflicts.
    last = doc["last_reply"]
    if last is not None and iteration == last["iteration"]:
        if _normalize_payload(payload) != last["payload"]:
            raise ApiError(
                409, "conflict", "iteration already answered with a different payload"
            )
        return last["reply"]

    if doc["status"] == "abandoned":
        raise ApiError(409, "conflict", "session is abandoned")
    if doc["status"] == "finished":
        raise ApiError(409, "conflict", "session is finished")
    pending_doc = doc["pending"]
    if pending_doc is None:
        raise ApiError(409, "conflict", "no pending action")
    if iteration != pending_doc["iteration"]:
        raise ApiError(
            409,
            "stale_iteration",
            f"pending iteration is {pending_doc['iteration']}, got {iteration}",
            field="iteration",
        )

    loop = loop_from_doc(doc)
    outcome = _parse_outcome(pending_doc, payload, loop.config.m)

    store.set_computing(sid, True)
    try:
        loop.commit(pending_from_doc(pending_doc), outcome)
        status, next_pending, final = _advance(loop)
    finally:
        store.set_computing(sid, False)

    reply = {
        "session": sid,
        "status": status,
        "iteration": loop.iteration,
        "spend": loop.spend,
        "remaining_budget": loop.config.budget - loop.spend,
    }
    new_doc = loop_to_doc(
        loop,
        sid,
        status,
        next_pending,
        {"iteration": iteration, "payload": _normalize_payload(payload), "reply": None},
        final,
    )
    if status == "awaiting_response":
        reply["query"] = query_message(new_doc)
    else:
        reply["recommendation"] = final
    new_doc["last_reply"]["reply"] = reply
    store.save(new_doc)
    return reply


# ---------------------------------------------------------------------------
# app factory


def create_app(data_dir="sessions"):
    """FastAPI app over a session store rooted at data_dir."""
    from fastapi import FastAPI, Request
    from fastapi.concurrency import run_in_threadpool
    from fastapi.exceptions import RequestValidationError
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import JSONResponse

    app = FastAPI(title="eabo elicitation service", version="1")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    store = SessionStore(data_dir)
    app.state.store = store

    @app.exception_handler(ApiError)
    async def _api_error(request, exc):
        return JSONResponse(status_code=exc.status, content=exc.body())

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request, exc):
        return JSONResponse(
            status_code=400,
            content={"code": "invalid_payload", "message": str(exc)},
        )

    async def _json_body(request):
        try:
            return await request.json()
        except Exception:
            raise ApiError(400, "invalid_payload", "body must be valid JSON")

    def _locked_submit(sid, payload):
        with store.lock(sid):
            return submit_response(store, sid, payload)

    @app.post("/v1/sessions", status_code=201)
    async def _create(request: Request):
        payload = await _json_body(request)
        doc = await run_in_threadpool(create_session, store, payload)
        return session_summary(store, doc)

    @app.get("/v1/sessions/{sid}")
    def _get(sid: str):
        return session_summary(store, store.load(sid))

    @app.post("/v1/sessions/{sid}/response")
    async def _respond(sid: str, request: Request):
        payload = await _json_body(request)
        return await run_in_threadpool(_locked_submit, sid, payload)

    @app.get("/v1/sessions/{sid}/state")
    def _state(sid: str):
        return session_state(store, store.load(sid))

    @app.get("/v1/sessions/{sid}/export")
    def _export(sid: str):
        return export_doc(store.load(sid))

    return app
