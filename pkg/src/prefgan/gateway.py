"""Label gateway: the HTTP surface a human labeler talks to.

The training loop blocks on `HumanChannel.label` while the gateway serves
the pending pair to a browser: GET /api/pair returns a playback payload
(two timestamped state sequences plus the environment name and a single-use
pair id), POST /api/label submits one of first/second/equal/incomparable,
and GET /api/status reports episode, budgets, and the GAN-test history.
Pair ids are unique and single-use; duplicate submissions are rejected.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .preferences import PreferenceRecord

CHOICES = ("first", "second", "equal", "incomparable")

CHOICE_TO_XI = {
    "first": (1.0, 0.0),
    "second": (0.0, 1.0),
    "equal": (0.5, 0.5),
    "incomparable": None,
}


@dataclass(eq=False)
class PendingPair:
    pair_id: str
    payload: dict
    choice: str | None = None


class LabelGateway:
    """Thread-safe queue of pending pairs plus submitted choices."""

    def __init__(self, status_provider=None):
        self._lock = threading.Lock()
        self._labeled = threading.Condition(self._lock)
        self._pending: list[PendingPair] = []
        self._used_ids: set[str] = set()
        self._counter = 0
        self.status_provider = status_provider

    def offer(self, env_name: str, dt: float, seg1, seg2, timeout: float) -> str:
        """Queue a pair and block until a labeler submits a choice."""
        with self._lock:
            self._counter += 1
            pair_id = f"pair-{self._counter:06d}"
            payload = {
                "pair_id": pair_id,
                "env": env_name,
                "dt": dt,
                "first": _clip_payload(seg1, dt),
                "second": _clip_payload(seg2, dt),
            }
            pending = PendingPair(pair_id=pair_id, payload=payload)
            self._pending.append(pending)
            deadline = threading.TIMEOUT_MAX if timeout is None else timeout
            labeled = self._labeled.wait_for(lambda: pending.choice is not None, timeout=deadline)
            self._pending.remove(pending)
            if not labeled:
                raise TimeoutError(f"no label for {pair_id} within {timeout}s")
            return pending.choice

    def next_pair(self) -> dict | None:
        with self._lock:
            for pending in self._pending:
                if pending.choice is None:
                    return dict(pending.payload)
        return None

    def submit(self, pair_id: str, choice: str) -> None:
        if choice not in CHOICES:
            raise ValueError(f"choice must be one of {CHOICES}, got {choice!r}")
        with self._lock:
            if pair_id in self._used_ids:
                raise KeyError(f"pair id {pair_id} already labeled")
            for pending in self._pending:
                if pending.pair_id == pair_id:
                    pending.choice = choice
                    self._used_ids.add(pair_id)
                    self._labeled.notify_all()
                    return
            raise LookupError(f"no pending pair with id {pair_id}")

    def status(self) -> dict:
        base = self.status_provider() if self.status_provider else {}
        with self._lock:
            base["pending_pairs"] = sum(1 for p in self._pending if p.choice is None)
        return base


def _clip_payload(segment, dt: float) -> dict:
    k = segment.states.shape[0]
    return {
        "times": [round(i * dt, 10) for i in range(k)],
        "states": np.asarray(segment.states, float).tolist(),
    }


class HumanChannel:
    """The training loop's side of the gateway: blocks for one judgment."""

    source = "human"

    def __init__(self, gateway: LabelGateway, env, timeout: float):
        self.gateway = gateway
        self.env = env
        self.timeout = timeout

    def label(self, pair, timestamp: int) -> PreferenceRecord:
        from .orchestrator import LabelChannelTimeout

        seg1, seg2 = pair
        try:
            choice = self.gateway.offer(
                self.env.spec.name, self.env.spec.dt, seg1, seg2, self.timeout
            )
        except TimeoutError as exc:
            raise LabelChannelTimeout(str(exc)) from None
        return PreferenceRecord(
            seg1=seg1, seg2=seg2, xi=CHOICE_TO_XI[choice], source="human", timestamp=timestamp
        )


class LabelBody(BaseModel):
    pair_id: str
    choice: str


def build_app(gateway: LabelGateway) -> FastAPI:
    app = FastAPI(title="prefgan label gateway")

    @app.get("/api/pair")
    def get_pair():
        payload = gateway.next_pair()
        if payload is None:
            raise HTTPException(status_code=404, detail="no pending pair")
        return payload

    @app.post("/api/label")
    def post_label(body: LabelBody):
        try:
            gateway.submit(body.pair_id, body.choice)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        except KeyError as exc:
            raise HTTPException(status_code=409, detail=str(exc.args[0]))
        except LookupError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return {"accepted": True, "pair_id": body.pair_id}

    @app.get("/api/status")
    def get_status():
        return gateway.status()

    return app


def state_status_provider(state) -> dict:
    """Status payload for a live run."""
    consumed = state.labels_consumed()
    return {
        "episode": state.episode,
        "handoff": state.handoff,
        "budgets": {
            "consumed": consumed,
            "total": sum(consumed.values()),
        },
        "gan_test": [[ep, acc] for ep, acc in state.gan_history],
    }
