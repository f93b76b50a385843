"""Wire contract between the harness and the model under test.

One JSON object per request/response line over a subprocess' stdio, or the
same JSON bodies POSTed to ``/infer`` over HTTP:

    request:  {"id": str, "op": "infer"|"predict"|"handshake",
               "instance": <normalized instance>, "condition_label": str|null}
    response: {"id": str, "label": str|null, "nle": str|null,
               "scores": {label: float}|null, "error": str|null,
               "capabilities": {...}}          # handshake replies only

The harness itself stays free of ML dependencies; real models plug in from
any ecosystem by speaking this protocol. A deterministic rule-based mock
model is provided for tests and fixtures.
"""

from __future__ import annotations

import json
import math
import shlex
import subprocess
import threading
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .corpus import Instance
from .lexicon import match_form, tokenize

SETUPS = ("MT-Re", "MT-Ra", "ST-Re", "ST-Ra", "other")


class ProtocolError(Exception):
    """Malformed traffic on the wire."""


class ConformanceError(Exception):
    """The endpoint violated the model contract (bad label, bad scores...)."""


class EndpointError(Exception):
    """Transport failure after exhausting retries."""


@dataclass(frozen=True)
class ModelOutput:
    label: str
    nle: Optional[str] = None
    scores: Optional[dict] = None

    def to_wire(self) -> dict:
        return {"label": self.label, "nle": self.nle, "scores": self.scores}


@dataclass(frozen=True)
class Capabilities:
    name: str
    setup: str = "other"
    supports_scores: bool = False
    deterministic: bool = True

    def to_wire(self) -> dict:
        return {
            "name": self.name,
            "setup": self.setup,
            "supports_scores": self.supports_scores,
            "deterministic": self.deterministic,
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "Capabilities":
        setup = obj.get("setup", "other")
        if setup not in SETUPS:
            raise ProtocolError(f"unknown setup {setup!r}")
        return cls(
            name=str(obj.get("name", "unknown")),
            setup=setup,
            supports_scores=bool(obj.get("supports_scores", False)),
            deterministic=bool(obj.get("deterministic", False)),
        )


def check_output(instance: Instance, out: ModelOutput, allow_empty_nle: bool) -> None:
    """Enforce the model contract on a single response."""
    if out.label not in instance.label_set:
        raise ConformanceError(
            f"label {out.label!r} outside label set {list(instance.label_set)} "
            f"for instance {instance.id}"
        )
    if out.scores is not None:
        total = sum(out.scores.values())
        if not math.isfinite(total) or abs(total - 1.0) > 1e-6:
            raise ConformanceError(f"scores sum to {total}, expected 1")
        best = max(sorted(out.scores), key=lambda k: out.scores[k])
        if out.scores.get(out.label, 0.0) < out.scores[best] - 1e-9:
            raise ConformanceError(
                f"label {out.label!r} is not the argmax of scores for {instance.id}"
            )
    if not allow_empty_nle and not out.nle:
        raise ConformanceError(f"empty NLE for instance {instance.id}")


# ---------------------------------------------------------------------------
# Mock model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MockRule:
    """Ordered first-match-wins rule; the last rule must be `always`."""

    label: str
    nle_template: str
    trigger_field: Optional[str] = None  # None means `always`
    trigger_word: Optional[str] = None

    def matches(self, instance: Instance) -> bool:
        if self.trigger_field is None:
            return True
        text = instance.fields.get(self.trigger_field)
        if text is None:
            return False
        want = match_form(self.trigger_word or "")
        return any(tok.match_form == want for tok in tokenize(text))


@dataclass(frozen=True)
class MockModel:
    name: str
    rules: tuple
    setup: str = "other"

    def __post_init__(self):
        if not self.rules or self.rules[-1].trigger_field is not None:
            raise ProtocolError("mock rules must end with an `always` rule")


def load_mock_rules(path) -> MockModel:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    rules = tuple(
        MockRule(
            label=r["label"],
            nle_template=r.get("nle", ""),
            trigger_field=(r.get("trigger") or {}).get("field"),
            trigger_word=(r.get("trigger") or {}).get("word"),
        )
        for r in obj["rules"]
    )
    return MockModel(name=obj.get("name", "mock"), rules=rules, setup=obj.get("setup", "other"))


def mock_infer(model: MockModel, instance: Instance) -> ModelOutput:
    for rule in model.rules:
        if rule.matches(instance):
            try:
                nle = rule.nle_template.format(**instance.fields)
            except (KeyError, IndexError) as exc:
                raise ProtocolError(f"bad placeholder in mock NLE template: {exc}") from exc
            scores = {
                lab: (1.0 if lab == rule.label else 0.0) for lab in instance.label_set
            }
            if rule.label not in instance.label_set:
                scores = None  # leave the conformance violation visible to the harness
            return ModelOutput(label=rule.label, nle=nle, scores=scores)
    raise ProtocolError("no mock rule matched (missing `always` rule)")


# ---------------------------------------------------------------------------
# Endpoints
# ---------------------------------------------------------------------------


class Endpoint:
    """Client-side handle for a model endpoint. Thread-safe."""

    def handshake(self) -> Capabilities:
        raise NotImplementedError

    def infer(self, instance: Instance, condition_label: Optional[str] = None) -> ModelOutput:
        raise NotImplementedError

    def predict(self, instance: Instance) -> ModelOutput:
        """Label-only fast path; falls back to infer when unsupported."""
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class InprocEndpoint(Endpoint):
    """Mock model evaluated in-process (no transport)."""

    def __init__(self, model: MockModel):
        self.model = model

    def handshake(self) -> Capabilities:
        return Capabilities(
            name=self.model.name,
            setup=self.model.setup,
            supports_scores=True,
            deterministic=True,
        )

    def infer(self, instance: Instance, condition_label: Optional[str] = None) -> ModelOutput:
        out = mock_infer(self.model, instance)
        check_output(instance, out, allow_empty_nle=False)
        return out

    def predict(self, instance: Instance) -> ModelOutput:
        out = mock_infer(self.model, instance)
        out = ModelOutput(label=out.label, nle=None, scores=out.scores)
        check_output(instance, out, allow_empty_nle=True)
        return out


class _WireEndpoint(Endpoint):
    """Shared request/response plumbing for stdio and http transports."""

    def __init__(self, retries: int = 2):
        self.retries = retries
        self._lock = threading.Lock()
        self._next_id = 0
        self._predict_unsupported = False

    def _roundtrip(self, request: dict) -> dict:
        raise NotImplementedError

    def _request(self, op: str, instance: Optional[Instance], condition_label=None) -> dict:
        with self._lock:
            self._next_id += 1
            req_id = f"q{self._next_id}"
            request = {
                "id": req_id,
                "op": op,
                "instance": instance.to_wire() if instance is not None else None,
                "condition_label": condition_label,
            }
            last_exc: Optional[Exception] = None
            for _ in range(self.retries + 1):
                try:
                    response = self._roundtrip(request)
                    break
                except (OSError, ProtocolError) as exc:
                    last_exc = exc
                    self._reset()
            else:
                raise EndpointError(f"transport failure after {self.retries + 1} attempts: {last_exc}")
        if response.get("id") != req_id:
            raise ProtocolError(f"response id {response.get('id')!r} != request id {req_id!r}")
        return response

    def _reset(self) -> None:
        pass

    def handshake(self) -> Capabilities:
        response = self._request("handshake", None)
        if response.get("error"):
            raise ProtocolError(f"handshake error: {response['error']}")
        caps = response.get("capabilities")
        if not isinstance(caps, dict):
            raise ProtocolError("handshake reply lacks capabilities")
        return Capabilities.from_wire(caps)

    def _model_output(self, instance: Instance, response: dict, allow_empty_nle: bool) -> ModelOutput:
        if response.get("error"):
            raise ConformanceError(f"endpoint error for {instance.id}: {response['error']}")
        label = response.get("label")
        if not isinstance(label, str):
            raise ProtocolError(f"missing label in response for {instance.id}")
        out = ModelOutput(label=label, nle=response.get("nle"), scores=response.get("scores"))
        check_output(instance, out, allow_empty_nle=allow_empty_nle)
        return out

    def infer(self, instance: Instance, condition_label: Optional[str] = None) -> ModelOutput:
        response = self._request("infer", instance, condition_label)
        return self._model_output(instance, response, allow_empty_nle=False)

    def predict(self, instance: Instance) -> ModelOutput:
        if self._predict_unsupported:
            out = self.infer(instance)
            return ModelOutput(label=out.label, nle=None, scores=out.scores)
        response = self._request("predict", instance)
        error = response.get("error") or ""
        if "unsupported" in error:
            self._predict_unsupported = True
            return self.predict(instance)
        return self._model_output(instance, response, allow_empty_nle=True)


class StdioEndpoint(_WireEndpoint):
    """Model served by a subprocess speaking JSON lines on stdin/stdout."""

    def __init__(self, command: str, timeout: float = 60.0, retries: int = 2):
        super().__init__(retries=retries)
        self.command = command
        self.timeout = timeout
        self._proc: Optional[subprocess.Popen] = None

    def _ensure_proc(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                shlex.split(self.command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
                encoding="utf-8",
            )
        return self._proc

    def _roundtrip(self, request: dict) -> dict:
        proc = self._ensure_proc()
        assert proc.stdin is not None and proc.stdout is not None
        proc.stdin.write(json.dumps(request, ensure_ascii=False) + "\n")
        proc.stdin.flush()
        line = proc.stdout.readline()
        if not line:
            raise OSError("endpoint closed its stdout")
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"non-JSON reply: {line[:200]!r}") from exc

    def _reset(self) -> None:
        if self._proc is not None:
            self._proc.kill()
            self._proc = None

    def close(self) -> None:
        if self._proc is not None:
            try:
                self._proc.stdin.close()  # type: ignore[union-attr]
            except OSError:
                pass
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
            self._proc = None


class HttpEndpoint(_WireEndpoint):
    """Model served over HTTP; requests POSTed as JSON to <url>/infer."""

    def __init__(self, url: str, timeout: float = 60.0, retries: int = 2):
        super().__init__(retries=retries)
        self.url = url.rstrip("/") + "/infer"
        self.timeout = timeout

    def _roundtrip(self, request: dict) -> dict:
        body = json.dumps(request, ensure_ascii=False).encode("utf-8")
        req = urllib.request.Request(
            self.url, data=body, headers={"Content-Type": "application/json"}
        )
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            raw = resp.read()
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"non-JSON reply: {raw[:200]!r}") from exc


@dataclass
class EndpointSpec:
    transport: str  # mock | stdio | http
    address: str  # rules file | command line | URL
    timeout: float = 60.0
    retries: int = 2
    max_parallel: int = 1

    def __post_init__(self):
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")


def make_endpoint(spec: EndpointSpec) -> Endpoint:
    if spec.transport == "mock":
        return InprocEndpoint(load_mock_rules(spec.address))
    if spec.transport == "stdio":
        return StdioEndpoint(spec.address, timeout=spec.timeout, retries=spec.retries)
    if spec.transport == "http":
        return HttpEndpoint(spec.address, timeout=spec.timeout, retries=spec.retries)
    raise ValueError(f"unknown transport {spec.transport!r}")


# ---------------------------------------------------------------------------
# Conformance suite (shared by validate-endpoint and the test fixtures)
# ---------------------------------------------------------------------------


def check_endpoint(endpoint: Endpoint, instances, max_instances: int = 10) -> list:
    """Run the protocol golden-transcript checks; returns a list of failures."""
    failures = []
    try:
        caps = endpoint.handshake()
    except (ProtocolError, EndpointError) as exc:
        return [f"handshake failed: {exc}"]
    if not caps.deterministic:
        failures.append("endpoint declares deterministic=false")
    for inst in list(instances)[:max_instances]:
        try:
            first = endpoint.infer(inst)
            second = endpoint.infer(inst)
        except (ProtocolError, ConformanceError, EndpointError) as exc:
            failures.append(f"{inst.id}: infer failed: {exc}")
            continue
        if first != second:
            failures.append(f"{inst.id}: repeated infer not identical")
        if first.label not in inst.label_set:
            failures.append(f"{inst.id}: label outside label set")
        try:
            pred = endpoint.predict(inst)
        except (ProtocolError, ConformanceError, EndpointError) as exc:
            failures.append(f"{inst.id}: predict failed: {exc}")
            continue
        if pred.label != first.label:
            failures.append(f"{inst.id}: predict label {pred.label!r} != infer label {first.label!r}")
    return failures
