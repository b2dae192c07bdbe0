"""Wire API for the engine; the browser UI and scripts are clients.

All endpoints are deterministic given engine state.  Bodies mirror the
documented document formats (docs/formats.md).  Every mixed-initiative
verb goes through POST /sessions/{id}/invoke; frequently used verbs also
have convenience aliases.
"""

from __future__ import annotations

from typing import Optional

from fastapi import Body, FastAPI, HTTPException, Query
from fastapi.responses import PlainTextResponse

from .assist import StaleSuggestionError
from .diagnostics import Diagnostic
from .ontology import OntologyError, OntologyParseError
from .planner import AbstractRequest, PlannerError
from .process import ProcessError
from .profiles import ProfileError
from .registry import (DiscoveryQuery, DuplicateServiceError, RegistryError,
                       UnknownServiceError)
from .session import (Engine, MixedInitiativeRequest, SessionError,
                      UnknownSessionError, export_process)


def _diags(diags: list[Diagnostic]) -> list[dict]:
    return [d.to_dict() for d in diags]


def create_app(engine: Optional[Engine] = None) -> FastAPI:
    engine = engine or Engine()
    app = FastAPI(title="serviceloom", version="0.1.0")
    app.state.engine = engine

    def guard(fn):
        try:
            return fn()
        except (UnknownSessionError, UnknownServiceError) as e:
            raise HTTPException(status_code=404, detail=str(e))
        except StaleSuggestionError as e:
            raise HTTPException(status_code=409, detail=str(e))
        except DuplicateServiceError as e:
            raise HTTPException(status_code=409, detail=str(e))
        except OntologyParseError as e:
            raise HTTPException(status_code=422, detail=str(e))
        except (OntologyError, PlannerError, ProcessError, ProfileError,
                RegistryError, SessionError) as e:
            raise HTTPException(status_code=400, detail=str(e))

    # -- ontologies -------------------------------------------------------

    @app.post("/ontologies")
    def load_ontology(body: dict = Body(...)):
        document = body.get("document")
        if not isinstance(document, str):
            raise HTTPException(status_code=422,
                                detail="body needs a 'document' string")
        diags = guard(lambda: engine.load_ontology(document,
                                                   body.get("format")))
        return {"ontology": engine.ontology.summary(),
                "diagnostics": _diags(diags)}

    @app.post("/ontologies/classify")
    def classify():
        diags = guard(engine.classify)
        return {"ontology": engine.ontology.summary(),
                "diagnostics": _diags(diags)}

    @app.get("/ontologies")
    def ontology_summary():
        return engine.ontology.summary()

    # -- services -----------------------------------------------------------

    @app.post("/services")
    def register(body: dict = Body(...)):
        import yaml as _yaml
        text = _yaml.safe_dump(body)
        result = guard(lambda: engine.register_document(text))
        return {"registered": sorted(result),
                "diagnostics": {k: _diags(v) for k, v in result.items()},
                "registry_version": engine.registry.version}

    @app.delete("/services/{service_id}", status_code=204)
    def deregister(service_id: str):
        guard(lambda: engine.deregister_service(service_id))

    @app.get("/services")
    def find_services(
            desired_output: list[str] = Query(default=[]),
            required_input: list[str] = Query(default=[]),
            desired_effect: list[str] = Query(default=[]),
            nf: list[str] = Query(default=[]),
            max_results: Optional[int] = None):
        if not (desired_output or required_input or desired_effect or nf):
            snapshot = engine.registry.snapshot()
            return {"services": [p.to_dict() for p in snapshot.profiles]}
        from .profiles import StatusPattern
        filters = []
        for spec in nf:
            parts = spec.split(":", 2)
            if len(parts) != 3:
                raise HTTPException(status_code=422,
                                    detail="nf filters are attr:op:value")
            attr, op, raw = parts
            value: object = raw
            try:
                value = int(raw)
            except ValueError:
                try:
                    value = float(raw)
                except ValueError:
                    pass
            filters.append({"attribute": attr, "comparator": op,
                            "value": value})
        query = DiscoveryQuery.from_dict({
            "required_inputs": required_input,
            "desired_outputs": desired_output,
            "desired_effects": [{"class": c} for c in desired_effect],
            "nonfunctional_filters": filters,
            "max_results": max_results,
        })
        matches = guard(lambda: engine.registry.discover(query,
                                                         engine.ontology))
        return {"matches": [m.to_dict() for m in matches]}

    # -- sessions -----------------------------------------------------------

    @app.post("/sessions")
    def create_session():
        return {"id": engine.create_session()}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        ctx = guard(lambda: engine.session(session_id))
        return ctx.to_dict()

    @app.put("/sessions/{session_id}/request")
    def set_request(session_id: str, body: dict = Body(...)):
        request = AbstractRequest.from_dict(body)
        diags = guard(lambda: engine.set_request(session_id, request))
        return {"request": request.to_dict(), "diagnostics": _diags(diags)}

    @app.post("/sessions/{session_id}/invoke")
    def invoke(session_id: str, body: dict = Body(...)):
        req = MixedInitiativeRequest.from_dict(body)
        return guard(lambda: engine.invoke(session_id, req))

    def _alias(session_id: str, verb: str, arguments: dict):
        req = MixedInitiativeRequest(verb=verb, arguments=arguments)
        return guard(lambda: engine.invoke(session_id, req))

    @app.post("/sessions/{session_id}/plan")
    def plan(session_id: str, k: int = 1):
        return _alias(session_id, "Plan", {"k": k})

    @app.get("/sessions/{session_id}/suggestions/consolidation")
    def consolidations(session_id: str, producer: str, consumer: str):
        return _alias(session_id, "SuggestConsolidations",
                      {"producer": producer, "consumer": consumer})

    @app.get("/sessions/{session_id}/suggestions/orderings")
    def orderings(session_id: str):
        return _alias(session_id, "SuggestOrderings", {})

    @app.get("/sessions/{session_id}/suggestions/insertions")
    def insertions(session_id: str):
        return _alias(session_id, "SuggestInsertions", {})

    @app.get("/sessions/{session_id}/suggestions/relaxations")
    def relaxations(session_id: str):
        return _alias(session_id, "Relax", {})

    @app.get("/sessions/{session_id}/verify/dataflow")
    def verify_dataflow(session_id: str):
        return _alias(session_id, "VerifyDataflow", {})

    @app.get("/sessions/{session_id}/verify/controlflow")
    def verify_controlflow(session_id: str):
        return _alias(session_id, "VerifyControlflow", {})

    @app.get("/sessions/{session_id}/conflicts")
    def conflicts(session_id: str, candidate: str,
                  position: Optional[str] = None):
        return _alias(session_id, "DetectConflicts",
                      {"candidate": candidate, "position": position})

    @app.post("/sessions/{session_id}/dataflow/complete")
    def complete(session_id: str):
        return _alias(session_id, "CompleteDataflow", {})

    @app.post("/sessions/{session_id}/apply")
    def apply(session_id: str, suggestion: str):
        return _alias(session_id, "ApplySuggestion",
                      {"suggestion": suggestion})

    @app.post("/sessions/{session_id}/undo")
    def undo(session_id: str):
        return _alias(session_id, "Undo", {})

    @app.post("/sessions/{session_id}/edits")
    def edits(session_id: str, body: dict = Body(...)):
        return _alias(session_id, "EditProcess",
                      {"edits": body.get("edits") or []})

    @app.get("/sessions/{session_id}/export")
    def export(session_id: str, format: str = "profile-bundle"):
        text = guard(lambda: export_process(engine, session_id, format))
        media = ("application/json" if format == "profile-bundle"
                 else "text/plain")
        return PlainTextResponse(text, media_type=media)

    return app
