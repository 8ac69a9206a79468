use serde_json::{json, Value};

fn op(summary: &str, codes: &[(&str, &str)]) -> Value {
    let responses: serde_json::Map<String, Value> =
        codes.iter().map(|(c, d)| (c.to_string(), json!({ "description": d }))).collect();
    json!({ "summary": summary, "responses": responses })
}

fn with_body(mut v: Value, schema: Value) -> Value {
    v["requestBody"] = json!({ "required": true, "content": { "application/json": { "schema": schema } } });
    v
}

/// OpenAPI 3.0 description of the service.
pub fn openapi() -> Value {
    let auth = [("401", "missing or invalid bearer token")];
    let codes = |extra: &[(&'static str, &'static str)]| -> Vec<(&'static str, &'static str)> {
        extra.iter().chain(auth.iter()).copied().collect()
    };
    json!({
        "openapi": "3.0.3",
        "info": { "title": "threadkb", "version": env!("CARGO_PKG_VERSION") },
        "components": {
            "securitySchemes": { "bearer": { "type": "http", "scheme": "bearer" } },
            "schemas": {
                "Branch": { "type": "object", "properties": {
                    "index": { "type": "integer" }, "condition": { "type": "string" },
                    "next_intent": { "type": "string" }, "token": { "type": "string", "enum": ["CONTINUE", "CROSS", "MITIGATE"] } } },
                "TurnResponse": { "type": "object", "properties": {
                    "session_id": { "type": "string" },
                    "turn_nonce": { "type": "string", "nullable": true },
                    "kind": { "type": "string", "enum": ["plan", "step_instruction", "clarify_question", "mitigated", "escalate", "no_info"] },
                    "status": { "type": "string", "enum": ["active", "awaiting_feedback", "awaiting_clarification", "mitigated", "escalated", "no_info", "exhausted"] },
                    "text": { "type": "string" }, "lu_id": { "type": "string", "nullable": true },
                    "header": { "type": "string", "nullable": true },
                    "branches": { "type": "array", "items": { "$ref": "#/components/schemas/Branch" } },
                    "turn": { "type": "integer" } } }
            }
        },
        "security": [{ "bearer": [] }],
        "paths": {
            "/api/v1/ingest": { "post": with_body(
                op("Run the pipeline over a manifest and publish a new snapshot",
                   &codes(&[("200", "per-document LU counts"), ("400", "malformed manifest or missing file"),
                            ("422", "extraction failed; snapshot unchanged"), ("503", "model gateway unavailable")])),
                json!({ "type": "object", "required": ["manifest"], "properties": {
                    "manifest": { "type": "object" },
                    "files": { "type": "object", "additionalProperties": { "type": "string" } } } })) },
            "/api/v1/kb": { "get": op("Snapshot metadata and statistics", &codes(&[("200", "ok"), ("409", "no knowledge base")])) },
            "/api/v1/sessions": { "post": with_body(
                op("Start a session", &codes(&[("200", "first turn"), ("400", "empty question"), ("409", "no knowledge base")])),
                json!({ "type": "object", "required": ["question"], "properties": {
                    "question": { "type": "string" }, "mode": { "type": "string", "enum": ["single", "multi"] } } })) },
            "/api/v1/sessions/{id}": { "get": op("Session state and transcript",
                &codes(&[("200", "ok"), ("404", "unknown session"), ("410", "expired")])) },
            "/api/v1/sessions/{id}/feedback": { "post": with_body(
                op("Report a step outcome or answer a clarification",
                   &codes(&[("200", "next turn"), ("400", "empty payload or missing nonce"), ("404", "unknown session"),
                            ("409", "stale or replayed nonce, or wrong input for the session status"),
                            ("410", "session ended or expired")])),
                json!({ "type": "object", "required": ["turn_nonce"], "properties": {
                    "outcome": { "type": "string" }, "clarification": { "type": "string" },
                    "turn_nonce": { "type": "string" } } })) },
            "/api/v1/lus": { "get": {
                "summary": "Retrieve logic units by header similarity",
                "parameters": [
                    { "name": "query", "in": "query", "required": true, "schema": { "type": "string" } },
                    { "name": "k", "in": "query", "schema": { "type": "integer", "minimum": 1, "maximum": 100, "default": 5 } } ],
                "responses": op("", &codes(&[("200", "results by descending score"), ("400", "bad query"), ("409", "no knowledge base")]))["responses"].clone() } },
            "/api/v1/lus/{id}": { "get": op("A logic unit with its resolved linker neighbors",
                &codes(&[("200", "ok"), ("404", "unknown LU"), ("409", "no knowledge base")])) },
            "/api/v1/spec": { "get": { "summary": "This document", "security": [], "responses": { "200": { "description": "ok" } } } },
            "/api/v1/health": { "get": { "summary": "Liveness", "security": [], "responses": { "200": { "description": "ok" } } } }
        }
    })
}
