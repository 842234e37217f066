use serde_json::{json, Value};

fn error_ref(description: &str) -> Value {
    json!({
        "description": description,
        "content": {"application/json": {"schema": {"$ref": "#/components/schemas/Error"}}}
    })
}

fn json_ok(description: &str, schema: &str) -> Value {
    json!({
        "description": description,
        "content": {"application/json": {"schema": {"$ref": format!("#/components/schemas/{schema}")}}}
    })
}

fn query_param(name: &str, kind: &str, description: &str) -> Value {
    json!({"name": name, "in": "query", "required": false, "description": description, "schema": {"type": kind}})
}

/// The OpenAPI 3 document served at `/api/spec`.
pub fn document() -> Value {
    json!({
        "openapi": "3.0.3",
        "info": {
            "title": "foramslice",
            "version": env!("CARGO_PKG_VERSION"),
            "description": "Preprocessing, classification and slice matching for micro-CT foraminifera slices."
        },
        "paths": {
            "/api/health": {"get": {
                "summary": "Liveness and index state",
                "responses": {"200": {"description": "service is up"}}
            }},
            "/api/volumes": {"get": {
                "summary": "Corpus summary",
                "responses": {
                    "200": json_ok("indexed volumes and per-species totals", "Volumes"),
                    "503": error_ref("index not ready; Retry-After is set while it loads")
                }
            }},
            "/api/preprocess": {"post": {
                "summary": "Preview preprocessing of an uploaded slice",
                "parameters": [
                    query_param("sensitivity", "number", "0 keeps the Otsu foreground, 1 removes the most background"),
                    query_param("content_min_fraction", "number", "minimum foreground fraction"),
                    query_param("target_size", "integer", "side of the square output"),
                    query_param("denoise_radius", "integer", "median filter radius"),
                    query_param("crop_margin", "number", "bounding-box margin fraction")
                ],
                "requestBody": {"required": true, "content": {
                    "image/png": {"schema": {"type": "string", "format": "binary"}},
                    "image/jpeg": {"schema": {"type": "string", "format": "binary"}}
                }},
                "responses": {
                    "200": json_ok("preview and upload id", "Preview"),
                    "400": error_ref("undecodable image or invalid parameters"),
                    "413": error_ref("upload larger than max_upload_bytes"),
                    "422": error_ref("empty foreground (sensitivity too high) or rejected slice")
                }
            }},
            "/api/classify": {"post": {
                "summary": "Ranked species predictions for an upload",
                "requestBody": {"required": true, "content": {"application/json": {"schema": {
                    "type": "object",
                    "required": ["upload_id"],
                    "properties": {"upload_id": {"type": "string"}, "ensemble": {"type": "string"}}
                }}}},
                "responses": {
                    "200": json_ok("top-5 labels and per-provider vectors", "Classification"),
                    "400": error_ref("unknown ensemble"),
                    "404": error_ref("unknown or expired upload"),
                    "424": error_ref("every provider failed")
                }
            }},
            "/api/match": {"post": {
                "summary": "Start a slice-matching job",
                "requestBody": {"required": true, "content": {"application/json": {"schema": {
                    "type": "object",
                    "required": ["upload_id"],
                    "properties": {"upload_id": {"type": "string"}, "params": {"$ref": "#/components/schemas/MatchParams"}}
                }}}},
                "responses": {
                    "202": json_ok("job accepted", "JobHandle"),
                    "400": error_ref("invalid parameters or unknown volume"),
                    "404": error_ref("unknown or expired upload"),
                    "409": error_ref("job queue full"),
                    "503": error_ref("index not ready")
                }
            }},
            "/api/match/{job_id}": {"get": {
                "summary": "Poll a matching job",
                "parameters": [{"name": "job_id", "in": "path", "required": true, "schema": {"type": "string"}}],
                "responses": {
                    "200": json_ok("job state, progress and result once done", "JobHandle"),
                    "410": error_ref("unknown or expired job")
                }
            }},
            "/api/spec": {"get": {
                "summary": "This document",
                "responses": {"200": {"description": "OpenAPI document"}}
            }}
        },
        "components": {"schemas": {
            "Error": {
                "type": "object",
                "required": ["code", "message", "hint"],
                "properties": {
                    "code": {"type": "string"},
                    "message": {"type": "string"},
                    "hint": {"type": "string"}
                }
            },
            "Volumes": {
                "type": "object",
                "properties": {
                    "volumes": {"type": "array", "items": {"type": "object", "properties": {
                        "id": {"type": "string"},
                        "species": {"type": "string"},
                        "dims": {"type": "array", "items": {"type": "integer"}},
                        "kept_slices": {"type": "integer"},
                        "total_slices": {"type": "integer"},
                        "axes": {"type": "array", "items": {"type": "object"}}
                    }}},
                    "species_totals": {"type": "object", "additionalProperties": {"type": "integer"}},
                    "total_slices": {"type": "integer"}
                }
            },
            "Preview": {
                "type": "object",
                "properties": {
                    "upload_id": {"type": "string"},
                    "expires_in_secs": {"type": "integer"},
                    "width": {"type": "integer"},
                    "height": {"type": "integer"},
                    "image_png": {"type": "string", "format": "byte"},
                    "mask_png": {"type": "string", "format": "byte"},
                    "report": {"type": "object"}
                }
            },
            "Classification": {
                "type": "object",
                "properties": {
                    "upload_id": {"type": "string"},
                    "ensemble": {"type": "string"},
                    "top": {"type": "array", "items": {"type": "object", "properties": {
                        "label": {"type": "string"},
                        "confidence": {"type": "number"},
                        "percent": {"type": "string"}
                    }}},
                    "probs": {"type": "array", "items": {"type": "number"}},
                    "degraded": {"type": "boolean"},
                    "providers": {"type": "array", "items": {"type": "object"}}
                }
            },
            "MatchParams": {
                "type": "object",
                "properties": {
                    "candidate_volume_ids": {"type": "array", "items": {"type": "string"}, "nullable": true},
                    "axes": {"type": "array", "items": {"type": "string", "enum": ["X", "Y", "Z"]}},
                    "top_k_coarse": {"type": "integer"},
                    "top_n": {"type": "integer"},
                    "coarse_rotation_step": {"type": "integer"},
                    "refine_radius": {"type": "integer"},
                    "weights": {"type": "object", "properties": {
                        "ssim": {"type": "number"}, "ncc": {"type": "number"}, "orb": {"type": "number"}
                    }}
                }
            },
            "JobHandle": {
                "type": "object",
                "properties": {
                    "job_id": {"type": "string"},
                    "kind": {"type": "string", "enum": ["match", "index"]},
                    "state": {"type": "string", "enum": ["queued", "running", "done", "failed"]},
                    "progress": {"type": "number"},
                    "result": {"type": "object"},
                    "error": {"type": "string"}
                }
            }
        }}
    })
}
