//! The documented JSON schema of run configurations, emitted by
//! `omt-term schema`. Output is stable across runs (sorted keys).

use serde_json::{json, Value};

use crate::config::Task;

fn matrix() -> Value {
    json!({
        "type": "array",
        "minItems": 1,
        "items": {"type": "array", "items": {"type": "number"}, "minItems": 1}
    })
}

fn vector() -> Value {
    json!({"type": "array", "items": {"type": "number"}, "minItems": 1})
}

fn measure() -> Value {
    json!({
        "type": "object",
        "additionalProperties": false,
        "required": ["atoms", "weights"],
        "properties": {
            "atoms": matrix(),
            "weights": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0.0}}
        }
    })
}

pub fn config_schema() -> Value {
    let affine_model = json!({
        "type": "object",
        "additionalProperties": false,
        "required": ["drift_matrix", "drift_const", "vol_matrix", "alpha", "beta",
                     "rate_slope", "rate_const", "x0"],
        "properties": {
            "drift_matrix": matrix(),
            "drift_const": vector(),
            "vol_matrix": matrix(),
            "alpha": vector(),
            "beta": matrix(),
            "rate_slope": vector(),
            "rate_const": {"type": "number"},
            "jump": {
                "type": "object",
                "additionalProperties": false,
                "required": ["intensity_slope", "intensity_const", "measure"],
                "properties": {
                    "intensity_slope": vector(),
                    "intensity_const": {"type": "number", "minimum": 0.0},
                    "measure": measure()
                }
            },
            "x0": vector()
        }
    });
    let quadratic_model = json!({
        "type": "object",
        "additionalProperties": false,
        "required": ["drift_matrix", "drift_const", "sigma", "rate_quad",
                     "rate_slope", "rate_const", "x0"],
        "properties": {
            "drift_matrix": matrix(),
            "drift_const": vector(),
            "sigma": matrix(),
            "rate_quad": matrix(),
            "rate_slope": vector(),
            "rate_const": {"type": "number"},
            "jump": {
                "type": "object",
                "additionalProperties": false,
                "required": ["intensity_quad", "intensity_slope", "intensity_const", "measure"],
                "properties": {
                    "intensity_quad": matrix(),
                    "intensity_slope": vector(),
                    "intensity_const": {"type": "number", "minimum": 0.0},
                    "measure": measure()
                }
            },
            "x0": vector()
        }
    });

    json!({
        "$schema": "http://json-schema.org/draft-07/schema#",
        "title": "omt-term run configuration",
        "type": "object",
        "additionalProperties": false,
        "required": ["model", "grid", "task"],
        "properties": {
            "model": {
                "type": "object",
                "additionalProperties": false,
                "oneOf": [
                    {"required": ["affine"]},
                    {"required": ["quadratic"]}
                ],
                "properties": {
                    "affine": affine_model,
                    "quadratic": quadratic_model
                }
            },
            "grid": {
                "type": "object",
                "additionalProperties": false,
                "required": ["t0", "t_end", "steps"],
                "properties": {
                    "t0": {"type": "number"},
                    "t_end": {"type": "number"},
                    "steps": {"type": "integer", "minimum": 1}
                }
            },
            "mc": {
                "type": "object",
                "additionalProperties": false,
                "required": ["n_paths", "seed"],
                "properties": {
                    "n_paths": {"type": "integer", "minimum": 1},
                    "seed": {"type": "integer", "minimum": 0}
                }
            },
            "task": {"enum": Task::ALL},
            "price_model": {
                "oneOf": [
                    {
                        "type": "object",
                        "additionalProperties": false,
                        "required": ["kind", "a_t", "h_t"],
                        "properties": {
                            "kind": {"const": "apm"},
                            "a_t": vector(),
                            "h_t": {"type": "number"}
                        }
                    },
                    {
                        "type": "object",
                        "additionalProperties": false,
                        "required": ["kind", "b_t", "a_t", "h_t"],
                        "properties": {
                            "kind": {"const": "qpm"},
                            "b_t": matrix(),
                            "a_t": vector(),
                            "h_t": {"type": "number"}
                        }
                    }
                ]
            },
            "kernels": {
                "type": "array",
                "minItems": 1,
                "items": {
                    "oneOf": [
                        {
                            "type": "object",
                            "additionalProperties": false,
                            "required": ["kind"],
                            "properties": {"kind": {"const": "zero"}}
                        },
                        {
                            "type": "object",
                            "additionalProperties": false,
                            "required": ["kind", "u"],
                            "properties": {"kind": {"const": "constant"}, "u": vector()}
                        },
                        {
                            "type": "object",
                            "additionalProperties": false,
                            "required": ["kind", "offset", "slope"],
                            "properties": {
                                "kind": {"const": "affine"},
                                "offset": vector(),
                                "slope": matrix()
                            }
                        },
                        {
                            "type": "object",
                            "additionalProperties": false,
                            "required": ["kind"],
                            "properties": {"kind": {"const": "optimal"}}
                        }
                    ]
                }
            },
            "credit": {
                "type": "object",
                "additionalProperties": false,
                "required": ["intensity_slope", "intensity_const", "recovery"],
                "properties": {
                    "intensity_slope": vector(),
                    "intensity_const": {"type": "number", "minimum": 0.0},
                    "recovery": {
                        "type": "object",
                        "additionalProperties": false,
                        "required": ["kind", "eta"],
                        "properties": {
                            "kind": {"enum": ["fractional-face", "fractional-pre-default"]},
                            "eta": {"type": "number", "exclusiveMinimum": 0.0, "maximum": 1.0}
                        }
                    }
                }
            }
        }
    })
}

pub fn schema_text() -> String {
    let mut text = serde_json::to_string_pretty(&config_schema()).expect("schema serializes");
    text.push('\n');
    text
}
