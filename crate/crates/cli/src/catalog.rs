//! The bundled fixture catalog.
//!
//! Each entry ships the map definition in the same JSON schema `--map`
//! ingests, a note on where the expected numbers come from, and the numbers
//! themselves. The values are hand-computed closed forms (geometric series
//! along eventually periodic critical orbits), so they double as regression
//! oracles for the analyze pipeline.

use serde::Serialize;
use serde_json::{json, Value};

use crate::mapdef::MapDefinition;
use crate::report::SCHEMA_VERSION;

#[derive(Debug, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub definition: MapDefinition,
    pub notes: &'static str,
    pub expected: Value,
}

#[derive(Debug, Serialize)]
pub struct Catalog {
    pub schema_version: &'static str,
    pub fixtures: Vec<CatalogEntry>,
}

pub fn catalog() -> Catalog {
    let fixtures = vec![
        CatalogEntry {
            name: "chebyshev",
            definition: MapDefinition::Poly { degree: 2, coeffs: vec![[-2.0, 0.0]] },
            notes: "z^2 - 2. The critical value -2 maps to the fixed point 2 with \
                    multiplier 4, so the similarity series is geometric: \
                    L = 1 - 1/2 + sum 2/4^n = 2/3.",
            expected: json!({
                "similarity": { "j": 1, "direction": "v1", "value": [2.0 / 3.0, 0.0] },
                "matrix": { "entries": [[[2.0 / 3.0, 0.0]]], "rank": 1 },
                "verdict": { "maximal": true, "margin": 2.0 / 3.0 }
            }),
        },
        CatalogEntry {
            name: "misiurewicz_i",
            definition: MapDefinition::Poly { degree: 2, coeffs: vec![[0.0, 1.0]] },
            notes: "z^2 + i. The critical value i lands on the repelling 2-cycle \
                    {-1+i, -i} after one step; the tail sums in closed form over \
                    the cycle multiplier 4+4i and gives L = 0.8 - 0.4i.",
            expected: json!({
                "similarity": { "j": 1, "direction": "v1", "value": [0.8, -0.4] },
                "matrix": { "rank": 1 },
                "verdict": { "maximal": true }
            }),
        },
        CatalogEntry {
            name: "cubic_pm1",
            definition: MapDefinition::Poly { degree: 3, coeffs: vec![[-3.0, 0.0], [0.0, 0.0]] },
            notes: "z^3 - 3z. Both critical values +-2 are fixed with multiplier 9; \
                    the direction polynomials (z+1)/2 and (1-z)/2 evaluate along the \
                    two orbits to interleaved geometric sums.",
            expected: json!({
                "matrix": {
                    "entries": [
                        [[0.9375, 0.0], [0.1875, 0.0]],
                        [[0.1875, 0.0], [0.9375, 0.0]]
                    ],
                    "singular_values": [1.125, 0.75],
                    "rank": 2
                },
                "verdict": { "maximal": true, "margin": 0.75 }
            }),
        },
        CatalogEntry {
            name: "rat_h",
            definition: MapDefinition::Rational {
                sigma: [2.0, 0.0],
                b: [0.0, 0.0],
                p: vec![[1.0, 0.0]],
                q: vec![[1.0, 0.0], [0.0, 0.0]],
            },
            notes: "2z + 1/z. Infinity is an attracting fixed point (multiplier 1/2) \
                    that pulls in both critical orbits, so their spherical weights \
                    double each step and no slot is summable. The matrix is empty \
                    and the rank verdict is vacuous.",
            expected: json!({
                "case": "H",
                "summable_slots": [],
                "verdict": { "maximal": true, "margin": null }
            }),
        },
        CatalogEntry {
            name: "rat_nd",
            definition: MapDefinition::Rational {
                sigma: [1.0, 0.0],
                b: [0.0, 0.0],
                p: vec![[1.0, 0.0]],
                q: vec![[1.0, 0.0], [0.0, 0.0]],
            },
            notes: "z + 1/z. Degenerate parabolic at infinity: critical orbits drift \
                    out like sqrt(2n) and their weights grow, so no slot is summable. \
                    With two finite critical values the degenerate chart pins both \
                    and the matrix has no columns either.",
            expected: json!({
                "case": "ND",
                "summable_slots": [],
                "columns": [],
                "verdict": { "maximal": true, "margin": null }
            }),
        },
    ];
    Catalog { schema_version: SCHEMA_VERSION, fixtures }
}

/// CSV view: one line per fixture.
pub fn catalog_csv(c: &Catalog) -> String {
    let mut out = String::from("name,kind,notes\n");
    for e in &c.fixtures {
        let notes = e.notes.replace(',', ";");
        out.push_str(&format!("{},{},{}\n", e.name, e.definition.kind(), notes));
    }
    out
}
