//! On-disk map definitions.
//!
//! Fixture files and the embedded catalog all use the same JSON shape, with
//! every complex number written as an `[re, im]` pair:
//!
//! ```json
//! {"type": "poly", "degree": 2, "coeffs": [[-2.0, 0.0]]}
//! {"type": "rational", "sigma": [2.0, 0.0], "b": [0.0, 0.0],
//!  "P": [[1.0, 0.0]], "Q": [[1.0, 0.0], [0.0, 0.0]]}
//! ```
//!
//! Polynomials are monic and centered: `coeffs` lists a_1..a_{d-1} of
//! f(z) = z^d + a_1 z^{d-2} + ... + a_{d-1}. Rational maps are
//! sigma z + b + P(z)/Q(z) with P and Q in descending coefficient order and
//! deg P <= deg Q - 1.

use critlab::orbit::Map;
use critlab::poly::ComplexPoly;
use critlab::polymap::PolyMap;
use critlab::ratmap::RationalMap;
use critlab::scalar::SpherePoint;
use critlab::{Map64, Result, C64};
use serde::{Deserialize, Serialize};

/// Complex number in serialized form.
pub type Pair = [f64; 2];

pub fn pair(z: C64) -> Pair {
    [z.re, z.im]
}

pub fn unpair(p: Pair) -> C64 {
    C64::new(p[0], p[1])
}

/// Points on the sphere serialize as `[re, im]` or `null` for infinity.
pub fn sphere(p: SpherePoint<f64>) -> Option<Pair> {
    p.finite().map(pair)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum MapDefinition {
    Poly {
        degree: usize,
        coeffs: Vec<Pair>,
    },
    Rational {
        sigma: Pair,
        b: Pair,
        #[serde(rename = "P")]
        p: Vec<Pair>,
        #[serde(rename = "Q")]
        q: Vec<Pair>,
    },
}

impl MapDefinition {
    pub fn build(&self) -> Result<Map64> {
        match self {
            MapDefinition::Poly { degree, coeffs } => {
                let cs = coeffs.iter().map(|&c| unpair(c)).collect();
                Ok(Map::Poly(PolyMap::new(*degree, cs)?))
            }
            MapDefinition::Rational { sigma, b, p, q } => {
                let pp = ComplexPoly::new(p.iter().map(|&c| unpair(c)).collect());
                let qq = ComplexPoly::new(q.iter().map(|&c| unpair(c)).collect());
                Ok(Map::Rational(RationalMap::new(unpair(*sigma), unpair(*b), pp, qq)?))
            }
        }
    }

    /// Human-oriented one-word kind, used in catalog listings.
    pub fn kind(&self) -> &'static str {
        match self {
            MapDefinition::Poly { .. } => "poly",
            MapDefinition::Rational { .. } => "rational",
        }
    }
}
