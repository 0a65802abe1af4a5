//! Piecewise-linear test functions with compact support.
//!
//! The fluctuation fields are only ever paired against this family: triangular
//! ramps `G_n(u) = (1 − u/n)⁺·1{u ≥ 0}`, indicators of bounded intervals, and
//! arbitrary user-supplied piecewise-linear functions. Each function is a
//! sorted list of half-open pieces `[a, b)` carrying an affine value
//! `slope·u + intercept`; the function is zero outside its pieces. Evaluation
//! is exact, and the kink/jump structure is exposed so the heat semigroup can
//! be applied in closed form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TestFnError {
    #[error("invalid piece list: {0}")]
    InvalidPieces(String),
}

/// Affine piece `u ↦ slope·u + intercept` on `[a, b)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub a: f64,
    pub b: f64,
    pub slope: f64,
    pub intercept: f64,
}

impl Piece {
    fn value(&self, u: f64) -> f64 {
        self.slope * u + self.intercept
    }
}

/// Compactly supported piecewise-linear function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFn {
    pieces: Vec<Piece>,
}

impl TestFn {
    /// The zero function.
    pub fn zero() -> Self {
        TestFn { pieces: vec![] }
    }

    /// Triangular ramp `G_n(u) = (1 − u/n)⁺·1{u ≥ 0}`, the approximant of the
    /// half-line indicator used to carry current fluctuations.
    pub fn ramp(n: u32) -> Self {
        assert!(n >= 1, "ramp index must be positive");
        let n = f64::from(n);
        TestFn {
            pieces: vec![Piece {
                a: 0.0,
                b: n,
                slope: -1.0 / n,
                intercept: 1.0,
            }],
        }
    }

    /// Indicator of the half-open interval `[a, b)`.
    pub fn indicator(a: f64, b: f64) -> Self {
        assert!(a < b, "indicator needs a < b");
        TestFn {
            pieces: vec![Piece {
                a,
                b,
                slope: 0.0,
                intercept: 1.0,
            }],
        }
    }

    /// Builds a function from pieces, which must be finite, nonempty
    /// intervals, sorted and non-overlapping.
    pub fn from_pieces(pieces: Vec<Piece>) -> Result<Self, TestFnError> {
        let f = TestFn { pieces };
        f.check()?;
        Ok(f)
    }

    fn check(&self) -> Result<(), TestFnError> {
        for p in &self.pieces {
            if ![p.a, p.b, p.slope, p.intercept]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(TestFnError::InvalidPieces(format!(
                    "non-finite piece {p:?}"
                )));
            }
            if p.a >= p.b {
                return Err(TestFnError::InvalidPieces(format!(
                    "piece has empty interval [{}, {})",
                    p.a, p.b
                )));
            }
        }
        for w in self.pieces.windows(2) {
            if w[1].a < w[0].b {
                return Err(TestFnError::InvalidPieces(format!(
                    "pieces overlap or are unsorted near u = {}",
                    w[1].a
                )));
            }
        }
        Ok(())
    }

    /// True when the piece list satisfies the construction invariants
    /// (deserialized values may not).
    pub fn is_valid(&self) -> bool {
        self.check().is_ok()
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Exact evaluation; zero outside all pieces.
    pub fn value(&self, u: f64) -> f64 {
        for p in &self.pieces {
            if u < p.a {
                return 0.0;
            }
            if u < p.b {
                return p.value(u);
            }
        }
        0.0
    }

    /// Support interval `[min a, max b)`; `None` for the zero function.
    pub fn support(&self) -> Option<(f64, f64)> {
        let first = self.pieces.first()?;
        let last = self.pieces.last()?;
        Some((first.a, last.b))
    }

    /// All piece endpoints (kink locations), sorted and deduplicated.
    pub fn kinks(&self) -> Vec<f64> {
        let mut ks: Vec<f64> = self.pieces.iter().flat_map(|p| [p.a, p.b]).collect();
        ks.sort_by(|p, q| p.partial_cmp(q).unwrap());
        ks.dedup();
        ks
    }

    /// Jump discontinuities as `(location, right value − left value)`,
    /// omitting continuous kinks.
    pub fn jumps(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut push = |x: f64, left: f64, right: f64| {
            let jump = right - left;
            if jump.abs() > 1e-15 {
                out.push((x, jump));
            }
        };
        for (i, p) in self.pieces.iter().enumerate() {
            let left_at_a = match i.checked_sub(1).map(|j| &self.pieces[j]) {
                Some(prev) if prev.b == p.a => prev.value(p.a),
                _ => 0.0,
            };
            push(p.a, left_at_a, p.value(p.a));
            let next_starts_here = self.pieces.get(i + 1).map(|n| n.a == p.b).unwrap_or(false);
            if !next_starts_here {
                push(p.b, p.value(p.b), 0.0);
            }
        }
        out
    }

    /// `∫ G(u)² du` in closed form.
    pub fn l2_norm_sq(&self) -> f64 {
        self.pieces
            .iter()
            .map(|p| {
                if p.slope == 0.0 {
                    p.intercept * p.intercept * (p.b - p.a)
                } else {
                    let va = p.value(p.a);
                    let vb = p.value(p.b);
                    (vb * vb * vb - va * va * va) / (3.0 * p.slope)
                }
            })
            .sum()
    }
}
