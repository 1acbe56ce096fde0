//! The two benchmark systems and their initial gains.
//!
//! `G1 = (A⁻, B₁)` with `A⁻ = −(5I + A)` is open-loop stable, `G2 = (A⁺, I)`
//! with `A⁺ = A` is not. Weights default to `Q = R = Σ = I`.

use sha2::{Digest, Sha256};

use crate::linalg::Mat;
use crate::lqr::LtiSystem;

pub const KAPPA: usize = 10;

const A: [[f64; 5]; 5] = [
    [0.2373, 0.3452, 0.6653, 0.6715, 0.3288],
    [0.3452, 0.4889, 0.8060, 0.3889, 0.5584],
    [0.6653, 0.8060, 0.0377, 0.5735, 0.5100],
    [0.6715, 0.3889, 0.5735, 0.3354, 0.6667],
    [0.3288, 0.5584, 0.5100, 0.6667, 0.4942],
];

const B1_T: [[f64; 5]; 3] = [
    [0.0, 0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 1.0],
];

const K_MINUS0: [[f64; 5]; 3] = [
    [-2.14, -2.62, 20.48, -1.55, -1.30],
    [-2.07, -0.80, -1.55, 19.14, -1.94],
    [-0.64, -1.50, -1.30, -1.94, 18.44],
];

const K_PLUS0: [[f64; 5]; 5] = [
    [12.21, 1.12, 2.16, 2.18, 1.07],
    [1.12, 13.03, 2.61, 1.26, 1.81],
    [2.16, 2.61, 11.56, 1.86, 1.65],
    [2.18, 1.26, 1.86, 12.53, 2.16],
    [1.07, 1.81, 1.65, 2.16, 13.02],
];

fn from_array<const R: usize, const C: usize>(rows: &[[f64; C]; R]) -> Mat {
    Mat::from_fn(R, C, |i, j| rows[i][j])
}

pub fn base_a() -> Mat {
    from_array(&A)
}

pub fn a_minus() -> Mat {
    -(Mat::identity(5, 5) * 5.0 + base_a())
}

pub fn a_plus() -> Mat {
    base_a()
}

pub fn b1() -> Mat {
    from_array(&B1_T).transpose()
}

pub fn b2() -> Mat {
    Mat::identity(5, 5)
}

pub fn k_minus0() -> Mat {
    from_array(&K_MINUS0)
}

pub fn k_plus0() -> Mat {
    from_array(&K_PLUS0)
}

pub fn g1() -> LtiSystem {
    LtiSystem::with_identity_weights(a_minus(), b1()).expect("G1 preset is well formed")
}

pub fn g2() -> LtiSystem {
    LtiSystem::with_identity_weights(a_plus(), b2()).expect("G2 preset is well formed")
}

/// Named preset lookup: `"G1"` or `"G2"` (case-insensitive).
pub fn system(name: &str) -> Option<LtiSystem> {
    match name.to_ascii_uppercase().as_str() {
        "G1" => Some(g1()),
        "G2" => Some(g2()),
        _ => None,
    }
}

/// Initial gain printed for a preset.
pub fn initial_gain(name: &str) -> Option<Mat> {
    match name.to_ascii_uppercase().as_str() {
        "G1" => Some(k_minus0()),
        "G2" => Some(k_plus0()),
        _ => None,
    }
}

/// Rows rendered with four (A) or two (gains) decimals, one row per line.
pub fn render(m: &Mat, decimals: usize) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|j| format!("{:.*}", decimals, m[(i, j)]))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// SHA-256 over the rendered `A`, `B₁ᵀ`, `K⁻(0)` and `K⁺(0)` blocks.
pub fn checksum() -> String {
    let mut hasher = Sha256::new();
    hasher.update(render(&base_a(), 4));
    hasher.update(render(&b1().transpose(), 0));
    hasher.update(render(&k_minus0(), 2));
    hasher.update(render(&k_plus0(), 2));
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
