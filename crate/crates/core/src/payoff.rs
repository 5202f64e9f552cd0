//! Put on the arithmetic average of two assets.

use serde::{Deserialize, Serialize};

use crate::grids::SpatialGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffKind {
    PutOnAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffSpec {
    pub kind: PayoffKind,
    pub strike: f64,
}

impl PayoffSpec {
    pub fn put_on_average(strike: f64) -> Self {
        PayoffSpec {
            kind: PayoffKind::PutOnAverage,
            strike,
        }
    }
}

pub fn payoff_eval(spec: &PayoffSpec, x: &[f64; 2]) -> f64 {
    match spec.kind {
        PayoffKind::PutOnAverage => (spec.strike - 0.5 * (x[0] + x[1])).max(0.0),
    }
}

/// Second antiderivative in the sum variable: `G'' = max(K - s/2, 0)`.
fn second_antiderivative(strike: f64, s: f64) -> f64 {
    let d = (2.0 * strike - s).max(0.0);
    d * d * d / 12.0
}

/// Exact mean of the payoff over `[a1, b1] x [a2, b2]`.
pub fn cell_average(spec: &PayoffSpec, a: [f64; 2], b: [f64; 2]) -> f64 {
    let two_k = 2.0 * spec.strike;
    if b[0] + b[1] <= two_k {
        return payoff_eval(spec, &[0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
    }
    if a[0] + a[1] >= two_k {
        return 0.0;
    }
    let g = |s: f64| second_antiderivative(spec.strike, s);
    let integral = g(b[0] + b[1]) - g(a[0] + b[1]) - g(b[0] + a[1]) + g(a[0] + a[1]);
    integral / ((b[0] - a[0]) * (b[1] - a[1]))
}

/// Whether the half-open cell `[a1, b1) x [a2, b2)` meets the kink line.
pub fn cell_meets_kink(spec: &PayoffSpec, a: [f64; 2], b: [f64; 2]) -> bool {
    let two_k = 2.0 * spec.strike;
    a[0] + a[1] <= two_k && two_k < b[0] + b[1]
}

/// Initial values on the tensor grid, index `m2 * (n_x + 1) + m1`; cells
/// crossing the kink carry their cell average.
pub fn initial_vector(spec: &PayoffSpec, grid: &SpatialGrid) -> Vec<f64> {
    let n = grid.len();
    let half = grid.half_nodes();
    let mut v = vec![0.0; n * n];
    for m2 in 0..n {
        for m1 in 0..n {
            let a = [half[m1], half[m2]];
            let b = [half[m1 + 1], half[m2 + 1]];
            v[m2 * n + m1] = if cell_meets_kink(spec, a, b) {
                cell_average(spec, a, b)
            } else {
                payoff_eval(spec, &[grid.nodes[m1], grid.nodes[m2]])
            };
        }
    }
    v
}

/// Number of grid nodes whose cell meets the kink.
pub fn averaged_node_count(spec: &PayoffSpec, grid: &SpatialGrid) -> usize {
    let n = grid.len();
    let half = grid.half_nodes();
    (0..n * n)
        .filter(|&i| {
            let (m1, m2) = (i % n, i / n);
            cell_meets_kink(spec, [half[m1], half[m2]], [half[m1 + 1], half[m2 + 1]])
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::build_spatial_grid;
    use crate::special::gauss_legendre;

    fn spec() -> PayoffSpec {
        PayoffSpec::put_on_average(100.0)
    }

    #[test]
    fn pointwise_values() {
        assert_eq!(payoff_eval(&spec(), &[90.0, 90.0]), 10.0);
        assert_eq!(payoff_eval(&spec(), &[120.0, 100.0]), 0.0);
        assert_eq!(payoff_eval(&spec(), &[100.0, 100.0]), 0.0);
    }

    #[test]
    fn non_straddling_cells() {
        assert_eq!(cell_average(&spec(), [10.0, 20.0], [30.0, 50.0]), payoff_eval(&spec(), &[20.0, 35.0]));
        assert_eq!(cell_average(&spec(), [110.0, 100.0], [130.0, 150.0]), 0.0);
    }

    /// Gauss-Legendre in x1 on pieces split where the x2-range changes form;
    /// exact up to rounding.
    fn quadrature_average(a: [f64; 2], b: [f64; 2]) -> f64 {
        let (x, w) = gauss_legendre(20);
        let mut cuts = vec![a[0], b[0]];
        for c in [200.0 - b[1], 200.0 - a[1]] {
            if c > a[0] && c < b[0] {
                cuts.push(c);
            }
        }
        cuts.sort_by(f64::total_cmp);
        let mut total = 0.0;
        for piece in cuts.windows(2) {
            let (lo, hi) = (piece[0], piece[1]);
            for (xi, wi) in x.iter().zip(&w) {
                let x1 = 0.5 * (lo + hi) + 0.5 * (hi - lo) * xi;
                let top = (200.0 - x1).min(b[1]);
                if top <= a[1] {
                    continue;
                }
                let inner = (top - a[1]) * (100.0 - 0.5 * x1 - 0.25 * (a[1] + top));
                total += 0.5 * (hi - lo) * wi * inner;
            }
        }
        total / ((b[0] - a[0]) * (b[1] - a[1]))
    }

    #[test]
    fn straddling_cell_matches_quadrature() {
        let exact = cell_average(&spec(), [95.0, 95.0], [105.0, 105.0]);
        let quad = quadrature_average([95.0, 95.0], [105.0, 105.0]);
        assert!((exact - quad).abs() < 1e-10, "{exact} vs {quad}");
        let exact = cell_average(&spec(), [80.0, 103.0], [99.0, 140.0]);
        let quad = quadrature_average([80.0, 103.0], [99.0, 140.0]);
        assert!((exact - quad).abs() < 1e-10, "{exact} vs {quad}");
    }

    #[test]
    fn shrinking_cells_converge_to_centroid() {
        let mut prev = f64::INFINITY;
        for k in 0..8 {
            let h = 10.0 / 2f64.powi(k);
            let c = [99.0, 100.5];
            let err = (cell_average(&spec(), [c[0] - h, c[1] - h], [c[0] + h, c[1] + h])
                - payoff_eval(&spec(), &c))
            .abs();
            assert!(err <= 2.0 * h);
            assert!(err <= prev);
            prev = err;
        }
    }

    #[test]
    fn averaged_nodes_grow_linearly() {
        let mut counts = Vec::new();
        for n in [50, 100, 200] {
            let g = build_spatial_grid(n, 600.0, 250.0, 0.65).unwrap();
            counts.push(averaged_node_count(&spec(), &g) as f64);
        }
        assert!(counts[0] > 0.0);
        for w in counts.windows(2) {
            let ratio = w[1] / w[0];
            assert!((1.6..2.4).contains(&ratio), "{counts:?}");
        }
    }

    #[test]
    fn initial_vector_layout_and_values() {
        let g = build_spatial_grid(40, 600.0, 250.0, 0.65).unwrap();
        let v = initial_vector(&spec(), &g);
        let n = g.len();
        assert_eq!(v[0], 100.0);
        // far OTM corner
        assert_eq!(v[n * n - 1], 0.0);
        // axis-1 fastest: (m1, m2) = (3, 0)
        assert_eq!(v[3], 100.0 - 0.5 * g.nodes[3]);
        assert!(v.iter().all(|&x| (0.0..=100.0).contains(&x)));
    }
}
