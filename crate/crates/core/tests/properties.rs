use pide_core::grids::build_spatial_grid;
use pide_core::levy::{NtsModel, Preset};
use pide_core::linsolve::{bicgstab, ilu0};
use pide_core::quadrature::{build_scheme, build_zgrid, Region};
use pide_core::sparse::Csr;
use pide_core::spatial_ops::{build_fd_coeffs, lagrange_weights, BoundaryPolicy, TensorInterp};
use pide_core::stepper::fixed_point_update;
use proptest::prelude::*;

fn preset() -> impl Strategy<Value = Preset> {
    prop::sample::select(Preset::ALL.to_vec())
}

fn grid_params() -> impl Strategy<Value = (usize, f64, f64)> {
    (8usize..60, 300.0f64..3000.0, 0.3f64..0.9).prop_map(|(n, x_max, f)| {
        let x_int = 250.0_f64.min(0.8 * x_max);
        (n, x_max, f.max(x_int / x_max))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weights_nonnegative_and_inner_block_zero(p in preset(), half in 2usize..7) {
        let m: NtsModel = p.model();
        let (g, part) = build_zgrid(&m, 2 * half).unwrap();
        let s = build_scheme(&m, &g, &part).unwrap();
        for k2 in 0..g.len() {
            for k1 in 0..g.len() {
                let w = s.weight(k1, k2);
                prop_assert!(w >= 0.0);
                if part.classify(&[g.center(k1), g.center(k2)]) == Region::Inner {
                    prop_assert_eq!(w, 0.0);
                }
            }
        }
    }

    #[test]
    fn corrected_diffusion_dominates(p in preset(), half in 2usize..7) {
        let m = p.model();
        let (g, part) = build_zgrid(&m, 2 * half).unwrap();
        let s = build_scheme(&m, &g, &part).unwrap();
        let base = m.sigma_sq();
        let d = [
            [s.sigma_w_sq[0][0] - base[0][0], s.sigma_w_sq[0][1] - base[0][1]],
            [s.sigma_w_sq[1][0] - base[1][0], s.sigma_w_sq[1][1] - base[1][1]],
        ];
        let scale = d[0][0].abs().max(d[1][1].abs());
        prop_assert!(d[0][0] >= 0.0 && d[1][1] >= 0.0);
        prop_assert!(d[0][0] * d[1][1] - d[0][1] * d[1][0] >= -1e-12 * scale * scale);
    }

    #[test]
    fn stencils_exact_on_quadratics((n, x_max, f) in grid_params(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let g = build_spatial_grid(n, x_max, 250.0_f64.min(0.8 * x_max), f).unwrap();
        let fd = build_fd_coeffs(&g).unwrap();
        let q = |x: f64| a * x * x + b * x + 1.0;
        for m in 1..n {
            let vals = [q(g.nodes[m - 1]), q(g.nodes[m]), q(g.nodes[m + 1])];
            let d1: f64 = fd.alpha[m].iter().zip(&vals).map(|(c, v)| c * v).sum();
            let d2: f64 = fd.beta[m].iter().zip(&vals).map(|(c, v)| c * v).sum();
            let x = g.nodes[m];
            let scale = 1.0 + (a * x).abs() + b.abs();
            prop_assert!((d1 - (2.0 * a * x + b)).abs() < 1e-8 * scale);
            // cancellation in the second difference scales like max|q| / h^2
            let h = g.widths()[m].min(g.widths()[m + 1]);
            let q_max = vals.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            prop_assert!((d2 - 2.0 * a).abs() < 1e-13 * q_max / (h * h) + 1e-12);
        }
    }

    #[test]
    fn interpolation_partition_of_unity_and_cubics(
        (n, x_max, f) in grid_params(),
        t in 0.0f64..1.0,
        c in prop::array::uniform4(-2.0f64..2.0),
    ) {
        let g = build_spatial_grid(n, x_max, 250.0_f64.min(0.8 * x_max), f).unwrap();
        let x = t * x_max;
        let w = lagrange_weights(&g.nodes, x, BoundaryPolicy::Zero);
        let total: f64 = w.iter().map(|(_, v)| v).sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
        let cubic = |y: f64| {
            let s = y / x_max;
            c[0] + c[1] * s + c[2] * s * s + c[3] * s * s * s
        };
        let approx: f64 = w.iter().map(|&(j, v)| v * cubic(g.nodes[j])).sum();
        prop_assert!((approx - cubic(x)).abs() < 1e-9);
    }

    #[test]
    fn tensor_interpolation_reproduces_bicubics(
        (n, x_max, f) in grid_params(),
        pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..6),
    ) {
        let g = build_spatial_grid(n, x_max, 250.0_f64.min(0.8 * x_max), f).unwrap();
        let t1: Vec<f64> = pts.iter().map(|p| p.0 * x_max).collect();
        let t2: Vec<f64> = pts.iter().map(|p| p.1 * x_max).collect();
        let op = TensorInterp::new([&g.nodes, &g.nodes], [&t1, &t2], BoundaryPolicy::Clamp).unwrap();
        let f = |a: f64, b: f64| {
            let (a, b) = (a / x_max, b / x_max);
            1.0 + a * a * a - 2.0 * a * b * b + b * b * b * a
        };
        let k = g.len();
        let v: Vec<f64> = (0..k * k).map(|i| f(g.nodes[i % k], g.nodes[i / k])).collect();
        let out = op.apply(&v);
        for (j2, &b) in t2.iter().enumerate() {
            for (j1, &a) in t1.iter().enumerate() {
                prop_assert!((out[j2 * t1.len() + j1] - f(a, b)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bicgstab_residual_recomputed(n in 5usize..60, seed in any::<u64>()) {
        let mut state = seed | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut t = Vec::new();
        for i in 0..n {
            let mut off = 0.0;
            for j in [i.wrapping_sub(1), i + 1, (i + 7) % n] {
                if j < n && j != i {
                    let v = next();
                    off += v.abs();
                    t.push((i, j, v));
                }
            }
            t.push((i, i, off + 0.5 + next().abs()));
        }
        let a = Csr::from_triplets(n, n, t).unwrap();
        let b: Vec<f64> = (0..n).map(|_| next()).collect();
        let out = bicgstab(&a, &ilu0(&a).unwrap(), &b, &vec![0.0; n], 1e-14, 500).unwrap();
        let ax = a.mul_vec(&out.solution);
        let r: f64 = ax.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(r <= 1e-14 * nb * 1.0001, "residual {}", r / nb);
    }

    #[test]
    fn stopping_measure_formula(v in prop::collection::vec((-1e4f64..1e4, -1e4f64..1e4), 1..40)) {
        let new: Vec<f64> = v.iter().map(|p| p.0).collect();
        let old: Vec<f64> = v.iter().map(|p| p.1).collect();
        let expected = v.iter().map(|(a, b)| (a - b).abs() / a.abs().max(1.0)).fold(0.0, f64::max);
        prop_assert_eq!(fixed_point_update(&new, &old), expected);
    }
}
