use proptest::prelude::*;

use subelliptic::grid::{inner, integrate, lp_norm, Grid, GridFunction};
use subelliptic::group::{dilated_box_volume, dilation};
use subelliptic::variational::Energy;
use subelliptic::{monotone_pairing, GroupSpec, HorizontalCalculus, HorizontalSection, Point, ProblemSpec};

fn heisenberg_calc(res: usize) -> HorizontalCalculus {
    let grid = Grid::boxed(&[-1.0; 3], &[1.0; 3], &[res; 3]).unwrap();
    HorizontalCalculus::new(grid, GroupSpec::heisenberg(1).unwrap()).unwrap()
}

fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, len)
}

const H_RES: usize = 7;
const H_LEN: usize = (H_RES - 2) * (H_RES - 2) * (H_RES - 2);

fn gf(v: Vec<f64>) -> GridFunction {
    GridFunction::from_values(v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dilations_compose(s in 0.1..5.0f64, t in 0.1..5.0f64, x in values(5)) {
        let g = GroupSpec::heisenberg(2).unwrap();
        let pt = Point::new(&g, x).unwrap();
        let two = dilation(&g, s, &dilation(&g, t, &pt).unwrap()).unwrap();
        let one = dilation(&g, s * t, &pt).unwrap();
        for (a, b) in two.coords().iter().zip(one.coords()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn dilated_volume_scales_with_homogeneous_dimension(t in 0.1..4.0f64, n in 1usize..3) {
        let g = GroupSpec::heisenberg(n).unwrap();
        let d = g.total_dim();
        let lo = vec![-0.5; d];
        let hi = vec![1.0; d];
        let base = dilated_box_volume(&g, 1.0, &lo, &hi).unwrap();
        let scaled = dilated_box_volume(&g, t, &lo, &hi).unwrap();
        let expected = t.powi(g.hom_dim() as i32) * base;
        prop_assert!((scaled - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn grid_norm_axioms(u in values(H_LEN), v in values(H_LEN), a in -3.0..3.0f64, p in 1.0..4.0f64) {
        let calc = heisenberg_calc(H_RES);
        let grid = calc.grid();
        let (u, v) = (gf(u), gf(v));
        let lin = integrate(grid, &u.add_scaled(a, &v)) - integrate(grid, &u) - a * integrate(grid, &v);
        prop_assert!(lin.abs() <= 1e-12);
        let nu = lp_norm(grid, &u, p).unwrap();
        prop_assert!((lp_norm(grid, &u.scaled(a), p).unwrap() - a.abs() * nu).abs() <= 1e-12 * (1.0 + nu));
        let sum = lp_norm(grid, &u.add_scaled(1.0, &v), p).unwrap();
        prop_assert!(sum <= nu + lp_norm(grid, &v, p).unwrap() + 1e-12);
    }

    #[test]
    fn gradient_is_linear_and_adjoint_to_divergence(u in values(H_LEN), w in values(H_LEN), a in -2.0..2.0f64, seed in any::<u64>()) {
        let calc = heisenberg_calc(H_RES);
        let (u, w) = (gf(u), gf(w));
        let combo = calc.gradient(&u.add_scaled(a, &w));
        let (gu, gw) = (calc.gradient(&u), calc.gradient(&w));
        for ((c, x), y) in combo.values().iter().zip(gu.values()).zip(gw.values()) {
            prop_assert!((c - x - a * y).abs() <= 1e-9);
        }
        let len = calc.n_samples() * calc.n_fields();
        let field: Vec<f64> = (0..len).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 / 500.0 - 1.0).collect();
        let field = HorizontalSection::from_values(calc.n_fields(), field).unwrap();
        let lhs = calc.section_inner(&gu, &field);
        let rhs = -inner(calc.grid(), &u, &calc.divergence(&field));
        let scale = (calc.section_inner(&gu, &gu) * calc.section_inner(&field, &field)).sqrt();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
    }

    #[test]
    fn pairing_is_positive(a in values(4), b in values(4), p in 1.1..5.0f64) {
        prop_assume!(a != b);
        prop_assert!(monotone_pairing(&a, &b, p) > 0.0);
        prop_assert_eq!(monotone_pairing(&a, &a, p), 0.0);
    }

    #[test]
    fn regularized_energy_is_convex_and_coercive(u in values(H_LEN), v in values(H_LEN), n in 1u64..64, p in 1.5..3.5f64) {
        let calc = heisenberg_calc(H_RES);
        let f = GridFunction::from_fn(calc.grid(), |x| 1.0 + x[0] * x[0]);
        let prob = ProblemSpec::new(calc, p, 0.5, f).unwrap();
        let jn = Energy::regularized(&prob, n);
        let (u, v) = (gf(u), gf(v));
        let mid = u.add_scaled(1.0, &v).scaled(0.5);
        let (ju, jv, jm) = (jn.value(&prob, &u), jn.value(&prob, &v), jn.value(&prob, &mid));
        prop_assert!(jm <= 0.5 * (ju + jv) + 1e-10 * (1.0 + ju.abs() + jv.abs()));
        prop_assume!(prob.norm(&u) > 1e-3);
        prop_assert!(jn.value(&prob, &u.scaled(1e3)) > ju);
    }

    #[test]
    fn line_change_matches_energy_difference(u in values(H_LEN), d in values(H_LEN), t in -0.5..0.5f64, p in 1.5..3.5f64) {
        let calc = heisenberg_calc(H_RES);
        let f = GridFunction::constant(calc.grid(), 1.0);
        let prob = ProblemSpec::new(calc, p, 0.4, f).unwrap();
        let u = gf(u).map(|x| x + 1.5);
        let d = gf(d);
        for energy in [Energy::auxiliary(prob.source().clone()), Energy::regularized(&prob, 7), Energy::Singular] {
            let direct = energy.value(&prob, &u.add_scaled(t, &d)) - energy.value(&prob, &u);
            let line = energy.change_along(&prob, &u, &d)(t).unwrap();
            prop_assert!((direct - line).abs() <= 1e-10 * (1.0 + energy.value(&prob, &u).abs()));
        }
    }
}
