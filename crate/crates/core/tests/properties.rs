//! Property tests over randomly generated inputs.

#![allow(clippy::needless_range_loop)]

use emstress::geometry::{generate_random_tree, node_contexts, RandomTreeSpec};
use emstress::neural::init_xavier;
use emstress::physics::{diffusivity, em_driving_force, scale_problem, MaterialParams, ScalingFactors};
use emstress::training::node_features;
use emstress::trial::{erfc, gauss_legendre, initial_gradient, transform_h};
use proptest::prelude::*;

fn tree_spec() -> impl Strategy<Value = RandomTreeSpec> {
    (1usize..12, any::<u64>(), any::<bool>(), prop::bool::ANY).prop_map(|(n, seed, branching, mixed)| RandomTreeSpec {
        n_segments: n,
        length_range_m: (5e-6, 60e-6),
        current_range: (-2e10, 2e10),
        widths_m: if mixed { vec![1e-7, 2e-7, 3.5e-7] } else { vec![1e-7] },
        seed,
        branching,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn driving_force_is_linear(j in -1e11f64..1e11, a in -10.0f64..10.0) {
        let m = MaterialParams::default();
        let lhs = em_driving_force(a * j, &m);
        let rhs = a * em_driving_force(j, &m);
        prop_assert!((lhs - rhs).abs() <= 1e-14 * rhs.abs().max(1e-300));
    }

    #[test]
    fn diffusivity_is_positive(t in 1.0f64..2000.0) {
        prop_assert!(diffusivity(t, &MaterialParams::default()).unwrap() > 0.0);
    }

    #[test]
    fn erfc_reflection_and_range(x in -8.0f64..8.0) {
        let v = erfc(x);
        prop_assert!((0.0..=2.0).contains(&v));
        prop_assert!((v + erfc(-x) - 2.0).abs() <= 1e-15);
    }

    #[test]
    fn erfc_is_decreasing(x in -6.0f64..6.0, dx in 1e-3f64..1.0) {
        prop_assert!(erfc(x + dx) <= erfc(x));
    }

    #[test]
    fn gauss_legendre_exact_on_random_polynomials(n in 1usize..=32, coefs in prop::collection::vec(-1.0f64..1.0, 64)) {
        let rule = gauss_legendre(n).unwrap();
        let deg = 2 * n - 1;
        let p = |x: f64| coefs[..=deg].iter().rev().fold(0.0, |acc, c| acc * x + c);
        let exact: f64 = (0..=deg).step_by(2).map(|k| 2.0 * coefs[k] / (k + 1) as f64).sum();
        let scale: f64 = (0..=deg).map(|k| 2.0 * coefs[k].abs() / (k + 1) as f64).sum();
        let got = rule.integrate(-1.0, 1.0, p);
        prop_assert!((got - exact).abs() <= 1e-12 * scale, "n={} got {} want {}", n, got, exact);
    }

    #[test]
    fn terminals_carry_minus_g_and_junctions_conserve_flux(spec in tree_spec()) {
        let tree = generate_random_tree(&spec).unwrap();
        let ctx = node_contexts(&tree, &MaterialParams::default(), 350.0).unwrap();
        for node in &ctx.nodes {
            let k0 = initial_gradient(node).unwrap();
            if node.is_terminal() {
                prop_assert_eq!(k0[0], -node.adj_g[0]);
                prop_assert_eq!(transform_h(node, &[]).unwrap()[0], 0.0);
                continue;
            }
            let (mut sum, mut scale) = (0.0, 0.0);
            for m in 0..node.degree {
                let term = node.signs[m] * node.adj_w[m] * (k0[m] + node.adj_g[m]);
                sum += term;
                scale += (node.adj_w[m] * node.adj_g[m]).abs();
            }
            prop_assert!(sum.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE));
        }
    }

    #[test]
    fn network_driven_derivatives_conserve_flux(spec in tree_spec(), seed in any::<u64>(), t in 0.0f64..10.0) {
        let tree = generate_random_tree(&spec).unwrap();
        let p = scale_problem(&tree, &MaterialParams::default(), &ScalingFactors::default(), 350.0).unwrap();
        let model = init_xavier(&[7, 16, 16, 3], seed).unwrap();
        for node in p.contexts.nodes.iter().filter(|n| !n.is_terminal()) {
            let out = model.forward(&node_features(node, t, false)).unwrap();
            let d = transform_h(node, &out[..node.degree - 1]).unwrap();
            let mut sum = 0.0;
            let mut scale = 0.0;
            for m in 0..node.degree {
                sum += node.signs[m] * node.adj_w[m] * d[m];
                scale += (node.adj_w[m] * d[m]).abs();
            }
            prop_assert!(sum.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE));
        }
    }
}

/// erfc against values computed to 40 digits with an arbitrary-precision library.
#[test]
fn erfc_matches_high_precision_reference() {
    const REFERENCE: [(f64, f64); 25] = [
        (-6.0, 2.0),
        (-5.5, 1.9999999999999927),
        (-4.25, 1.9999999981494259),
        (-3.0, 1.9999779095030015),
        (-2.5, 1.999593047982555),
        (-1.75, 1.9866716712191825),
        (-1.0, 1.8427007929497148),
        (-0.5, 1.5204998778130465),
        (-0.125, 1.1403162048013338),
        (0.0, 1.0),
        (0.001, 0.9988716212090307),
        (0.1, 0.887537083981715),
        (0.3, 0.6713732405408726),
        (0.7, 0.32219880616258156),
        (1.0, 0.15729920705028513),
        (1.5, 0.033894853524689274),
        (2.0, 0.004677734981047266),
        (2.4999, 0.0004071699003334514),
        (2.5, 0.0004069520174449589),
        (2.75, 0.00010062192211963683),
        (3.3, 3.0577097964381654e-06),
        (4.0, 1.541725790028002e-08),
        (4.8, 1.135214358492198e-11),
        (5.5, 7.357847917974398e-15),
        (6.0, 2.1519736712498913e-17),
    ];
    for (x, want) in REFERENCE {
        assert!((erfc(x) - want).abs() <= 1e-12, "erfc({x}) = {} want {want}", erfc(x));
    }
}
