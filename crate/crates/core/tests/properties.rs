use mace_core::consensus::{mann_step, StackedState};
use mace_core::geometry::partition_views;
use proptest::prelude::*;

fn stack() -> impl Strategy<Value = StackedState> {
    (1usize..6, 1usize..20).prop_flat_map(|(agents, n)| {
        prop::collection::vec(prop::collection::vec(-1e3f64..1e3, n), agents)
            .prop_map(|c| StackedState::new(c).unwrap())
    })
}

proptest! {
    #[test]
    fn reflection_is_an_involution(s in stack()) {
        let back = s.reflect_g().reflect_g();
        for (a, b) in back.components.iter().flatten().zip(s.components.iter().flatten()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn consensus_is_idempotent(s in stack()) {
        let g = s.consensus_g();
        prop_assert_eq!(g.consensus_g(), g);
    }

    #[test]
    fn mann_step_fixes_fixed_points(s in stack(), rho in 0.01f64..0.99) {
        prop_assert_eq!(mann_step(&s, &s, rho).unwrap(), s);
    }

    #[test]
    fn partition_is_interleaved(n_views in 1usize..500, frac in 0.0f64..1.0) {
        let n = 1 + ((n_views - 1) as f64 * frac) as usize;
        let parts = partition_views(n_views, n).unwrap();
        let total: usize = parts.iter().map(|p| p.view_indices.len()).sum();
        prop_assert_eq!(total, n_views);
        for p in &parts {
            prop_assert!(p.view_indices.iter().all(|m| m % n == p.subset_index));
        }
    }
}
