mod common;

use common::*;
use proptest::prelude::*;
use quadgrad::*;

proptest! {
    #[test]
    fn six_component_patterns_match_bipartition_oracle(bits in 0u64..(1 << 36)) {
        let pattern = pattern_from_bits(6, bits);
        let form = block_form_of_pattern(&pattern);
        prop_assert!(block_form_agrees(&pattern, &form));
        prop_assert_eq!(form.block_count() == 1, irreducible_by_bipartition(&pattern, &[0, 1, 2, 3, 4, 5]));
    }

    #[test]
    fn field_coupling_uses_the_support_pattern(entries in proptest::collection::vec(0u8..3, 9)) {
        // entry value 2 is nonzero only on half the domain, which still counts
        let g = unit_grid(9);
        let field = |v: u8| match v {
            0 => ScalarField::zeros(g.clone()),
            1 => ScalarField::constant(g.clone(), 1.0),
            _ => ScalarField::from_fn(g.clone(), |x, _| (x - 0.5).max(0.0)),
        };
        let rows = (0..3).map(|i| (0..3).map(|j| field(entries[3 * i + j])).collect()).collect();
        let c = CouplingMatrix::new(rows, 1e-12).unwrap();
        let pattern: Vec<Vec<bool>> = (0..3).map(|i| (0..3).map(|j| entries[3 * i + j] != 0).collect()).collect();
        prop_assert_eq!(block_triangular_form(&c), block_form_of_pattern(&pattern));
        prop_assert_eq!(is_fully_coupled(&c), irreducible_by_bipartition(&pattern, &[0, 1, 2]));
    }
}
