use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsc_core::dhg::{build_hyperedges, incidence_matrix, EdgeKind};
use tsc_core::matrix::Matrix;

const ZETAS: [f64; 4] = [0.0, 0.1, 0.3, 0.5];

/// Coefficients either dense uniform or sparse, so that equal tail sets (shared heads) occur often.
fn coefficients(n: usize, rng: &mut ChaCha8Rng) -> (Matrix, Matrix) {
    let sparse = rng.random_bool(0.5);
    let mut draw = |rows: usize, cols: usize| {
        let data = (0..rows * cols)
            .map(|_| {
                if sparse {
                    if rng.random_bool(0.25) {
                        0.9
                    } else {
                        0.05
                    }
                } else {
                    rng.random_range(0.0..1.0)
                }
            })
            .collect();
        Matrix::from_vec(rows, cols, data)
    };
    let spa = draw(n, n - 1);
    let tem = draw(n, n);
    (spa, tem)
}

/// Tail node sets straight from the coefficients, keyed by (kind, master).
fn oracle_tails(p_spa: &Matrix, p_tem: &Matrix, zeta: f64) -> BTreeMap<(EdgeKind, usize), BTreeMap<usize, f64>> {
    let n = p_spa.rows();
    let mut out = BTreeMap::new();
    for i in 0..n {
        let others = (0..n).filter(|&j| j != i);
        let spa = others.zip(p_spa.row(i)).filter(|(_, &p)| p > zeta).map(|(j, &p)| (j, p)).collect();
        out.insert((EdgeKind::Spatial, i), spa);
        let tem = p_tem.row(i).iter().enumerate().filter(|(_, &p)| p > zeta).map(|(j, &p)| (n + j, p)).collect();
        out.insert((EdgeKind::Temporal, i), tem);
    }
    out
}

fn check_state(p_spa: &Matrix, p_tem: &Matrix, zeta: f64) {
    let n = p_spa.rows();
    let tails = oracle_tails(p_spa, p_tem, zeta);
    let edges = build_hyperedges(p_spa, p_tem, zeta);
    assert_eq!(edges.len(), 2 * n);
    let m = incidence_matrix(&edges, 2 * n).unwrap();
    assert_eq!(m.values.shape(), (2 * n, 2 * n));

    for (c, e) in edges.iter().enumerate() {
        let tail = &tails[&(e.kind, e.master)];
        let tail_ids: BTreeSet<usize> = tail.keys().copied().collect();
        let head: BTreeSet<usize> =
            (0..n).filter(|&j| tails[&(e.kind, j)].keys().copied().collect::<BTreeSet<_>>() == tail_ids).collect();
        assert_eq!(e.head, head.iter().copied().collect::<Vec<_>>());
        assert!(head.contains(&e.master));

        for row in 0..2 * n {
            let v = m.values.get(row, c);
            let expected = if row == e.master {
                1.0
            } else if let Some(&p) = tail.get(&row) {
                assert!(v > zeta);
                p
            } else if head.contains(&row) {
                1.0 / head.len() as f64
            } else {
                0.0
            };
            assert_eq!(v, expected, "edge {c} ({:?} master {}) row {row}", e.kind, e.master);
        }
        let ones = (0..2 * n).filter(|&r| r == e.master).count();
        assert_eq!(ones, 1);
    }
}

#[test]
fn column_structure_on_1000_random_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut shared_heads = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=8);
        let (p_spa, p_tem) = coefficients(n, &mut rng);
        let zeta = ZETAS[rng.random_range(0..ZETAS.len())];
        check_state(&p_spa, &p_tem, zeta);
        shared_heads += build_hyperedges(&p_spa, &p_tem, zeta).iter().filter(|e| e.head.len() > 1).count();
    }
    assert!(shared_heads > 100, "states rarely exercise shared heads: {shared_heads}");
}

#[test]
fn tails_shrink_as_zeta_grows() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    for _ in 0..1000 {
        let n = rng.random_range(2..=8);
        let (p_spa, p_tem) = coefficients(n, &mut rng);
        let sets: Vec<Vec<BTreeSet<usize>>> = ZETAS
            .iter()
            .map(|&z| build_hyperedges(&p_spa, &p_tem, z).iter().map(|e| e.tail_ids().into_iter().collect()).collect())
            .collect();
        for w in sets.windows(2) {
            for (loose, tight) in w[0].iter().zip(&w[1]) {
                assert!(tight.is_subset(loose));
            }
        }
    }
}

proptest! {
    #[test]
    fn arbitrary_coefficients_keep_the_case_structure(
        n in 2usize..7,
        zeta in 0.0f64..0.9,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p_spa, p_tem) = coefficients(n, &mut rng);
        check_state(&p_spa, &p_tem, zeta);
    }
}
