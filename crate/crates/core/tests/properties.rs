use std::f64::consts::PI;

use nalgebra::DMatrix;
use proptest::prelude::*;

use kpme::alphaskp::{sinc_rule, skp_from_quadrature, EwaldConfig};
use kpme::geometry::{Box3, CellGrid, ChargeVector, Normalization, PointCloud};
use kpme::kron::{kron_matvec_shuffle, KronFactor, KronOperand};
use kpme::parallel::{kpme_sequential, run_distributed, spkmv, AxisFactors, KpmeSetup, RankGrid, SelfComm, SimWorld};

fn matrix(r: usize, c: usize, seed: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |i, j| seed[(i * 7 + j * 3) % seed.len()] + 0.1 * (i as f64 - j as f64))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// On one rank the split product is the Kronecker product of `U_p V_p`.
    #[test]
    fn single_rank_spkmv_is_kron(
        n_in in prop::array::uniform3(1usize..5),
        n_out in prop::array::uniform3(1usize..5),
        rank in prop::array::uniform3(1usize..4),
        seed in prop::collection::vec(-1.0f64..1.0, 11),
    ) {
        let factors = [0, 1, 2].map(|p| {
            AxisFactors::new(matrix(n_out[p], rank[p], &seed), matrix(rank[p], n_in[p], &seed[3..])).unwrap()
        });
        let phi: Vec<f64> = (0..n_in.iter().product::<usize>()).map(|k| seed[k % 11] * (k as f64 + 1.0).sqrt()).collect();
        let split = spkmv(&SelfComm, &factors, &phi).unwrap();
        let op = KronOperand::new(
            factors.iter().map(|f| KronFactor::factored(f.u.clone(), f.v.clone()).unwrap()).collect(),
        )
        .unwrap();
        let global = kron_matvec_shuffle(&op, &phi).unwrap();
        prop_assert_eq!(split.len(), global.len());
        let scale = global.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (a, b) in split.iter().zip(&global) {
            prop_assert!((a - b).abs() <= 1e-13 * scale);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Any rank grid gives the global shuffle-product result.
    #[test]
    fn ranks_match_global_operator(
        shape in prop::array::uniform3(1usize..4),
        n in 0usize..40,
        seed in any::<u64>(),
        order in 3usize..6,
    ) {
        let m = 2;
        let cfg = EwaldConfig::new(2.0, m).unwrap();
        let dec = skp_from_quadrature(&sinc_rule(4, m).unwrap(), &cfg).unwrap();
        let bbox = Box3::new([0.1, 0.0, -0.2], 0.2 / (PI * m as f64)).unwrap();
        let cloud = PointCloud::uniform(&bbox, n, seed);
        let q = ChargeVector::uniform(n, seed);
        let setup = KpmeSetup::new(cfg, dec, order, Normalization::unit(bbox.center())).unwrap();
        let cells = CellGrid::new(bbox, shape).unwrap();
        let world = SimWorld::new(RankGrid::new(shape).unwrap());
        let dist = run_distributed(&world, &cells, &setup, &cloud, &q).unwrap();
        let seq = kpme_sequential(&cells, &setup, &cloud, &q).unwrap();
        let scale = seq.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
        for (a, b) in dist.potentials.iter().zip(&seq) {
            prop_assert!((a - b).abs() <= 1e-12 * scale);
        }
        let ranks = world.grid().size();
        prop_assert_eq!(dist.ledger.len(), ranks * (3 * setup.dec.len() + 1));
    }
}
