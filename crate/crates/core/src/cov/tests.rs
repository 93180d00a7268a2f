use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::da::{ObsOperator, ObsRow};
use crate::grid::GridSpec;
use crate::rng::SeedTree;

fn rng(tag: &str, a: u64) -> ChaCha8Rng {
    SeedTree::new(2024).stream(tag, a, 0)
}

fn random_members(r: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect()).collect()
}

/// Dense sample covariance straight from its definition.
fn dense_b(members: &[Vec<f64>]) -> DMatrix<f64> {
    let n = members.len();
    let dim = members[0].len();
    let mean: Vec<f64> = (0..dim).map(|i| members.iter().map(|m| m[i]).sum::<f64>() / n as f64).collect();
    let mut b = DMatrix::zeros(dim, dim);
    for m in members {
        let d = DMatrix::from_iterator(dim, 1, m.iter().zip(&mean).map(|(x, y)| x - y));
        b += &d * d.transpose();
    }
    b / (n - 1) as f64
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

#[test]
fn ensemble_terms_match_dense_definition() {
    for trial in 0..100 {
        let mut r = rng("cov", trial);
        let dim = r.gen_range(2..=8);
        let m = r.gen_range(1..=4);
        let n = r.gen_range(2..=12);
        let members = random_members(&mut r, n, dim);
        let h = Array2::from_shape_fn((m, dim), |_| r.gen_range(-1.0..1.0));
        let op = ObsOperator::from_dense(&h);
        let terms = ensemble_cov_terms(&members, &op, None).unwrap();
        let (b, hn) = (dense_b(&members), to_na(&h));
        let bht = &b * hn.transpose();
        let hbht = &hn * &bht;
        assert!(rel_err(&to_na(&terms.bht), &bht) < 1e-12, "trial {trial}");
        assert!(rel_err(&to_na(&terms.hbht), &hbht) < 1e-12, "trial {trial}");
    }
}

#[test]
fn three_member_four_state_example() {
    let members = vec![
        vec![1.0, 2.0, 0.5, -1.0],
        vec![0.0, 1.5, 1.5, 0.0],
        vec![2.0, -0.5, 1.0, 1.0],
    ];
    let h = ndarray::arr2(&[[1.0, 0.0, 0.0, 0.0], [0.0, 0.5, 0.5, 0.0]]);
    let terms = ensemble_cov_terms(&members, &ObsOperator::from_dense(&h), None).unwrap();
    let b = dense_b(&members);
    let expect = &b * to_na(&h).transpose();
    assert!(rel_err(&to_na(&terms.bht), &expect) < 1e-12);
    // Var of the first component is 1.
    assert!((terms.hbht[[0, 0]] - 1.0).abs() < 1e-12);
}

#[test]
fn identical_members_and_too_few_members() {
    let members = vec![vec![0.3; 6]; 4];
    let op = ObsOperator::from_dense(&Array2::eye(6));
    let terms = ensemble_cov_terms(&members, &op, None).unwrap();
    assert!(terms.bht.iter().chain(terms.hbht.iter()).all(|v| *v == 0.0));
    assert!(ensemble_cov_terms(&members[..1], &op, None).is_err());
}

#[test]
fn duplicated_members_rescale_by_normalization() {
    let mut r = rng("dup", 0);
    let n = 5;
    let members = random_members(&mut r, n, 6);
    let doubled: Vec<Vec<f64>> = members.iter().chain(members.iter()).cloned().collect();
    let h = Array2::from_shape_fn((3, 6), |_| r.gen_range(-1.0..1.0));
    let op = ObsOperator::from_dense(&h);
    let a = ensemble_cov_terms(&members, &op, None).unwrap();
    let b = ensemble_cov_terms(&doubled, &op, None).unwrap();
    let ratio = 2.0 * (n - 1) as f64 / (2 * n - 1) as f64;
    assert!(rel_err(&to_na(&b.hbht), &(to_na(&a.hbht) * ratio)) < 1e-12);
    // Same perturbation rank (N-1 = 4) before and after duplication.
    let rank = |m: &Vec<Vec<f64>>| {
        let (_, p) = Perturbations::from_members(m).unwrap();
        to_na(p.matrix()).rank(1e-10)
    };
    assert_eq!(rank(&members), rank(&doubled));
}

fn grid16() -> GridSpec {
    GridSpec::square(16).unwrap()
}

fn random_obs(g: &GridSpec, r: &mut ChaCha8Rng, count: usize) -> ObsOperator {
    let locs: Vec<_> = (0..count)
        .map(|_| (r.gen_range(0.0..g.length()), r.gen_range(0.0..g.length())))
        .collect();
    ObsOperator::bilinear(g, &locs)
}

/// Smooth-ish random ensemble so covariances have spatial structure.
fn smooth_members(g: &GridSpec, r: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    let np = g.points();
    (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..g.state_len()).map(|_| r.gen_range(-1.0..1.0)).collect();
            (0..g.state_len())
                .map(|i| {
                    let (l, p) = (i / np, i % np);
                    let mut acc = 0.0;
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            acc += raw[l * np + g.shifted(p, dy, dx)];
                        }
                    }
                    acc + 0.5 * raw[(1 - l) * np + p]
                })
                .collect()
        })
        .collect()
}

#[test]
fn localized_terms_match_dense_schur_product() {
    let g = grid16();
    let loc = LocalizationSpec::new(1.2e5, g).unwrap();
    let np = g.points();
    for trial in 0..3 {
        let mut r = rng("schur", trial);
        let members = smooth_members(&g, &mut r, 8);
        let op = random_obs(&g, &mut r, 6);
        let terms = ensemble_cov_terms(&members, &op, Some(&loc)).unwrap();
        let b = dense_b(&members);
        let w = DMatrix::from_fn(g.state_len(), g.state_len(), |i, j| loc.weight(i % np, j % np));
        let bl = b.component_mul(&w);
        let hn = to_na(&op.to_dense());
        let bht = &bl * hn.transpose();
        assert!(rel_err(&to_na(&terms.bht), &bht) < 1e-12);
        assert!(rel_err(&to_na(&terms.hbht), &(&hn * &bht)) < 1e-12);
    }
}

#[test]
fn patch_terms_equal_localized_ensemble_terms() {
    let g = grid16();
    let loc = LocalizationSpec::new(1.5e5, g).unwrap();
    let mut r = rng("equiv", 0);
    let members = smooth_members(&g, &mut r, 10);
    let op = random_obs(&g, &mut r, 12);
    let direct = ensemble_cov_terms(&members, &op, Some(&loc)).unwrap();
    let provider = EnsemblePatches::from_members(g, 16, &members).unwrap();
    let via = patches_to_gain_terms(&provider, &op, Some(&loc)).unwrap();
    assert!(rel_err(&to_na(&via.bht), &to_na(&direct.bht)) < 1e-12);
    assert!(rel_err(&to_na(&via.hbht), &to_na(&direct.hbht)) < 1e-12);
}

struct Identity(GridSpec);

impl PatchProvider for Identity {
    fn grid(&self) -> &GridSpec {
        &self.0
    }
    fn patch_size(&self) -> usize {
        8
    }
    fn patches(&self, centers: &[usize]) -> crate::Result<Vec<CovPatch>> {
        Ok(centers
            .iter()
            .map(|&c| {
                let mut p = CovPatch::zeros(c, 8);
                p.data[[0, 4, 4]] = 1.0;
                p
            })
            .collect())
    }
}

#[test]
fn identity_patch_gives_one_hot_column() {
    let g = grid16();
    let idx = g.index(3, 9);
    let op = ObsOperator::new(g.state_len(), vec![ObsRow { stencil: vec![(idx, 1.0)] }]).unwrap();
    let t = patches_to_gain_terms(&Identity(g), &op, None).unwrap();
    assert_eq!(t.hbht, ndarray::arr2(&[[1.0]]));
    for (i, v) in t.bht.column(0).iter().enumerate() {
        assert_eq!(*v, if i == idx { 1.0 } else { 0.0 });
    }
}

#[test]
fn distant_obs_are_uncorrelated() {
    let g = GridSpec::square(32).unwrap();
    let mut r = rng("far", 0);
    let members = smooth_members(&g, &mut r, 6);
    let provider = EnsemblePatches::from_members(g, 8, &members).unwrap();
    let (a, b) = (g.index(2, 2), g.index(20, 2));
    let op = ObsOperator::new(
        g.state_len(),
        vec![ObsRow { stencil: vec![(a, 1.0)] }, ObsRow { stencil: vec![(g.points() + b, 1.0)] }],
    )
    .unwrap();
    let t = patches_to_gain_terms(&provider, &op, None).unwrap();
    assert_eq!(t.hbht[[0, 1]], 0.0);
    assert_eq!(t.hbht[[1, 0]], 0.0);
    assert!(t.hbht[[0, 0]] > 0.0);
}

#[test]
fn localized_patch_hbht_is_symmetric_and_psd() {
    let g = GridSpec::square(32).unwrap();
    let loc = LocalizationSpec::new(1e5, g).unwrap();
    for trial in 0..4 {
        let mut r = rng("psd", trial);
        let members = smooth_members(&g, &mut r, 10);
        let provider = EnsemblePatches::from_members(g, 16, &members).unwrap();
        let op = random_obs(&g, &mut r, 50);
        let t = patches_to_gain_terms(&provider, &op, Some(&loc)).unwrap();
        let m = to_na(&t.hbht);
        assert_eq!(m, m.transpose());
        let min = SymmetricEigen::new(m.clone()).eigenvalues.min();
        assert!(min >= -1e-8 * m.trace(), "trial {trial}: {min}");
    }
}

#[test]
fn patch_samples_cover_grid_with_dense_variances() {
    let g = GridSpec::square(32).unwrap();
    let mut r = rng("samples", 0);
    let members = smooth_members(&g, &mut r, 5);
    let (mean, perts) = Perturbations::from_members(&members).unwrap();
    let samples = extract_patch_samples(&mean, &perts, &g, 16, 7).unwrap();
    assert_eq!(samples.len(), 1024);
    let b = dense_b(&members);
    let np = g.points();
    for s in samples.iter().step_by(37) {
        assert_eq!(s.cycle, 7);
        assert!((s.output.center_variance(0) - b[(s.center, s.center)]).abs() < 1e-12);
        assert!((s.output.center_variance(1) - b[(np + s.center, np + s.center)]).abs() < 1e-12);
        assert_eq!(s.input[[0, 8, 8]], mean[s.center]);
        assert_eq!(s.input[[1, 8, 8]], mean[np + s.center]);
        // Cross channel at offset (+1, -2).
        let b2 = g.shifted(s.center, 1, -2);
        assert!((s.output.get(1, 1, -2).unwrap() - b[(s.center, np + b2)]).abs() < 1e-12);
    }
    assert!(extract_patch_samples(&mean, &perts, &g, 64, 0).is_err());

    let same = vec![members[0].clone(); 3];
    let (mean, perts) = Perturbations::from_members(&same).unwrap();
    let samples = extract_patch_samples(&mean, &perts, &g, 16, 0).unwrap();
    assert!(samples.iter().all(|s| s.output.data.iter().all(|v| *v == 0.0)));
}

#[test]
fn patch_extraction_is_translation_equivariant() {
    let g = grid16();
    let np = g.points();
    let mut r = rng("shift", 0);
    let members = smooth_members(&g, &mut r, 4);
    let (s1, s2) = (3isize, -5isize);
    let shift = |m: &Vec<f64>| {
        let mut out = vec![0.0; m.len()];
        for l in 0..2 {
            for p in 0..np {
                out[l * np + g.shifted(p, s1, s2)] = m[l * np + p];
            }
        }
        out
    };
    let shifted: Vec<Vec<f64>> = members.iter().map(shift).collect();
    let (ma, pa) = Perturbations::from_members(&members).unwrap();
    let (mb, pb) = Perturbations::from_members(&shifted).unwrap();
    let a = extract_patch_samples(&ma, &pa, &g, 8, 0).unwrap();
    let b = extract_patch_samples(&mb, &pb, &g, 8, 0).unwrap();
    for s in &a {
        let t = &b[g.shifted(s.center, s1, s2)];
        assert_eq!(s.input, t.input);
        assert_eq!(s.output.data, t.output.data);
    }
}

#[test]
fn climatology_of_constant_and_white_trajectories() {
    let g = grid16();
    let constant = vec![vec![1.5; g.state_len()]; 50];
    let b = climatological_b(&constant, &g, 5, 8).unwrap();
    assert!(b.template().iter().all(|v| *v == 0.0));
    assert!(climatological_b(&constant[..10], &g, 5, 8).is_err());

    let sigma = [2.0, 0.5];
    let mut r = rng("white", 0);
    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    let np = g.points();
    let traj: Vec<Vec<f64>> = (0..401)
        .map(|_| (0..g.state_len()).map(|i| sigma[i / np] * r.sample(normal)).collect())
        .collect();
    let b = climatological_b(&traj, &g, 2, 8).unwrap();
    let t = b.template();
    for (ch, var) in [(0, 2.0 * 4.0), (1, 0.0), (2, 2.0 * 0.25)] {
        let scale = if ch == 1 { 2.0 * sigma[0] * sigma[1] } else { var };
        for i in 0..8 {
            for j in 0..8 {
                let expect = if (i, j) == (4, 4) { var } else { 0.0 };
                assert!((t[[ch, i, j]] - expect).abs() < 0.05 * scale, "ch {ch} ({i},{j}): {}", t[[ch, i, j]]);
            }
        }
    }
    assert!(t[[0, 4, 4]] >= 0.0);

    // Homogeneous: every centre serves the same patch; scaling per channel.
    let scaled = b.clone().with_scale([4.0, 9.0]);
    let ps = scaled.patches(&[0, 77]).unwrap();
    assert_eq!(ps[0].data, ps[1].data);
    assert!((ps[0].data[[1, 4, 4]] - 6.0 * t[[1, 4, 4]]).abs() < 1e-12);
}
