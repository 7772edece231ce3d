//! Acceptance suite: one test per criterion, each printing a pass line
//! with its runtime. Run with `--nocapture` to see the lines:
//!
//! ```text
//! cargo test --release --test acceptance -- --nocapture
//! ```

use num_complex::Complex64;

use quasip::blocks::{build_blocks, gap_census, BlockError};
use quasip::covariance::{finite_n_covariance, sigma_matrix, sigma_scalar};
use quasip::driving::{DrivingKind, DrivingSystem};
use quasip::maps::{Branch, MapFamily, MapParameter};
use quasip::observable::{center_observable, Component, Observable, Pointwise};
use quasip::rng::CounterStream;
use quasip::simulate::{
    asip_diagnostics, birkhoff_paths, block_sums, required_checkpoints, JitterPolicy,
    SimulationParams,
};
use quasip::transfer::norms::{l1_norm_complex, mass};
use quasip::transfer::{
    density_family, fiber_density, mixing_gap, projection_defect_profile, ulam_matrix, verify_decay,
    BlockSpec, Cocycle, DensityFamily,
};
use quasip::fit::{fit_exponential_decay, RateFit};

struct Timer {
    start: std::time::Instant,
    name: &'static str,
    limit_secs: f64,
}

impl Timer {
    fn start(name: &'static str, limit_secs: f64) -> Self {
        Timer {
            start: std::time::Instant::now(),
            name,
            limit_secs,
        }
    }

    fn finish(self) {
        let secs = self.start.elapsed().as_secs_f64();
        println!("acceptance {}: PASS ({secs:.2} s, limit {} s)", self.name, self.limit_secs);
        assert!(
            secs < self.limit_secs,
            "{} exceeded its runtime budget: {secs:.2} s",
            self.name
        );
    }
}

fn constant_cocycle(p: MapParameter, k: usize) -> Cocycle {
    let fam = MapFamily::new(vec![p]).unwrap();
    let sys = DrivingSystem::new(DrivingKind::FinitePeriodic { period: 1 }, 0, 1).unwrap();
    Cocycle::new(fam, sys, k).unwrap()
}

fn three_branch() -> MapParameter {
    MapParameter::new(
        "three-branch",
        vec![
            Branch::affine(0.0, 0.5, 2.0, 0.0),
            Branch::affine(0.5, 0.75, 2.0, 0.0),
            Branch::affine(0.75, 1.0, 2.0, 0.0),
        ],
    )
    .unwrap()
}

#[test]
fn criterion_1_block_tiling() {
    let t = Timer::start("1 block-tiling", 5.0);
    for beta in [0.51, 0.55, 0.625] {
        for eps in [0.05, 0.1] {
            for n in 1..=20u32 {
                match build_blocks(n, beta, eps) {
                    Ok(d) => {
                        assert!(d.tiles_exactly(), "beta={beta} eps={eps} n={n}");
                        assert_eq!(
                            d.total_gap_len(),
                            d.gap_len_closed_form(),
                            "beta={beta} eps={eps} n={n}: gap-sum closed form"
                        );
                    }
                    Err(BlockError::NonpositiveBlockLength { .. }) => {
                        // only the tiny level 2 lacks room for its blocks
                        assert_eq!(n, 2, "beta={beta} eps={eps}: unexpected invalid level {n}");
                    }
                    Err(e) => panic!("beta={beta} eps={eps} n={n}: {e}"),
                }
            }
            for n_max in 4..=20u32 {
                let c = gap_census(n_max, beta, eps).unwrap();
                let ratio = c.count as f64 / c.envelope_bound;
                assert!(
                    ratio <= 4.0,
                    "beta={beta} eps={eps} N={n_max}: census ratio {ratio}"
                );
            }
        }
    }
    t.finish();
}

#[test]
fn criterion_2_transfer_exactness() {
    let t = Timer::start("2 transfer-exactness", 10.0);
    // doubling at k=2 is the half-half matrix
    let op2 = ulam_matrix(&MapParameter::doubling(), 2).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            assert!((op2.entry(i, j) - 0.5).abs() < 1e-15, "entry ({i},{j})");
        }
    }
    // mass conservation and positivity across 10^3 random densities
    let k = 4096;
    let op = ulam_matrix(&MapParameter::doubling(), k).unwrap();
    let stream = CounterStream::new(2024, 0xacc2);
    for trial in 0..1000u64 {
        let v: Vec<f64> = (0..k as u64)
            .map(|c| stream.unit_f64(trial * k as u64 + c))
            .collect();
        let u = op.apply(&v);
        assert!(
            (mass(&u) - mass(&v)).abs() < 1e-12,
            "trial {trial}: mass drift"
        );
        assert!(u.iter().all(|&x| x >= 0.0), "trial {trial}: negativity");
    }
    t.finish();
}

#[test]
fn criterion_3_equivariant_density() {
    let t = Timer::start("3 equivariant-density", 30.0);
    // three-branch invariant density is (4/3, 2/3) on halves
    for k in [2usize, 1024] {
        let coc = constant_cocycle(three_branch(), k);
        let d = fiber_density(&coc, 0, 1e-12, 200).unwrap();
        for (i, v) in d.values.iter().enumerate() {
            let expect = if i < k / 2 { 4.0 / 3.0 } else { 2.0 / 3.0 };
            assert!((v - expect).abs() < 1e-8, "k={k} cell {i}: {v}");
        }
    }
    // equivariance along 100 fibers of iid {2x, 3x} driving, every
    // density pulled back independently
    let fam = MapFamily::new(vec![
        MapParameter::linear_mod_one(2),
        MapParameter::linear_mod_one(3),
    ])
    .unwrap();
    let sys = DrivingSystem::new(DrivingKind::IidBernoulli, 42, 2).unwrap();
    let coc = Cocycle::new(fam, sys, 1024).unwrap();
    let mut prev = fiber_density(&coc, 0, 1e-12, 200).unwrap();
    for fiber in 0..100i64 {
        let next = fiber_density(&coc, fiber + 1, 1e-12, 200).unwrap();
        let pushed = coc.op_at(fiber).apply(&prev.values);
        let diff: Vec<f64> = pushed
            .iter()
            .zip(&next.values)
            .map(|(a, b)| a - b)
            .collect();
        let gap = quasip::transfer::norms::l1_norm(&diff);
        assert!(gap < 1e-8, "fiber {fiber}: equivariance gap {gap}");
        prev = next;
    }
    t.finish();
}

fn doubling_with_densities(k: usize, fibers: usize) -> (Cocycle, DensityFamily) {
    let coc = constant_cocycle(MapParameter::doubling(), k);
    let dens = density_family(&coc, 0, fibers, 1e-10, 200).unwrap();
    (coc, dens)
}

#[test]
fn criterion_4_decay_and_projection() {
    let t = Timer::start("4 decay-projection", 60.0);
    let k = 1024;
    let (coc, dens) = doubling_with_densities(k, 32);
    let profile = projection_defect_profile(
        &coc,
        &dens,
        0,
        20,
        quasip::transfer::SampleBudget::default(),
        7,
    )
    .unwrap();
    let points: Vec<(f64, f64)> = (1..=20).map(|n| (n as f64, profile[n])).collect();
    let lambda = match fit_exponential_decay(&points, 1e-13) {
        RateFit::Fit { rate, .. } => rate,
        RateFit::Superexponential { .. } => f64::INFINITY,
    };
    assert!(lambda >= 0.6, "projection defect rate {lambda}");

    // twisted chains never expand L¹ (B3 = 1)
    let g = Observable::cos();
    let grids = g.fiber_grid(coc.family(), coc.driving(), 0, k);
    let op = ulam_matrix(&MapParameter::doubling(), k).unwrap();
    let stream = CounterStream::new(4, 0xb3);
    for &tval in &[0.1, 0.5, 1.0] {
        let tw =
            quasip::transfer::twisted_ulam(&MapParameter::doubling(), &grids, &[Complex64::new(0.0, tval)], k)
                .unwrap();
        let mut v: Vec<Complex64> = (0..k as u64)
            .map(|c| Complex64::new(stream.symmetric_f64(c), stream.symmetric_f64(c + 1)))
            .collect();
        let mut prev = l1_norm_complex(&v);
        for n in 1..=20 {
            v = tw.apply(&v);
            let cur = l1_norm_complex(&v);
            assert!(
                cur <= prev * (1.0 + 1e-12),
                "t={tval} n={n}: L1 grew {prev} -> {cur}"
            );
            prev = cur;
        }
    }
    let _ = op;
    t.finish();
}

#[test]
fn criterion_5_green_kubo_oracle() {
    let t = Timer::start("5 green-kubo", 120.0);
    let k = 4096;
    let (coc, dens) = doubling_with_densities(k, 140);
    let decay = verify_decay(&coc, 0, 16, 32, 5).unwrap();

    // analytic oracle: Σ²(doubling, cos 2πx) = ∫cos² = 1/2
    let g = center_observable(&Observable::cos(), coc.family(), coc.driving(), &dens);
    let r = sigma_scalar(&coc, &dens, &g, &[1.0], 0, 64, 64, Some(&decay)).unwrap();
    assert!((r.sigma2 - 0.5).abs() < 0.02, "sigma2 = {}", r.sigma2);

    // coboundary forces a vanishing variance
    let cob = center_observable(
        &Observable::scalar(Component::Coboundary { q: Pointwise::Cos }),
        coc.family(),
        coc.driving(),
        &dens,
    );
    let rc = sigma_scalar(&coc, &dens, &cob, &[1.0], 0, 64, 64, Some(&decay)).unwrap();
    assert!(rc.sigma2.abs() <= 1e-6, "coboundary sigma2 = {}", rc.sigma2);

    // polarization consistency at d = 2 over 20 random unit directions
    let g2 = center_observable(
        &Observable::new(vec![
            Component::Fixed(Pointwise::Cos),
            Component::Fixed(Pointwise::Sin),
        ]),
        coc.family(),
        coc.driving(),
        &dens,
    );
    let rep = sigma_matrix(&coc, &dens, &g2, 0, 64, 64, Some(&decay)).unwrap();
    let stream = CounterStream::new(20, 0xd18);
    for trial in 0..20u64 {
        let raw = [
            stream.symmetric_f64(2 * trial),
            stream.symmetric_f64(2 * trial + 1),
        ];
        let norm = (raw[0] * raw[0] + raw[1] * raw[1]).sqrt();
        if norm < 1e-3 {
            continue;
        }
        let v = [raw[0] / norm, raw[1] / norm];
        let direct = sigma_scalar(&coc, &dens, &g2, &v, 0, 64, 64, Some(&decay)).unwrap();
        let assembled = rep.quadratic_form(&v);
        let slack = direct.tail_bound + 2.0 * rep.tail_bound + 1e-9;
        assert!(
            (direct.sigma2 - assembled).abs() <= slack,
            "direction {trial}: {} vs {assembled} (slack {slack})",
            direct.sigma2
        );
    }
    t.finish();
}

#[test]
fn criterion_6_covariance_growth() {
    let t = Timer::start("6 covariance-growth", 120.0);
    let k = 1024;
    let (coc, dens) = doubling_with_densities(k, 1025);
    let g = center_observable(&Observable::cos(), coc.family(), coc.driving(), &dens);
    let n_list: Vec<usize> = (0..=10).map(|e| 1usize << e).collect();
    let rep = finite_n_covariance(&coc, &dens, &g, 0, &n_list, None).unwrap();
    for (n, m) in &rep.per_n {
        let ratio = m[0][0] / *n as f64;
        assert!(
            (ratio - 0.5).abs() < 1e-6,
            "n={n}: Cov(S_n)/n = {ratio}"
        );
    }
    assert!(rep.c1_estimate >= 0.45, "c1 = {}", rep.c1_estimate);
    t.finish();
}

#[test]
fn criterion_7_mixing_condition() {
    let t = Timer::start("7 mixing-gap", 120.0);
    let k = 1024;
    let (coc, dens) = doubling_with_densities(k, 64);
    let g = Observable::cos();
    let left = [BlockSpec::new(0, 1, vec![0.3])];
    let right = [BlockSpec::new(0, 1, vec![0.3])];

    // defect profile once, reused for the envelope at every gap
    let profile = projection_defect_profile(
        &coc,
        &dens,
        1,
        13,
        quasip::transfer::SampleBudget::default(),
        3,
    )
    .unwrap();

    let mut points = Vec::new();
    for gap in 2..=12usize {
        let rep = mixing_gap(&coc, &dens, &g, 0, &left, &right, gap).unwrap();
        let envelope = profile[gap] * (rep.entry_bv_real + rep.entry_bv_imag);
        assert!(
            rep.value <= envelope + 1e-12,
            "gap {gap}: value {} above envelope {envelope}",
            rep.value
        );
        points.push((gap as f64, rep.value));
    }
    let rate = match fit_exponential_decay(&points, 1e-13) {
        RateFit::Fit { rate, .. } => rate,
        RateFit::Superexponential { .. } => f64::INFINITY,
    };
    assert!(rate >= 0.5, "mixing rate {rate}");
    t.finish();
}

#[test]
fn criterion_8_statistical_asip() {
    let t = Timer::start("8 statistical-asip", 300.0);
    let k = 1024;
    let fam = MapFamily::new(vec![MapParameter::doubling()]).unwrap();
    let sys = DrivingSystem::new(DrivingKind::FinitePeriodic { period: 1 }, 0, 1).unwrap();
    let coc = Cocycle::new(fam.clone(), sys.clone(), k).unwrap();
    let dens = density_family(&coc, 0, 140, 1e-10, 200).unwrap();
    let decay = verify_decay(&coc, 0, 16, 32, 5).unwrap();

    let g = center_observable(
        &Observable::new(vec![
            Component::Fixed(Pointwise::Cos),
            Component::Fixed(Pointwise::Sin),
        ]),
        &fam,
        &sys,
        &dens,
    );
    let sigma = sigma_matrix(&coc, &dens, &g, 0, 48, 64, Some(&decay)).unwrap();
    assert!(!sigma.is_degenerate());

    // block parameters in the working range for coupling exponents near p = 5
    let decomps: Vec<_> = (3..=11u32)
        .filter_map(|n| build_blocks(n, 0.55, 0.05).ok())
        .collect();
    let mut checkpoints = required_checkpoints(&decomps);
    let mut m = 1u64;
    while m <= 4096 {
        checkpoints.push(m);
        m *= 2;
    }
    checkpoints.sort_unstable();
    checkpoints.dedup();

    // centering along the full orbit, streamed
    let g_paths = quasip::observable::center_observable_over(
        &Observable::new(vec![
            Component::Fixed(Pointwise::Cos),
            Component::Fixed(Pointwise::Sin),
        ]),
        &coc,
        0,
        4097,
        1e-10,
        200,
    )
    .unwrap();
    let params = SimulationParams {
        n_steps: 4096,
        n_paths: 2000,
        checkpoints: checkpoints.clone(),
        seed: 42,
        jitter: JitterPolicy::Auto,
    };
    let ensemble = birkhoff_paths(&fam, &sys, &g_paths, dens.at(0).unwrap(), &params).unwrap();
    let sums = block_sums(&ensemble, &decomps).unwrap();
    let diag = asip_diagnostics(&ensemble, Some(&sums), &sigma, None, 5.0, &[0.01, 0.05]).unwrap();

    for dd in &diag.directions {
        assert!(
            dd.ks_p_value > 0.01,
            "direction {:?}: KS p = {}",
            dd.direction,
            dd.ks_p_value
        );
        assert!(
            (dd.slope_ratio - 1.0).abs() < 0.05,
            "direction {:?}: slope ratio {}",
            dd.direction,
            dd.slope_ratio
        );
    }
    // a_p at p = 5 is exactly 5/16
    assert!((diag.rate_table[0].a_p - 0.3125).abs() < 1e-15);
    // block sums across gaps show no correlation beyond sampling noise
    assert!(
        diag.gap_corr_consistent,
        "gap correlations inconsistent with mixing: rate {:?}, floor {}",
        diag.gap_corr_rate, diag.gap_corr_noise_floor
    );

    let sigma_min = sigma.min_eigenvalue;
    for lv in diag
        .block_covariance
        .iter()
        .filter(|lv| (8..=11).contains(&lv.level))
    {
        assert!(
            lv.per_two_n >= 0.2 * sigma_min,
            "level {}: min-eig/2^n = {} below 0.2·{sigma_min}",
            lv.level,
            lv.per_two_n
        );
    }

    // degenerate mode: the coboundary's variance stays bounded; the
    // degeneracy detection needs the fine grid, where the discretization
    // bias sits under the threshold
    let cob = Observable::scalar(Component::Coboundary { q: Pointwise::Cos });
    let coc_fine = Cocycle::new(fam.clone(), sys.clone(), 4096).unwrap();
    let dens_fine = density_family(&coc_fine, 0, 140, 1e-10, 200).unwrap();
    let cob_centered = center_observable(&cob, &fam, &sys, &dens_fine);
    let sigma_cob =
        sigma_matrix(&coc_fine, &dens_fine, &cob_centered, 0, 48, 64, Some(&decay)).unwrap();
    assert!(sigma_cob.is_degenerate(), "coboundary must be degenerate");
    let cob_paths =
        quasip::observable::center_observable_over(&cob, &coc_fine, 0, 4097, 1e-10, 200).unwrap();
    let ensemble_cob =
        birkhoff_paths(&fam, &sys, &cob_paths, dens_fine.at(0).unwrap(), &params).unwrap();
    let diag_cob = asip_diagnostics(&ensemble_cob, None, &sigma_cob, None, 5.0, &[0.05]).unwrap();
    let deg = diag_cob.degenerate.as_ref().expect("degenerate diagnostics");
    let var64 = deg
        .variance_by_checkpoint
        .iter()
        .find(|(c, _)| *c == 64)
        .map(|(_, v)| *v)
        .expect("checkpoint 64 recorded");
    let var_last = deg.variance_by_checkpoint.last().unwrap().1;
    assert!(deg.bounded, "degenerate variance flagged unbounded");
    assert!(
        var_last <= 2.0 * var64,
        "variance grew: {var64} at 64 vs {var_last} at the end"
    );
    t.finish();
}
