//! Pipeline orchestration: densities → decay → Σ² → blocks → simulation
//! → diagnostics, with per-stage report files.
//!
//! Stages run in the order of the theorem's hypotheses, and the pipeline
//! stops at the first failed hypothesis (uniform expansion, uniform
//! decay, nondegenerate covariance) so the failure report names the
//! assumption the configured system violates.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use quasip::blocks::{build_blocks, BlockDecomposition, BlockError, IntervalKind};
use quasip::covariance::{sigma_matrix, sigma_scalar, CovarianceReport};
use quasip::maps::{family_constants, FamilyConstants, MapFamily};
use quasip::observable::{center_observable, center_observable_over, CenteredObservable};
use quasip::rng::CounterStream;
use quasip::fit::{fit_exponential_decay, RateFit};
use quasip::simulate::{
    asip_diagnostics, birkhoff_paths, block_sums, required_checkpoints, DiagnosticsReport,
    MixingFit, PathEnsemble, SimulationParams,
};
use quasip::transfer::{
    density_family, mixing_gap, norms, verify_decay, BlockSpec, Cocycle, DecayEstimate,
    DensityFamily,
};
use quasip::DrivingSystem;

use crate::config::ExperimentConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug)]
pub enum RunError {
    /// A theorem hypothesis failed; carries the failure report already
    /// written to disk. Exit code 2.
    Hypothesis(String),
    /// IO or internal failure. Exit code 1.
    Runtime(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Hypothesis(m) => write!(f, "hypothesis failure: {m}"),
            RunError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for RunError {}

fn runtime(e: impl std::fmt::Display) -> RunError {
    RunError::Runtime(e.to_string())
}

#[derive(Serialize)]
struct JsonReport<'a, T: Serialize> {
    config_hash: &'a str,
    version: &'a str,
    #[serde(flatten)]
    payload: T,
}

pub struct Pipeline {
    cfg: ExperimentConfig,
    hash: String,
    fam: MapFamily,
    sys: DrivingSystem,
    out: PathBuf,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, RunError> {
        let hash = cfg.hash();
        let fam = cfg.family().map_err(runtime)?;
        let sys = cfg.driving_system().map_err(runtime)?;
        let out = PathBuf::from(&cfg.output_dir);
        std::fs::create_dir_all(&out).map_err(runtime)?;
        Ok(Pipeline {
            cfg,
            hash,
            fam,
            sys,
            out,
        })
    }

    fn cocycle(&self) -> Result<Cocycle, RunError> {
        Cocycle::new(self.fam.clone(), self.sys.clone(), self.cfg.grid_k).map_err(runtime)
    }

    fn write_json<T: Serialize>(&self, name: &str, payload: T) -> Result<(), RunError> {
        let report = JsonReport {
            config_hash: &self.hash,
            version: VERSION,
            payload,
        };
        let mut text = serde_json::to_string_pretty(&report).map_err(runtime)?;
        text.push('\n');
        std::fs::write(self.out.join(name), text).map_err(runtime)
    }

    fn write_csv(&self, name: &str, header: &str, body: String) -> Result<(), RunError> {
        let mut text = format!("# config_hash={} version={}\n{header}\n", self.hash, VERSION);
        text.push_str(&body);
        std::fs::write(self.out.join(name), text).map_err(runtime)
    }

    fn hypothesis_failure(&self, hypothesis: &str, detail: String) -> RunError {
        #[derive(Serialize)]
        struct Failure<'a> {
            failed_hypothesis: &'a str,
            detail: &'a str,
        }
        let _ = self.write_json(
            "failure.json",
            Failure {
                failed_hypothesis: hypothesis,
                detail: &detail,
            },
        );
        RunError::Hypothesis(format!("{hypothesis}: {detail}"))
    }

    /// Hypothesis 0: the family constants (uniform expansion).
    pub fn constants(&self) -> Result<FamilyConstants, RunError> {
        family_constants(&self.fam)
            .map_err(|e| self.hypothesis_failure("uniform-expansion", e.to_string()))
    }

    fn density_window_len(&self) -> usize {
        self.cfg.green_kubo.window + self.cfg.green_kubo.n_max + 1
    }

    pub fn densities(&self, coc: &Cocycle) -> Result<DensityFamily, RunError> {
        density_family(
            coc,
            0,
            self.density_window_len(),
            self.cfg.tolerances.density_tol,
            self.cfg.tolerances.density_n_max,
        )
        .map_err(|e| self.hypothesis_failure("uniform-decay", e.to_string()))
    }

    pub fn stage_density(&self) -> Result<(), RunError> {
        let coc = self.cocycle()?;
        self.constants()?;
        let dens = self.densities(&coc)?;
        self.write_density_csv(&dens)
    }

    fn write_density_csv(&self, dens: &DensityFamily) -> Result<(), RunError> {
        let d0 = dens.at(0).map_err(runtime)?;
        let mut body = String::new();
        for (cell, v) in d0.values.iter().enumerate() {
            let _ = writeln!(body, "{cell},{v}");
        }
        self.write_csv(
            "density.csv",
            &format!(
                "# k={} fiber_index={} twist=0 residual={}\ncell,value",
                d0.k, d0.fiber_index, d0.convergence_residual
            ),
            body,
        )
    }

    pub fn decay_estimate(&self, coc: &Cocycle) -> Result<DecayEstimate, RunError> {
        let est = verify_decay(
            coc,
            0,
            self.cfg.decay.n_max,
            self.cfg.decay.trials,
            self.cfg.driving.master_seed,
        )
        .map_err(|e| self.hypothesis_failure("uniform-decay", e.to_string()))?;
        Ok(est)
    }

    pub fn stage_decay(&self) -> Result<DecayEstimate, RunError> {
        let coc = self.cocycle()?;
        self.constants()?;
        let est = self.decay_estimate(&coc)?;
        self.write_decay_json(&est)?;
        Ok(est)
    }

    fn write_decay_json(&self, est: &DecayEstimate) -> Result<(), RunError> {
        #[derive(Serialize)]
        struct DecayPayload<'a> {
            superexponential: bool,
            estimate: &'a DecayEstimate,
        }
        self.write_json(
            "decay.json",
            DecayPayload {
                superexponential: est.is_superexponential(),
                estimate: est,
            },
        )
    }

    pub fn sigma_report(
        &self,
        coc: &Cocycle,
        dens: &DensityFamily,
        centered: &CenteredObservable,
        decay: &DecayEstimate,
    ) -> Result<CovarianceReport, RunError> {
        sigma_matrix(
            coc,
            dens,
            centered,
            0,
            self.cfg.green_kubo.n_max,
            self.cfg.green_kubo.window,
            Some(decay),
        )
        .map_err(runtime)
    }

    pub fn stage_sigma(&self) -> Result<CovarianceReport, RunError> {
        let coc = self.cocycle()?;
        self.constants()?;
        let dens = self.densities(&coc)?;
        let est = self.decay_estimate(&coc)?;
        let g = self.cfg.observable_object().map_err(runtime)?;
        let centered = center_observable(&g, &self.fam, &self.sys, &dens);
        let rep = self.sigma_report(&coc, &dens, &centered, &est)?;
        self.write_json("sigma.json", &rep)?;
        if rep.is_degenerate() {
            return Err(self.hypothesis_failure(
                "covariance-nondegenerate",
                format!(
                    "min eigenvalue {} below threshold; degenerate direction {:?}",
                    rep.min_eigenvalue,
                    rep.degenerate_direction.as_ref().expect("degenerate")
                ),
            ));
        }
        Ok(rep)
    }

    /// Envelope of the characteristic-functional mixing gaps over gap
    /// lengths `2..=12`, with a unit twisted block on each side.
    pub fn mixing_fit(
        &self,
        coc: &Cocycle,
        dens: &DensityFamily,
    ) -> Result<MixingFit, RunError> {
        let g = self.cfg.observable_object().map_err(runtime)?;
        let mut t = vec![0.0; g.dim()];
        t[0] = 0.3;
        let left = [BlockSpec::new(0, 1, t.clone())];
        let right = [BlockSpec::new(0, 1, t)];
        let mut points = Vec::new();
        for gap in 2..=12usize {
            let rep = mixing_gap(coc, dens, &g, 0, &left, &right, gap).map_err(runtime)?;
            points.push((gap as f64, rep.value));
        }
        Ok(match fit_exponential_decay(&points, 1e-13) {
            RateFit::Fit { rate, log_c, .. } => MixingFit {
                c_const: log_c.exp(),
                rate,
                superexponential: false,
            },
            RateFit::Superexponential { .. } => MixingFit {
                c_const: 0.0,
                rate: f64::INFINITY,
                superexponential: true,
            },
        })
    }

    /// Valid block decompositions for levels `1..=n_levels`.
    pub fn decompositions(&self) -> Result<(Vec<BlockDecomposition>, Vec<u32>), RunError> {
        let mut decomps = Vec::new();
        let mut skipped = Vec::new();
        for n in 1..=self.cfg.blocks.n_levels {
            match build_blocks(n, self.cfg.blocks.beta, self.cfg.blocks.eps) {
                Ok(d) => decomps.push(d),
                Err(BlockError::NonpositiveBlockLength { .. }) => skipped.push(n),
                Err(e) => return Err(runtime(e)),
            }
        }
        Ok((decomps, skipped))
    }

    pub fn stage_blocks(&self) -> Result<Vec<BlockDecomposition>, RunError> {
        let (decomps, _) = self.decompositions()?;
        let mut body = String::new();
        for d in &decomps {
            for iv in &d.intervals {
                let kind = match iv.kind {
                    IntervalKind::Block => "I",
                    IntervalKind::Gap => "J",
                };
                let _ = writeln!(body, "{},{},{},{},{}", d.n, kind, iv.j, iv.start, iv.len);
            }
        }
        self.write_csv("blocks.csv", "level,kind,j,start,length", body)?;
        Ok(decomps)
    }

    fn checkpoints(&self, decomps: &[BlockDecomposition]) -> Vec<u64> {
        let mut cks = required_checkpoints(decomps);
        let mut m = 1u64;
        while m <= self.cfg.simulation.n_steps {
            cks.push(m);
            m *= 2;
        }
        cks.push(self.cfg.simulation.n_steps);
        cks.extend(
            self.cfg
                .simulation
                .extra_checkpoints
                .iter()
                .copied()
                .filter(|&c| c <= self.cfg.simulation.n_steps),
        );
        cks.sort_unstable();
        cks.dedup();
        cks
    }

    fn dyadic_checkpoints(&self) -> Vec<u64> {
        let mut out = Vec::new();
        let mut m = 1u64;
        while m <= self.cfg.simulation.n_steps {
            out.push(m);
            m *= 2;
        }
        out
    }

    pub fn simulate_paths(
        &self,
        coc: &Cocycle,
        dens: &DensityFamily,
        decomps: &[BlockDecomposition],
    ) -> Result<(PathEnsemble, CenteredObservable), RunError> {
        let g = self.cfg.observable_object().map_err(runtime)?;
        let centered = center_observable_over(
            &g,
            coc,
            0,
            self.cfg.simulation.n_steps as usize + 1,
            self.cfg.tolerances.density_tol,
            self.cfg.tolerances.density_n_max,
        )
        .map_err(runtime)?;
        let params = SimulationParams {
            n_steps: self.cfg.simulation.n_steps,
            n_paths: self.cfg.simulation.n_paths,
            checkpoints: self.checkpoints(decomps),
            seed: self.cfg.simulation.seed,
            jitter: self.cfg.simulation.jitter,
        };
        let ensemble = birkhoff_paths(
            &self.fam,
            &self.sys,
            &centered,
            dens.at(0).map_err(runtime)?,
            &params,
        )
        .map_err(runtime)?;
        Ok((ensemble, centered))
    }

    pub fn stage_simulate(&self) -> Result<(), RunError> {
        let coc = self.cocycle()?;
        self.constants()?;
        let dens = self.densities(&coc)?;
        let (decomps, _) = self.decompositions()?;
        let (ensemble, _) = self.simulate_paths(&coc, &dens, &decomps)?;
        self.write_paths_csv(&ensemble)
    }

    fn write_paths_csv(&self, ensemble: &PathEnsemble) -> Result<(), RunError> {
        let dyadic = self.dyadic_checkpoints();
        let mut header = String::from("path,checkpoint");
        for c in 0..ensemble.d {
            let _ = write!(header, ",s{c}");
        }
        let mut body = String::new();
        for (p, path) in ensemble.sums.iter().enumerate() {
            for (ci, &ck) in ensemble.checkpoints.iter().enumerate() {
                if dyadic.binary_search(&ck).is_ok() {
                    let _ = write!(body, "{p},{ck}");
                    for v in &path[ci] {
                        let _ = write!(body, ",{v}");
                    }
                    body.push('\n');
                }
            }
        }
        self.write_csv(
            "paths.csv",
            &format!(
                "# n_steps={} n_paths={} seed={} jitter={}\n{header}",
                ensemble.n_steps, ensemble.n_paths, ensemble.seed, ensemble.jitter_amplitude
            ),
            body,
        )
    }

    /// The full pipeline in hypothesis order.
    pub fn run(&self) -> Result<DiagnosticsReport, RunError> {
        let started = Instant::now();
        let coc = self.cocycle()?;
        self.constants()?;

        let t = Instant::now();
        let dens = self.densities(&coc)?;
        self.write_density_csv(&dens)?;
        let density_secs = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let decay = self.decay_estimate(&coc)?;
        self.write_decay_json(&decay)?;
        let decay_secs = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let g = self.cfg.observable_object().map_err(runtime)?;
        let centered_ops = center_observable(&g, &self.fam, &self.sys, &dens);
        let sigma = self.sigma_report(&coc, &dens, &centered_ops, &decay)?;
        self.write_json("sigma.json", &sigma)?;
        let sigma_secs = t.elapsed().as_secs_f64();
        if sigma.is_degenerate() {
            return Err(self.hypothesis_failure(
                "covariance-nondegenerate",
                format!(
                    "min eigenvalue {} below threshold; degenerate direction {:?}",
                    sigma.min_eigenvalue,
                    sigma.degenerate_direction.as_ref().expect("degenerate")
                ),
            ));
        }

        let t = Instant::now();
        let decomps = self.stage_blocks()?;
        let blocks_secs = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let (ensemble, _) = self.simulate_paths(&coc, &dens, &decomps)?;
        self.write_paths_csv(&ensemble)?;
        let simulate_secs = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let sums = block_sums(&ensemble, &decomps).map_err(runtime)?;
        let mixing = self.mixing_fit(&coc, &dens)?;
        let diagnostics = asip_diagnostics(
            &ensemble,
            Some(&sums),
            &sigma,
            Some(mixing),
            self.cfg.rates.p,
            &self.cfg.rates.delta_grid,
        )
        .map_err(runtime)?;
        self.write_json("diagnostics.json", &diagnostics)?;
        let diagnostics_secs = t.elapsed().as_secs_f64();

        #[derive(Serialize)]
        struct Meta<'a> {
            config_hash: &'a str,
            version: &'a str,
            timestamp_unix: u64,
            total_secs: f64,
            density_secs: f64,
            decay_secs: f64,
            sigma_secs: f64,
            blocks_secs: f64,
            simulate_secs: f64,
            diagnostics_secs: f64,
        }
        let meta = Meta {
            config_hash: &self.hash,
            version: VERSION,
            timestamp_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            total_secs: started.elapsed().as_secs_f64(),
            density_secs,
            decay_secs,
            sigma_secs,
            blocks_secs,
            simulate_secs,
            diagnostics_secs,
        };
        let text = serde_json::to_string_pretty(&meta).map_err(runtime)?;
        std::fs::write(self.out.join("run_meta.json"), text + "\n").map_err(runtime)?;

        Ok(diagnostics)
    }

    /// The invariant suite behind the `verify` subcommand: one pass/fail
    /// line per property, true iff everything passed.
    pub fn verify(&self) -> Result<bool, RunError> {
        let mut all_pass = true;
        let mut report = |name: &str, outcome: Result<(), String>| match outcome {
            Ok(()) => println!("PASS {name}"),
            Err(detail) => {
                all_pass = false;
                println!("FAIL {name}: {detail}");
            }
        };

        let coc = self.cocycle()?;
        let k = self.cfg.grid_k;

        // mass conservation and positivity on random densities
        {
            let stream = CounterStream::new(self.cfg.driving.master_seed, 0xca11);
            let mut outcome = Ok(());
            'outer: for trial in 0..100u64 {
                let v: Vec<f64> = (0..k as u64)
                    .map(|c| stream.unit_f64(trial * k as u64 + c) + 1e-3)
                    .collect();
                for id in 0..self.fam.len() {
                    let op = quasip::transfer::ulam_matrix(
                        self.fam.parameter(id).map_err(runtime)?,
                        k,
                    )
                    .map_err(runtime)?;
                    let u = op.apply(&v);
                    let drift = (norms::mass(&u) - norms::mass(&v)).abs();
                    if drift > 1e-12 {
                        outcome = Err(format!("mass drift {drift} on map {id}"));
                        break 'outer;
                    }
                    if u.iter().any(|&x| x < 0.0) {
                        outcome = Err(format!("negative density under map {id}"));
                        break 'outer;
                    }
                }
            }
            report("mass-conservation", outcome);
        }

        // equivariance along 100 fibers, each density pulled back
        // independently
        {
            let mut outcome = Ok(());
            for fiber in 0..100i64 {
                let a = quasip::transfer::fiber_density(
                    &coc,
                    fiber,
                    self.cfg.tolerances.density_tol,
                    self.cfg.tolerances.density_n_max,
                );
                let b = quasip::transfer::fiber_density(
                    &coc,
                    fiber + 1,
                    self.cfg.tolerances.density_tol,
                    self.cfg.tolerances.density_n_max,
                );
                match (a, b) {
                    (Ok(a), Ok(b)) => {
                        let pushed = coc.op_at(fiber).apply(&a.values);
                        let diff: Vec<f64> =
                            pushed.iter().zip(&b.values).map(|(x, y)| x - y).collect();
                        let err = norms::l1_norm(&diff);
                        if err > 1e-8 {
                            outcome = Err(format!("fiber {fiber}: L1 gap {err}"));
                            break;
                        }
                    }
                    (Err(e), _) | (_, Err(e)) => {
                        outcome = Err(format!("fiber {fiber}: {e}"));
                        break;
                    }
                }
            }
            report("equivariance", outcome);
        }

        // exact tiling of every valid configured level
        {
            let (decomps, _) = self.decompositions()?;
            let mut outcome = Ok(());
            for d in &decomps {
                if !d.tiles_exactly() {
                    outcome = Err(format!("level {} does not tile", d.n));
                    break;
                }
                if d.total_gap_len() != d.gap_len_closed_form() {
                    outcome = Err(format!("level {}: gap-sum closed form off", d.n));
                    break;
                }
            }
            report("block-tiling", outcome);
        }

        // polarization consistency of the covariance assembly
        {
            let dens = self.densities(&coc)?;
            let est = self.decay_estimate(&coc)?;
            let g = self.cfg.observable_object().map_err(runtime)?;
            let centered = center_observable(&g, &self.fam, &self.sys, &dens);
            let rep = self.sigma_report(&coc, &dens, &centered, &est)?;
            let d = rep.d;
            let stream = CounterStream::new(self.cfg.driving.master_seed, 0x9017);
            let mut outcome = Ok(());
            for trial in 0..8u64 {
                let mut v: Vec<f64> = (0..d as u64)
                    .map(|c| stream.symmetric_f64(trial * d as u64 + c))
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm < 1e-6 {
                    continue;
                }
                for x in &mut v {
                    *x /= norm;
                }
                let direct = sigma_scalar(
                    &coc,
                    &dens,
                    &centered,
                    &v,
                    0,
                    self.cfg.green_kubo.n_max,
                    self.cfg.green_kubo.window,
                    Some(&est),
                )
                .map_err(runtime)?;
                let assembled = rep.quadratic_form(&v);
                let slack = direct.tail_bound.max(rep.tail_bound) * 2.0 + 1e-9;
                if (direct.sigma2 - assembled).abs() > slack {
                    outcome = Err(format!(
                        "direction {trial}: direct {} vs assembled {assembled}",
                        direct.sigma2
                    ));
                    break;
                }
            }
            report("polarization", outcome);
        }

        // decay envelope actually decays (or is superexponential)
        {
            let est = self.decay_estimate(&coc)?;
            let outcome = if est.lambda > 0.0 {
                Ok(())
            } else {
                Err(format!("lambda = {}", est.lambda))
            };
            report("uniform-decay", outcome);
        }

        Ok(all_pass)
    }
}
