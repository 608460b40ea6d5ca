//! The four experiment drivers behind the subcommands.
//!
//! Every run is fully determined by the configuration file and the seed:
//! trajectory `i` of ensemble `e` always draws from RNG stream
//! `(e << 32) + i` of the master seed, so results do not depend on worker
//! count or scheduling, and separate ensembles never share streams.

use std::fs;
use std::path::{Path, PathBuf};

use chitrace_core::linalg::max_abs_diff;
use chitrace_core::mastereq::{aapc_characterize_density, oracle_opts, sqpc_characterize};
use chitrace_core::mcwf::EnsembleOpts;
use chitrace_core::ode::IntegratorOpts;
use chitrace_core::tomography::{
    fidelity, ideal_chi, nojump_upper_bound, trace_distance, AawfOutcome, ChiMatrix,
};
use chitrace_core::C64;

use crate::artifact::{fmt_f64, ArtifactMeta, ChiArtifact, Metrics, SampleCount};
use crate::config::{build_model, BuiltModel, ModelConfig, RunConfig};
use crate::Failure;

/// Command-line overrides applied on top of the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

struct Resolved {
    cfg: RunConfig,
    seed: u64,
    workers: usize,
    out_dir: PathBuf,
    integrator: IntegratorOpts,
}

fn resolve(config_path: &Path, ov: &Overrides) -> Result<Resolved, Failure> {
    let cfg = RunConfig::load(config_path)?;
    let seed = ov.seed.unwrap_or(cfg.master_seed);
    let workers = ov.workers.unwrap_or(cfg.workers);
    let out_dir = ov
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir)
        .map_err(|e| Failure::Config(format!("creating {}: {e}", out_dir.display())))?;
    let integrator = IntegratorOpts::with_tols(cfg.rel_tol, cfg.abs_tol);
    Ok(Resolved {
        cfg,
        seed,
        workers,
        out_dir,
        integrator,
    })
}

fn ensemble_opts(r: &Resolved, n: usize, ensemble_index: u64) -> EnsembleOpts {
    EnsembleOpts {
        n,
        master_seed: r.seed,
        stream_base: ensemble_index << 32,
        workers: r.workers,
        integrator: r.integrator,
    }
}

struct Scored {
    out: AawfOutcome,
    ideal: ChiMatrix,
    td: f64,
    fid: f64,
    bound: Option<f64>,
}

/// Run one stochastic ensemble and score it against the model's ideal
/// unitary. The upper bound uses the jump-free count; when nothing
/// survived jump-free there is no bound.
fn run_scored(built: &BuiltModel, eopts: &EnsembleOpts) -> Result<Scored, Failure> {
    let out = chitrace_core::tomography::characterize_aawf(&built.model, &built.basis, eopts)?;
    let ideal = ideal_chi(&built.basis, &built.ideal)?;
    let td = trace_distance(&out.chi, &ideal)?;
    let fid = fidelity(&out.chi, &ideal)?;
    let meta = out.chi.meta().expect("ensemble chi carries meta");
    let bound = match &out.chi_nojump {
        Some(cnj) => Some(nojump_upper_bound(&ideal, cnj, meta.zero_jump, meta.n)?),
        None => None,
    };
    Ok(Scored {
        out,
        ideal,
        td,
        fid,
        bound,
    })
}

fn stochastic_artifact(
    scored: &Scored,
    built: &BuiltModel,
    model_cfg: &ModelConfig,
    seed: u64,
) -> ChiArtifact {
    let meta = scored.out.chi.meta().expect("ensemble chi carries meta");
    ChiArtifact::from_chi(
        &scored.out.chi,
        built.basis.dim(),
        ArtifactMeta {
            n: SampleCount::Trajectories(meta.n as u64),
            zero_jump: Some(meta.zero_jump as u64),
            jumped: Some(meta.jumped as u64),
            disposed: Some(meta.disposed as u64),
            master_seed: seed,
            model: model_cfg.clone(),
            metrics: Metrics {
                trace_distance_to_ideal: scored.td,
                fidelity_to_ideal: scored.fid,
                nojump_upper_bound: scored.bound,
            },
        },
    )
}

pub fn cmd_characterize(config_path: &Path, ov: &Overrides) -> Result<PathBuf, Failure> {
    let r = resolve(config_path, ov)?;
    let built = build_model(&r.cfg.model)?;
    let scored = run_scored(&built, &ensemble_opts(&r, r.cfg.n_trajectories, 0))?;
    let meta = scored.out.chi.meta().expect("ensemble chi carries meta");
    if meta.zero_jump == 0 {
        log::warn!("no jump-free trajectory in the ensemble; upper bound omitted");
    }
    let artifact = stochastic_artifact(&scored, &built, &r.cfg.model, r.seed);
    let path = r.out_dir.join("chi.json");
    artifact.write(&path)?;
    println!(
        "characterize {}: n={} zero_jump={} jumped={} disposed={}",
        built.name, meta.n, meta.zero_jump, meta.jumped, meta.disposed
    );
    match scored.bound {
        Some(b) => println!(
            "  T = {:.6}  F = {:.6}  upper bound = {b:.6}",
            scored.td, scored.fid
        ),
        None => println!(
            "  T = {:.6}  F = {:.6}  upper bound unavailable",
            scored.td, scored.fid
        ),
    }
    println!("  wrote {}", path.display());
    Ok(path)
}

pub fn cmd_oracle(config_path: &Path, ov: &Overrides) -> Result<PathBuf, Failure> {
    let r = resolve(config_path, ov)?;
    let built = build_model(&r.cfg.model)?;
    let dq = built.basis.dim();
    if dq > 4 {
        return Err(Failure::Config(format!(
            "oracle supports qubit dimension up to 4, this model has {dq}"
        )));
    }
    let chi = sqpc_characterize(&built.model, &built.basis, &oracle_opts())?;
    if r.cfg.oracle_cross_check {
        let other = aapc_characterize_density(&built.model, &built.basis, &oracle_opts())?;
        let gap = max_abs_diff(chi.data(), other.data());
        println!("  entangled-input cross-check differs by {gap:.3e}");
    }
    let ideal = ideal_chi(&built.basis, &built.ideal)?;
    let td = trace_distance(&chi, &ideal)?;
    let fid = fidelity(&chi, &ideal)?;
    let artifact = ChiArtifact::from_chi(
        &chi,
        dq,
        ArtifactMeta {
            n: SampleCount::Marker("exact".into()),
            zero_jump: None,
            jumped: None,
            disposed: None,
            master_seed: r.seed,
            model: r.cfg.model.clone(),
            metrics: Metrics {
                trace_distance_to_ideal: td,
                fidelity_to_ideal: fid,
                nojump_upper_bound: None,
            },
        },
    );
    let path = r.out_dir.join("chi_oracle.json");
    artifact.write(&path)?;
    println!("oracle {}: T = {td:.6}  F = {fid:.6}", built.name);
    println!("  wrote {}", path.display());
    Ok(path)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, var.sqrt())
}

pub fn cmd_converge(config_path: &Path, ov: &Overrides) -> Result<PathBuf, Failure> {
    let r = resolve(config_path, ov)?;
    let cv = r.cfg.converge.clone().unwrap_or_default();
    let built = build_model(&r.cfg.model)?;
    let path = r.out_dir.join("convergence.csv");
    let mut wtr = csv::Writer::from_path(&path)
        .map_err(|e| Failure::Numeric(format!("writing {}: {e}", path.display())))?;
    wtr.write_record(["n", "mean_F", "std_F", "mean_T", "std_T"])
        .map_err(Failure::numeric)?;
    let mut ensemble_index = 0u64;
    for &n in &cv.n_list {
        let mut fids = Vec::with_capacity(cv.repeats);
        let mut tds = Vec::with_capacity(cv.repeats);
        for _ in 0..cv.repeats {
            let scored = run_scored(&built, &ensemble_opts(&r, n, ensemble_index))?;
            ensemble_index += 1;
            fids.push(scored.fid);
            tds.push(scored.td);
        }
        let (mf, sf) = mean_std(&fids);
        let (mt, st) = mean_std(&tds);
        wtr.write_record([
            n.to_string(),
            fmt_f64(mf),
            fmt_f64(sf),
            fmt_f64(mt),
            fmt_f64(st),
        ])
        .map_err(Failure::numeric)?;
        println!(
            "converge {} n={n}: F = {mf:.5} +- {sf:.5}, T = {mt:.5} +- {st:.5} ({} repeats)",
            built.name, cv.repeats
        );
    }
    wtr.flush().map_err(Failure::numeric)?;
    println!("  wrote {}", path.display());
    Ok(path)
}

pub fn cmd_sweep(config_path: &Path, ov: &Overrides) -> Result<PathBuf, Failure> {
    let r = resolve(config_path, ov)?;
    let ModelConfig::RydbergCphase(base) = &r.cfg.model else {
        return Err(Failure::Config(
            "sweep requires a rydberg_cphase model".into(),
        ));
    };
    let sw = r.cfg.sweep.clone().unwrap_or_default();
    let path = r.out_dir.join("sweep.csv");
    let mut wtr = csv::Writer::from_path(&path)
        .map_err(|e| Failure::Numeric(format!("writing {}: {e}", path.display())))?;
    wtr.write_record([
        "omega_b_mhz_over_2pi",
        "blockade_mhz_over_2pi",
        "trace_distance",
        "fidelity",
        "upper_bound",
        "zero_jump",
        "jumped",
        "n",
    ])
    .map_err(Failure::numeric)?;

    let total = sw.blockade_mhz_over_2pi.len() * sw.omega_b_mhz_over_2pi.len();
    let mut failed = 0usize;
    let mut point_index = 0u64;
    for &blockade in &sw.blockade_mhz_over_2pi {
        for &omega_b in &sw.omega_b_mhz_over_2pi {
            let index = point_index;
            point_index += 1;
            let mut point = base.clone();
            point.omega_b_mhz_over_2pi = omega_b;
            point.blockade_mhz_over_2pi = blockade;
            let point_cfg = ModelConfig::RydbergCphase(point);
            let outcome = build_model(&point_cfg)
                .and_then(|built| run_scored(&built, &ensemble_opts(&r, r.cfg.n_trajectories, index)));
            let scored = match outcome {
                Ok(s) => s,
                Err(e) => {
                    log::error!("sweep point omega_b={omega_b} blockade={blockade} failed: {e}");
                    failed += 1;
                    continue;
                }
            };
            let meta = scored.out.chi.meta().expect("ensemble chi carries meta");
            wtr.write_record([
                fmt_f64(omega_b),
                fmt_f64(blockade),
                fmt_f64(scored.td),
                fmt_f64(scored.fid),
                fmt_f64(scored.bound.unwrap_or(f64::NAN)),
                meta.zero_jump.to_string(),
                meta.jumped.to_string(),
                meta.n.to_string(),
            ])
            .map_err(Failure::numeric)?;
            println!(
                "sweep omega_b={omega_b} MHz, blockade={blockade} MHz: T = {:.5}, bound = {:.5}",
                scored.td,
                scored.bound.unwrap_or(f64::NAN)
            );
            if omega_b == sw.flag_omega_b_mhz_over_2pi
                && blockade == sw.flag_blockade_mhz_over_2pi
            {
                let delta_path = r.out_dir.join("delta_chi.csv");
                write_delta_chi(&delta_path, &scored.out.chi, &scored.ideal)?;
                println!("  wrote {}", delta_path.display());
            }
        }
    }
    wtr.flush().map_err(Failure::numeric)?;
    println!("  wrote {}", path.display());
    if failed > 0 {
        Err(Failure::Partial { failed, total })
    } else {
        Ok(path)
    }
}

/// Entry-by-entry difference between a measured chi and the ideal one,
/// in long CSV form for plotting.
fn write_delta_chi(path: &Path, chi: &ChiMatrix, ideal: &ChiMatrix) -> Result<(), Failure> {
    let mut wtr = csv::Writer::from_path(path)
        .map_err(|e| Failure::Numeric(format!("writing {}: {e}", path.display())))?;
    wtr.write_record(["row_label", "col_label", "delta_re", "delta_im"])
        .map_err(Failure::numeric)?;
    let labels = chi.labels();
    let d2 = labels.len();
    for i in 0..d2 {
        for j in 0..d2 {
            let d: C64 = chi.data()[[i, j]] - ideal.data()[[i, j]];
            wtr.write_record([
                labels[i].clone(),
                labels[j].clone(),
                fmt_f64(d.re),
                fmt_f64(d.im),
            ])
            .map_err(Failure::numeric)?;
        }
    }
    wtr.flush().map_err(Failure::numeric)
}
