//! Command-line pipeline: `generate`, `corrupt`, `denoise`, `extract`,
//! `reduce`, `evaluate` and `pipeline`.
//!
//! Stages talk to each other only through files in the output directory:
//!
//! | file | written by |
//! |------|------------|
//! | `clean.fld`, `truth.csv` | generate |
//! | `observed.fld` | corrupt |
//! | `denoised.fld`, `sparse.fld`, `denoise_report.csv` | denoise |
//! | `modes.csv`, `modes_phi.fld` | extract |
//! | `reduced.csv`, `reconstruction.fld`, `reduced_sparse.fld`, `reduce_report.csv` | reduce |
//! | `metrics.csv` | evaluate |
//!
//! `modes_phi.fld` stores the complex modes as a field with `2r` frames,
//! real and imaginary parts of mode `i` in frames `2i` and `2i + 1`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::datalab::{corrupt, generate_synthetic, radius_eps, radius_eta_missing, radius_eta_saltpepper, NoiseKind};
use crate::denoise::{solve_preprocessing, DenoiseConfig};
use crate::dimred::{solve_dimred, DimredConfig};
use crate::dmdcore::{extract_modes, fit_amplitudes_ls, rank_for_energy, Amplitudes, DmdModes};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::metrics::{eig_mse, eig_std, match_eigenvalues, mpsnr, mssim, SSIM_WINDOW};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

pub const USAGE: &str = "usage: crdmd <generate|corrupt|denoise|extract|reduce|evaluate|pipeline> \
[--config=FILE] [--strict] [--key=value ...]

Keys (file lines `key = value`, or `--key=value`):
  out input seed trials synthetic.n1 synthetic.n2 synthetic.m synthetic.pairs
  synthetic.min synthetic.max noise.sigma noise.ps noise.kind alpha reduce.alpha
  w rank energy mu tol max_iter strict
Environment: CRDMD_THREADS caps worker threads for trial loops (0 = auto).";

const MODES_HEADER: &str = "index,re_lambda,im_lambda,re_xi,im_xi,importance,weight,pair_index";

/// Mode table row, as stored in `modes.csv`, `reduced.csv` and `truth.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeRow {
    pub lambda: Complex64,
    pub xi: Complex64,
    pub importance: f64,
    pub weight: f64,
    pub partner: Option<usize>,
    pub active: Option<bool>,
}

pub fn write_modes_csv(path: &Path, rows: &[ModeRow]) -> Result<()> {
    let with_active = rows.iter().any(|r| r.active.is_some());
    let mut out = String::from(MODES_HEADER);
    if with_active {
        out.push_str(",active");
    }
    out.push('\n');
    for (i, r) in rows.iter().enumerate() {
        let pair = r.partner.map(|p| p as i64).unwrap_or(-1);
        write!(out, "{i},{},{},{},{},{},{},{pair}", r.lambda.re, r.lambda.im, r.xi.re, r.xi.im, r.importance, r.weight)
            .unwrap();
        if let Some(a) = r.active {
            write!(out, ",{}", a as u8).unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_modes_csv(path: &Path) -> Result<Vec<ModeRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))?;
    let with_active = match header {
        MODES_HEADER => false,
        h if h == format!("{MODES_HEADER},active") => true,
        _ => return Err(Error::Format(format!("{}: unexpected header `{header}`", path.display()))),
    };
    let bad = |n: usize| Error::Format(format!("{}: malformed row {n}", path.display()));
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 + with_active as usize || f[0].parse::<usize>().ok() != Some(n) {
            return Err(bad(n));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad(n));
        let pair: i64 = f[7].parse().map_err(|_| bad(n))?;
        rows.push(ModeRow {
            lambda: Complex64::new(num(1)?, num(2)?),
            xi: Complex64::new(num(3)?, num(4)?),
            importance: num(5)?,
            weight: num(6)?,
            partner: if pair < 0 { None } else { Some(pair as usize) },
            active: if with_active { Some(f[8] == "1") } else { None },
        });
    }
    Ok(rows)
}

fn mode_rows(modes: &DmdModes, amps: &Amplitudes) -> Vec<ModeRow> {
    (0..modes.rank())
        .map(|i| ModeRow {
            lambda: modes.lambda[i],
            xi: amps.xi[i],
            importance: amps.importance[i],
            weight: amps.weights[i],
            partner: modes.partner(i),
            active: None,
        })
        .collect()
}

pub fn write_phi(path: &Path, modes: &DmdModes) -> Result<()> {
    let (n1, n2) = modes.frame;
    let mut values = Vec::with_capacity(2 * modes.phi.len());
    for col in modes.phi.column_iter() {
        values.extend(col.iter().map(|c| c.re));
        values.extend(col.iter().map(|c| c.im));
    }
    Field::new(n1, n2, 2 * modes.rank(), values)?.save(path)
}

/// Modes from `modes_phi.fld` and the eigenvalues of a mode table.
pub fn read_modes(phi_path: &Path, rows: &[ModeRow]) -> Result<DmdModes> {
    let f = Field::load(phi_path)?;
    if f.m() != 2 * rows.len() {
        return Err(Error::Format(format!("{} holds {} frames for {} modes", phi_path.display(), f.m(), rows.len())));
    }
    let n = f.frame_len();
    let phi = DMatrix::from_fn(n, rows.len(), |k, i| Complex64::new(f.frame(2 * i)[k], f.frame(2 * i + 1)[k]));
    DmdModes::from_parts(phi, rows.iter().map(|r| r.lambda).collect(), (f.n1(), f.n2()))
}

fn write_report(path: &Path, entries: &[(&str, String)]) -> Result<()> {
    let mut out = String::from("key,value\n");
    for (k, v) in entries {
        writeln!(out, "{k},{v}").unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

/// Non-fatal findings; `--strict` turns them into exit code 1.
type Warnings = Vec<String>;

fn input_or(cfg: &PipelineConfig, dir: &Path, default: &str) -> PathBuf {
    cfg.input.clone().unwrap_or_else(|| dir.join(default))
}

pub fn stage_generate(cfg: &PipelineConfig, dir: &Path) -> Result<Warnings> {
    let (field, truth) = generate_synthetic(&cfg.synthetic_spec()?)?;
    field.save(dir.join("clean.fld"))?;
    let modes = DmdModes::from_parts(truth.modes.clone(), truth.lambdas.clone(), (cfg.n1, cfg.n2))?;
    let amps = Amplitudes::new(&modes, truth.amplitudes.clone(), cfg.m)?;
    write_modes_csv(&dir.join("truth.csv"), &mode_rows(&modes, &amps))?;
    Ok(Vec::new())
}

pub fn stage_corrupt(cfg: &PipelineConfig, dir: &Path, trial: usize) -> Result<Warnings> {
    let clean = Field::load(input_or(cfg, dir, "clean.fld"))?;
    corrupt(&clean, &cfg.noise_spec(trial))?.save(dir.join("observed.fld"))?;
    Ok(Vec::new())
}

fn radii(cfg: &PipelineConfig, observed: &Field, alpha: f64) -> Result<(f64, f64)> {
    let nm = observed.values().len();
    let eps = radius_eps(cfg.sigma, cfg.ps, nm, alpha);
    let eta = match cfg.kind {
        NoiseKind::SaltPepper => radius_eta_saltpepper(cfg.ps, nm, alpha),
        NoiseKind::Missing => radius_eta_missing(observed, cfg.ps, alpha)?,
    };
    Ok((eps, eta))
}

pub fn stage_denoise(cfg: &PipelineConfig, dir: &Path) -> Result<Warnings> {
    let observed = Field::load(input_or(cfg, dir, "observed.fld"))?;
    let (eps, eta) = radii(cfg, &observed, cfg.alpha)?;
    let mut dc = DenoiseConfig::new(eps, eta, cfg.w);
    dc.tol = cfg.tol;
    dc.max_iter = cfg.max_iter;
    let res = solve_preprocessing(&observed, &dc)?;
    res.x.save(dir.join("denoised.fld"))?;
    res.s.save(dir.join("sparse.fld"))?;
    write_report(
        &dir.join("denoise_report.csv"),
        &[
            ("eps", eps.to_string()),
            ("eta", eta.to_string()),
            ("iterations", res.report.iterations.to_string()),
            ("converged", res.report.converged.to_string()),
        ],
    )?;
    let mut warnings = Vec::new();
    if !res.report.converged {
        warnings.push(format!("denoise: not converged after {} iterations", res.report.iterations));
    }
    Ok(warnings)
}

fn choose_rank(cfg: &PipelineConfig, data: &Field) -> Result<usize> {
    if cfg.rank > 0 {
        Ok(cfg.rank)
    } else {
        rank_for_energy(data, cfg.energy)
    }
}

pub fn stage_extract(cfg: &PipelineConfig, dir: &Path) -> Result<Warnings> {
    let data = Field::load(input_or(cfg, dir, "denoised.fld"))?;
    let modes = extract_modes(&data, choose_rank(cfg, &data)?)?;
    let fit = fit_amplitudes_ls(&modes, &data)?;
    let amps = Amplitudes::new(&modes, fit.xi, data.m())?;
    write_modes_csv(&dir.join("modes.csv"), &mode_rows(&modes, &amps))?;
    write_phi(&dir.join("modes_phi.fld"), &modes)?;
    let mut warnings = Vec::new();
    if modes.rank_reduced {
        warnings.push(format!("extract: rank reduced to the numerical rank {}", modes.rank()));
    }
    if fit.singular {
        warnings.push("extract: amplitude normal equations are singular".into());
    }
    Ok(warnings)
}

pub fn stage_reduce(cfg: &PipelineConfig, dir: &Path) -> Result<Warnings> {
    let observed = Field::load(dir.join("observed.fld"))?;
    let rows = read_modes_csv(&dir.join("modes.csv"))?;
    let modes = read_modes(&dir.join("modes_phi.fld"), &rows)?;
    let nu: Vec<f64> = rows.iter().map(|r| r.weight).collect();
    let xi0: Vec<Complex64> = rows.iter().map(|r| r.xi).collect();
    let (eps, eta) = radii(cfg, &observed, cfg.reduce_alpha)?;
    let mut rc = DimredConfig::new(eps, eta, cfg.w);
    rc.mu = cfg.mu;
    rc.tol = cfg.tol;
    rc.max_iter = cfg.max_iter;
    let res = solve_dimred(&observed, &modes, &nu, &xi0, &rc)?;

    let amps = Amplitudes::new(&modes, res.xi.clone(), observed.m())?;
    let mut out_rows = mode_rows(&modes, &amps);
    for (i, r) in out_rows.iter_mut().enumerate() {
        r.weight = nu[i];
        r.active = Some(res.active_groups.contains(&i));
    }
    write_modes_csv(&dir.join("reduced.csv"), &out_rows)?;
    res.reconstruction.save(dir.join("reconstruction.fld"))?;
    res.s.save(dir.join("reduced_sparse.fld"))?;
    write_report(
        &dir.join("reduce_report.csv"),
        &[
            ("eps", eps.to_string()),
            ("eta", eta.to_string()),
            ("iterations", res.report.iterations.to_string()),
            ("converged", res.report.converged.to_string()),
            ("residual", res.residual.to_string()),
            ("feasible", res.feasible.to_string()),
            ("active", res.active_groups.len().to_string()),
        ],
    )?;
    let mut warnings = Vec::new();
    if !res.report.converged {
        warnings.push(format!("reduce: not converged after {} iterations", res.report.iterations));
    }
    if !res.feasible {
        warnings.push(format!("reduce: data-fidelity constraint not met (residual {} > eps {eps})", res.residual));
    }
    Ok(warnings)
}

/// Ground-truth targets (pair leaders and real modes) by descending importance.
fn targets(truth: &[ModeRow]) -> Vec<(usize, Complex64)> {
    let mut t: Vec<(usize, &ModeRow)> = truth.iter().enumerate().filter(|(_, r)| r.lambda.im >= 0.0).collect();
    t.sort_by(|a, b| b.1.importance.total_cmp(&a.1.importance).then(a.0.cmp(&b.0)));
    t.into_iter().map(|(i, r)| (i, r.lambda)).collect()
}

pub fn stage_evaluate(cfg: &PipelineConfig, dir: &Path) -> Result<Warnings> {
    let clean = Field::load(dir.join("clean.fld"))?;
    let truth = read_modes_csv(&dir.join("truth.csv"))?;
    let observed = Field::load(dir.join("observed.fld"))?;
    let mut out = String::from("metric,target,value\n");
    let big_enough = clean.n1() >= SSIM_WINDOW && clean.n2() >= SSIM_WINDOW;
    for name in ["observed", "denoised", "reconstruction"] {
        let path = dir.join(format!("{name}.fld"));
        if !path.exists() {
            continue;
        }
        let est = Field::load(&path)?;
        writeln!(out, "mpsnr,{name},{}", mpsnr(&clean, &est)?).unwrap();
        if big_enough {
            writeln!(out, "mssim,{name},{}", mssim(&clean, &est)?).unwrap();
        }
    }

    let targets = targets(&truth);
    let target_lambdas: Vec<Complex64> = targets.iter().map(|t| t.1).collect();
    let mut sets: Vec<(&str, Vec<Complex64>)> = Vec::new();
    let modes_path = dir.join("modes.csv");
    let rank = if modes_path.exists() {
        let rows = read_modes_csv(&modes_path)?;
        sets.push(("cr", rows.iter().map(|r| r.lambda).collect()));
        rows.len()
    } else {
        choose_rank(cfg, &observed)?
    };
    let naive = extract_modes(&observed, rank)?;
    sets.push(("naive", naive.lambda.clone()));
    let mut warnings = Vec::new();
    for (method, lambdas) in sets {
        for ((idx, gt), est) in targets.iter().zip(match_eigenvalues(&lambdas, &target_lambdas)) {
            match est {
                Some(l) => {
                    writeln!(out, "{method}_lambda_re,{idx},{}", l.re).unwrap();
                    writeln!(out, "{method}_lambda_im,{idx},{}", l.im).unwrap();
                    writeln!(out, "{method}_sqerr,{idx},{}", (l - gt).norm_sqr()).unwrap();
                }
                None => warnings.push(format!("evaluate: no {method} eigenvalue left to match target {idx}")),
            }
        }
    }
    fs::write(dir.join("metrics.csv"), out)?;
    Ok(warnings)
}

fn run_trial(cfg: &PipelineConfig, dir: &Path, trial: usize) -> Result<Warnings> {
    fs::create_dir_all(dir)?;
    let mut w = stage_generate(cfg, dir)?;
    w.extend(stage_corrupt(cfg, dir, trial)?);
    w.extend(stage_denoise(cfg, dir)?);
    w.extend(stage_extract(cfg, dir)?);
    w.extend(stage_reduce(cfg, dir)?);
    w.extend(stage_evaluate(cfg, dir)?);
    Ok(w)
}

fn read_metrics(path: &Path) -> Result<Vec<(String, String, f64)>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let v = f.get(2).and_then(|v| v.parse().ok());
            match (f.len(), v) {
                (3, Some(v)) => Ok((f[0].to_string(), f[1].to_string(), v)),
                _ => Err(Error::Format(format!("{}: malformed row `{line}`", path.display()))),
            }
        })
        .collect()
}

/// Eigenvalue scatter (`eigs.csv`) and MSE/STD summary (`summary.csv`) over
/// trial directories.
fn summarize(cfg: &PipelineConfig, trial_dirs: &[PathBuf]) -> Result<()> {
    let truth = read_modes_csv(&trial_dirs[0].join("truth.csv"))?;
    let mut eigs = String::from("trial,target,method,re,im\n");
    let mut summary = String::from("metric,target,value\n");
    let all: Vec<Vec<(String, String, f64)>> =
        trial_dirs.iter().map(|d| read_metrics(&d.join("metrics.csv"))).collect::<Result<_>>()?;
    let lookup = |rows: &[(String, String, f64)], metric: &str, target: &str| {
        rows.iter().find(|r| r.0 == metric && r.1 == target).map(|r| r.2)
    };
    for (idx, gt) in targets(&truth) {
        let t = idx.to_string();
        for method in ["cr", "naive"] {
            let mut found = Vec::new();
            for (k, rows) in all.iter().enumerate() {
                let re = lookup(rows, &format!("{method}_lambda_re"), &t);
                let im = lookup(rows, &format!("{method}_lambda_im"), &t);
                if let (Some(re), Some(im)) = (re, im) {
                    writeln!(eigs, "{k},{idx},{method},{re},{im}").unwrap();
                    found.push(Complex64::new(re, im));
                }
            }
            if !found.is_empty() {
                writeln!(summary, "{method}_eig_mse,{idx},{}", eig_mse(&found, gt)?).unwrap();
                writeln!(summary, "{method}_eig_std,{idx},{}", eig_std(&found)?).unwrap();
            }
        }
    }
    for metric in ["mpsnr", "mssim"] {
        for name in ["observed", "denoised", "reconstruction"] {
            let vals: Vec<f64> = all.iter().filter_map(|rows| lookup(rows, metric, name)).collect();
            if !vals.is_empty() {
                writeln!(summary, "mean_{metric},{name},{}", vals.iter().sum::<f64>() / vals.len() as f64).unwrap();
            }
        }
    }
    fs::write(cfg.out.join("eigs.csv"), eigs)?;
    fs::write(cfg.out.join("summary.csv"), summary)?;
    Ok(())
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var("CRDMD_THREADS") {
        Ok(v) => {
            v.trim().parse::<usize>().map_err(|_| Error::Config(format!("CRDMD_THREADS must be a count, got `{v}`")))?
        }
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

pub fn stage_pipeline(cfg: &PipelineConfig) -> Result<Warnings> {
    fs::create_dir_all(&cfg.out)?;
    if cfg.trials == 1 {
        return run_trial(cfg, &cfg.out, 0);
    }
    let dirs: Vec<PathBuf> = (0..cfg.trials).map(|k| cfg.out.join(format!("trial_{k:03}"))).collect();
    let results: Vec<Result<Warnings>> =
        thread_pool()?.install(|| dirs.par_iter().enumerate().map(|(k, d)| run_trial(cfg, d, k)).collect());
    let mut warnings = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        warnings.extend(r?.into_iter().map(|w| format!("trial {k}: {w}")));
    }
    summarize(cfg, &dirs)?;
    Ok(warnings)
}

/// Builds the configuration from `--config=FILE` and overrides, in order.
pub fn parse_args(args: &[String]) -> Result<(String, PipelineConfig)> {
    let mut it = args.iter();
    let command = it.next().ok_or_else(|| Error::Config("missing subcommand".into()))?.clone();
    let mut cfg = PipelineConfig::default();
    let mut overrides = Vec::new();
    for arg in it {
        let body = arg.strip_prefix("--").ok_or_else(|| Error::Config(format!("unexpected argument `{arg}`")))?;
        match body.split_once('=') {
            Some(("config", path)) => {
                let text =
                    fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {path}: {e}")))?;
                cfg.apply_text(&text)?;
            }
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None if body == "strict" => overrides.push(("strict".into(), "true".into())),
            None => return Err(Error::Config(format!("expected --key=value, got `{arg}`"))),
        }
    }
    for (k, v) in overrides {
        cfg.set(&k, &v)?;
    }
    cfg.validate()?;
    Ok((command, cfg))
}

/// Runs one subcommand; `args` excludes the program name.
pub fn run_command(args: &[String]) -> i32 {
    if args.is_empty() || matches!(args[0].as_str(), "-h" | "--help" | "help") {
        println!("{USAGE}");
        return if args.is_empty() { EXIT_CONFIG } else { EXIT_OK };
    }
    let (command, cfg) = match parse_args(args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("crdmd: {e}");
            return EXIT_CONFIG;
        }
    };
    const COMMANDS: [&str; 7] = ["generate", "corrupt", "denoise", "extract", "reduce", "evaluate", "pipeline"];
    if !COMMANDS.contains(&command.as_str()) {
        eprintln!("crdmd: unknown subcommand `{command}`");
        return EXIT_CONFIG;
    }
    let dir = cfg.out.clone();
    let result = fs::create_dir_all(&dir).map_err(Error::from).and_then(|_| match command.as_str() {
        "generate" => stage_generate(&cfg, &dir),
        "corrupt" => stage_corrupt(&cfg, &dir, 0),
        "denoise" => stage_denoise(&cfg, &dir),
        "extract" => stage_extract(&cfg, &dir),
        "reduce" => stage_reduce(&cfg, &dir),
        "evaluate" => stage_evaluate(&cfg, &dir),
        "pipeline" => stage_pipeline(&cfg),
        other => Err(Error::Config(format!("unknown subcommand `{other}`"))),
    });
    match result {
        Ok(warnings) => {
            for w in &warnings {
                eprintln!("crdmd: warning: {w}");
            }
            if cfg.strict && !warnings.is_empty() {
                EXIT_NUMERICAL
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("crdmd: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_CONFIG
            }
        }
    }
}
