use std::fs;
use std::path::{Path, PathBuf};

use clsid_core::csvio::{Metadata, Table};
use clsid_core::lti::{grid_omega, LoopTransfer};
use clsid_core::mc::{
    compare_profiles, derive_seed, run_mc, EstimatorKind, McResult, Pairing, COMPARISON_HEADER,
};
use clsid_core::signals::{dft, Spectrum};
use clsid_core::sim::{run_experiment, ExperimentRecord, NoiseConfig};
use clsid_core::variance::{
    asymptotic_variance, loop_sign_change, no_leakage_variance, noise_covariances,
    ordering_predicate, AsymptoticKind, NoLeakageKind, NoiseCovariances, VarianceProfile,
    DEFAULT_TAIL_TOL,
};
use clsid_core::Complex64;

use crate::config::{ChannelCfg, ConfigError, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Core(#[from] clsid_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Input(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

const GEO_DIR: EstimatorKind = EstimatorKind::GeoAvgDirect;
const GEO_IO2: EstimatorKind = EstimatorKind::GeoAvgJointIoTwoExp;

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write(dir: &Path, name: &str, table: &Table) -> Result<PathBuf> {
    let path = dir.join(name);
    table.write(&path).map_err(|e| match e {
        clsid_core::Error::Io(source) => CliError::Io {
            path: path.clone(),
            source,
        },
        other => other.into(),
    })?;
    Ok(path)
}

fn with_config(cfg: &RunConfig, extra: Metadata) -> Metadata {
    let mut md = cfg.metadata();
    md.extend(&extra);
    md
}

/// Reference spectrum seen by the loop: `R2`, or `C R1` when exciting
/// through `r1`.
pub fn reference_spectrum(cfg: &RunConfig) -> Result<Spectrum> {
    let r = dft(cfg.excitation.signal.samples())?;
    match cfg.excitation.channel {
        ChannelCfg::R2 => Ok(r),
        ChannelCfg::R1 => {
            let c = cfg.system.controller();
            let values = (0..r.n())
                .map(|l| Ok(c.evaluate(r.omega(l))? * r[l]))
                .collect::<clsid_core::Result<Vec<Complex64>>>()?;
            Ok(Spectrum::new(values)?)
        }
    }
}

pub fn simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let dir = &cfg.output_dir;
    prepare_dir(dir)?;
    let excitation = cfg.excitation.routed();
    let mut written = Vec::new();

    let mut ex_table = cfg.excitation.signal.to_table();
    ex_table.metadata = with_config(cfg, ex_table.metadata.clone());
    written.push(write(dir, "excitation.csv", &ex_table)?);

    for e in 0..cfg.pairing.experiments() {
        let noise = NoiseConfig {
            sigma: cfg.sigma,
            distribution: cfg.distribution,
            seed: derive_seed(cfg.base_seed, 0, e as u64),
        };
        let mut rec = run_experiment(&cfg.system, &excitation, &noise, cfg.settle_periods)?;
        rec.experiment_id = e as u64;
        let mut table = rec.to_table();
        let mut md = table.metadata.clone();
        md.extend(&cfg.metadata());
        table.metadata = md;
        written.push(write(dir, &format!("experiment_{e}.csv"), &table)?);
    }
    Ok(written)
}

fn default_experiment_files(cfg: &RunConfig) -> Vec<PathBuf> {
    (0..cfg.pairing.experiments())
        .map(|e| cfg.output_dir.join(format!("experiment_{e}.csv")))
        .collect()
}

pub fn estimate(cfg: &RunConfig, files: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let files = if files.is_empty() {
        default_experiment_files(cfg)
    } else {
        files.to_vec()
    };
    let mut records = Vec::with_capacity(files.len());
    for f in &files {
        if !f.exists() {
            return Err(CliError::Input(format!(
                "{}: experiment file not found (run `simulate` first)",
                f.display()
            )));
        }
        let table = Table::read(f).map_err(|e| CliError::Input(format!("{}: {e}", f.display())))?;
        let rec = ExperimentRecord::from_table(&table)
            .map_err(|e| CliError::Input(format!("{}: {e}", f.display())))?;
        records.push(rec);
    }
    let n = records[0].n();
    if let Some(r) = records.iter().find(|r| r.n() != n) {
        return Err(clsid_core::Error::GridMismatch {
            expected: n,
            found: r.n(),
        }
        .into());
    }
    let spectra = records
        .iter()
        .map(|r| r.spectra())
        .collect::<clsid_core::Result<Vec<_>>>()?;

    let dir = &cfg.output_dir;
    prepare_dir(dir)?;
    let seeds = records
        .iter()
        .map(|r| r.seed.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    let names = files
        .iter()
        .map(|f| {
            f.file_name().map_or_else(
                || f.display().to_string(),
                |s| s.to_string_lossy().into_owned(),
            )
        })
        .collect::<Vec<_>>()
        .join(" ");
    let mut written = Vec::new();
    for &kind in &cfg.estimators {
        if kind.experiments_required() > spectra.len() {
            return Err(CliError::Input(format!(
                "estimator `{}` needs {} experiment files, got {}",
                kind.as_str(),
                kind.experiments_required(),
                spectra.len()
            )));
        }
        let est = kind.estimate(&spectra, &cfg.system, cfg.estimator_options())?;
        let md = with_config(
            cfg,
            Metadata::new()
                .with("source_files", &names)
                .with("source_seeds", &seeds),
        );
        let table = est.to_table(kind.as_str(), md);
        written.push(write(
            dir,
            &format!("estimate_{}.csv", kind.as_str()),
            &table,
        )?);
    }
    Ok(written)
}

/// Exact and leakage-free variance profiles per unit `sigma^2`.
pub struct Theory {
    pub r: Spectrum,
    pub cov: NoiseCovariances,
    pub dir: VarianceProfile,
    pub ind: VarianceProfile,
    pub io2: VarianceProfile,
    pub nl_dir: VarianceProfile,
    pub nl_io2: VarianceProfile,
}

pub fn theory_profiles(cfg: &RunConfig) -> Result<Theory> {
    let r = reference_spectrum(cfg)?;
    let sys = &cfg.system;
    let cov = noise_covariances(sys, r.n(), DEFAULT_TAIL_TOL)?;
    Ok(Theory {
        dir: asymptotic_variance(sys, &r, &cov, AsymptoticKind::Direct)?,
        ind: asymptotic_variance(sys, &r, &cov, AsymptoticKind::Indirect)?,
        io2: asymptotic_variance(sys, &r, &cov, AsymptoticKind::JointIoTwoExp)?,
        nl_dir: no_leakage_variance(sys, &r, NoLeakageKind::Direct)?,
        nl_io2: no_leakage_variance(sys, &r, NoLeakageKind::JointIoTwoExp)?,
        r,
        cov,
    })
}

fn masked(p: &VarianceProfile, l: usize) -> f64 {
    if p.valid[l] {
        p.values[l]
    } else {
        f64::NAN
    }
}

/// `Re[G C]` on the grid, the first grid frequency where it is negative and
/// the bisected crossing just below it.
fn loop_crossing(cfg: &RunConfig, n: usize) -> Result<(Vec<f64>, Option<usize>, Option<f64>)> {
    let re_gc = (0..n)
        .map(|l| {
            Ok(cfg
                .system
                .loop_response(LoopTransfer::GC, grid_omega(l, n))?
                .re)
        })
        .collect::<clsid_core::Result<Vec<f64>>>()?;
    let first = (1..=n / 2).find(|&l| re_gc[l] < 0.0 && re_gc[l - 1] > 0.0);
    let crossing = match first {
        Some(l) => loop_sign_change(&cfg.system, grid_omega(l - 1, n), grid_omega(l, n))?,
        None => None,
    };
    Ok((re_gc, first, crossing))
}

fn opt_to_string<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

pub fn theory(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let dir = &cfg.output_dir;
    prepare_dir(dir)?;
    let th = theory_profiles(cfg)?;
    let n = th.r.n();
    let mut written = Vec::new();

    let md = with_config(
        cfg,
        Metadata::new().with("units", "variance per unit sigma^2"),
    );
    let mut t = Table::new(
        md,
        &[
            "omega",
            "asymptotic_dir",
            "asymptotic_ind",
            "asymptotic_io2",
            "no_leakage_dir",
            "no_leakage_io2",
        ],
    );
    for l in 0..n {
        t.push_row(
            [
                grid_omega(l, n),
                masked(&th.dir, l),
                masked(&th.ind, l),
                masked(&th.io2, l),
                masked(&th.nl_dir, l),
                masked(&th.nl_io2, l),
            ]
            .iter()
            .map(f64::to_string)
            .collect(),
        );
    }
    written.push(write(dir, "theory_profiles.csv", &t)?);

    written.push(write(
        dir,
        "noise_covariances.csv",
        &th.cov.to_table(cfg.metadata()),
    )?);

    let ord = ordering_predicate(&cfg.system, &th.cov)?;
    let (_, first, crossing) = loop_crossing(cfg, n)?;
    let md = with_config(
        cfg,
        Metadata::new()
            .with(
                "first_grid_loop_negative",
                opt_to_string(first.map(|l| grid_omega(l, n))),
            )
            .with("loop_sign_change", opt_to_string(crossing)),
    );
    written.push(write(dir, "ordering.csv", &ord.to_table(md))?);
    Ok(written)
}

fn require_noise(cfg: &RunConfig) -> Result<()> {
    if cfg.sigma > 0.0 {
        Ok(())
    } else {
        Err(CliError::Input("Monte Carlo needs noise.sigma > 0".into()))
    }
}

fn mc_table(
    cfg: &RunConfig,
    res: &McResult,
    th: &Theory,
) -> Result<(Table, Vec<(EstimatorKind, usize)>)> {
    let mut md = with_config(cfg, res.metadata());
    let mut body = Vec::new();
    let mut flagged = Vec::new();
    for stats in &res.stats {
        match stats.kind.theory(&cfg.system, &th.r, &th.cov)? {
            Some(profile) => {
                let cmp = compare_profiles(stats, &profile, cfg.sigma, cfg.threshold)?;
                flagged.push((stats.kind, cmp.flagged().count()));
                body.push(cmp);
            }
            None => flagged.push((stats.kind, 0)),
        }
    }
    for (kind, count) in &flagged {
        md.push(format!("flagged.{}", kind.as_str()), count);
    }
    let mut t = Table::new(md, &COMPARISON_HEADER);
    for stats in &res.stats {
        if let Some(cmp) = body.iter().find(|c| c.estimator == stats.kind) {
            cmp.push_rows(&mut t);
        } else {
            for l in 0..stats.n() {
                t.push_row(vec![
                    grid_omega(l, stats.n()).to_string(),
                    stats.kind.as_str().to_string(),
                    stats.variance[l].to_string(),
                    f64::NAN.to_string(),
                    f64::NAN.to_string(),
                    f64::NAN.to_string(),
                    stats.valid[l].to_string(),
                ]);
            }
        }
    }
    Ok((t, flagged))
}

pub fn mc(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    require_noise(cfg)?;
    let dir = &cfg.output_dir;
    prepare_dir(dir)?;
    let mc = cfg.mc_config(cfg.estimators.clone(), cfg.pairing);
    let res = run_mc(
        &cfg.system,
        &cfg.excitation.routed(),
        &mc,
        cfg.settle_periods,
    )?;
    res.ensure_not_all_masked()?;
    let th = theory_profiles(cfg)?;
    let (table, flagged) = mc_table(cfg, &res, &th)?;
    for (kind, count) in flagged {
        println!(
            "{}: {count} of {} frequencies beyond rel_diff {}",
            kind.as_str(),
            res.n,
            cfg.threshold
        );
    }
    Ok(vec![write(dir, "mc.csv", &table)?])
}

/// MC variance and validity of the two geometrically averaged estimators,
/// taken from a matching `mc.csv` when present.
fn geo_variances(cfg: &RunConfig, n: usize) -> Result<(GeoColumns, &'static str)> {
    let path = cfg.output_dir.join("mc.csv");
    if let Ok(t) = Table::read(&path) {
        if t.metadata.get("config_hash") == Some(cfg.hash().as_str()) {
            if let Some(found) = read_geo(&t, n)? {
                return Ok((found, "mc.csv"));
            }
        }
    }
    let mc = cfg.mc_config(vec![GEO_DIR, GEO_IO2], Pairing::Quad);
    let res = run_mc(
        &cfg.system,
        &cfg.excitation.routed(),
        &mc,
        cfg.settle_periods,
    )?;
    res.ensure_not_all_masked()?;
    let pick = |k| res.get(k).expect("requested estimator");
    let (a, b) = (pick(GEO_DIR), pick(GEO_IO2));
    Ok((
        (
            [a.variance.clone(), b.variance.clone()],
            [a.valid.clone(), b.valid.clone()],
        ),
        "inline",
    ))
}

type GeoColumns = ([Vec<f64>; 2], [Vec<u64>; 2]);

fn read_geo(t: &Table, n: usize) -> Result<Option<GeoColumns>> {
    let bad = |what: &str| CliError::Input(format!("mc.csv: bad {what}"));
    let (ce, cv, cn) = (
        t.column("estimator")?,
        t.column("mc_var")?,
        t.column("validity")?,
    );
    let mut var = [Vec::new(), Vec::new()];
    let mut valid = [Vec::new(), Vec::new()];
    for row in &t.rows {
        let slot = match row[ce].as_str() {
            s if s == GEO_DIR.as_str() => 0,
            s if s == GEO_IO2.as_str() => 1,
            _ => continue,
        };
        var[slot].push(row[cv].parse::<f64>().map_err(|_| bad("mc_var"))?);
        valid[slot].push(row[cn].parse::<u64>().map_err(|_| bad("validity"))?);
    }
    if var.iter().all(|v| v.len() == n) {
        Ok(Some((var, valid)))
    } else {
        Ok(None)
    }
}

fn argmax(v: &[f64], range: std::ops::Range<usize>) -> Option<usize> {
    range
        .filter(|&l| v[l].is_finite())
        .max_by(|&a, &b| v[a].total_cmp(&v[b]))
}

pub fn report(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    require_noise(cfg)?;
    let dir = &cfg.output_dir;
    prepare_dir(dir)?;
    let th = theory_profiles(cfg)?;
    let n = th.r.n();
    let s2 = cfg.sigma * cfg.sigma;
    let ((var, valid), source) = geo_variances(cfg, n)?;
    let sys = &cfg.system;

    let mut abs_g = Vec::with_capacity(n);
    let mut abs_s = Vec::with_capacity(n);
    let mut noise = Vec::with_capacity(n);
    for l in 0..n {
        let w = grid_omega(l, n);
        abs_g.push(sys.plant().evaluate(w)?.norm());
        abs_s.push(sys.loop_response(LoopTransfer::S, w)?.norm());
        noise.push(sys.noise_model().evaluate(w)?.norm_sqr());
    }
    let half = |p: &VarianceProfile, l| masked(p, l) * s2 / 2.0;
    let mut written = Vec::new();

    let md = with_config(
        cfg,
        Metadata::new()
            .with("mc_source", source)
            .with("noise_spectrum", "|H|^2")
            .with("theory_scale", "sigma^2 / 2 (two averaged experiments)"),
    );
    let mut fig2 = Table::new(
        md,
        &[
            "omega",
            "abs_g",
            "abs_s",
            "noise_spectrum",
            "mc_geo_dir",
            "mc_geo_io2",
            "half_asym_dir",
            "half_asym_io2",
            "half_noleak_dir",
            "half_noleak_io2",
            "valid_geo_dir",
            "valid_geo_io2",
        ],
    );
    let mut diff = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for l in 0..n {
        let theory = [half(&th.dir, l), half(&th.io2, l)];
        for k in 0..2 {
            diff[k].push((var[k][l] - theory[k]).abs());
        }
        fig2.push_row(vec![
            grid_omega(l, n).to_string(),
            abs_g[l].to_string(),
            abs_s[l].to_string(),
            noise[l].to_string(),
            var[0][l].to_string(),
            var[1][l].to_string(),
            theory[0].to_string(),
            theory[1].to_string(),
            half(&th.nl_dir, l).to_string(),
            half(&th.nl_io2, l).to_string(),
            valid[0][l].to_string(),
            valid[1][l].to_string(),
        ]);
    }
    written.push(write(dir, "fig2.csv", &fig2)?);

    // DC is left out: its reference energy is only amplitude^2 / N, so the
    // small-noise regime does not hold there and it would swamp the search.
    let positive = 1..n / 2 + 1;
    let peak = argmax(&noise, positive.clone());
    let md = with_config(
        cfg,
        Metadata::new()
            .with("mc_source", source)
            .with("peak_search", "0 < omega <= pi")
            .with(
                "noise_peak_omega",
                opt_to_string(peak.map(|l| grid_omega(l, n))),
            )
            .with(
                "max_abs_diff_geo_dir_omega",
                opt_to_string(argmax(&diff[0], positive.clone()).map(|l| grid_omega(l, n))),
            )
            .with(
                "max_abs_diff_geo_io2_omega",
                opt_to_string(argmax(&diff[1], positive).map(|l| grid_omega(l, n))),
            ),
    );
    let mut fig3 = Table::new(
        md,
        &[
            "omega",
            "abs_diff_geo_dir",
            "abs_diff_geo_io2",
            "noise_spectrum",
        ],
    );
    for l in 0..n {
        fig3.push_row(vec![
            grid_omega(l, n).to_string(),
            diff[0][l].to_string(),
            diff[1][l].to_string(),
            noise[l].to_string(),
        ]);
    }
    written.push(write(dir, "fig3.csv", &fig3)?);

    let (re_gc, first, crossing) = loop_crossing(cfg, n)?;
    let md = with_config(
        cfg,
        Metadata::new()
            .with(
                "first_grid_loop_negative",
                opt_to_string(first.map(|l| grid_omega(l, n))),
            )
            .with("loop_sign_change", opt_to_string(crossing)),
    );
    let mut fig4 = Table::new(md, &["omega", "re_gc"]);
    for (l, v) in re_gc.iter().enumerate() {
        fig4.push_row(vec![grid_omega(l, n).to_string(), v.to_string()]);
    }
    written.push(write(dir, "fig4.csv", &fig4)?);
    Ok(written)
}
