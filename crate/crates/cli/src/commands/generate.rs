use std::path::{Path, PathBuf};
use std::time::Instant;

use anagram_core::analytic::{AnalyticDenoiser, MixtureSpec};
use anagram_core::denoiser::{Denoiser, PromptCondition};
use anagram_core::guidance::MultiViewTask;
use anagram_core::noise::{certify_noise_preservation, MIN_SAMPLES};
use anagram_core::prompts::PromptPair;
use anagram_core::remote::RemoteBackend;
use anagram_core::sampler::sample;
use anagram_core::schedule::NoiseSchedule;
use anagram_core::view::{Admissibility, BuildOptions, View, ViewSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{create_dir, write, write_tensor};
use crate::config::{BackendChoice, GenerateConfig};
use crate::error::CliError;
use crate::png::write_png;
use crate::GenerateArgs;

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BrokenViewNote {
    pub index: usize,
    pub spec: String,
    pub verdict: String,
    pub var_mean: f64,
    pub offdiag_max_abs: f64,
}

/// The `[manifest]` table of a run manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestInfo {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub schedule: String,
    pub schedule_hash: String,
    pub backend_id: String,
    pub cfg_mode: String,
    pub admissibility: Vec<String>,
    pub outputs: Vec<String>,
    pub broken_views: Vec<BrokenViewNote>,
    /// Excluded from reproducibility comparisons.
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Debug, Deserialize)]
struct PairsFile {
    #[serde(default)]
    pair: Vec<PromptPair>,
}

fn apply_overrides(cfg: &mut GenerateConfig, args: &GenerateArgs) {
    if let Some(b) = &args.backend {
        cfg.backend = b.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
        cfg.seeds.clear();
    }
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    if let Some(g) = args.guidance {
        cfg.guidance = g;
    }
    if let Some(r) = args.reduction {
        cfg.reduction = r;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    cfg.allow_broken |= args.allow_broken;
}

pub fn build_views(cfg: &GenerateConfig) -> Result<Vec<View>, CliError> {
    let dims = cfg.parsed_dims()?;
    let opts = BuildOptions { base_dir: cfg.base_dir(), dense_cap: cfg.dense_cap };
    cfg.views
        .iter()
        .map(|s| s.parse::<ViewSpec>().and_then(|spec| spec.build(dims, &opts)).map_err(CliError::config))
        .collect()
}

enum Backend {
    Analytic(Box<AnalyticDenoiser>),
    Remote(Box<RemoteBackend>),
}

impl Backend {
    fn denoiser(&self) -> &dyn Denoiser {
        match self {
            Self::Analytic(d) => d.as_ref(),
            Self::Remote(d) => d.as_ref(),
        }
    }

    fn schedule(&self, cfg: &GenerateConfig) -> NoiseSchedule {
        match self {
            Self::Analytic(d) => d.schedule().clone(),
            Self::Remote(r) => NoiseSchedule::cosine(r.info().timesteps.unwrap_or(cfg.timesteps)),
        }
    }
}

fn connect(cfg: &GenerateConfig) -> Result<Backend, CliError> {
    match cfg.backend_choice()? {
        BackendChoice::Analytic => {
            let rel = cfg
                .mixture
                .as_ref()
                .ok_or_else(|| CliError::Config("the analytic backend needs `mixture = <file>`".into()))?;
            let path = cfg.resolve(rel);
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            let dir = path.parent().unwrap_or(Path::new("."));
            let mix = MixtureSpec::from_toml(&text, dir).map_err(|e| CliError::io(&path, e))?;
            if mix.dims() != cfg.parsed_dims()? {
                return Err(CliError::Config(format!("mixture dims {} differ from task dims {}", mix.dims(), cfg.dims)));
            }
            Ok(Backend::Analytic(Box::new(AnalyticDenoiser::new(mix, NoiseSchedule::cosine(cfg.timesteps)))))
        }
        BackendChoice::Remote(url) => Ok(Backend::Remote(Box::new(RemoteBackend::connect(cfg.remote_config(&url))?))),
    }
}

/// One run per (prompt set, seed), each with a self-contained config.
fn expand_runs(cfg: &GenerateConfig) -> Result<Vec<(PathBuf, GenerateConfig)>, CliError> {
    let prompt_sets: Vec<Vec<String>> = match &cfg.pairs {
        None => vec![cfg.prompts.clone()],
        Some(p) => {
            let path = cfg.resolve(p);
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            let file: PairsFile = toml::from_str(&text).map_err(|e| CliError::io(&path, e))?;
            if file.pair.is_empty() {
                return Err(CliError::Config(format!("{}: no pairs", path.display())));
            }
            if cfg.views.len() != 2 {
                return Err(CliError::Config(format!("prompt pairs need exactly 2 views, got {}", cfg.views.len())));
            }
            file.pair.iter().map(|p| p.prompts().to_vec()).collect()
        }
    };
    let seeds = cfg.run_seeds();
    let single = prompt_sets.len() == 1 && seeds.len() == 1;
    let mut runs = Vec::new();
    for (k, prompts) in prompt_sets.iter().enumerate() {
        for &seed in &seeds {
            let dir = match (single, cfg.pairs.is_some(), seeds.len() > 1) {
                (true, _, _) => cfg.out.clone(),
                (false, true, true) => cfg.out.join(format!("pair_{k:03}_seed_{seed}")),
                (false, true, false) => cfg.out.join(format!("pair_{k:03}")),
                (false, false, _) => cfg.out.join(format!("seed_{seed}")),
            };
            let mut run = cfg.clone();
            run.prompts = prompts.clone();
            run.pairs = None;
            run.seed = seed;
            run.seeds.clear();
            run.out = dir.clone();
            runs.push((dir, run));
        }
    }
    Ok(runs)
}

fn task(cfg: &GenerateConfig, views: &[View]) -> Result<MultiViewTask, CliError> {
    let prompts = cfg
        .prompts
        .iter()
        .enumerate()
        .map(|(i, p)| match cfg.negative_prompts.get(i).filter(|n| !n.is_empty()) {
            Some(n) => PromptCondition::with_negative(p.clone(), n.clone()).map_err(CliError::from),
            None => Ok(PromptCondition::new(p.clone())),
        })
        .collect::<Result<_, _>>()?;
    Ok(MultiViewTask {
        views: views.to_vec(),
        prompts,
        guidance: cfg.guidance,
        reduction: cfg.reduction,
        sampler: cfg.sampler,
        steps: cfg.steps,
        seed: cfg.seed,
    })
}

fn execute(
    run: &GenerateConfig,
    dir: &Path,
    views: &[View],
    backend: &Backend,
    broken: &[BrokenViewNote],
) -> Result<RunOutput, CliError> {
    let started = Instant::now();
    let schedule = backend.schedule(run);
    let den = backend.denoiser();
    let result = sample(den, &task(run, views)?, &schedule)?;
    create_dir(dir)?;
    let mut outputs = vec!["x0.nten".to_string(), "x0_raw.nten".into(), "x_init.nten".into()];
    write_tensor(&dir.join("x0.nten"), &result.x0)?;
    write_tensor(&dir.join("x0_raw.nten"), &result.x0_raw)?;
    write_tensor(&dir.join("x_init.nten"), &result.x_init)?;
    for (i, v) in views.iter().enumerate() {
        let seen = v.apply(&result.x0).map_err(CliError::config)?;
        let (png, raw) = (format!("view_{i}.png"), format!("view_{i}.nten"));
        write_png(&dir.join(&png), &seen)?;
        write_tensor(&dir.join(&raw), &seen)?;
        outputs.extend([png, raw]);
    }
    let info = ManifestInfo {
        command: "generate".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: run.seed,
        schedule: schedule.name().to_string(),
        schedule_hash: schedule.hash(),
        backend_id: den.id(),
        cfg_mode: format!("{:?}", den.cfg_mode()).to_lowercase(),
        admissibility: views.iter().map(|v| v.admissibility().as_str().to_string()).collect(),
        outputs,
        broken_views: broken.to_vec(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    let manifest = dir.join(MANIFEST_FILE);
    let mut table = toml::Table::try_from(run).expect("config serializes");
    table.insert("manifest".into(), toml::Value::try_from(&info).expect("manifest serializes"));
    write(&manifest, toml::to_string(&table).expect("manifest serializes"))?;
    Ok(RunOutput { dir: dir.to_path_buf(), manifest })
}

pub fn run(args: &GenerateArgs) -> Result<Vec<RunOutput>, CliError> {
    let mut cfg = GenerateConfig::load(&args.config)?;
    apply_overrides(&mut cfg, args);
    cfg.validate()?;
    let views = build_views(&cfg)?;

    let broken: Vec<usize> = (0..views.len()).filter(|&i| views[i].admissibility() == Admissibility::KnownBroken).collect();
    let names = broken.iter().map(|&i| format!("#{i} `{}`", cfg.views[i])).collect::<Vec<_>>().join(", ");
    if !broken.is_empty() && !cfg.allow_broken {
        return Err(CliError::BrokenRefused(names));
    }
    let mut notes = Vec::new();
    for &i in &broken {
        let report = certify_noise_preservation(&views[i], 2 * MIN_SAMPLES, cfg.seed).map_err(CliError::config)?;
        eprintln!(
            "!!! WARNING: view #{i} `{}` is known-broken. Noise certification verdict: {} (var_mean={:.4}, max |corr|={:.4}). !!!",
            cfg.views[i],
            report.verdict.as_str().to_uppercase(),
            report.var_mean,
            report.offdiag_max_abs
        );
        notes.push(BrokenViewNote {
            index: i,
            spec: cfg.views[i].clone(),
            verdict: report.verdict.as_str().into(),
            var_mean: report.var_mean,
            offdiag_max_abs: report.offdiag_max_abs,
        });
    }
    if cfg.steps == 0 {
        eprintln!("warning: steps = 0, the output is the initial noise x_T");
    }

    let backend = connect(&cfg)?;
    let runs = expand_runs(&cfg)?;
    let results: Vec<Result<RunOutput, CliError>> =
        runs.par_iter().map(|(dir, run)| execute(run, dir, &views, &backend, &notes)).collect();
    let outputs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    if outputs.len() > 1 {
        let list: Vec<String> = outputs.iter().map(|o| o.dir.display().to_string()).collect();
        write(&cfg.out.join("batch.toml"), toml::to_string(&toml::Table::from_iter([("runs".to_string(), list.into())])).unwrap())?;
    }
    for o in &outputs {
        println!("wrote {}", o.manifest.display());
    }
    Ok(outputs)
}
