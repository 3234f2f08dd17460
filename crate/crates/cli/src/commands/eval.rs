use std::path::{Path, PathBuf};

use anagram_core::embed::{ConstantEmbedder, Embedder, ToyEmbedder, TOY_EMBED_DIM};
use anagram_core::metrics::{summarize, EvalRecord, ScoreMatrix, Summary};
use anagram_core::remote::{RemoteBackend, RemoteConfig};
use anagram_core::view::{BuildOptions, ViewSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::MANIFEST_FILE;
use super::{create_dir, read_image, write};
use crate::config::{BackendChoice, GenerateConfig};
use crate::error::CliError;
use crate::EvalArgs;

/// One image with its `(view, prompt)` entries.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordSpec {
    pub id: String,
    /// Relative to the images directory.
    pub image: PathBuf,
    pub views: Vec<String>,
    pub prompts: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordsFile {
    #[serde(default)]
    record: Vec<RecordSpec>,
}

struct ResolvedRecord {
    spec: RecordSpec,
    image: PathBuf,
    base_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub embedder: String,
    #[serde(flatten)]
    pub summary: Summary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_norm_correction: Option<f64>,
}

pub struct EvalOutcome {
    pub records: Vec<EvalRecord>,
    pub summary: EvalSummary,
    pub csv: PathBuf,
    pub summary_path: PathBuf,
}

enum AnyEmbedder {
    Toy(ToyEmbedder),
    Constant(ConstantEmbedder),
    Remote(Box<RemoteBackend>),
}

impl AnyEmbedder {
    fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "toy" => Ok(Self::Toy(ToyEmbedder::default())),
            "constant" => Ok(Self::Constant(ConstantEmbedder::new(TOY_EMBED_DIM))),
            other => match BackendChoice::parse(other) {
                Ok(BackendChoice::Remote(url)) => Ok(Self::Remote(Box::new(RemoteBackend::connect(RemoteConfig::new(url))?))),
                _ => Err(CliError::Config(format!("unknown embedder `{other}` (expected toy, constant, remote or remote:<url>)"))),
            },
        }
    }

    fn get(&self) -> &dyn Embedder {
        match self {
            Self::Toy(e) => e,
            Self::Constant(e) => e,
            Self::Remote(e) => e.as_ref(),
        }
    }
}

fn find_manifests(dir: &Path, depth: usize, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let m = dir.join(MANIFEST_FILE);
    if m.is_file() {
        out.push(m);
    }
    if depth == 0 {
        return Ok(());
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for s in subdirs {
        find_manifests(&s, depth - 1, out)?;
    }
    Ok(())
}

fn collect_records(args: &EvalArgs) -> Result<Vec<ResolvedRecord>, CliError> {
    if let Some(path) = &args.records {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let file: RecordsFile = toml::from_str(&text).map_err(|e| CliError::io(path, e))?;
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        return Ok(file
            .record
            .into_iter()
            .map(|spec| ResolvedRecord { image: args.images.join(&spec.image), base_dir: base_dir.clone(), spec })
            .collect());
    }
    let mut manifests = Vec::new();
    find_manifests(&args.images, 3, &mut manifests)?;
    manifests
        .into_iter()
        .map(|m| {
            let cfg = GenerateConfig::load(&m)?;
            let dir = m.parent().unwrap_or(Path::new("."));
            let id = dir.strip_prefix(&args.images).unwrap_or(dir).display().to_string();
            let id = if id.is_empty() { ".".to_string() } else { id };
            Ok(ResolvedRecord {
                spec: RecordSpec { id, image: dir.join("x0.nten"), views: cfg.views.clone(), prompts: cfg.prompts.clone() },
                image: dir.join("x0.nten"),
                base_dir: cfg.base_dir(),
            })
        })
        .collect()
}

fn evaluate(r: &ResolvedRecord, embedder: &dyn Embedder, tau: f64) -> Result<EvalRecord, CliError> {
    let spec = &r.spec;
    if spec.views.len() != spec.prompts.len() || spec.views.is_empty() {
        return Err(CliError::Config(format!(
            "record `{}`: {} views but {} prompts",
            spec.id,
            spec.views.len(),
            spec.prompts.len()
        )));
    }
    let image = read_image(&r.image)?;
    let opts = BuildOptions { base_dir: r.base_dir.clone(), ..BuildOptions::default() };
    let mut image_emb = Vec::with_capacity(spec.views.len());
    for v in &spec.views {
        let view = v.parse::<ViewSpec>().and_then(|s| s.build(image.dims(), &opts)).map_err(CliError::config)?;
        let seen = view.apply(&image).map_err(CliError::config)?;
        image_emb.push(embedder.embed_image(&seen)?);
    }
    let text_emb = spec.prompts.iter().map(|p| embedder.embed_text(p)).collect::<Result<Vec<_>, _>>()?;
    let scores = ScoreMatrix::from_embeddings(&image_emb, &text_emb)
        .map_err(|e| CliError::Config(format!("record `{}`: {e}", spec.id)))?;
    EvalRecord::new(spec.id.clone(), spec.prompts.clone(), spec.views.clone(), scores, tau)
        .map_err(|e| CliError::Config(format!("record `{}`: {e}", spec.id)))
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

pub fn records_csv(records: &[EvalRecord]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Config(format!("CSV: {e}"));
    w.write_record(["id", "n", "alignment", "concealment", "diagonal", "scores"]).map_err(err)?;
    for r in records {
        w.write_record([
            r.id.clone(),
            r.scores.n().to_string(),
            r.alignment.to_string(),
            r.concealment.to_string(),
            join(&r.diagonal()),
            join(r.scores.data()),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Config(format!("CSV: {e}")))
}

pub fn run(args: &EvalArgs) -> Result<EvalOutcome, CliError> {
    let records = collect_records(args)?;
    if records.is_empty() {
        return Err(CliError::Config(format!("no records found under {}", args.images.display())));
    }
    let missing: Vec<String> = records.iter().filter(|r| !r.image.is_file()).map(|r| r.image.display().to_string()).collect();
    if !missing.is_empty() {
        return Err(CliError::Config(format!("{} missing image file(s):\n  {}", missing.len(), missing.join("\n  "))));
    }
    let embedder = AnyEmbedder::parse(&args.embedder)?;
    let emb = embedder.get();
    let results: Vec<Result<EvalRecord, CliError>> = records.par_iter().map(|r| evaluate(r, emb, args.tau)).collect();
    let evaluated = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let summary = EvalSummary {
        embedder: emb.id(),
        summary: summarize(&evaluated, args.tau).map_err(CliError::config)?,
        max_norm_correction: match &embedder {
            AnyEmbedder::Remote(r) => Some(r.stats().max_norm_correction),
            _ => None,
        },
    };
    create_dir(&args.out)?;
    let csv = args.out.join("records.csv");
    write(&csv, records_csv(&evaluated)?)?;
    let summary_path = args.out.join("summary.toml");
    let text = toml::to_string(&summary).expect("summary serializes");
    write(&summary_path, &text)?;
    print!("{text}");
    Ok(EvalOutcome { records: evaluated, summary, csv, summary_path })
}
