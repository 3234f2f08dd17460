use std::path::Path;

use anagram_core::prompts::{build_cifar_pairs, build_prompt_pairs, PromptPair};
use serde::Serialize;

use super::write;
use crate::error::CliError;
use crate::{DatasetArgs, DatasetKind};

#[derive(Serialize)]
struct PairEntry<'a> {
    style: &'a str,
    subjects: &'a [String; 2],
    prompts: [String; 2],
}

#[derive(Serialize)]
struct PairsOut<'a> {
    pair: Vec<PairEntry<'a>>,
}

/// Distinct non-empty lines, trimmed, skipping `#` comments.
pub fn read_list(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut out: Vec<String> = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        if !out.iter().any(|s| s == line) {
            out.push(line.to_string());
        }
    }
    Ok(out)
}

pub fn pairs_toml(pairs: &[PromptPair]) -> String {
    let out = PairsOut {
        pair: pairs.iter().map(|p| PairEntry { style: &p.style, subjects: &p.subjects, prompts: p.prompts() }).collect(),
    };
    toml::to_string(&out).expect("pairs serialize")
}

fn required<'a>(p: &'a Option<std::path::PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| CliError::Config(format!("sampled datasets need --{what}")))
}

pub fn build(args: &DatasetArgs) -> Result<Vec<PromptPair>, CliError> {
    match args.kind {
        DatasetKind::Cifar => Ok(build_cifar_pairs()),
        DatasetKind::Sampled => {
            let styles = read_list(required(&args.styles, "styles")?)?;
            let subjects = read_list(required(&args.subjects, "subjects")?)?;
            let available = styles.len() * subjects.len() * subjects.len().saturating_sub(1) / 2;
            let count = args.count.unwrap_or(available);
            build_prompt_pairs(&styles, &subjects, args.seed, count).map_err(CliError::config)
        }
    }
}

pub fn run(args: &DatasetArgs) -> Result<(), CliError> {
    let pairs = build(args)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        super::create_dir(parent)?;
    }
    write(&args.out, pairs_toml(&pairs))?;
    println!("wrote {} pairs to {}", pairs.len(), args.out.display());
    Ok(())
}
