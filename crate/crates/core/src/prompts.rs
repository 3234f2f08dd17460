//! Prompt-pair datasets.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::seeded_rng;

pub const CIFAR10_CLASSES: [&str; 10] =
    ["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"];
pub const CIFAR_STYLE: &str = "a painting of";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("{0} list is empty")]
    EmptyList(&'static str),
    #[error("requested {requested} pairs but only {available} distinct combinations exist")]
    TooMany { requested: usize, available: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub style: String,
    pub subjects: [String; 2],
}

impl PromptPair {
    /// The two full prompts, `"<style> <subject>"`.
    pub fn prompts(&self) -> [String; 2] {
        self.subjects.clone().map(|s| join(&self.style, &s))
    }
}

fn join(style: &str, subject: &str) -> String {
    match (style.trim(), subject.trim()) {
        ("", s) => s.to_string(),
        (st, s) => format!("{st} {s}"),
    }
}

fn dedup(items: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.contains(s) {
            out.push(s.clone());
        }
    }
    out
}

/// All `C(10, 2) = 45` unordered pairs of CIFAR-10 classes, `i < j` in
/// class order, each prefixed with the painting style.
pub fn build_cifar_pairs() -> Vec<PromptPair> {
    let mut out = Vec::with_capacity(45);
    for (i, a) in CIFAR10_CLASSES.iter().enumerate() {
        for b in &CIFAR10_CLASSES[i + 1..] {
            out.push(PromptPair { style: CIFAR_STYLE.to_string(), subjects: [a.to_string(), b.to_string()] });
        }
    }
    out
}

/// Samples `count` distinct (style, unordered subject pair) combinations
/// without replacement.
pub fn build_prompt_pairs(styles: &[String], subjects: &[String], seed: u64, count: usize) -> Result<Vec<PromptPair>, PromptError> {
    let styles = dedup(styles);
    let subjects = dedup(subjects);
    if styles.is_empty() {
        return Err(PromptError::EmptyList("style"));
    }
    if subjects.is_empty() {
        return Err(PromptError::EmptyList("subject"));
    }
    let mut all = Vec::new();
    for style in &styles {
        for i in 0..subjects.len() {
            for j in i + 1..subjects.len() {
                all.push(PromptPair { style: style.clone(), subjects: [subjects[i].clone(), subjects[j].clone()] });
            }
        }
    }
    if count > all.len() {
        return Err(PromptError::TooMany { requested: count, available: all.len() });
    }
    all.shuffle(&mut seeded_rng(seed));
    all.truncate(count);
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn cifar() {
        let pairs = build_cifar_pairs();
        assert_eq!(pairs.len(), 45);
        assert_eq!(pairs[0].prompts(), ["a painting of airplane".to_string(), "a painting of automobile".to_string()]);
        assert_eq!(pairs[44].subjects, ["ship".to_string(), "truck".to_string()]);
    }

    #[test]
    fn single_pair() {
        let p = build_prompt_pairs(&v(&["an oil painting of"]), &v(&["a cat", "a dog"]), 3, 1).unwrap();
        assert_eq!(p[0].prompts(), ["an oil painting of a cat".to_string(), "an oil painting of a dog".to_string()]);
        assert_eq!(
            build_prompt_pairs(&v(&["s"]), &v(&["a", "b"]), 3, 2),
            Err(PromptError::TooMany { requested: 2, available: 1 })
        );
        assert!(build_prompt_pairs(&[], &v(&["a"]), 0, 0).is_err());
    }

    #[test]
    fn seeded_and_distinct() {
        let styles = v(&["a", "b", "c"]);
        let subjects = v(&["w", "x", "y", "z"]);
        let p1 = build_prompt_pairs(&styles, &subjects, 11, 10).unwrap();
        assert_eq!(p1, build_prompt_pairs(&styles, &subjects, 11, 10).unwrap());
        for (i, p) in p1.iter().enumerate() {
            assert!(!p1[..i].contains(p));
        }
        assert_eq!(build_prompt_pairs(&styles, &subjects, 11, 18).unwrap().len(), 18);
    }
}
