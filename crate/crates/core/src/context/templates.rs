//! Instruction/answer template registry.
//!
//! A template is a UTF-8 text file named `<template_id>.txt` containing the
//! instruction lines, a `{reference}` line where the passage block goes, and
//! the answer lines. `{question}`, `{choices}` and (for labeler prompts)
//! `{answers}` are substituted at render time. One trailing newline is
//! stripped on load.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::corpus::Task;
use crate::error::{Error, Result};

pub const REFERENCE: &str = "{reference}";

macro_rules! builtin {
    ($($id:literal),* $(,)?) => {
        &[$(($id, include_str!(concat!("../../templates/", $id, ".txt")))),*]
    };
}

const BUILTIN: &[(&str, &str)] = builtin![
    "qa",
    "multihop",
    "longform",
    "slotfill",
    "nq",
    "wow",
    "fever",
    "mmlu",
    "qa_reasoning",
    "multihop_reasoning",
    "longform_reasoning",
    "slotfill_reasoning",
    "nq_reasoning",
    "wow_reasoning",
    "fever_reasoning",
    "mmlu_reasoning",
    "label_nq",
    "label_wow",
    "label_fever",
    "label_mmlu",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, String>,
}

fn strip_trailing_newline(s: &str) -> &str {
    s.strip_suffix("\r\n").or_else(|| s.strip_suffix('\n')).unwrap_or(s)
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateRegistry {
    /// The shipped templates.
    pub fn builtin() -> Self {
        TemplateRegistry {
            templates: BUILTIN
                .iter()
                .map(|(id, text)| (id.to_string(), strip_trailing_newline(text).to_string()))
                .collect(),
        }
    }

    /// Only the `*.txt` files found in `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut reg = TemplateRegistry {
            templates: BTreeMap::new(),
        };
        reg.load_dir(dir)?;
        Ok(reg)
    }

    /// Built-ins, with files in `dir` added or taking precedence.
    pub fn builtin_with_overrides(dir: &Path) -> Result<Self> {
        let mut reg = Self::builtin();
        reg.load_dir(dir)?;
        Ok(reg)
    }

    fn load_dir(&mut self, dir: &Path) -> Result<()> {
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            self.templates
                .insert(id.to_string(), strip_trailing_newline(&text).to_string());
        }
        Ok(())
    }

    pub fn insert(&mut self, id: impl Into<String>, text: impl Into<String>) {
        self.templates.insert(id.into(), text.into());
    }

    pub fn get(&self, id: &str) -> Result<&str> {
        self.templates
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownTemplate(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

/// Template used at inference time for a task.
pub fn default_template(task: Task, reasoning: bool) -> &'static str {
    match (task, reasoning) {
        (Task::Qa, false) => "qa",
        (Task::Multihop, false) => "multihop",
        (Task::Longform, false) => "longform",
        (Task::Slotfill, false) => "slotfill",
        (Task::Fact, false) => "fever",
        (Task::Dialogue, false) => "wow",
        (Task::Multichoice, false) => "mmlu",
        (Task::Qa, true) => "qa_reasoning",
        (Task::Multihop, true) => "multihop_reasoning",
        (Task::Longform, true) => "longform_reasoning",
        (Task::Slotfill, true) => "slotfill_reasoning",
        (Task::Fact, true) => "fever_reasoning",
        (Task::Dialogue, true) => "wow_reasoning",
        (Task::Multichoice, true) => "mmlu_reasoning",
    }
}

/// Single-pass placeholder substitution: text introduced by a value is never
/// re-scanned for placeholders.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'scan: while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let tail = &rest[start..];
        for (name, value) in values {
            let Some(after) = tail
                .strip_prefix('{')
                .and_then(|t| t.strip_prefix(name))
                .and_then(|t| t.strip_prefix('}'))
            else {
                continue;
            };
            out.push_str(value);
            rest = after;
            continue 'scan;
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_have_reference_slot() {
        let reg = TemplateRegistry::builtin();
        for id in reg.ids() {
            let t = reg.get(id).unwrap();
            assert_eq!(t.matches(REFERENCE).count(), 1, "{id}");
            assert!(t.contains("{question}"), "{id}");
            assert!(!t.ends_with('\n'), "{id}");
        }
        assert!(matches!(reg.get("nope"), Err(Error::UnknownTemplate(_))));
    }

    #[test]
    fn every_task_has_templates() {
        let reg = TemplateRegistry::builtin();
        for task in [
            Task::Qa,
            Task::Multihop,
            Task::Longform,
            Task::Slotfill,
            Task::Fact,
            Task::Dialogue,
            Task::Multichoice,
        ] {
            for reasoning in [false, true] {
                reg.get(default_template(task, reasoning)).unwrap();
            }
        }
    }

    #[test]
    fn fill_is_single_pass() {
        let out = fill("Q: {question} R: {reference} {unknown}", &[("question", "{reference}"), ("reference", "docs")]);
        assert_eq!(out, "Q: {reference} R: docs {unknown}");
        assert_eq!(fill("{", &[]), "{");
        assert_eq!(fill("é{x}é", &[("x", "ü")]), "éüé");
    }

    #[test]
    fn directory_overrides() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("qa.txt"), "Custom\n{reference}\nQ: {question}\n").unwrap();
        fs::write(dir.path().join("notes.md"), "ignored").unwrap();
        let only = TemplateRegistry::from_dir(dir.path()).unwrap();
        assert_eq!(only.ids().collect::<Vec<_>>(), vec!["qa"]);
        assert_eq!(only.get("qa").unwrap(), "Custom\n{reference}\nQ: {question}");
        let layered = TemplateRegistry::builtin_with_overrides(dir.path()).unwrap();
        assert_eq!(layered.get("qa").unwrap(), "Custom\n{reference}\nQ: {question}");
        assert!(layered.get("fever").is_ok());
    }
}
