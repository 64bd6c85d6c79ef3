//! Stage prompt templates and a single-pass slot renderer.
//!
//! Templates carry named slots (`{ir}`, `{code}`, `{advice}`, `{analysis}`,
//! `{opt}`, `{ll_text}`). Substituted text is never re-scanned, so slot
//! values may themselves contain braces.

use std::path::Path;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template {template} needs a value for slot {{{slot}}}")]
    MissingSlot { template: String, slot: String },
    #[error("cannot read template {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    Formulation,
    Refinement,
    Realization,
    Baseline,
    Distillation,
    Harness,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 6] = [
        TemplateKind::Formulation,
        TemplateKind::Refinement,
        TemplateKind::Realization,
        TemplateKind::Baseline,
        TemplateKind::Distillation,
        TemplateKind::Harness,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateKind::Formulation => "formulation.txt",
            TemplateKind::Refinement => "refinement.txt",
            TemplateKind::Realization => "realization.txt",
            TemplateKind::Baseline => "baseline.txt",
            TemplateKind::Distillation => "distillation.txt",
            TemplateKind::Harness => "harness.txt",
        }
    }

    pub fn builtin(self) -> &'static str {
        match self {
            TemplateKind::Formulation => include_str!("../../templates/formulation.txt"),
            TemplateKind::Refinement => include_str!("../../templates/refinement.txt"),
            TemplateKind::Realization => include_str!("../../templates/realization.txt"),
            TemplateKind::Baseline => include_str!("../../templates/baseline.txt"),
            TemplateKind::Distillation => include_str!("../../templates/distillation.txt"),
            TemplateKind::Harness => include_str!("../../templates/harness.txt"),
        }
    }
}

pub const SLOTS: [&str; 6] = ["ir", "code", "advice", "analysis", "opt", "ll_text"];

/// Slot names used by `template`, in order of first appearance.
pub fn slots_in(template: &str) -> Vec<&'static str> {
    let mut found: Vec<(usize, &'static str)> = SLOTS
        .iter()
        .filter_map(|s| template.find(&format!("{{{s}}}")).map(|i| (i, *s)))
        .collect();
    found.sort();
    found.into_iter().map(|f| f.1).collect()
}

/// Replaces every `{slot}` occurrence with its value in one left-to-right
/// pass. Braces that do not form a known slot are copied through.
pub fn render(template: &str, values: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() + values.iter().map(|v| v.1.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let slot = after
            .find('}')
            .map(|close| &after[..close])
            .filter(|name| SLOTS.contains(name));
        match slot {
            Some(name) => {
                let value = values
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| PromptError::MissingSlot {
                        template: template.chars().take(40).collect(),
                        slot: name.to_string(),
                    })?;
                out.push_str(value);
                rest = &after[name.len() + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// The templates used by one pipeline run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePromptSet {
    pub formulation: String,
    pub refinement: String,
    pub realization: String,
    pub baseline: String,
    pub distillation: String,
    pub harness: String,
}

impl Default for StagePromptSet {
    fn default() -> Self {
        StagePromptSet {
            formulation: TemplateKind::Formulation.builtin().to_string(),
            refinement: TemplateKind::Refinement.builtin().to_string(),
            realization: TemplateKind::Realization.builtin().to_string(),
            baseline: TemplateKind::Baseline.builtin().to_string(),
            distillation: TemplateKind::Distillation.builtin().to_string(),
            harness: TemplateKind::Harness.builtin().to_string(),
        }
    }
}

impl StagePromptSet {
    /// Built-in templates, overridden by any same-named file in `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::default();
        for kind in TemplateKind::ALL {
            let p = dir.join(kind.file_name());
            if p.is_file() {
                let text = std::fs::read_to_string(&p).map_err(|e| PromptError::Io(format!("{}: {e}", p.display())))?;
                *set.get_mut(kind) = text;
            }
        }
        Ok(set)
    }

    pub fn get(&self, kind: TemplateKind) -> &str {
        match kind {
            TemplateKind::Formulation => &self.formulation,
            TemplateKind::Refinement => &self.refinement,
            TemplateKind::Realization => &self.realization,
            TemplateKind::Baseline => &self.baseline,
            TemplateKind::Distillation => &self.distillation,
            TemplateKind::Harness => &self.harness,
        }
    }

    fn get_mut(&mut self, kind: TemplateKind) -> &mut String {
        match kind {
            TemplateKind::Formulation => &mut self.formulation,
            TemplateKind::Refinement => &mut self.refinement,
            TemplateKind::Realization => &mut self.realization,
            TemplateKind::Baseline => &mut self.baseline,
            TemplateKind::Distillation => &mut self.distillation,
            TemplateKind::Harness => &mut self.harness,
        }
    }

    pub fn formulation(&self, ir: &str) -> Result<String, PromptError> {
        render(&self.formulation, &[("ir", ir)])
    }

    pub fn refinement(&self, code: &str, advice: &str, analysis: &str) -> Result<String, PromptError> {
        render(&self.refinement, &[("code", code), ("advice", advice), ("analysis", analysis)])
    }

    pub fn realization(&self, code: &str, advice: &str, analysis: &str) -> Result<String, PromptError> {
        render(&self.realization, &[("code", code), ("advice", advice), ("analysis", analysis)])
    }

    pub fn baseline(&self, code: &str) -> Result<String, PromptError> {
        render(&self.baseline, &[("code", code)])
    }

    pub fn distillation(&self, unopt: &str, opt: &str) -> Result<String, PromptError> {
        render(&self.distillation, &[("ir", unopt), ("opt", opt)])
    }

    pub fn harness(&self, ll_text: &str) -> Result<String, PromptError> {
        render(&self.harness, &[("ll_text", ll_text)])
    }
}
