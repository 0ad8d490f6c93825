//! One-shot prompt templates and placeholder substitution.

use std::path::{Path, PathBuf};

use crate::assets;
use crate::decompose::{self, TripartiteKernel};
use crate::types::KernelTask;

use super::Stage;

pub const PLACEHOLDERS: [&str; 7] = [
    "example_pytorch_reference",
    "example_pytorch_reference_prefix",
    "example_pytorch_reference_suffix",
    "example_generated_cuda_kernel",
    "given_pytorch_code",
    "given_prefix",
    "given_suffix",
];

pub const INFILL_FILE: &str = "infill_prompt.txt";
pub const GENERATE_FILE: &str = "generate_prompt.txt";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("no input for placeholder `{{{0}}}`")]
    MissingPlaceholderInput(&'static str),
    #[error("template not found: {}", .0.display())]
    TemplateNotFound(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub infill: String,
    pub generate: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self { infill: assets::INFILL_TEMPLATE.to_string(), generate: assets::GENERATE_TEMPLATE.to_string() }
    }
}

impl Templates {
    /// Loads `infill_prompt.txt` and `generate_prompt.txt` from `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|_| PromptError::TemplateNotFound(path))
        };
        Ok(Self { infill: read(INFILL_FILE)?, generate: read(GENERATE_FILE)? })
    }

    pub fn for_stage(&self, stage: Stage) -> &str {
        match stage {
            Stage::Infill => &self.infill,
            Stage::Generate => &self.generate,
        }
    }
}

/// Byte spans of `{placeholder}` occurrences in `template`, with the name.
pub fn placeholder_spans(template: &str) -> Vec<(std::ops::Range<usize>, &'static str)> {
    let mut out = Vec::new();
    let mut i = 0;
    while let Some(off) = template[i..].find('{') {
        let start = i + off;
        let hit = PLACEHOLDERS.iter().find(|p| {
            let rest = &template[start + 1..];
            rest.starts_with(**p) && rest[p.len()..].starts_with('}')
        });
        match hit {
            Some(p) => {
                let end = start + p.len() + 2;
                out.push((start..end, *p));
                i = end;
            }
            None => i = start + 1,
        }
    }
    out
}

/// Substitutes placeholders in one left-to-right pass; inserted text is never
/// rescanned. Every placeholder present must have a non-empty value.
pub fn render(template: &str, value: impl Fn(&'static str) -> Option<String>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() * 2);
    let mut last = 0;
    for (span, name) in placeholder_spans(template) {
        let v = value(name).filter(|v| !v.trim().is_empty()).ok_or(PromptError::MissingPlaceholderInput(name))?;
        out.push_str(&template[last..span.start]);
        out.push_str(&v);
        last = span.end;
    }
    out.push_str(&template[last..]);
    Ok(out)
}

/// Renders the stage template for `task`. The infill stage needs the
/// scaffold decomposed from the task's paired kernel.
pub fn build_prompt(
    task: &KernelTask,
    stage: Stage,
    templates: &Templates,
    scaffold: Option<&TripartiteKernel>,
) -> Result<String, PromptError> {
    let example = decompose::decompose(assets::EXAMPLE_NEW_ARCH).expect("shipped example decomposes");
    render(templates.for_stage(stage), |name| match name {
        "example_pytorch_reference" => Some(assets::EXAMPLE_REFERENCE.to_string()),
        "example_pytorch_reference_prefix" => Some(example.prefix.clone()),
        "example_pytorch_reference_suffix" => Some(example.suffix.clone()),
        "example_generated_cuda_kernel" => Some(assets::EXAMPLE_NEW_ARCH.to_string()),
        "given_pytorch_code" => Some(task.reference_source.clone()),
        "given_prefix" => scaffold.map(|s| s.prefix.clone()),
        "given_suffix" => scaffold.map(|s| s.suffix.clone()),
        _ => None,
    })
}
