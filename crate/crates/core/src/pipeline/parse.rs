//! Pulling strategies and IR out of model responses.

use std::sync::OnceLock;

use regex::Regex;

use crate::strategy::{OptimizationStrategy, Stage, TransformationAction};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("malformed strategy: {reason}")]
    MalformedStrategy { reason: String, raw: String },
    #[error("response has no <code> region")]
    NoCodeRegion { raw: String },
}

impl ParseError {
    fn malformed(reason: impl Into<String>, raw: &str) -> Self {
        ParseError::MalformedStrategy {
            reason: reason.into(),
            raw: raw.to_string(),
        }
    }

    pub fn raw(&self) -> &str {
        match self {
            ParseError::MalformedStrategy { raw, .. } | ParseError::NoCodeRegion { raw } => raw,
        }
    }
}

/// A `<tag>…</tag>` region found in a response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region<'a> {
    pub content: &'a str,
    /// Further complete regions after the first (ignored).
    pub extra: usize,
}

/// Content of every well-nested `<tag>…</tag>` region, outermost only, in
/// order. A region whose content is a literal `...` (an echo of the prompt's
/// format instruction) is ignored.
pub fn regions<'a>(text: &'a str, tag: &str) -> Vec<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(start) = text[pos..].find(&open).map(|i| i + pos) {
        let body_start = start + open.len();
        let mut depth = 1;
        let mut cursor = body_start;
        let mut end = None;
        while depth > 0 {
            let next_open = text[cursor..].find(&open).map(|i| i + cursor);
            let next_close = text[cursor..].find(&close).map(|i| i + cursor);
            match (next_open, next_close) {
                (_, None) => break,
                (Some(o), Some(c)) if o < c => {
                    depth += 1;
                    cursor = o + open.len();
                }
                (_, Some(c)) => {
                    depth -= 1;
                    cursor = c + close.len();
                    if depth == 0 {
                        end = Some(c);
                    }
                }
            }
        }
        let Some(end) = end else {
            break;
        };
        let content = &text[body_start..end];
        if content.trim() != "..." {
            out.push(content);
        }
        pos = end + close.len();
    }
    out
}

pub fn first_region<'a>(text: &'a str, tag: &str) -> Option<Region<'a>> {
    let all = regions(text, tag);
    let first = *all.first()?;
    if all.len() > 1 {
        log::info!("response has {} <{tag}> regions; using the first", all.len());
    }
    Some(Region {
        content: first,
        extra: all.len() - 1,
    })
}

fn field_re(name: &str) -> Regex {
    Regex::new(&format!(r"(?i)^\s*(?:\d+[.)]\s*)?(?:[-*]\s*)?\**\s*{name}\s*\**\s*:\s*\**\s*(.*)$")).expect("valid regex")
}

fn transformation_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| field_re("transformation"))
}

fn change_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| field_re("change"))
}

fn clean_field(s: &str) -> String {
    s.trim().trim_matches('*').trim().to_string()
}

/// One `<step>` body -> action, if both fields are present.
fn parse_step(step: &str) -> Option<TransformationAction> {
    let mut transformation = None;
    let mut change: Option<Vec<String>> = None;
    for line in step.lines() {
        if let Some(c) = transformation_re().captures(line) {
            transformation = Some(clean_field(&c[1]));
            change = None;
        } else if let Some(c) = change_re().captures(line) {
            change = Some(vec![clean_field(&c[1])]);
        } else if let Some(ch) = change.as_mut() {
            let t = line.trim();
            if !t.is_empty() {
                ch.push(t.to_string());
            }
        }
    }
    let transformation = transformation.filter(|t| !t.is_empty())?;
    let change = change?.into_iter().filter(|s| !s.is_empty()).collect::<Vec<_>>().join(" ");
    if change.is_empty() {
        return None;
    }
    Some(TransformationAction {
        transformation,
        change,
        raw: step.trim().to_string(),
    })
}

fn looks_like_ir(text: &str) -> bool {
    text.lines().any(|l| l.trim_start().starts_with("define "))
}

/// Parses `<step>` blocks from a formulation-style response.
pub fn parse_steps(response: &str) -> Result<OptimizationStrategy, ParseError> {
    let body = match first_region(response, "code") {
        Some(r) => r.content,
        None => {
            log::info!("formulation response has no <code> region; scanning whole text for steps");
            response
        }
    };
    let step_bodies = regions(body, "step");
    let outside: String = {
        let mut s = body.to_string();
        for b in &step_bodies {
            s = s.replacen(b, "", 1);
        }
        s
    };
    if looks_like_ir(&outside) || step_bodies.iter().any(|b| looks_like_ir(b)) {
        return Err(ParseError::malformed("response contains IR instead of steps", response));
    }
    let mut actions = Vec::new();
    for (i, b) in step_bodies.iter().enumerate() {
        match parse_step(b) {
            Some(a) => actions.push(a),
            None => log::warn!("skipping malformed step {}", i + 1),
        }
    }
    if actions.is_empty() {
        return Err(ParseError::malformed("no parseable <step> blocks", response));
    }
    Ok(OptimizationStrategy {
        stage: Stage::Initial,
        actions,
        raw_text: body.trim_matches('\n').to_string(),
    })
}

fn bullet_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:[-*•]|\d+[.)])\s+(.*)$").expect("valid regex"))
}

/// `"Name: rest"` / `"Name. rest"` -> (`Name`, `rest`).
fn split_first_sentence(head: &str) -> (String, String) {
    let cut = [": ", ". "]
        .iter()
        .filter_map(|sep| head.find(sep).map(|i| (i, sep.len())))
        .min();
    match cut {
        Some((i, n)) => (head[..i].trim().to_string(), head[i + n..].trim().to_string()),
        None => (head.trim().trim_end_matches(['.', ':']).to_string(), String::new()),
    }
}

fn action_from_block(lines: &[&str]) -> Option<TransformationAction> {
    let first = lines.first()?;
    let head = bullet_re()
        .captures(first.trim())
        .map(|c| c[1].to_string())
        .unwrap_or_else(|| first.trim().to_string());
    let (transformation, mut change) = split_first_sentence(&head);
    if transformation.is_empty() {
        return None;
    }
    for l in &lines[1..] {
        let t = l.trim();
        if t.is_empty() {
            continue;
        }
        let t = bullet_re().captures(t).map(|c| c[1].to_string()).unwrap_or_else(|| t.to_string());
        if !change.is_empty() {
            change.push(' ');
        }
        change.push_str(&t);
    }
    if change.is_empty() {
        change = transformation.clone();
    }
    Some(TransformationAction {
        transformation,
        change,
        raw: lines.join("\n").trim_end().to_string(),
    })
}

/// Parses the `<advice>` region of a refinement response. Each top-level
/// bullet becomes an action (first sentence = transformation, the rest plus
/// sub-bullets = change); without bullets, paragraphs are used instead.
pub fn parse_advice(response: &str) -> Result<OptimizationStrategy, ParseError> {
    let region = first_region(response, "advice")
        .ok_or_else(|| ParseError::malformed("no complete <advice>…</advice> region", response))?;
    let advice = region.content;
    if advice.trim().is_empty() {
        return Err(ParseError::malformed("empty <advice> region", response));
    }

    let lines: Vec<&str> = advice.lines().collect();
    let is_top = |l: &str| !l.starts_with([' ', '\t']) && bullet_re().is_match(l.trim_end());
    let mut blocks: Vec<Vec<&str>> = Vec::new();
    if lines.iter().any(|l| is_top(l)) {
        for l in &lines {
            if is_top(l) {
                blocks.push(vec![l]);
            } else if let Some(b) = blocks.last_mut() {
                b.push(l);
            }
        }
    } else {
        let mut cur: Vec<&str> = Vec::new();
        for l in &lines {
            if l.trim().is_empty() {
                if !cur.is_empty() {
                    blocks.push(std::mem::take(&mut cur));
                }
            } else {
                cur.push(l);
            }
        }
        if !cur.is_empty() {
            blocks.push(cur);
        }
    }

    let actions: Vec<TransformationAction> = blocks.iter().filter_map(|b| action_from_block(b)).collect();
    if actions.is_empty() {
        return Err(ParseError::malformed("no actions in <advice>", response));
    }
    Ok(OptimizationStrategy {
        stage: Stage::Refined,
        actions,
        raw_text: advice.to_string(),
    })
}

fn strip_fences(text: &str) -> (String, bool) {
    let trimmed = text.trim_matches('\n');
    let lines: Vec<&str> = trimmed.lines().collect();
    let fence = |l: &str| l.trim_start().starts_with("```");
    if lines.len() >= 2 && fence(lines[0]) && fence(lines[lines.len() - 1]) {
        (lines[1..lines.len() - 1].join("\n"), true)
    } else {
        (trimmed.to_string(), false)
    }
}

/// IR inside the first `<code>` region, markdown fences removed, ending in
/// a newline.
pub fn extract_code(response: &str) -> Result<String, ParseError> {
    let region = first_region(response, "code").ok_or_else(|| ParseError::NoCodeRegion {
        raw: response.to_string(),
    })?;
    let (code, stripped) = strip_fences(region.content);
    if stripped {
        log::info!("stripped markdown fences inside <code>");
    }
    if code.trim().is_empty() {
        return Err(ParseError::NoCodeRegion {
            raw: response.to_string(),
        });
    }
    Ok(format!("{}\n", code.trim_end()))
}

/// C++ harness source from a harness-generation response: a `<code>`
/// region if any, else the whole text, fences removed.
pub fn extract_harness_source(response: &str) -> Result<String, ParseError> {
    let body = first_region(response, "code").map(|r| r.content).unwrap_or(response);
    let (src, _) = strip_fences(body);
    if !src.contains("LLVMFuzzerTestOneInput") {
        return Err(ParseError::NoCodeRegion {
            raw: response.to_string(),
        });
    }
    Ok(format!("{}\n", src.trim_end()))
}
