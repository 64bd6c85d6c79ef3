//! Pass descriptions from the LLVM pass documentation (`Passes.rst`, or the
//! rendered `Passes.html`).

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

/// Documentation sections keyed by registry string (`loop-vectorize`).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PassDocs {
    sections: BTreeMap<String, String>,
}

fn title_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(?:``)?-?([A-Za-z0-9][A-Za-z0-9_.<>-]*)(?:``)?\s*:\s*(.+?)\s*$").expect("valid regex")
    })
}

fn is_underline(line: &str) -> bool {
    let t = line.trim_end();
    t.len() >= 3 && t.chars().all(|c| matches!(c, '-' | '=' | '~' | '^'))
}

impl PassDocs {
    pub fn parse(source: &str) -> Self {
        let text = if looks_like_html(source) {
            html_to_sections(source)
        } else {
            source.replace("\r\n", "\n")
        };
        let lines: Vec<&str> = text.lines().collect();

        // (line index, name, title)
        let mut heads = Vec::new();
        for i in 0..lines.len().saturating_sub(1) {
            if is_underline(lines[i + 1]) {
                if let Some(c) = title_re().captures(lines[i].trim()) {
                    heads.push((i, c[1].to_string(), c[2].to_string()));
                } else {
                    heads.push((i, String::new(), String::new()));
                }
            }
        }

        let mut sections = BTreeMap::new();
        for (k, (start, name, title)) in heads.iter().enumerate() {
            if name.is_empty() {
                continue;
            }
            let end = heads.get(k + 1).map(|h| h.0).unwrap_or(lines.len());
            let body = lines[start + 2..end]
                .iter()
                .map(|l| l.trim())
                .collect::<Vec<_>>()
                .join("\n");
            let body = collapse_paragraphs(&body);
            let desc = if body.is_empty() {
                format!("{title}.")
            } else {
                format!("{title}. {body}")
            };
            sections.entry(name.clone()).or_insert(desc);
        }
        PassDocs { sections }
    }

    pub fn get(&self, registry_name: &str) -> Option<&str> {
        self.sections.get(registry_name).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }
}

/// Joins wrapped lines within paragraphs and separates paragraphs by a blank line.
fn collapse_paragraphs(body: &str) -> String {
    body.split("\n\n")
        .map(|p| p.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn looks_like_html(source: &str) -> bool {
    let head = &source[..source.len().min(4096)].to_ascii_lowercase();
    head.contains("<html") || head.contains("<h2") || head.contains("<h3") || head.contains("<section")
}

/// Rewrites rendered HTML into the same title/underline layout as the rst
/// source so one parser handles both.
fn html_to_sections(html: &str) -> String {
    static HEADING: OnceLock<Regex> = OnceLock::new();
    static TAG: OnceLock<Regex> = OnceLock::new();
    static PARA_END: OnceLock<Regex> = OnceLock::new();
    let heading = HEADING.get_or_init(|| Regex::new(r"(?is)<h[1-6][^>]*>(.*?)</h[1-6]>").expect("valid regex"));
    let tag = TAG.get_or_init(|| Regex::new(r"(?s)<[^>]+>").expect("valid regex"));
    let para_end = PARA_END.get_or_init(|| Regex::new(r"(?i)</(p|pre|li|ul|ol|div|section)>").expect("valid regex"));

    let with_heads = heading.replace_all(html, |c: &regex::Captures| {
        let inner = tag.replace_all(&c[1], "");
        let inner = unescape(inner.trim()).replace('¶', "");
        let inner = inner.split_whitespace().collect::<Vec<_>>().join(" ");
        format!("\n\n{inner}\n{}\n\n", "-".repeat(inner.len().max(3)))
    });
    let with_paras = para_end.replace_all(&with_heads, "\n\n");
    unescape(&tag.replace_all(&with_paras, ""))
}

fn unescape(s: &str) -> String {
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&nbsp;", " ")
        .replace("&amp;", "&")
}

/// Splits `LoopVectorizePass` into `Loop Vectorize Pass`.
fn split_camel(id: &str) -> String {
    let mut out = String::new();
    let chars: Vec<char> = id.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if i > 0 && c.is_uppercase() {
            let prev = chars[i - 1];
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            if prev.is_lowercase() || (prev.is_uppercase() && next_lower) {
                out.push(' ');
            }
        }
        out.push(c);
    }
    out
}

/// Description used when the documentation has no section for a pass. It
/// always contains the registry string.
pub fn fallback_description(id: &str, registry_names: &[String]) -> String {
    let name = registry_names.first().map(String::as_str).unwrap_or(id);
    let words = name.replace(['-', '<', '>', '_'], " ");
    format!(
        "{} (registered as \"{}\"): {}.",
        split_camel(id),
        name,
        words.split_whitespace().collect::<Vec<_>>().join(" ")
    )
}

/// Maps each pass id to its documentation paragraph, falling back to a
/// synthesized description when the docs have nothing.
pub fn attach_descriptions(
    ids: &[(String, Vec<String>)],
    docs_source: &str,
) -> BTreeMap<String, String> {
    let docs = PassDocs::parse(docs_source);
    ids.iter()
        .map(|(id, names)| {
            let desc = names
                .iter()
                .find_map(|n| docs.get(n))
                .map(str::to_string)
                .unwrap_or_else(|| fallback_description(id, names));
            (id.clone(), desc)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const RST: &str = "\
Transform Passes
================

This section describes the LLVM Transform Passes.

``dce``: Dead Code Elimination
------------------------------

Dead code elimination is similar to dead instruction elimination, but it
rechecks instructions that were used by removed instructions.

``-loop-vectorize``: Loop Vectorization
---------------------------------------

The loop vectorizer widens scalar instructions into vector instructions.

It can also interleave iterations.
";

    fn ids(list: &[(&str, &str)]) -> Vec<(String, Vec<String>)> {
        list.iter().map(|(i, n)| (i.to_string(), vec![n.to_string()])).collect()
    }

    #[test]
    fn parses_rst_sections_with_and_without_dash() {
        let docs = PassDocs::parse(RST);
        assert_eq!(docs.len(), 2);
        assert_eq!(
            docs.get("loop-vectorize").unwrap(),
            "Loop Vectorization. The loop vectorizer widens scalar instructions into vector instructions.\n\nIt can also interleave iterations."
        );
        assert!(docs.get("dce").unwrap().starts_with("Dead Code Elimination. Dead code elimination is similar"));
    }

    #[test]
    fn missing_sections_fall_back_to_registry_string() {
        let map = attach_descriptions(&ids(&[("LoopVectorizePass", "loop-vectorize"), ("LICMPass", "licm")]), RST);
        assert!(map["LoopVectorizePass"].contains("vectorizer"));
        assert!(map["LICMPass"].contains("\"licm\""));
        assert_eq!(map["LICMPass"], "LICM Pass (registered as \"licm\"): licm.");
    }

    #[test]
    fn empty_docs_give_all_fallbacks() {
        let map = attach_descriptions(&ids(&[("DCEPass", "dce")]), "");
        assert!(map["DCEPass"].contains("\"dce\""));
    }

    #[test]
    fn html_sections() {
        let html = r##"<html><body><section id="dce"><h3><code class="docutils literal"><span class="pre">dce</span></code>: Dead Code Elimination<a class="headerlink" href="#dce">¶</a></h3>
<p>Removes dead &amp; unused code.</p></section></body></html>"##;
        let docs = PassDocs::parse(html);
        assert_eq!(docs.get("dce").unwrap(), "Dead Code Elimination. Removes dead & unused code.");
    }

    #[test]
    fn camel_split() {
        assert_eq!(split_camel("LoopVectorizePass"), "Loop Vectorize Pass");
        assert_eq!(split_camel("SROAPass"), "SROA Pass");
    }
}
