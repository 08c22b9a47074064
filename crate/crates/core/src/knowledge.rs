//! Rendering of document lists into prompt knowledge blocks.

use crate::corpus::Document;

/// Default per-document character budget for prompt rendering.
pub const DEFAULT_DOC_CHAR_BUDGET: usize = 1200;

/// Cuts `text` to at most `budget` characters. Returns the text and whether
/// it was shortened.
pub fn truncate_chars(text: &str, budget: usize) -> (&str, bool) {
    match text.char_indices().nth(budget) {
        Some((byte, _)) => (&text[..byte], true),
        None => (text, false),
    }
}

fn line(doc: &Document, budget: usize) -> String {
    let (text, _) = truncate_chars(&doc.text, budget);
    format!("{} | {}", doc.title, text)
}

/// One `{title} | {text}` line per document, in order.
pub fn render_knowledge<'a>(docs: impl IntoIterator<Item = &'a Document>, budget: usize) -> String {
    docs.into_iter().map(|d| line(d, budget)).collect::<Vec<_>>().join("\n")
}

/// Numbered `knowledge  i : {title} | {text}` lines used by filter prompts.
pub fn render_numbered<'a>(docs: impl IntoIterator<Item = &'a Document>, budget: usize) -> String {
    docs.into_iter()
        .enumerate()
        .map(|(i, d)| format!("knowledge  {i} : {}", line(d, budget)))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_counts_chars() {
        assert_eq!(truncate_chars("héllo", 2), ("hé", true));
        assert_eq!(truncate_chars("héllo", 5), ("héllo", false));
        assert_eq!(truncate_chars("", 0), ("", false));
    }

    #[test]
    fn layouts() {
        let docs = [Document::new("1", "A", "alpha text"), Document::new("2", "B", "beta")];
        assert_eq!(render_knowledge(&docs, 5), "A | alpha\nB | beta");
        assert_eq!(
            render_numbered(&docs, 100),
            "knowledge  0 : A | alpha text\nknowledge  1 : B | beta"
        );
        assert_eq!(render_knowledge(&[], 10), "");
    }
}
