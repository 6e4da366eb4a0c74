//! Leading-paragraph extraction from raw wiki markup.
//!
//! The lead is everything strictly before the first `==` heading line.
//! Comments, templates, ref tags, file/image links and tables are removed;
//! `[[target|surface]]` and `[[target]]` links become [`AnchorSpan`]s with
//! the surface text inlined; bold/italic quote markers are stripped.
//!
//! All offsets count unicode scalar values, half-open.

use serde::{Deserialize, Serialize};

/// A link occurrence in extracted plain text.
///
/// Invariant: slicing the paragraph text at `[char_start, char_end)` (in
/// unicode scalars) reproduces `surface` exactly. `target_title` is the
/// link target as written; normalization happens at resolution time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorSpan {
    pub surface: String,
    pub target_title: String,
    pub char_start: usize,
    pub char_end: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub qid: Option<String>,
}

/// Extraction quality flag carried with each paragraph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionQuality {
    #[default]
    Clean,
    /// Unbalanced template or table braces; content stripped to paragraph end.
    UnbalancedMarkup,
}

/// A leading paragraph: plain text plus its anchor spans, sorted by start
/// offset and non-overlapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub doc_id: String,
    pub source_title: String,
    pub text: String,
    pub anchors: Vec<AnchorSpan>,
    #[serde(default)]
    pub quality: ExtractionQuality,
}

/// Slice a string by unicode-scalar offsets. Test and validation helper.
pub fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end.saturating_sub(start)).collect()
}

/// Extract the leading paragraph of an article's wikitext.
pub fn extract_leading_paragraph(doc_id: &str, source_title: &str, wikitext: &str) -> Paragraph {
    let lead = lead_slice(wikitext);
    let stripped = strip_comments(lead);
    let stripped = strip_ref_tags(&stripped);
    let (stripped, tables_balanced) = strip_tables(&stripped);
    let (stripped, templates_balanced) = strip_templates(&stripped);
    let (text, anchors) = linkify(&stripped);
    let quality = if tables_balanced && templates_balanced {
        ExtractionQuality::Clean
    } else {
        ExtractionQuality::UnbalancedMarkup
    };
    Paragraph {
        doc_id: doc_id.to_string(),
        source_title: source_title.to_string(),
        text,
        anchors,
        quality,
    }
}

/// Everything strictly before the first `==` heading line.
fn lead_slice(wikitext: &str) -> &str {
    let mut offset = 0;
    for line in wikitext.split_inclusive('\n') {
        if line.trim_start().starts_with("==") {
            return &wikitext[..offset];
        }
        offset += line.len();
    }
    wikitext
}

fn strip_comments(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(start) = rest.find("<!--") {
        out.push_str(&rest[..start]);
        match rest[start..].find("-->") {
            Some(end) => rest = &rest[start + end + 3..],
            None => return out, // unterminated comment swallows the remainder
        }
    }
    out.push_str(rest);
    out
}

/// Remove `<ref …>…</ref>` and self-closing `<ref … />`, case-insensitive.
fn strip_ref_tags(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < bytes.len() {
        if matches_ref_open(&s[i..]) {
            // Find end of the opening tag.
            match s[i..].find('>') {
                Some(gt) => {
                    let open_end = i + gt + 1;
                    if s[i..open_end].ends_with("/>") {
                        i = open_end;
                    } else {
                        match find_ci(&s[open_end..], "</ref>") {
                            Some(close) => i = open_end + close + 6,
                            None => return out, // unterminated ref swallows the rest
                        }
                    }
                }
                None => return out,
            }
        } else {
            let ch = s[i..].chars().next().unwrap();
            out.push(ch);
            i += ch.len_utf8();
        }
    }
    out
}

fn matches_ref_open(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() >= 5
        && b[0] == b'<'
        && b[1].eq_ignore_ascii_case(&b'r')
        && b[2].eq_ignore_ascii_case(&b'e')
        && b[3].eq_ignore_ascii_case(&b'f')
        && (b[4] == b' ' || b[4] == b'>' || b[4] == b'/' || b[4] == b'\t' || b[4] == b'\n')
}

fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    if n.is_empty() || h.len() < n.len() {
        return None;
    }
    (0..=h.len() - n.len()).find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

/// Remove brace-delimited regions. Returns `(text, balanced)`; an
/// unbalanced open strips to the end of the paragraph.
fn strip_braced(s: &str, open: &str, close: &str) -> (String, bool) {
    let mut out = String::with_capacity(s.len());
    let mut depth = 0usize;
    let mut i = 0;
    let bytes = s.as_bytes();
    while i < bytes.len() {
        if s[i..].starts_with(open) {
            depth += 1;
            i += open.len();
        } else if s[i..].starts_with(close) && depth > 0 {
            depth -= 1;
            i += close.len();
        } else {
            let ch = s[i..].chars().next().unwrap();
            if depth == 0 {
                out.push(ch);
            }
            i += ch.len_utf8();
        }
    }
    (out, depth == 0)
}

fn strip_templates(s: &str) -> (String, bool) {
    strip_braced(s, "{{", "}}")
}

fn strip_tables(s: &str) -> (String, bool) {
    strip_braced(s, "{|", "|}")
}

/// Strip bold/italic quote markers: any run of two or more apostrophes is
/// markup and is removed; single apostrophes stay.
fn strip_quote_markers(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars().peekable();
    while let Some(ch) = chars.next() {
        if ch == '\'' && chars.peek() == Some(&'\'') {
            while chars.peek() == Some(&'\'') {
                chars.next();
            }
        } else {
            out.push(ch);
        }
    }
    out
}

fn has_prefix_ci(s: &str, prefix: &str) -> bool {
    s.len() >= prefix.len() && s.as_bytes()[..prefix.len()].eq_ignore_ascii_case(prefix.as_bytes())
}

fn is_media_or_category(target: &str) -> bool {
    let t = target.trim_start().trim_start_matches(':').trim_start();
    ["file:", "image:", "category:"].iter().any(|prefix| has_prefix_ci(t, prefix))
}

struct TextBuilder {
    text: String,
    char_len: usize,
    started: bool,
}

impl TextBuilder {
    fn new() -> Self {
        TextBuilder { text: String::new(), char_len: 0, started: false }
    }

    fn push_str(&mut self, s: &str) {
        for ch in s.chars() {
            self.push(ch);
        }
    }

    fn push(&mut self, ch: char) {
        // Leading whitespace (before any content) never reaches the output,
        // keeping offsets stable for anchors recorded later.
        if !self.started {
            if ch.is_whitespace() {
                return;
            }
            self.started = true;
        }
        self.text.push(ch);
        self.char_len += 1;
    }
}

/// Turn stripped markup into plain text plus anchors.
fn linkify(s: &str) -> (String, Vec<AnchorSpan>) {
    let mut out = TextBuilder::new();
    let mut anchors: Vec<AnchorSpan> = Vec::new();
    let mut i = 0;
    let bytes = s.as_bytes();
    while i < bytes.len() {
        if s[i..].starts_with("[[") {
            let Some((inner, after)) = read_bracketed(&s[i..]) else {
                // Unclosed link: emit the brackets literally.
                out.push_str("[[");
                i += 2;
                continue;
            };
            i += after;
            if is_media_or_category(&inner) {
                continue;
            }
            let (target_raw, surface_raw) = match inner.find('|') {
                Some(p) => (&inner[..p], &inner[p + 1..]),
                None => (inner.as_str(), inner.as_str()),
            };
            let target = target_raw.trim();
            let surface = strip_quote_markers(surface_raw);
            if surface.is_empty() {
                continue;
            }
            if target.is_empty() {
                out.push_str(&surface);
                continue;
            }
            // Leading-whitespace suppression may eat the front of a surface
            // at document start; anchor around what actually landed.
            let start = out.char_len;
            out.push_str(&surface);
            let end = out.char_len;
            let landed: String = out.text.chars().skip(start).collect();
            if !landed.is_empty() {
                anchors.push(AnchorSpan {
                    surface: landed,
                    target_title: target.to_string(),
                    char_start: start,
                    char_end: end,
                    qid: None,
                });
            }
        } else if s[i..].starts_with('[') && is_external_link(&s[i + 1..]) {
            match s[i..].find(']') {
                Some(close) => {
                    let inner = &s[i + 1..i + close];
                    if let Some(space) = inner.find(char::is_whitespace) {
                        out.push_str(strip_quote_markers(&inner[space + 1..]).trim_start());
                    }
                    i += close + 1;
                }
                None => {
                    out.push('[');
                    i += 1;
                }
            }
        } else if s[i..].starts_with("''") {
            let run = s[i..].chars().take_while(|&c| c == '\'').count();
            i += run; // apostrophes are one byte each
        } else {
            let ch = s[i..].chars().next().unwrap();
            out.push(ch);
            i += ch.len_utf8();
        }
    }

    let mut text = out.text;
    // Trailing whitespace is dropped, but never into an anchor.
    let floor = anchors.iter().map(|a| a.char_end).max().unwrap_or(0);
    let kept: Vec<char> = text.chars().collect();
    let mut keep_until = kept.len();
    while keep_until > floor && kept[keep_until - 1].is_whitespace() {
        keep_until -= 1;
    }
    if keep_until < kept.len() {
        text = kept[..keep_until].iter().collect();
    }
    (text, anchors)
}

/// Read a `[[…]]` region including nested brackets. Returns the inner text
/// and the byte length consumed, or None when unclosed.
fn read_bracketed(s: &str) -> Option<(String, usize)> {
    debug_assert!(s.starts_with("[["));
    let mut depth = 1usize;
    let mut i = 2;
    let bytes = s.as_bytes();
    while i < bytes.len() {
        if s[i..].starts_with("[[") {
            depth += 1;
            i += 2;
        } else if s[i..].starts_with("]]") {
            depth -= 1;
            i += 2;
            if depth == 0 {
                return Some((s[2..i - 2].to_string(), i));
            }
        } else {
            i += s[i..].chars().next().unwrap().len_utf8();
        }
    }
    None
}

fn is_external_link(after_bracket: &str) -> bool {
    ["http://", "https://", "ftp://", "//"]
        .iter()
        .any(|scheme| has_prefix_ci(after_bracket, scheme))
}

/// Normalize a link target for title lookup: strip any `#fragment`, map
/// underscores to spaces, trim, and uppercase the first character.
pub fn normalize_title(raw: &str) -> String {
    let no_fragment = match raw.find('#') {
        Some(p) => &raw[..p],
        None => raw,
    };
    let spaced = no_fragment.replace('_', " ");
    let trimmed = spaced.trim();
    let mut chars = trimmed.chars();
    match chars.next() {
        Some(first) => {
            let mut out = String::with_capacity(trimmed.len());
            out.extend(first.to_uppercase());
            out.push_str(chars.as_str());
            out
        }
        None => String::new(),
    }
}

/// Resolve anchors against a page-title index. Anchors whose normalized
/// target resolves gain a qid; the rest are dropped and counted.
pub fn resolve_anchor_targets(
    mut paragraph: Paragraph,
    title_index: &std::collections::HashMap<String, String>,
) -> (Paragraph, usize) {
    let mut kept = Vec::with_capacity(paragraph.anchors.len());
    let mut dropped = 0usize;
    for mut anchor in paragraph.anchors {
        match title_index.get(&normalize_title(&anchor.target_title)) {
            Some(qid) => {
                anchor.qid = Some(qid.clone());
                kept.push(anchor);
            }
            None => dropped += 1,
        }
    }
    paragraph.anchors = kept;
    (paragraph, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn extract(wikitext: &str) -> Paragraph {
        extract_leading_paragraph("1", "Test", wikitext)
    }

    #[test]
    fn berlin_sentence_offsets() {
        let p = extract("[[Berlin]] is the capital of [[Germany]].");
        assert_eq!(p.text, "Berlin is the capital of Germany.");
        assert_eq!(p.anchors.len(), 2);
        assert_eq!((p.anchors[0].char_start, p.anchors[0].char_end), (0, 6));
        assert_eq!(p.anchors[0].target_title, "Berlin");
        assert_eq!((p.anchors[1].char_start, p.anchors[1].char_end), (25, 32));
        assert_eq!(p.anchors[1].target_title, "Germany");
        for a in &p.anchors {
            assert_eq!(char_slice(&p.text, a.char_start, a.char_end), a.surface);
        }
    }

    #[test]
    fn text_without_links_has_no_anchors() {
        let p = extract("Plain prose without links.");
        assert_eq!(p.text, "Plain prose without links.");
        assert!(p.anchors.is_empty());
        assert_eq!(p.quality, ExtractionQuality::Clean);
    }

    #[test]
    fn piped_link_keeps_surface_and_target() {
        let p = extract("The [[ATP Tour|men's tennis circuit]] resumed.");
        assert_eq!(p.text, "The men's tennis circuit resumed.");
        assert_eq!(p.anchors[0].surface, "men's tennis circuit");
        assert_eq!(p.anchors[0].target_title, "ATP Tour");
    }

    #[test]
    fn lead_stops_at_first_heading() {
        let p = extract("Intro with [[Link]].\n\nStill lead.\n== History ==\nBody with [[Other]].");
        assert_eq!(p.text, "Intro with Link.\n\nStill lead.");
        assert_eq!(p.anchors.len(), 1);
    }

    #[test]
    fn templates_comments_refs_files_tables_are_removed() {
        let src = "{{Infobox|name=[[X]]}}'''Berlin'''<!-- note --> is<ref name=\"a\">cite [[Y]]</ref> big.<ref group=x/> {{lang|de|Berlin}}\n{| class=\"wikitable\"\n|-\n| cell\n|}\n[[File:Berlin.jpg|thumb|View of [[Berlin]]]]End."
            .to_string();
        let p = extract(&src);
        assert_eq!(p.text, "Berlin is big. \n\nEnd.");
        assert!(p.anchors.is_empty());
        assert_eq!(p.quality, ExtractionQuality::Clean);
    }

    #[test]
    fn unbalanced_template_strips_to_end_and_flags() {
        let p = extract("Start {{broken template [[X]] never closes");
        assert_eq!(p.text, "Start");
        assert_eq!(p.quality, ExtractionQuality::UnbalancedMarkup);
        assert!(p.anchors.is_empty());
    }

    #[test]
    fn bare_link_uses_target_as_surface() {
        let p = extract("See [[Tennis]] today.");
        assert_eq!(p.text, "See Tennis today.");
        assert_eq!(p.anchors[0].surface, "Tennis");
        assert_eq!(p.anchors[0].target_title, "Tennis");
    }

    #[test]
    fn bold_italic_markers_stripped_inside_surfaces() {
        let p = extract("[[Berlin|'''Berlin''']] has ''style''.");
        assert_eq!(p.text, "Berlin has style.");
        assert_eq!(p.anchors[0].surface, "Berlin");
    }

    #[test]
    fn external_links_keep_label_only() {
        let p = extract("Site [https://example.org the docs] and bare [https://example.org] end.");
        assert_eq!(p.text, "Site the docs and bare  end.");
    }

    #[test]
    fn unicode_offsets_count_scalars() {
        let p = extract("Müller über [[Berlin]].");
        let a = &p.anchors[0];
        assert_eq!(char_slice(&p.text, a.char_start, a.char_end), "Berlin");
        assert_eq!(a.char_start, 12);
    }

    #[test]
    fn anchors_sorted_and_non_overlapping() {
        let p = extract("[[A]][[B]] [[C|c text]]");
        let mut prev_end = 0;
        for a in &p.anchors {
            assert!(a.char_start >= prev_end);
            assert!(a.char_start < a.char_end);
            prev_end = a.char_end;
        }
    }

    #[test]
    fn normalize_title_rules() {
        assert_eq!(normalize_title("ATP_Tour"), "ATP Tour");
        assert_eq!(normalize_title("berlin"), "Berlin");
        assert_eq!(normalize_title("Berlin#History"), "Berlin");
        assert_eq!(normalize_title("  tennis court "), "Tennis court");
        assert_eq!(normalize_title("#section-only"), "");
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn word() -> impl Strategy<Value = String> {
            "[A-Za-zÀ-ÿ0-9]{1,8}"
        }

        fn title() -> impl Strategy<Value = String> {
            proptest::collection::vec(word(), 1..3).prop_map(|w| w.join(" "))
        }

        fn fragment() -> impl Strategy<Value = String> {
            prop_oneof![
                word().prop_map(|w| format!("{w} ")),
                Just("\n".to_string()),
                Just("\n\n".to_string()),
                title().prop_map(|t| format!("[[{t}]] ")),
                (title(), title()).prop_map(|(t, s)| format!("[[{t}|{s}]] ")),
                (title(), title()).prop_map(|(t, s)| format!("[[{t}|'''{s}''']] ")),
                word().prop_map(|w| format!("{{{{Infobox|{w}}}}} ")),
                word().prop_map(|w| format!("<!-- {w} --> ")),
                word().prop_map(|w| format!("<ref>{w}</ref> ")),
                (word(), title()).prop_map(|(f, c)| format!("[[File:{f}.jpg|thumb|[[{c}]]]] ")),
                word().prop_map(|w| format!("''{w}'' ")),
                word().prop_map(|w| format!("[https://example.org {w}] ")),
                Just("{{unclosed ".to_string()),
                word().prop_map(|w| format!("== {w} ==\nbody [[Ignored]]\n")),
            ]
        }

        proptest! {
            // Offsets invariant: slicing the text at every anchor span
            // reproduces the surface; anchors stay sorted and disjoint.
            #[test]
            fn anchor_offsets_slice_back_to_surfaces(
                fragments in proptest::collection::vec(fragment(), 0..12)
            ) {
                let wikitext = fragments.concat();
                let p = extract_leading_paragraph("1", "T", &wikitext);
                let mut prev_end = 0;
                for a in &p.anchors {
                    prop_assert!(a.char_start >= prev_end);
                    prop_assert!(a.char_start < a.char_end);
                    prop_assert_eq!(
                        char_slice(&p.text, a.char_start, a.char_end),
                        a.surface.clone()
                    );
                    prop_assert!(!a.target_title.is_empty());
                    prev_end = a.char_end;
                }
                prop_assert!(p.text.chars().count() >= prev_end);
                // Extraction is pure.
                prop_assert_eq!(extract_leading_paragraph("1", "T", &wikitext), p);
            }
        }
    }

    #[test]
    fn resolve_drops_and_counts_unresolved() {
        let p = extract("[[Berlin]] and [[ATP_Tour]] and [[Nowhere]].");
        let mut index = HashMap::new();
        index.insert("Berlin".to_string(), "Q64".to_string());
        index.insert("ATP Tour".to_string(), "Q229285".to_string());
        let (resolved, dropped) = resolve_anchor_targets(p, &index);
        assert_eq!(dropped, 1);
        assert_eq!(resolved.anchors.len(), 2);
        assert_eq!(resolved.anchors[0].qid.as_deref(), Some("Q64"));
        assert_eq!(resolved.anchors[1].qid.as_deref(), Some("Q229285"));
    }
}
