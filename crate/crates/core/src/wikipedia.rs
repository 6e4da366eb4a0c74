//! Streaming parser for MediaWiki XML exports (pages-articles dumps).
//!
//! Yields main-namespace, non-redirect articles in dump order with constant
//! memory per article. Malformed pages are skipped and counted; a truncated
//! stream surfaces as an error after the complete articles.

use std::io::BufRead;

use chrono::{DateTime, Utc};
use quick_xml::events::Event;
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One article as read from the dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleRecord {
    pub page_id: u64,
    pub title: String,
    pub revision_timestamp: DateTime<Utc>,
    pub wikitext: String,
}

#[derive(Debug, Error)]
pub enum WikipediaError {
    #[error("xml error at byte {position}")]
    Xml {
        #[source]
        source: quick_xml::Error,
        position: u64,
    },
}

/// Iterator over the articles of a dump.
pub struct DumpParser<R: BufRead> {
    reader: Reader<R>,
    buf: Vec<u8>,
    done: bool,
    skipped_malformed: usize,
}

impl<R: BufRead> DumpParser<R> {
    /// Pages skipped because a `<page>` element was missing required parts.
    pub fn skipped_malformed(&self) -> usize {
        self.skipped_malformed
    }
}

/// Parse a pages-articles XML stream.
pub fn parse_wikipedia_dump<R: BufRead>(stream: R) -> DumpParser<R> {
    let mut reader = Reader::from_reader(stream);
    reader.config_mut().trim_text(false);
    DumpParser { reader, buf: Vec::new(), done: false, skipped_malformed: 0 }
}

#[derive(Default)]
struct PartialPage {
    title: Option<String>,
    namespace: Option<i64>,
    page_id: Option<u64>,
    redirect: bool,
    timestamp: Option<DateTime<Utc>>,
    text: Option<String>,
}

impl<R: BufRead> Iterator for DumpParser<R> {
    type Item = Result<ArticleRecord, WikipediaError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            match self.next_page() {
                Ok(Some(PageOutcome::Article(article))) => return Some(Ok(article)),
                Ok(Some(PageOutcome::Skipped)) => continue,
                Ok(None) => {
                    self.done = true;
                    return None;
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
        }
    }
}

enum PageOutcome {
    Article(ArticleRecord),
    Skipped,
}

impl<R: BufRead> DumpParser<R> {
    fn xml_err(&self, source: quick_xml::Error) -> WikipediaError {
        WikipediaError::Xml { source, position: self.reader.buffer_position() }
    }

    fn truncated(&self, element: &str) -> WikipediaError {
        self.xml_err(quick_xml::errors::IllFormedError::MissingEndTag(element.to_string()).into())
    }

    fn read_event(&mut self) -> Result<Event<'static>, WikipediaError> {
        self.buf.clear();
        match self.reader.read_event_into(&mut self.buf) {
            Ok(event) => Ok(event.into_owned()),
            Err(source) => {
                Err(WikipediaError::Xml { source, position: self.reader.buffer_position() })
            }
        }
    }

    /// Text content of the element whose start tag was just read, with
    /// character and predefined entity references resolved.
    fn element_text(&mut self) -> Result<String, WikipediaError> {
        let mut text = String::new();
        let mut depth = 0usize;
        loop {
            match self.read_event()? {
                Event::Text(t) => {
                    let cow = t.xml10_content().map_err(|e| self.xml_err(e.into()))?;
                    text.push_str(&cow);
                }
                Event::CData(c) => {
                    text.push_str(&String::from_utf8_lossy(&c));
                }
                Event::GeneralRef(r) => {
                    if let Some(ch) = r.resolve_char_ref().map_err(|e| self.xml_err(e))? {
                        text.push(ch);
                    } else {
                        let name = r.decode().map_err(|e| self.xml_err(e.into()))?;
                        match name.as_ref() {
                            "amp" => text.push('&'),
                            "lt" => text.push('<'),
                            "gt" => text.push('>'),
                            "quot" => text.push('"'),
                            "apos" => text.push('\''),
                            other => {
                                text.push('&');
                                text.push_str(other);
                                text.push(';');
                            }
                        }
                    }
                }
                Event::Start(_) => depth += 1,
                Event::End(_) => {
                    if depth == 0 {
                        return Ok(text);
                    }
                    depth -= 1;
                }
                Event::Eof => return Err(self.truncated("element")),
                _ => {}
            }
        }
    }

    fn skip_element(&mut self) -> Result<(), WikipediaError> {
        let mut depth = 0usize;
        loop {
            match self.read_event()? {
                Event::Start(_) => depth += 1,
                Event::End(_) => {
                    if depth == 0 {
                        return Ok(());
                    }
                    depth -= 1;
                }
                Event::Eof => return Err(self.truncated("element")),
                _ => {}
            }
        }
    }

    /// Advance to the next `<page>` and collect it. `Ok(None)` at end of dump.
    fn next_page(&mut self) -> Result<Option<PageOutcome>, WikipediaError> {
        loop {
            match self.read_event()? {
                Event::Start(start) if start.local_name().as_ref() == b"page" => {
                    return self.collect_page();
                }
                Event::Eof => return Ok(None),
                _ => {}
            }
        }
    }

    fn collect_page(&mut self) -> Result<Option<PageOutcome>, WikipediaError> {
        let mut page = PartialPage::default();
        loop {
            match self.read_event()? {
                Event::Start(start) => match start.local_name().as_ref() {
                    b"title" => page.title = Some(self.element_text()?),
                    b"ns" => page.namespace = self.element_text()?.trim().parse().ok(),
                    b"id" if page.page_id.is_none() => {
                        page.page_id = self.element_text()?.trim().parse().ok();
                    }
                    b"redirect" => {
                        page.redirect = true;
                        self.skip_element()?;
                    }
                    b"revision" => self.collect_revision(&mut page)?,
                    _ => self.skip_element()?,
                },
                Event::Empty(start) if start.local_name().as_ref() == b"redirect" => {
                    page.redirect = true;
                }
                Event::End(end) if end.local_name().as_ref() == b"page" => {
                    return Ok(Some(self.finish_page(page)));
                }
                Event::Eof => return Err(self.truncated("page")),
                _ => {}
            }
        }
    }

    fn collect_revision(&mut self, page: &mut PartialPage) -> Result<(), WikipediaError> {
        loop {
            match self.read_event()? {
                Event::Start(start) => match start.local_name().as_ref() {
                    b"timestamp" => {
                        let raw = self.element_text()?;
                        page.timestamp = DateTime::parse_from_rfc3339(raw.trim())
                            .ok()
                            .map(|t| t.with_timezone(&Utc));
                    }
                    b"text" => page.text = Some(self.element_text()?),
                    _ => self.skip_element()?,
                },
                Event::End(end) if end.local_name().as_ref() == b"revision" => return Ok(()),
                Event::Eof => return Err(self.truncated("revision")),
                _ => {}
            }
        }
    }

    fn finish_page(&mut self, page: PartialPage) -> PageOutcome {
        if page.namespace != Some(0) || page.redirect {
            return PageOutcome::Skipped;
        }
        match (page.page_id, page.title, page.timestamp, page.text) {
            (Some(page_id), Some(title), Some(revision_timestamp), Some(wikitext)) => {
                PageOutcome::Article(ArticleRecord { page_id, title, revision_timestamp, wikitext })
            }
            _ => {
                self.skipped_malformed += 1;
                log::warn!("skipping malformed page element near byte {}", self.reader.buffer_position());
                PageOutcome::Skipped
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn page(id: u64, ns: i64, title: &str, text: &str, redirect: bool) -> String {
        let redirect_tag = if redirect { "<redirect title=\"Elsewhere\" />" } else { "" };
        format!(
            "<page><title>{title}</title><ns>{ns}</ns><id>{id}</id>{redirect_tag}\
             <revision><id>{rev}</id><timestamp>2022-06-20T00:00:00Z</timestamp>\
             <text bytes=\"{len}\">{text}</text></revision></page>",
            rev = id * 10,
            len = text.len(),
        )
    }

    fn dump(pages: &[String]) -> String {
        format!(
            "<mediawiki xmlns=\"http://www.mediawiki.org/xml/export-0.10/\" xml:lang=\"en\">{}</mediawiki>",
            pages.join("")
        )
    }

    #[test]
    fn redirects_are_excluded() {
        let xml = dump(&[
            page(1, 0, "Berlin", "[[Germany]] capital.", false),
            page(2, 0, "B-Town", "#REDIRECT [[Berlin]]", true),
            page(3, 0, "Germany", "A country.", false),
        ]);
        let articles: Vec<_> = parse_wikipedia_dump(Cursor::new(xml))
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(articles.len(), 2);
        assert_eq!(articles[0].title, "Berlin");
        assert_eq!(articles[0].page_id, 1);
        assert_eq!(articles[1].title, "Germany");
    }

    #[test]
    fn empty_document_yields_nothing() {
        let xml = dump(&[]);
        let articles: Vec<_> = parse_wikipedia_dump(Cursor::new(xml))
            .collect::<Result<Vec<_>, _>>()
            .unwrap();
        assert!(articles.is_empty());
    }

    #[test]
    fn talk_namespace_is_excluded() {
        let xml = dump(&[page(5, 1, "Talk:Berlin", "chatter", false)]);
        let articles: Vec<_> = parse_wikipedia_dump(Cursor::new(xml))
            .collect::<Result<Vec<_>, _>>()
            .unwrap();
        assert!(articles.is_empty());
    }

    #[test]
    fn entities_in_text_are_unescaped() {
        let xml = dump(&[page(7, 0, "AT&amp;T", "Research &amp; development.", false)]);
        let articles: Vec<_> = parse_wikipedia_dump(Cursor::new(xml))
            .collect::<Result<Vec<_>, _>>()
            .unwrap();
        assert_eq!(articles[0].title, "AT&T");
        assert_eq!(articles[0].wikitext, "Research & development.");
    }

    #[test]
    fn malformed_page_is_skipped_and_counted() {
        let xml = dump(&[
            "<page><title>NoId</title><ns>0</ns></page>".to_string(),
            page(9, 0, "Fine", "ok", false),
        ]);
        let mut parser = parse_wikipedia_dump(Cursor::new(xml));
        let articles: Vec<_> = parser.by_ref().collect::<Result<Vec<_>, _>>().unwrap();
        assert_eq!(articles.len(), 1);
        assert_eq!(parser.skipped_malformed(), 1);
    }

    #[test]
    fn truncated_stream_errors_after_complete_articles() {
        let page_one = page(1, 0, "Berlin", "text", false);
        let xml = format!(
            "<mediawiki>{page_one}<page><title>Cut</title><ns>0</ns><id>2</id><revision>"
        );
        let mut parser = parse_wikipedia_dump(Cursor::new(xml));
        assert!(parser.next().unwrap().is_ok());
        assert!(parser.next().unwrap().is_err());
        assert!(parser.next().is_none());
    }
}
