//! Reader and writer for the i2b2 2014 de-identification XML layout:
//!
//! ```text
//! <?xml version="1.0" encoding="UTF-8" ?>
//! <deIdi2b2>
//! <TEXT><![CDATA[...]]></TEXT>
//! <TAGS>
//! <DATE id="P0" start="8" end="18" text="2067-05-03" TYPE="DATE" comment="" />
//! </TAGS>
//! </deIdi2b2>
//! ```
//!
//! The reader is a small hand-rolled scanner rather than a conforming XML
//! parser: the text payload must come back byte-for-byte, and a conforming
//! parser normalizes line endings inside CDATA.

use super::{AnnotatedDocument, CharIndex, CorpusError, PhiSpan, Result};
use crate::tags::PhiClass;

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Resolve overlapping spans by keeping the longer one instead of failing.
    pub keep_longest: bool,
}

#[derive(Debug)]
struct Element {
    name: String,
    attrs: Vec<(String, String)>,
    children: Vec<Node>,
    pos: usize,
}

impl Element {
    fn attr(&self, key: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn child_elements(&self) -> impl Iterator<Item = &Element> {
        self.children.iter().filter_map(|n| match n {
            Node::Element(e) => Some(e),
            Node::Text(_) => None,
        })
    }

    fn text_content(&self) -> String {
        self.children
            .iter()
            .filter_map(|n| match n {
                Node::Text(t) => Some(t.as_str()),
                Node::Element(_) => None,
            })
            .collect()
    }
}

#[derive(Debug)]
enum Node {
    Element(Element),
    Text(String),
}

struct Scanner<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn error(&self, at: usize, message: impl Into<String>) -> CorpusError {
        let (line, column) = line_col(self.src, at);
        CorpusError::Markup {
            line,
            column,
            message: message.into(),
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_until(&mut self, end: &str, what: &str) -> Result<&'a str> {
        let start = self.pos;
        match self.rest().find(end) {
            Some(i) => {
                let body = &self.src[start..start + i];
                self.pos = start + i + end.len();
                Ok(body)
            }
            None => Err(self.error(start, format!("unterminated {what}"))),
        }
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start_matches([' ', '\t', '\r', '\n']);
        self.pos = self.src.len() - trimmed.len();
    }

    fn name(&mut self) -> Result<String> {
        let start = self.pos;
        let len = self
            .rest()
            .find(|c: char| c.is_whitespace() || matches!(c, '/' | '>' | '=' | '<' | '"' | '\''))
            .unwrap_or(self.rest().len());
        if len == 0 {
            return Err(self.error(start, "expected a name"));
        }
        self.pos += len;
        Ok(self.src[start..start + len].to_string())
    }

    /// Skips prolog items and comments; returns true if any were consumed.
    fn skip_misc(&mut self) -> Result<bool> {
        let r = self.rest();
        if r.starts_with("<?") {
            self.pos += 2;
            self.skip_until("?>", "processing instruction")?;
        } else if r.starts_with("<!--") {
            self.pos += 4;
            self.skip_until("-->", "comment")?;
        } else if r.starts_with("<!DOCTYPE") {
            self.pos += 9;
            self.skip_until(">", "doctype")?;
        } else {
            return Ok(false);
        }
        Ok(true)
    }

    fn element(&mut self) -> Result<Element> {
        let open = self.pos;
        if !self.rest().starts_with('<') {
            return Err(self.error(open, "expected `<`"));
        }
        self.pos += 1;
        let name = self.name()?;
        let mut attrs = Vec::new();
        loop {
            self.skip_ws();
            let r = self.rest();
            if r.starts_with("/>") {
                self.pos += 2;
                return Ok(Element {
                    name,
                    attrs,
                    children: Vec::new(),
                    pos: open,
                });
            }
            if r.starts_with('>') {
                self.pos += 1;
                break;
            }
            if r.is_empty() {
                return Err(self.error(self.pos, format!("unterminated start tag <{name}>")));
            }
            let key_pos = self.pos;
            let key = self.name()?;
            self.skip_ws();
            if !self.rest().starts_with('=') {
                return Err(self.error(self.pos, format!("expected `=` after attribute {key}")));
            }
            self.pos += 1;
            self.skip_ws();
            let quote = match self.rest().chars().next() {
                Some(q @ ('"' | '\'')) => q,
                _ => return Err(self.error(self.pos, "expected quoted attribute value")),
            };
            self.pos += 1;
            let value_pos = self.pos;
            let raw = match self.rest().find(quote) {
                Some(i) => &self.src[value_pos..value_pos + i],
                None => return Err(self.error(value_pos, "unterminated attribute value")),
            };
            if let Some(i) = raw.find('<') {
                return Err(self.error(value_pos + i, "`<` in attribute value"));
            }
            self.pos = value_pos + raw.len() + 1;
            if attrs.iter().any(|(k, _)| *k == key) {
                return Err(self.error(key_pos, format!("duplicate attribute {key}")));
            }
            let value = unescape(raw).map_err(|(off, msg)| self.error(value_pos + off, msg))?;
            attrs.push((key, value));
        }

        let mut children = Vec::new();
        let mut text = String::new();
        loop {
            let r = self.rest();
            if r.is_empty() {
                return Err(self.error(open, format!("element <{name}> is never closed")));
            }
            if r.starts_with("</") {
                let close = self.pos;
                self.pos += 2;
                let end_name = self.name()?;
                self.skip_ws();
                if !self.rest().starts_with('>') {
                    return Err(self.error(self.pos, "expected `>`"));
                }
                self.pos += 1;
                if end_name != name {
                    return Err(self.error(
                        close,
                        format!("closing tag </{end_name}> does not match <{name}>"),
                    ));
                }
                if !text.is_empty() {
                    children.push(Node::Text(text));
                }
                return Ok(Element {
                    name,
                    attrs,
                    children,
                    pos: open,
                });
            }
            if r.starts_with("<![CDATA[") {
                self.pos += 9;
                text.push_str(self.skip_until("]]>", "CDATA section")?);
            } else if self.skip_misc()? {
            } else if r.starts_with('<') {
                if !text.is_empty() {
                    children.push(Node::Text(std::mem::take(&mut text)));
                }
                children.push(Node::Element(self.element()?));
            } else {
                let start = self.pos;
                let len = r.find('<').unwrap_or(r.len());
                let raw = &r[..len];
                if let Some(i) = raw.find("]]>") {
                    return Err(self.error(start + i, "`]]>` outside CDATA"));
                }
                text.push_str(&unescape(raw).map_err(|(off, msg)| self.error(start + off, msg))?);
                self.pos += len;
            }
        }
    }
}

fn line_col(src: &str, at: usize) -> (usize, usize) {
    let before = &src[..at.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    (line, before[line_start..].chars().count() + 1)
}

fn unescape(raw: &str) -> std::result::Result<String, (usize, String)> {
    if !raw.contains('&') {
        return Ok(raw.to_string());
    }
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(i) = rest.find('&') {
        out.push_str(&rest[..i]);
        let offset = raw.len() - rest.len() + i;
        let after = &rest[i + 1..];
        let semi = after
            .find(';')
            .ok_or((offset, "unterminated entity reference".to_string()))?;
        let entity = &after[..semi];
        let ch = match entity {
            "lt" => '<',
            "gt" => '>',
            "amp" => '&',
            "quot" => '"',
            "apos" => '\'',
            _ => {
                let code = if let Some(hex) = entity.strip_prefix("#x") {
                    u32::from_str_radix(hex, 16).ok()
                } else if let Some(dec) = entity.strip_prefix('#') {
                    dec.parse().ok()
                } else {
                    None
                };
                code.and_then(char::from_u32)
                    .ok_or((offset, format!("unknown entity &{entity};")))?
            }
        };
        out.push(ch);
        rest = &after[semi + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn parse_tree(raw: &str) -> Result<Element> {
    let mut sc = Scanner { src: raw, pos: 0 };
    if sc.rest().starts_with('\u{feff}') {
        sc.pos += 3;
    }
    loop {
        sc.skip_ws();
        if !sc.skip_misc()? {
            break;
        }
    }
    if sc.rest().is_empty() {
        return Err(sc.error(sc.pos, "no root element"));
    }
    let root = sc.element()?;
    loop {
        sc.skip_ws();
        if !sc.skip_misc()? {
            break;
        }
    }
    if !sc.rest().is_empty() {
        return Err(sc.error(sc.pos, "content after the root element"));
    }
    Ok(root)
}

/// Parses one i2b2 XML document.
///
/// The `TEXT` payload is kept verbatim. Each child of `TAGS` must carry `id`,
/// `start`, `end`, `text` and `TYPE`; the element name itself is not
/// interpreted.
pub fn parse_document(doc_id: &str, raw: &str, opts: ParseOptions) -> Result<AnnotatedDocument> {
    let root = parse_tree(raw)?;
    let position = |e: &Element| line_col(raw, e.pos);

    let mut texts = root.child_elements().filter(|e| e.name == "TEXT");
    let text_el = texts
        .next()
        .ok_or_else(|| CorpusError::Structure("missing TEXT element".into()))?;
    if let Some(extra) = texts.next() {
        let (line, column) = position(extra);
        return Err(CorpusError::Markup {
            line,
            column,
            message: "more than one TEXT element".into(),
        });
    }
    let text = text_el.text_content();
    let index = CharIndex::new(&text);

    let mut spans = Vec::new();
    for (n, tags) in root.child_elements().filter(|e| e.name == "TAGS").enumerate() {
        if n > 0 {
            let (line, column) = position(tags);
            return Err(CorpusError::Markup {
                line,
                column,
                message: "more than one TAGS element".into(),
            });
        }
        for tag in tags.child_elements() {
            spans.push(parse_tag(tag, &text, &index, raw)?);
        }
    }
    spans.sort_by(|a, b| (a.start, a.end).cmp(&(b.start, b.end)));
    let spans = resolve_overlaps(spans, opts.keep_longest)?;

    Ok(AnnotatedDocument {
        doc_id: doc_id.to_string(),
        text,
        spans,
    })
}

fn parse_tag(tag: &Element, text: &str, index: &CharIndex, raw: &str) -> Result<PhiSpan> {
    let (line, column) = line_col(raw, tag.pos);
    let missing = |attr: &str| CorpusError::Markup {
        line,
        column,
        message: format!("<{}> is missing attribute `{attr}`", tag.name),
    };
    let id = tag.attr("id").ok_or_else(|| missing("id"))?.to_string();
    let offset = |key: &str| -> Result<usize> {
        let v = tag.attr(key).ok_or_else(|| missing(key))?;
        v.trim().parse().map_err(|_| CorpusError::InvalidTag {
            tag_id: id.clone(),
            message: format!("`{key}` is not a non-negative integer: {v:?}"),
        })
    };
    let start = offset("start")?;
    let end = offset("end")?;
    let surface = tag.attr("text").ok_or_else(|| missing("text"))?;
    let ty = tag.attr("TYPE").ok_or_else(|| missing("TYPE"))?;
    let phi_type: PhiClass = ty.parse().map_err(|_| CorpusError::InvalidTag {
        tag_id: id.clone(),
        message: format!("unknown TYPE {ty:?}"),
    })?;
    if start >= end || end > index.len() {
        return Err(CorpusError::Bounds {
            tag_id: id,
            start,
            end,
            len: index.len(),
        });
    }
    let found = index.slice(text, start, end);
    if found != surface {
        return Err(CorpusError::SpanMismatch {
            tag_id: id,
            expected: surface.to_string(),
            found: found.to_string(),
        });
    }
    Ok(PhiSpan {
        id,
        start,
        end,
        phi_type,
        surface: surface.to_string(),
    })
}

fn resolve_overlaps(sorted: Vec<PhiSpan>, keep_longest: bool) -> Result<Vec<PhiSpan>> {
    let mut kept: Vec<PhiSpan> = Vec::with_capacity(sorted.len());
    for span in sorted {
        match kept.last_mut() {
            Some(last) if last.overlaps(&span) => {
                if !keep_longest {
                    return Err(CorpusError::Overlap {
                        first: last.id.clone(),
                        second: span.id,
                    });
                }
                if span.len() > last.len() {
                    *last = span;
                }
            }
            _ => kept.push(span),
        }
    }
    Ok(kept)
}

fn escape_attr(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            '\t' => out.push_str("&#9;"),
            c => out.push(c),
        }
    }
    out
}

/// i2b2 groups the fine-grained TYPEs under a handful of element names.
fn category(class: PhiClass) -> &'static str {
    use PhiClass::*;
    match class {
        Doctor | Patient | Username => "NAME",
        Profession => "PROFESSION",
        City | State | Country | Street | Zip | Hospital | Organization | LocationOther => {
            "LOCATION"
        }
        Age => "AGE",
        Date => "DATE",
        Phone | Fax | Email | Url => "CONTACT",
        Bioid | Device | Healthplan | Idnum | Medicalrecord => "ID",
    }
}

/// Serializes a document in the i2b2 layout.
pub fn write_document(doc: &AnnotatedDocument) -> String {
    let mut out = String::with_capacity(doc.text.len() + 128 * (doc.spans.len() + 2));
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\" ?>\n<deIdi2b2>\n<TEXT><![CDATA[");
    out.push_str(&doc.text.replace("]]>", "]]]]><![CDATA[>"));
    out.push_str("]]></TEXT>\n<TAGS>\n");
    for span in &doc.spans {
        out.push_str(&format!(
            "<{} id=\"{}\" start=\"{}\" end=\"{}\" text=\"{}\" TYPE=\"{}\" comment=\"\" />\n",
            category(span.phi_type),
            escape_attr(&span.id),
            span.start,
            span.end,
            escape_attr(&span.surface),
            span.phi_type.name(),
        ));
    }
    out.push_str("</TAGS>\n</deIdi2b2>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wrap(text: &str, tags: &str) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\" ?>\n<deIdi2b2>\n<TEXT><![CDATA[{text}]]></TEXT>\n<TAGS>\n{tags}</TAGS>\n</deIdi2b2>\n"
        )
    }

    #[test]
    fn parses_single_date_tag() {
        let raw = wrap(
            "Seen on 2067-05-03.",
            "<DATE id=\"P0\" start=\"8\" end=\"18\" text=\"2067-05-03\" TYPE=\"DATE\" comment=\"\" />\n",
        );
        let doc = parse_document("d", &raw, ParseOptions::default()).unwrap();
        assert_eq!(doc.text, "Seen on 2067-05-03.");
        assert_eq!(doc.spans.len(), 1);
        let s = &doc.spans[0];
        assert_eq!((s.start, s.end, s.phi_type, s.surface.as_str()), (8, 18, PhiClass::Date, "2067-05-03"));
    }

    #[test]
    fn zero_tags() {
        let doc = parse_document("d", &wrap("nothing here", ""), ParseOptions::default()).unwrap();
        assert!(doc.spans.is_empty());
        let doc = parse_document(
            "d",
            "<deIdi2b2><TEXT><![CDATA[x]]></TEXT></deIdi2b2>",
            ParseOptions::default(),
        )
        .unwrap();
        assert_eq!(doc.text, "x");
    }

    #[test]
    fn payload_is_byte_exact() {
        let text = "line one\r\nline two\n\ttab & <b> ]] > é";
        let doc = AnnotatedDocument {
            doc_id: "d".into(),
            text: text.into(),
            spans: vec![],
        };
        let back = parse_document("d", &write_document(&doc), ParseOptions::default()).unwrap();
        assert_eq!(back.text, text);
    }

    #[test]
    fn cdata_terminator_in_payload_survives() {
        let text = "a ]]> b";
        let doc = AnnotatedDocument {
            doc_id: "d".into(),
            text: text.into(),
            spans: vec![PhiSpan {
                id: "P0".into(),
                start: 2,
                end: 5,
                phi_type: PhiClass::Idnum,
                surface: "]]>".into(),
            }],
        };
        let back = parse_document("d", &write_document(&doc), ParseOptions::default()).unwrap();
        assert_eq!(back, doc);
    }

    #[test]
    fn offsets_count_characters_not_bytes() {
        let raw = wrap(
            "Café Zoë seen",
            "<NAME id=\"P0\" start=\"5\" end=\"8\" text=\"Zoë\" TYPE=\"PATIENT\" />\n",
        );
        let doc = parse_document("d", &raw, ParseOptions::default()).unwrap();
        assert_eq!(doc.spans[0].surface, "Zoë");
    }

    #[test]
    fn malformed_markup_reports_position() {
        let raw = "<deIdi2b2>\n<TEXT><![CDATA[x]]></TEXT>\n<TAGS>\n</TAG>\n</deIdi2b2>";
        match parse_document("d", raw, ParseOptions::default()) {
            Err(CorpusError::Markup { line, column, .. }) => assert_eq!((line, column), (4, 1)),
            other => panic!("unexpected {other:?}"),
        }
        let raw = "<deIdi2b2>\n<TEXT><![CDATA[x";
        assert!(matches!(
            parse_document("d", raw, ParseOptions::default()),
            Err(CorpusError::Markup { line: 2, .. })
        ));
    }

    #[test]
    fn mismatched_text_attribute_names_tag() {
        let raw = wrap(
            "Seen on 2067-05-03.",
            "<DATE id=\"P7\" start=\"8\" end=\"18\" text=\"2067-05-04\" TYPE=\"DATE\" />\n",
        );
        match parse_document("d", &raw, ParseOptions::default()) {
            Err(CorpusError::SpanMismatch { tag_id, .. }) => assert_eq!(tag_id, "P7"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_offsets() {
        let raw = wrap(
            "short",
            "<DATE id=\"P0\" start=\"3\" end=\"40\" text=\"rt\" TYPE=\"DATE\" />\n",
        );
        assert!(matches!(
            parse_document("d", &raw, ParseOptions::default()),
            Err(CorpusError::Bounds { end: 40, len: 5, .. })
        ));
    }

    #[test]
    fn overlap_rejected_or_resolved() {
        let raw = wrap(
            "John Smith Jr",
            "<NAME id=\"P0\" start=\"0\" end=\"10\" text=\"John Smith\" TYPE=\"DOCTOR\" />\n\
             <NAME id=\"P1\" start=\"5\" end=\"13\" text=\"Smith Jr\" TYPE=\"PATIENT\" />\n",
        );
        match parse_document("d", &raw, ParseOptions::default()) {
            Err(CorpusError::Overlap { first, second }) => assert_eq!((first.as_str(), second.as_str()), ("P0", "P1")),
            other => panic!("unexpected {other:?}"),
        }
        let doc = parse_document("d", &raw, ParseOptions { keep_longest: true }).unwrap();
        assert_eq!(doc.spans.len(), 1);
        assert_eq!(doc.spans[0].id, "P0");
    }

    #[test]
    fn unknown_type_is_rejected() {
        let raw = wrap("abc", "<X id=\"P0\" start=\"0\" end=\"1\" text=\"a\" TYPE=\"SSN\" />\n");
        assert!(matches!(
            parse_document("d", &raw, ParseOptions::default()),
            Err(CorpusError::InvalidTag { .. })
        ));
    }

    #[test]
    fn one_span_document_writes_one_tag() {
        let doc = AnnotatedDocument {
            doc_id: "d".into(),
            text: "Seen \"here\" in Boston".into(),
            spans: vec![PhiSpan {
                id: "P0".into(),
                start: 15,
                end: 21,
                phi_type: PhiClass::City,
                surface: "Boston".into(),
            }],
        };
        let xml = write_document(&doc);
        assert_eq!(xml.matches("TYPE=").count(), 1);
        assert!(xml.contains("text=\"Boston\""));
        let empty = AnnotatedDocument { spans: vec![], ..doc };
        assert!(!write_document(&empty).contains("TYPE="));
    }
}
