//! Streaming reader for MediaWiki XML exports (`pages-articles.xml`).
//!
//! Only main-namespace pages that are not redirects are passed on; the file is
//! never held in memory as a whole.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use quick_xml::events::Event;
use quick_xml::Reader;

use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Other,
    Namespace,
    Text,
}

/// Calls `f` with the wikitext of every article page and returns how many
/// pages were passed.
pub fn for_each_article<R, F>(input: R, path: &Path, mut f: F) -> Result<usize>
where
    R: BufRead,
    F: FnMut(&str) -> Result<()>,
{
    let mut reader = Reader::from_reader(input);
    let mut buf = Vec::new();
    let mut field = Field::Other;
    let mut namespace = String::new();
    let mut text = String::new();
    let mut redirect = false;
    let mut articles = 0;
    let xml_error = |reader: &Reader<R>, e: quick_xml::Error| {
        Error::InvalidInput(format!(
            "{}: XML error near byte {}: {e}",
            path.display(),
            reader.buffer_position()
        ))
    };
    loop {
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| xml_error(&reader, e))?;
        match event {
            Event::Start(e) => match e.local_name().as_ref() {
                b"page" => {
                    namespace.clear();
                    text.clear();
                    redirect = false;
                }
                b"ns" => field = Field::Namespace,
                b"text" => field = Field::Text,
                b"redirect" => redirect = true,
                _ => {}
            },
            Event::Empty(e) => {
                if e.local_name().as_ref() == b"redirect" {
                    redirect = true;
                }
            }
            Event::Text(e) => {
                let value = e.unescape().map_err(|e| xml_error(&reader, e))?;
                match field {
                    Field::Namespace => namespace.push_str(&value),
                    Field::Text => text.push_str(&value),
                    Field::Other => {}
                }
            }
            Event::CData(e) if field == Field::Text => {
                text.push_str(&String::from_utf8_lossy(&e));
            }
            Event::End(e) => match e.local_name().as_ref() {
                b"ns" | b"text" => field = Field::Other,
                b"page" => {
                    let ns = namespace.trim();
                    if (ns.is_empty() || ns == "0") && !redirect {
                        f(&text)?;
                        articles += 1;
                    }
                }
                _ => {}
            },
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    Ok(articles)
}

/// [`for_each_article`] over a file on disk.
pub fn for_each_article_in_file<F>(path: &Path, f: F) -> Result<usize>
where
    F: FnMut(&str) -> Result<()>,
{
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for_each_article(BufReader::with_capacity(1 << 20, file), path, f)
}
