//! Line-delimited JSON corpus format.
//!
//! ```text
//! {"version":1,"num_tags":C,"num_features":D}
//! {"id":"img1","labels":[1,4],"instances":[{"0":2,"3":1},{"7":5}]}
//! ```
//!
//! Feature keys are decimal strings written in ascending numeric order, so
//! a corpus has exactly one canonical byte representation.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::Deserialize;

use super::{validate_example, Corpus, Example, Instance};
use crate::error::{Error, Result};

const FORMAT_VERSION: u32 = 1;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    num_tags: usize,
    num_features: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExample {
    id: String,
    labels: Vec<usize>,
    instances: Vec<RawInstance>,
}

/// Feature map kept as a pair list so duplicate keys survive parsing and can
/// be reported.
struct RawInstance(Vec<(String, u32)>);

impl<'de> Deserialize<'de> for RawInstance {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct PairVisitor;

        impl<'de> Visitor<'de> for PairVisitor {
            type Value = RawInstance;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping feature indices to counts")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<RawInstance, A::Error> {
                let mut pairs = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, u32>()? {
                    if v == 0 {
                        return Err(de::Error::custom(format!("feature {k:?} has zero count")));
                    }
                    pairs.push((k, v));
                }
                Ok(RawInstance(pairs))
            }
        }

        deserializer.deserialize_map(PairVisitor)
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let header: Header = loop {
        match lines.next() {
            None => return Err(parse_error(path, 1, "missing header record")),
            Some((i, line)) => {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| parse_error(path, i + 1, e.to_string()))?;
            }
        }
    };
    if header.version != FORMAT_VERSION {
        return Err(parse_error(
            path,
            1,
            format!("unsupported corpus version {}", header.version),
        ));
    }

    let mut examples = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawExample = serde_json::from_str(&line).map_err(|e| parse_error(path, lineno, e.to_string()))?;
        let mut instances = Vec::with_capacity(raw.instances.len());
        for RawInstance(pairs) in raw.instances {
            let mut counts = Vec::with_capacity(pairs.len());
            for (key, count) in pairs {
                let d: usize = key
                    .parse()
                    .map_err(|_| parse_error(path, lineno, format!("feature key {key:?} is not an index")))?;
                counts.push((d, count));
            }
            let inst = Instance::new(counts).map_err(|e| parse_error(path, lineno, e.to_string()))?;
            instances.push(inst);
        }
        let example =
            Example::new(raw.id, instances, raw.labels).map_err(|e| parse_error(path, lineno, e.to_string()))?;
        validate_example(&example, header.num_tags, header.num_features)
            .map_err(|e| Error::Dimension(format!("{}:{lineno}: {e}", path.display())))?;
        examples.push(example);
    }

    let corpus = Corpus {
        examples,
        num_tags: header.num_tags,
        num_features: header.num_features,
        tag_names: None,
        feature_names: None,
    };
    corpus.validate()?;
    Ok(corpus)
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_corpus_to(corpus, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes the canonical serialization of `corpus` to any writer.
pub fn write_corpus_to<W: Write>(corpus: &Corpus, out: &mut W) -> std::io::Result<()> {
    writeln!(
        out,
        "{{\"version\":{FORMAT_VERSION},\"num_tags\":{},\"num_features\":{}}}",
        corpus.num_tags, corpus.num_features
    )?;
    for ex in &corpus.examples {
        let id = serde_json::to_string(&ex.id).expect("string serialization cannot fail");
        write!(out, "{{\"id\":{id},\"labels\":[")?;
        for (i, t) in ex.labels().iter().enumerate() {
            if i > 0 {
                out.write_all(b",")?;
            }
            write!(out, "{t}")?;
        }
        out.write_all(b"],\"instances\":[")?;
        for (i, inst) in ex.instances.iter().enumerate() {
            if i > 0 {
                out.write_all(b",")?;
            }
            out.write_all(b"{")?;
            for (j, (d, x)) in inst.counts().iter().enumerate() {
                if j > 0 {
                    out.write_all(b",")?;
                }
                write!(out, "\"{d}\":{x}")?;
            }
            out.write_all(b"}")?;
        }
        out.write_all(b"]}\n")?;
    }
    Ok(())
}

/// Reads an `index<TAB>name` vocabulary sidecar of exactly `size` entries.
pub fn read_vocab(path: impl AsRef<Path>, size: usize) -> Result<Vec<String>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut names: Vec<Option<String>> = vec![None; size];
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let (idx, name) = line
            .split_once('\t')
            .ok_or_else(|| parse_error(path, i + 1, "expected index<TAB>name"))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| parse_error(path, i + 1, format!("bad index {idx:?}")))?;
        let slot = names
            .get_mut(idx)
            .ok_or_else(|| Error::Dimension(format!("{}:{}: index {idx} >= {size}", path.display(), i + 1)))?;
        if slot.replace(name.to_string()).is_some() {
            return Err(parse_error(path, i + 1, format!("index {idx} listed twice")));
        }
    }
    names
        .into_iter()
        .enumerate()
        .map(|(i, n)| n.ok_or_else(|| Error::InvalidInput(format!("{}: no name for index {i}", path.display()))))
        .collect()
}

pub fn write_vocab(names: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for (i, n) in names.iter().enumerate() {
        writeln!(out, "{i}\t{n}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
