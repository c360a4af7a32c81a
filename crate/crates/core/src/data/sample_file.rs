//! Line-oriented text format for samples plus the vocabulary that indexes
//! them. Layout:
//!
//! ```text
//! mimn-samples 1
//! categories <n>
//! <category name>                       (n lines, index 1..=n)
//! items <n>
//! <item name>\t<category index>         (n lines, index 1..=n)
//! samples <n>
//! <user>\t<label>\t<item>:<cat>\t<item>:<cat> <item>:<cat> ...
//! ```
//!
//! The last field of a sample row is the history, oldest first. Names may
//! hold any character except tab, carriage return and newline.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{DataError, Sample, Vocabulary};
use crate::model::ItemKey;

const MAGIC: &str = "mimn-samples 1";

fn check_name(name: &str) -> Result<&str, DataError> {
    if name.contains(['\t', '\n', '\r']) {
        Err(DataError::UnwritableId(name.to_string()))
    } else {
        Ok(name)
    }
}

fn io(e: std::io::Error) -> DataError {
    DataError::io("<samples>", e)
}

pub fn write_samples<W: Write>(
    writer: W,
    samples: &[Sample],
    vocab: &Vocabulary,
) -> Result<(), DataError> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "{MAGIC}").map_err(io)?;
    writeln!(w, "categories {}", vocab.n_categories() - 1).map_err(io)?;
    for c in vocab.categories() {
        writeln!(w, "{}", check_name(c)?).map_err(io)?;
    }
    writeln!(w, "items {}", vocab.n_items() - 1).map_err(io)?;
    for (name, cat) in vocab.items() {
        writeln!(w, "{}\t{cat}", check_name(name)?).map_err(io)?;
    }
    writeln!(w, "samples {}", samples.len()).map_err(io)?;
    for s in samples {
        write!(
            w,
            "{}\t{}\t{}:{}\t",
            check_name(&s.user)?,
            s.label,
            s.target.item,
            s.target.category
        )
        .map_err(io)?;
        for (i, k) in s.history.iter().enumerate() {
            let sep = if i == 0 { "" } else { " " };
            write!(w, "{sep}{}:{}", k.item, k.category).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<String, DataError> {
        self.line += 1;
        match self.inner.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(io(e)),
            None => Err(self.err("unexpected end of file")),
        }
    }

    fn err(&self, message: impl Into<String>) -> DataError {
        DataError::Format {
            line: self.line,
            message: message.into(),
        }
    }

    fn count(&mut self, label: &str) -> Result<usize, DataError> {
        let l = self.next()?;
        l.strip_prefix(label)
            .and_then(|r| r.strip_prefix(' '))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| self.err(format!("expected `{label} <count>`")))
    }

    fn key(&self, field: &str) -> Result<ItemKey, DataError> {
        let (i, c) = field
            .split_once(':')
            .ok_or_else(|| self.err(format!("bad item key {field:?}")))?;
        match (i.parse(), c.parse()) {
            (Ok(item), Ok(category)) => Ok(ItemKey { item, category }),
            _ => Err(self.err(format!("bad item key {field:?}"))),
        }
    }
}

pub fn read_samples<R: BufRead>(reader: R) -> Result<(Vec<Sample>, Vocabulary), DataError> {
    let mut lines = Lines {
        inner: reader.lines(),
        line: 0,
    };
    if lines.next()? != MAGIC {
        return Err(lines.err("not a sample file"));
    }
    let n_cats = lines.count("categories")?;
    let mut categories = Vec::with_capacity(n_cats);
    for _ in 0..n_cats {
        categories.push(lines.next()?);
    }
    let n_items = lines.count("items")?;
    let mut items = Vec::with_capacity(n_items);
    for _ in 0..n_items {
        let l = lines.next()?;
        let (name, cat) = l
            .rsplit_once('\t')
            .ok_or_else(|| lines.err("expected `<name>\\t<category>`"))?;
        let cat: u32 = cat.parse().map_err(|_| lines.err("bad category index"))?;
        items.push((name.to_string(), cat));
    }
    let vocab = Vocabulary::from_tables(categories, items)
        .ok_or_else(|| lines.err("duplicate name or category index out of range"))?;

    let n_samples = lines.count("samples")?;
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let l = lines.next()?;
        let fields: Vec<&str> = l.split('\t').collect();
        let [user, label, target, history] = fields[..] else {
            return Err(lines.err("expected four tab-separated fields"));
        };
        let label = match label {
            "0" => 0,
            "1" => 1,
            _ => return Err(lines.err("label must be 0 or 1")),
        };
        let target = lines.key(target)?;
        let history = history
            .split(' ')
            .filter(|f| !f.is_empty())
            .map(|f| lines.key(f))
            .collect::<Result<Vec<_>, _>>()?;
        if history.is_empty() {
            return Err(lines.err("empty history"));
        }
        samples.push(Sample {
            user: user.to_string(),
            history,
            target,
            label,
        });
    }
    Ok((samples, vocab))
}

pub fn write_sample_file(
    path: &Path,
    samples: &[Sample],
    vocab: &Vocabulary,
) -> Result<(), DataError> {
    let f = File::create(path).map_err(|e| DataError::io(path, e))?;
    write_samples(f, samples, vocab)
}

pub fn read_sample_file(path: &Path) -> Result<(Vec<Sample>, Vocabulary), DataError> {
    let f = File::open(path).map_err(|e| DataError::io(path, e))?;
    read_samples(BufReader::new(f))
}
