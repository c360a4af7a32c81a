use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

/// One user interaction; the unit of incremental state update.
///
/// Wire format: headerless CSV rows `user_id,item_id,category_id,timestamp`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorEvent {
    pub user_id: String,
    pub item_id: String,
    pub category_id: String,
    pub timestamp: u64,
}

impl BehaviorEvent {
    pub fn new(user: &str, item: &str, category: &str, timestamp: u64) -> Self {
        BehaviorEvent {
            user_id: user.to_string(),
            item_id: item.to_string(),
            category_id: category.to_string(),
            timestamp,
        }
    }

    pub fn is_valid(&self) -> bool {
        !self.user_id.is_empty() && !self.item_id.is_empty() && !self.category_id.is_empty()
    }
}

/// Parses events, skipping malformed rows. Returns the events and the number
/// of rows skipped.
pub fn read_events<R: Read>(reader: R) -> Result<(Vec<BehaviorEvent>, usize), DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut events = Vec::new();
    let mut skipped = 0;
    for record in rdr.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        if record.len() != 4 {
            skipped += 1;
            continue;
        }
        let Ok(timestamp) = record[3].trim().parse::<u64>() else {
            skipped += 1;
            continue;
        };
        let ev = BehaviorEvent::new(&record[0], &record[1], &record[2], timestamp);
        if ev.is_valid() {
            events.push(ev);
        } else {
            skipped += 1;
        }
    }
    Ok((events, skipped))
}

pub fn read_events_file(path: &Path) -> Result<(Vec<BehaviorEvent>, usize), DataError> {
    let f = File::open(path).map_err(|e| DataError::io(path, e))?;
    read_events(BufReader::new(f))
}

pub fn write_events<W: Write>(writer: W, events: &[BehaviorEvent]) -> Result<(), DataError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(writer));
    for e in events {
        w.write_record([
            e.user_id.as_str(),
            e.item_id.as_str(),
            e.category_id.as_str(),
            &e.timestamp.to_string(),
        ])?;
    }
    w.flush().map_err(|e| DataError::io("<events>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_skips_malformed_rows() {
        let text = "u1,i1,c1,10\nu1,i2,c1\nu2,\"i,3\",c2,7\nu3,i4,c4,notanumber\n";
        let (events, skipped) = read_events(text.as_bytes()).unwrap();
        assert_eq!(skipped, 2);
        assert_eq!(events.len(), 2);
        assert_eq!(events[1], BehaviorEvent::new("u2", "i,3", "c2", 7));
    }

    #[test]
    fn write_then_read() {
        let events = vec![
            BehaviorEvent::new("a", "x,y", "c", 1),
            BehaviorEvent::new("b", "z", "d e", 2),
        ];
        let mut buf = Vec::new();
        write_events(&mut buf, &events).unwrap();
        let (back, skipped) = read_events(buf.as_slice()).unwrap();
        assert_eq!(skipped, 0);
        assert_eq!(back, events);
    }
}
