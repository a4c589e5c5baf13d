//! Event trace records, one JSON object per line.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time_ms: u64,
    pub kind: String,
    pub actor: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<u64>,
    pub detail: String,
}

impl TraceRecord {
    pub fn new(
        time_ms: u64,
        kind: impl Into<String>,
        actor: impl ToString,
        instance: Option<u64>,
        detail: impl Into<String>,
    ) -> Self {
        TraceRecord {
            time_ms,
            kind: kind.into(),
            actor: actor.to_string(),
            instance,
            detail: detail.into(),
        }
    }
}

pub fn write_jsonl<W: Write>(records: &[TraceRecord], mut out: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl(records: &[TraceRecord]) -> String {
    let mut buf = Vec::new();
    write_jsonl(records, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn read_jsonl<R: BufRead>(input: R) -> io::Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let recs = vec![
            TraceRecord::new(0, "deliver", "BS1", Some(3), "DataRequest from M1"),
            TraceRecord::new(78, "tick", "BS2", None, ""),
        ];
        let text = to_jsonl(&recs);
        assert_eq!(text.lines().count(), 2);
        assert!(!text.lines().nth(1).unwrap().contains("instance"));
        assert_eq!(read_jsonl(text.as_bytes()).unwrap(), recs);
    }
}
