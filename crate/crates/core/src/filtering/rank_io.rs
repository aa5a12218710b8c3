use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{RankEntry, RankedList};
use crate::error::{Error, Result};

const HEADER: &str = "rank,image_id,votes,rcmm_score";

/// `rank,image_id,votes,rcmm_score` with 1-based ranks; the score column is
/// empty when RCMM was not computed.
pub fn rank_csv(list: &RankedList) -> String {
    let mut out = format!("{HEADER}\n");
    for (r, e) in list.entries.iter().enumerate() {
        let score = e.rcmm.map(|s| format!("{s:.6}")).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", r + 1, e.image_id, e.votes, score);
    }
    out
}

pub fn write_rank_csv(path: impl AsRef<Path>, list: &RankedList) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, rank_csv(list)).map_err(|e| Error::io(path, e))
}

pub fn parse_rank_csv(text: &str) -> Result<RankedList> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(HEADER) {
        return Err(Error::Corrupt("rank file header".into()));
    }
    let bad = |line: &str| Error::Corrupt(format!("rank row `{line}`"));
    let mut entries = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.trim().split(',').collect();
        if cols.len() != 4 {
            return Err(bad(line));
        }
        let image_id = cols[1].parse().map_err(|_| bad(line))?;
        let votes = cols[2].parse().map_err(|_| bad(line))?;
        let rcmm = match cols[3] {
            "" => None,
            s => Some(s.parse().map_err(|_| bad(line))?),
        };
        entries.push(RankEntry { image_id, votes, rcmm });
    }
    Ok(RankedList { entries })
}

pub fn read_rank_csv(path: impl AsRef<Path>) -> Result<RankedList> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rank_csv(&text)
}
