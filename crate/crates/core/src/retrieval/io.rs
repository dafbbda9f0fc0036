//! Binary index files and CSV reports.
//!
//! Index layout, all little-endian: 8-byte magic, u32 version, u32 dim,
//! u64 item count, then per item a u32 byte length and UTF-8 id, then the
//! vectors as packed f32 in item order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EvalRun, Histogram, RetrievalError, RetrievalIndex};

pub const INDEX_MAGIC: &[u8; 8] = b"MEOLIDX\0";
pub const INDEX_VERSION: u32 = 1;

/// Writes `index` with vectors narrowed to f32.
pub fn write_index<W: Write>(index: &RetrievalIndex, mut w: W) -> Result<(), RetrievalError> {
    w.write_all(INDEX_MAGIC)?;
    w.write_all(&INDEX_VERSION.to_le_bytes())?;
    w.write_all(&(index.dim as u32).to_le_bytes())?;
    w.write_all(&(index.len() as u64).to_le_bytes())?;
    for id in &index.item_ids {
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
    }
    for v in &index.vectors {
        for &x in v {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], RetrievalError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| RetrievalError::Format(format!("truncated: {e}")))?;
    Ok(buf)
}

/// Reads an index written by [`write_index`]. Vectors are used as stored,
/// so writing the result again reproduces the same bytes.
pub fn read_index<R: Read>(mut r: R) -> Result<RetrievalIndex, RetrievalError> {
    if &take::<8, _>(&mut r)? != INDEX_MAGIC {
        return Err(RetrievalError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != INDEX_VERSION {
        return Err(RetrievalError::Format(format!(
            "unsupported version {version}"
        )));
    }
    let dim = u32::from_le_bytes(take(&mut r)?) as usize;
    let n = u64::from_le_bytes(take(&mut r)?) as usize;
    let mut item_ids = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let len = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)
            .map_err(|e| RetrievalError::Format(format!("truncated: {e}")))?;
        item_ids.push(
            String::from_utf8(buf)
                .map_err(|_| RetrievalError::Format("item id not UTF-8".into()))?,
        );
    }
    let mut vectors = Vec::with_capacity(item_ids.len());
    for _ in 0..n {
        let v = (0..dim)
            .map(|_| Ok(f32::from_le_bytes(take(&mut r)?) as f64))
            .collect::<Result<Vec<f64>, RetrievalError>>()?;
        vectors.push(v);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(RetrievalError::Format("trailing bytes".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for (id, v) in item_ids.iter().zip(&vectors) {
        if !seen.insert(id) {
            return Err(RetrievalError::DuplicateItem(id.clone()));
        }
        if v.iter().all(|&x| x == 0.0) {
            return Err(RetrievalError::ZeroVector(id.clone()));
        }
    }
    if item_ids.is_empty() {
        return Err(RetrievalError::Empty);
    }
    Ok(RetrievalIndex {
        item_ids,
        vectors,
        dim,
    })
}

impl RetrievalIndex {
    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        write_index(self, BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        read_index(BufReader::new(File::open(path)?))
    }
}

/// `query_id,rank` rows.
pub fn write_eval_csv<W: Write>(run: &EvalRun, w: W) -> Result<(), RetrievalError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["query_id", "rank"])?;
    for (q, rank) in &run.per_query_rank {
        out.write_record([q.as_str(), &rank.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// One `metric,value` row per Recall@k plus MRR.
pub fn write_summary_csv<W: Write>(run: &EvalRun, w: W) -> Result<(), RetrievalError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["metric", "value"])?;
    for (k, v) in &run.recall_table {
        out.write_record([format!("recall@{k}"), format!("{v:.6}")])?;
    }
    out.write_record(["mrr".to_string(), format!("{:.6}", run.mrr)])?;
    out.write_record(["queries".to_string(), run.per_query_rank.len().to_string()])?;
    out.flush()?;
    Ok(())
}

/// `bin_start,bin_end,count` rows.
pub fn write_histogram_csv<W: Write>(hist: &Histogram, w: W) -> Result<(), RetrievalError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bin_start", "bin_end", "count"])?;
    for (i, c) in hist.counts.iter().enumerate() {
        out.write_record([
            format!("{:.4}", hist.edges[i]),
            format!("{:.4}", hist.edges[i + 1]),
            c.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let idx = RetrievalIndex::from_vectors(vec![
            ("a".to_string(), vec![0.3, -0.2, 0.9]),
            ("ünï".to_string(), vec![1.0, 2.0, 3.0]),
        ])
        .unwrap();
        let mut first = Vec::new();
        write_index(&idx, &mut first).unwrap();
        let back = read_index(first.as_slice()).unwrap();
        assert_eq!(back.item_ids(), idx.item_ids());
        let mut second = Vec::new();
        write_index(&back, &mut second).unwrap();
        assert_eq!(first, second);
        for ((_, a), (_, b)) in idx.iter().zip(back.iter()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!((*x as f32) as f64, *y);
            }
        }
    }

    #[test]
    fn rejects_corruption() {
        let idx = RetrievalIndex::from_vectors(vec![("a".to_string(), vec![1.0])]).unwrap();
        let mut bytes = Vec::new();
        write_index(&idx, &mut bytes).unwrap();
        assert!(read_index(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_index(extra.as_slice()).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(read_index(bad.as_slice()).is_err());
    }
}
