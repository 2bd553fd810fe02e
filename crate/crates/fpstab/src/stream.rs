//! Stream files.
//!
//! The binary form is a sequence of blocks. Each block is one line of JSON,
//! `{"chunk":0,"dtype":"f64","shape":[rows,cols]}`, then `rows·cols`
//! little-endian values in row-major order. A file whose first byte is not
//! `{` is read as CSV instead: every record is `chunk,v0,v1,…`, records of
//! one chunk are adjacent, chunk indices count up from 0 and `#` starts a
//! comment.

use std::fs;
use std::path::Path;

use fpstab_core::convsub::{ChunkStream, Matrix};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::gen::Dtype;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockHeader {
    pub chunk: usize,
    pub dtype: Dtype,
    pub shape: [usize; 2],
}

/// Longest header line accepted before giving up on a corrupt file.
const MAX_HEADER: usize = 4096;

pub fn encode_binary(stream: &ChunkStream, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, m) in stream.chunks.iter().enumerate() {
        let header = BlockHeader { chunk: i, dtype, shape: [m.rows, m.cols] };
        out.extend(serde_json::to_vec(&header).expect("header serializes"));
        out.push(b'\n');
        for v in &m.data {
            match dtype {
                Dtype::F32 => out.extend((*v as f32).to_le_bytes()),
                Dtype::F64 => out.extend(v.to_le_bytes()),
            }
        }
    }
    out
}

pub fn encode_csv(stream: &ChunkStream) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    for (i, m) in stream.chunks.iter().enumerate() {
        for row in m.rows() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).expect("write to memory");
        }
    }
    w.into_inner().expect("flush to memory")
}

pub fn read_stream(path: &Path) -> Result<ChunkStream> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    match bytes.iter().find(|b| !b.is_ascii_whitespace()) {
        None => Ok(ChunkStream::new(Vec::new())?),
        Some(b'{') => decode_binary(&bytes, path),
        Some(_) => decode_csv(&bytes, path),
    }
}

pub fn decode_binary(bytes: &[u8], path: &Path) -> Result<ChunkStream> {
    let err = |offset: usize, message: String| CliError::Parse {
        path: path.to_path_buf(),
        location: format!("byte {offset}"),
        message,
    };
    let mut chunks = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let rest = &bytes[pos..];
        let Some(nl) = rest.iter().take(MAX_HEADER).position(|b| *b == b'\n') else {
            return Err(err(pos, "block header line is missing or too long".into()));
        };
        let header: BlockHeader =
            serde_json::from_slice(&rest[..nl]).map_err(|e| err(pos, format!("bad block header: {e}")))?;
        if header.chunk != chunks.len() {
            return Err(err(pos, format!("expected chunk {}, found chunk {}", chunks.len(), header.chunk)));
        }
        let [rows, cols] = header.shape;
        let start = pos + nl + 1;
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(header.dtype.size()))
            .ok_or_else(|| err(pos, "block size overflows".into()))?;
        let Some(payload) = bytes.get(start..start + len) else {
            return Err(err(start, format!("truncated payload: need {len} bytes, have {}", bytes.len() - start)));
        };
        let data: Vec<f64> = match header.dtype {
            Dtype::F32 => {
                payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64).collect()
            }
            Dtype::F64 => payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect(),
        };
        chunks.push(Matrix { rows, cols, data });
        pos = start + len;
    }
    ChunkStream::new(chunks).map_err(|e| err(0, e.to_string()))
}

pub fn decode_csv(bytes: &[u8], path: &Path) -> Result<ChunkStream> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut chunks: Vec<Matrix> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            location: format!("line {}", e.position().map_or(0, |p| p.line())),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let err =
            |message: String| CliError::Parse { path: path.to_path_buf(), location: format!("line {line}"), message };
        let mut fields = rec.iter();
        let chunk: usize =
            fields.next().unwrap_or("").parse().map_err(|_| err("first field must be the chunk index".into()))?;
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|_| err(format!("'{f}' is not a number"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(err("record has no values".into()));
        }
        if chunk + 1 == chunks.len() {
            let m = chunks.last_mut().expect("non-empty");
            if values.len() != m.cols {
                return Err(err(format!("row has {} values, chunk rows have {}", values.len(), m.cols)));
            }
            m.data.extend(values);
            m.rows += 1;
        } else if chunk == chunks.len() {
            chunks.push(Matrix { rows: 1, cols: values.len(), data: values });
        } else {
            return Err(err(format!("chunk index {chunk} out of order, expected {}", chunks.len())));
        }
    }
    ChunkStream::new(chunks).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        location: "line 1".into(),
        message: e.to_string(),
    })
}
