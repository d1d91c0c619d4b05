//! Binary checkpoints for [`EmbeddingNet`].
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! RFCK1\n
//! input_dim=<n> hidden_dims=<a,b,..> embedding_dim=<n> n_classes=<n> init_seed=<n>\n
//! u32 block count
//! per block: u32 rows, u32 cols, rows*cols f64 values (row-major)
//! ```
//!
//! Blocks follow [`EmbeddingNet::parameters`] order and end with the
//! normalization running mean and running variance. A text sidecar
//! `<file>.meta` carries the epoch and metric history.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{EmbeddingNet, ModelConfig};
use crate::numerics::Tensor2;

const MAGIC: &[u8] = b"RFCK1\n";

fn header(c: &ModelConfig) -> String {
    let hidden: Vec<String> = c.hidden_dims.iter().map(|h| h.to_string()).collect();
    format!(
        "input_dim={} hidden_dims={} embedding_dim={} n_classes={} init_seed={}\n",
        c.input_dim,
        hidden.join(","),
        c.embedding_dim,
        c.n_classes,
        c.init_seed
    )
}

fn parse_header(line: &str, file: &Path) -> Result<ModelConfig> {
    let bad = |msg: String| Error::Malformed {
        file: file.display().to_string(),
        line: 2,
        msg,
    };
    let mut c = ModelConfig {
        input_dim: 0,
        hidden_dims: Vec::new(),
        embedding_dim: 0,
        n_classes: 0,
        init_seed: 0,
    };
    let num = |v: &str| v.parse::<usize>().map_err(|e| bad(format!("{v:?}: {e}")));
    for field in line.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, got {field:?}")))?;
        match k {
            "input_dim" => c.input_dim = num(v)?,
            "embedding_dim" => c.embedding_dim = num(v)?,
            "n_classes" => c.n_classes = num(v)?,
            "init_seed" => c.init_seed = v.parse().map_err(|e| bad(format!("{v:?}: {e}")))?,
            "hidden_dims" => {
                c.hidden_dims = v
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(num)
                    .collect::<Result<_>>()?
            }
            other => return Err(bad(format!("unknown header key {other:?}"))),
        }
    }
    Ok(c)
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Writes the checkpoint and its `.meta` sidecar.
pub fn save_checkpoint(net: &EmbeddingNet, path: &Path, meta: &str) -> Result<()> {
    let mut blocks: Vec<&Tensor2> = net.parameters();
    blocks.push(&net.norm.running_mean);
    blocks.push(&net.norm.running_var);

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(header(&net.config).as_bytes());
    buf.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for b in blocks {
        buf.extend_from_slice(&(b.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(b.cols() as u32).to_le_bytes());
        for v in b.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    let meta_file = meta_path(path);
    fs::write(&meta_file, meta).map_err(|e| Error::io(&meta_file, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    file: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Malformed {
                file: self.file.display().to_string(),
                line: 0,
                msg: format!("truncated at byte {}", self.pos),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

/// Loads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<EmbeddingNet> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |line, msg: &str| Error::Malformed {
        file: path.display().to_string(),
        line,
        msg: msg.to_string(),
    };
    if !buf.starts_with(MAGIC) {
        return Err(malformed(1, "not a reid-forge checkpoint"));
    }
    let rest = &buf[MAGIC.len()..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| malformed(2, "missing config header"))?;
    let line = std::str::from_utf8(&rest[..nl]).map_err(|_| malformed(2, "header is not utf-8"))?;
    let config = parse_header(line, path)?;
    let mut net = EmbeddingNet::init(config)?;

    let mut r = Reader {
        buf: &rest[nl + 1..],
        pos: 0,
        file: path,
    };
    let count = r.u32()?;
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = r.u32()?;
        let cols = r.u32()?;
        let bytes = r.take(rows * cols * 8)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        blocks.push(Tensor2::new(rows, cols, data)?);
    }
    if r.pos != r.buf.len() {
        return Err(malformed(0, "trailing bytes after last block"));
    }

    let expected = net.parameters().len() + 2;
    if blocks.len() != expected {
        return Err(malformed(
            0,
            &format!("expected {expected} blocks, found {}", blocks.len()),
        ));
    }
    let running_var = blocks.pop().expect("count checked");
    let running_mean = blocks.pop().expect("count checked");
    fn assign(dst: &mut Tensor2, src: Tensor2) -> Result<()> {
        if dst.shape() != src.shape() {
            return Err(Error::Shape {
                op: "checkpoint block",
                left: src.shape(),
                right: dst.shape(),
            });
        }
        *dst = src;
        Ok(())
    }
    for (d, s) in net.parameters_mut().into_iter().zip(blocks) {
        assign(d, s)?;
    }
    assign(&mut net.norm.running_mean, running_mean)?;
    assign(&mut net.norm.running_var, running_var)?;
    Ok(net)
}
