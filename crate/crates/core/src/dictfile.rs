//! Binary container for dictionaries.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic    8 bytes   "HAMDICT1"
//! version  u32       2
//! name     u32 length + UTF-8 bytes (model name)
//! dims     7 × u64   N, N_X, N_P, n_p, affine terms, initial-value terms, flags (bit 0: nonlinear)
//! count    u64       number of arrays
//! toc      per array: u32 name length + name, u64 rows, u64 cols, u64 offset (in f64 units)
//! payload  f64 column-major arrays
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector};

use crate::dictionary::{Dictionary, Label, NonlinearityDictionary, OperatorBlocks, StateDictionary};
use crate::error::{LoadError, Result};

pub const MAGIC: &[u8; 8] = b"HAMDICT1";
pub const VERSION: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dims {
    half_dim: usize,
    snapshots: usize,
    rows: usize,
    params: usize,
    affine: usize,
    initial: usize,
    nonlinear: bool,
}

impl Dims {
    fn of(d: &Dictionary) -> Self {
        Dims {
            half_dim: d.state.dim() / 2,
            snapshots: d.state.len(),
            rows: d.nonlinear.as_ref().map_or(0, |n| n.row_count()),
            params: d.state.param_dim(),
            affine: d.state.operator_blocks.len(),
            initial: d.state.initial_x.len(),
            nonlinear: d.nonlinear.is_some(),
        }
    }

    fn expected(&self) -> Vec<(String, (usize, usize))> {
        let (n2, nx, np) = (2 * self.half_dim, self.snapshots, self.rows);
        let mut v = vec![
            ("labels".to_string(), (nx, self.params + 1)),
            ("X".into(), (n2, nx)),
            ("G_X".into(), (nx, nx)),
            ("G_XJ".into(), (nx, nx)),
            ("R_X".into(), (n2.min(nx), nx)),
            ("R_Z/re".into(), (self.half_dim.min(nx), nx)),
            ("R_Z/im".into(), (self.half_dim.min(nx), nx)),
        ];
        let (rq, rz) = (n2.min(nx), self.half_dim.min(nx));
        for q in 0..self.affine {
            for name in ["H_X", "H_XJr", "H_XJl", "H_XJJ"] {
                v.push((format!("{name}/{q}"), (nx, nx)));
            }
            v.push((format!("H_Q/{q}"), (rq, rq)));
            for name in ["H_QZ", "H_QZJr", "H_QZJl", "H_QZJJ"] {
                v.push((format!("{name}/{q}"), (rz, rz)));
            }
        }
        for r in 0..self.initial {
            v.push((format!("x0_X/{r}"), (nx, 1)));
            v.push((format!("x0_XJ/{r}"), (nx, 1)));
        }
        if self.nonlinear {
            v.push(("F".into(), (n2, nx)));
            v.push(("G_XF".into(), (nx, nx)));
            v.push(("G_F".into(), (nx, nx)));
            v.push(("G_XFJ".into(), (nx, nx)));
            v.push(("rho_hat".into(), (np, 1)));
            v.push(("F_P".into(), (np, nx)));
            v.push(("G_PX".into(), (np, nx)));
            v.push(("G_PJX".into(), (np, nx)));
        }
        v
    }
}

fn arrays(d: &Dictionary) -> Vec<(String, DMatrix<f64>)> {
    let s = &d.state;
    let p = s.param_dim();
    let labels = DMatrix::from_fn(s.len(), p + 1, |i, j| if j < p { s.labels[i].mu[j] } else { s.labels[i].t });
    let mut out = vec![
        ("labels".to_string(), labels),
        ("X".into(), s.states.clone()),
        ("G_X".into(), s.gram.clone()),
        ("G_XJ".into(), s.gram_j.clone()),
        ("R_X".into(), s.factor.clone()),
        ("R_Z/re".into(), s.factor_c.map(|z| z.re)),
        ("R_Z/im".into(), s.factor_c.map(|z| z.im)),
    ];
    for (q, b) in s.operator_blocks.iter().enumerate() {
        out.push((format!("H_X/{q}"), b.hx.clone()));
        out.push((format!("H_XJr/{q}"), b.hx_jr.clone()));
        out.push((format!("H_XJl/{q}"), b.hx_jl.clone()));
        out.push((format!("H_XJJ/{q}"), b.hx_jj.clone()));
        out.push((format!("H_Q/{q}"), s.factor_blocks[q].clone()));
        let c = &s.factor_blocks_c[q];
        out.push((format!("H_QZ/{q}"), c.hx.clone()));
        out.push((format!("H_QZJr/{q}"), c.hx_jr.clone()));
        out.push((format!("H_QZJl/{q}"), c.hx_jl.clone()));
        out.push((format!("H_QZJJ/{q}"), c.hx_jj.clone()));
    }
    for r in 0..s.initial_x.len() {
        out.push((format!("x0_X/{r}"), DMatrix::from_column_slice(s.len(), 1, s.initial_x[r].as_slice())));
        out.push((format!("x0_XJ/{r}"), DMatrix::from_column_slice(s.len(), 1, s.initial_xj[r].as_slice())));
    }
    if let Some(n) = &d.nonlinear {
        out.push(("F".into(), n.values.clone()));
        out.push(("G_XF".into(), n.gram_xf.clone()));
        out.push(("G_F".into(), n.gram_f.clone()));
        out.push(("G_XFJ".into(), n.gram_xfj.clone()));
        let rho = DMatrix::from_iterator(n.rows.len(), 1, n.rows.iter().map(|&r| r as f64));
        out.push(("rho_hat".into(), rho));
        out.push(("F_P".into(), n.values_at_rows.clone()));
        out.push(("G_PX".into(), n.states_at_reads.clone()));
        out.push(("G_PJX".into(), n.jstates_at_reads.clone()));
    }
    out
}

pub fn save_dictionary(d: &Dictionary, path: &Path) -> Result<()> {
    let dims = Dims::of(d);
    let arrays = arrays(d);
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(d.model.len() as u32).to_le_bytes())?;
    w.write_all(d.model.as_bytes())?;
    for v in [
        dims.half_dim,
        dims.snapshots,
        dims.rows,
        dims.params,
        dims.affine,
        dims.initial,
        usize::from(dims.nonlinear),
    ] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    w.write_all(&(arrays.len() as u64).to_le_bytes())?;
    let mut offset = 0u64;
    for (name, m) in &arrays {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(m.nrows() as u64).to_le_bytes())?;
        w.write_all(&(m.ncols() as u64).to_le_bytes())?;
        w.write_all(&offset.to_le_bytes())?;
        offset += m.len() as u64;
    }
    for (_, m) in &arrays {
        for v in m.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], LoadError> {
        if self.at + n > self.bytes.len() {
            return Err(LoadError::CorruptHeader(format!("header ends early at byte {}", self.at)));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, LoadError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<usize, LoadError> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| LoadError::CorruptHeader(format!("size {v} does not fit in memory")))
    }

    fn string(&mut self) -> std::result::Result<String, LoadError> {
        let len = self.u32()? as usize;
        if len > 4096 {
            return Err(LoadError::CorruptHeader(format!("name length {len}")));
        }
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| LoadError::CorruptHeader("name is not UTF-8".into()))
    }
}

pub fn load_dictionary(path: &Path) -> Result<Dictionary> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    Ok(parse(&bytes)?)
}

fn parse(bytes: &[u8]) -> std::result::Result<Dictionary, LoadError> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(LoadError::NotADictionary);
    }
    let mut c = Cursor { bytes, at: 8 };
    let version = c.u32()?;
    if version != VERSION {
        return Err(LoadError::UnsupportedVersion(version));
    }
    let model = c.string()?;
    let mut raw = [0usize; 7];
    for v in raw.iter_mut() {
        *v = c.u64()?;
    }
    if raw[6] > 1 {
        return Err(LoadError::CorruptHeader(format!("unknown flags {}", raw[6])));
    }
    let dims = Dims {
        half_dim: raw[0],
        snapshots: raw[1],
        rows: raw[2],
        params: raw[3],
        affine: raw[4],
        initial: raw[5],
        nonlinear: raw[6] == 1,
    };
    let count = c.u64()?;
    let expected: HashMap<String, (usize, usize)> = dims.expected().into_iter().collect();
    if count > expected.len() {
        return Err(LoadError::CorruptHeader(format!("{count} arrays listed, at most {} expected", expected.len())));
    }
    let mut toc = HashMap::new();
    for _ in 0..count {
        let name = c.string()?;
        let rows = c.u64()?;
        let cols = c.u64()?;
        let offset = c.u64()?;
        let Some(&shape) = expected.get(&name) else {
            return Err(LoadError::CorruptHeader(format!("unexpected array `{name}`")));
        };
        if shape != (rows, cols) {
            return Err(LoadError::DimensionMismatch {
                name,
                expected: shape,
                found: (rows, cols),
            });
        }
        toc.insert(name, (rows, cols, offset));
    }
    let payload = &bytes[c.at..];
    let fetch = |name: &str| -> std::result::Result<DMatrix<f64>, LoadError> {
        let &(rows, cols, offset) = toc.get(name).ok_or_else(|| LoadError::MissingArray(name.to_string()))?;
        let len = rows * cols;
        let (start, end) = (offset * 8, (offset + len) * 8);
        if end > payload.len() {
            return Err(LoadError::Truncated(format!(
                "array `{name}` needs bytes {start}..{end} but payload has {}",
                payload.len()
            )));
        }
        let data = payload[start..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect::<Vec<_>>();
        Ok(DMatrix::from_vec(rows, cols, data))
    };
    let column = |name: &str| fetch(name).map(|m| DVector::from_column_slice(m.as_slice()));

    let lab = fetch("labels")?;
    let p = dims.params;
    let labels = (0..dims.snapshots)
        .map(|i| Label {
            mu: (0..p).map(|j| lab[(i, j)]).collect(),
            t: lab[(i, p)],
        })
        .collect();
    let blocks_named = |prefix: &str, q: usize| -> std::result::Result<OperatorBlocks, LoadError> {
        Ok(OperatorBlocks {
            hx: fetch(&format!("{prefix}/{q}"))?,
            hx_jr: fetch(&format!("{prefix}Jr/{q}"))?,
            hx_jl: fetch(&format!("{prefix}Jl/{q}"))?,
            hx_jj: fetch(&format!("{prefix}JJ/{q}"))?,
        })
    };
    let mut blocks = Vec::with_capacity(dims.affine);
    let mut factor_blocks = Vec::with_capacity(dims.affine);
    let mut factor_blocks_c = Vec::with_capacity(dims.affine);
    for q in 0..dims.affine {
        blocks.push(blocks_named("H_X", q)?);
        factor_blocks.push(fetch(&format!("H_Q/{q}"))?);
        factor_blocks_c.push(blocks_named("H_QZ", q)?);
    }
    let mut initial_x = Vec::with_capacity(dims.initial);
    let mut initial_xj = Vec::with_capacity(dims.initial);
    for r in 0..dims.initial {
        initial_x.push(column(&format!("x0_X/{r}"))?);
        initial_xj.push(column(&format!("x0_XJ/{r}"))?);
    }
    let state = StateDictionary::from_parts(
        fetch("X")?,
        labels,
        fetch("G_X")?,
        fetch("G_XJ")?,
        blocks,
        initial_x,
        initial_xj,
        fetch("R_X")?,
        fetch("R_Z/re")?.zip_map(&fetch("R_Z/im")?, Complex::new),
        factor_blocks,
        factor_blocks_c,
    );
    let nonlinear = if dims.nonlinear {
        let rho = column("rho_hat")?;
        let n2 = 2 * dims.half_dim;
        let rows = rho
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 && (v as usize) < n2 {
                    Ok(v as usize)
                } else {
                    Err(LoadError::CorruptHeader(format!("row index {v} outside 0..{n2}")))
                }
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Some(NonlinearityDictionary {
            values: fetch("F")?,
            gram_xf: fetch("G_XF")?,
            gram_f: fetch("G_F")?,
            gram_xfj: fetch("G_XFJ")?,
            rows,
            values_at_rows: fetch("F_P")?,
            states_at_reads: fetch("G_PX")?,
            jstates_at_reads: fetch("G_PJX")?,
        })
    } else {
        None
    };
    Ok(Dictionary { model, state, nonlinear })
}
