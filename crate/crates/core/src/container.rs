//! Versioned little-endian binary container for model parameters.
//!
//! Layout: magic `FTC1`, u32 version, u32 section count, then per section a
//! tagged dimension list and the raw parameters: u32 tag length, tag bytes,
//! u32 dim count, u32 dims, u64 parameter count, f64 parameters in each
//! model's declaration order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::complete::CompletionModel;
use crate::dynamics::{DynamicsConfig, DynamicsModel, FusionParams};
use crate::error::{Error, Result};
use crate::nn::ParamVisit;
use crate::recognize::GcnModel;
use crate::rng::Rng;
use crate::skeleton::coco17_topology;

pub const MAGIC: &[u8; 4] = b"FTC1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub tag: String,
    pub dims: Vec<u32>,
    pub params: Vec<f64>,
}

pub fn write_sections(path: impl AsRef<Path>, sections: &[Section]) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(sections.len() as u32).to_le_bytes())?;
    for s in sections {
        let tag = s.tag.as_bytes();
        w.write_all(&(tag.len() as u32).to_le_bytes())?;
        w.write_all(tag)?;
        w.write_all(&(s.dims.len() as u32).to_le_bytes())?;
        for d in &s.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        w.write_all(&(s.params.len() as u64).to_le_bytes())?;
        for p in &s.params {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_sections(path: impl AsRef<Path>) -> Result<Vec<Section>> {
    let file = File::open(path.as_ref())?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::InvalidInput(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::InvalidInput(format!("unsupported version {version}")));
    }
    let nsec = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(nsec);
    for _ in 0..nsec {
        let tag_len = read_u32(&mut r)? as usize;
        let mut tag = vec![0u8; tag_len];
        r.read_exact(&mut tag)?;
        let tag = String::from_utf8(tag)
            .map_err(|_| Error::InvalidInput("non-UTF-8 section tag".into()))?;
        let ndims = read_u32(&mut r)? as usize;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(read_u32(&mut r)?);
        }
        let nparams = read_u64(&mut r)? as usize;
        let mut params = Vec::with_capacity(nparams);
        let mut buf = [0u8; 8];
        for _ in 0..nparams {
            r.read_exact(&mut buf)?;
            params.push(f64::from_le_bytes(buf));
        }
        out.push(Section { tag, dims, params });
    }
    Ok(out)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn find<'a>(sections: &'a [Section], tag: &str) -> Result<&'a Section> {
    sections
        .iter()
        .find(|s| s.tag == tag)
        .ok_or_else(|| Error::InvalidInput(format!("missing `{tag}` section")))
}

/// Completion model file: one `completion` section with dims (E, N, T).
pub fn save_completion(model: &CompletionModel, path: impl AsRef<Path>) -> Result<()> {
    write_sections(
        path,
        &[Section {
            tag: "completion".into(),
            dims: vec![
                model.embed_dim as u32,
                model.num_blocks as u32,
                model.seq_len as u32,
            ],
            params: model.flat_params(),
        }],
    )
}

pub fn load_completion(path: impl AsRef<Path>) -> Result<CompletionModel> {
    let sections = read_sections(path)?;
    let s = find(&sections, "completion")?;
    if s.dims.len() != 3 {
        return Err(Error::InvalidInput(format!(
            "completion section carries {} dims, expected 3",
            s.dims.len()
        )));
    }
    let mut model =
        CompletionModel::zeros(s.dims[0] as usize, s.dims[1] as usize, s.dims[2] as usize);
    model.load_flat(&s.params)?;
    Ok(model)
}

/// Dynamics file: `dynamics` (state, feature, hidden dims) and `fusion`
/// (head dim) sections.
pub fn save_dynamics(
    model: &DynamicsModel,
    fusion: &FusionParams,
    hidden_dim: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_sections(
        path,
        &[
            Section {
                tag: "dynamics".into(),
                dims: vec![
                    model.state_dim as u32,
                    model.feature_dim as u32,
                    hidden_dim as u32,
                ],
                params: model.flat_params(),
            },
            Section {
                tag: "fusion".into(),
                dims: vec![fusion.head_dim as u32],
                params: fusion.flat_params(),
            },
        ],
    )
}

pub fn load_dynamics(path: impl AsRef<Path>) -> Result<(DynamicsModel, FusionParams)> {
    let sections = read_sections(path)?;
    let d = find(&sections, "dynamics")?;
    if d.dims.len() != 3 {
        return Err(Error::InvalidInput("dynamics section needs 3 dims".into()));
    }
    let cfg = DynamicsConfig {
        state_dim: d.dims[0] as usize,
        feature_dim: d.dims[1] as usize,
        hidden_dim: d.dims[2] as usize,
    };
    let mut model = DynamicsModel::zeros(&cfg);
    model.load_flat(&d.params)?;
    let f = find(&sections, "fusion")?;
    let mut fusion = FusionParams::zeros(f.dims[0] as usize);
    fusion.load_flat(&f.params)?;
    Ok((model, fusion))
}

/// Classifier file: a `gcn` section with dims (num_classes, channels...) and
/// a `gcn_norm` section carrying the frozen standardization buffers
/// (shift then scale, per block).
pub fn save_gcn(model: &GcnModel, path: impl AsRef<Path>) -> Result<()> {
    let mut dims = vec![model.num_classes as u32];
    dims.extend(model.channels.iter().map(|&c| c as u32));
    let mut norm = Vec::new();
    norm.extend_from_slice(model.input_shift.data());
    norm.extend_from_slice(model.input_scale.data());
    for b in &model.blocks {
        norm.extend_from_slice(b.norm_shift.data());
        norm.extend_from_slice(b.norm_scale.data());
    }
    write_sections(
        path,
        &[
            Section {
                tag: "gcn".into(),
                dims,
                params: model.flat_params(),
            },
            Section {
                tag: "gcn_norm".into(),
                dims: vec![],
                params: norm,
            },
        ],
    )
}

pub fn load_gcn(path: impl AsRef<Path>) -> Result<GcnModel> {
    let sections = read_sections(path)?;
    let s = find(&sections, "gcn")?;
    if s.dims.len() < 3 {
        return Err(Error::InvalidInput("gcn section needs classes + channels".into()));
    }
    let num_classes = s.dims[0] as usize;
    let channels: Vec<usize> = s.dims[1..].iter().map(|&d| d as usize).collect();
    let mut model = GcnModel::new(&coco17_topology(), &channels, num_classes, &mut Rng::new(0));
    model.load_flat(&s.params)?;
    let norm = find(&sections, "gcn_norm")?;
    let mut off = 0;
    {
        let c = channels[0];
        if norm.params.len() < 2 * c {
            return Err(Error::InvalidInput("gcn_norm section too short".into()));
        }
        model.input_shift = crate::nn::Tensor::new(&[c], norm.params[..c].to_vec());
        model.input_scale = crate::nn::Tensor::new(&[c], norm.params[c..2 * c].to_vec());
        off = 2 * c;
    }
    for b in model.blocks.iter_mut() {
        let c = b.norm_shift.numel();
        if off + 2 * c > norm.params.len() {
            return Err(Error::InvalidInput("gcn_norm section too short".into()));
        }
        b.norm_shift = crate::nn::Tensor::new(&[c], norm.params[off..off + c].to_vec());
        b.norm_scale = crate::nn::Tensor::new(&[c], norm.params[off + c..off + 2 * c].to_vec());
        off += 2 * c;
    }
    Ok(model)
}
