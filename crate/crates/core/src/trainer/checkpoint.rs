//! Versioned binary checkpoint format with a JSON sidecar.
//!
//! The binary file carries every bit of training state: parameters,
//! optimizer moments, RNG position, schedule, and iteration. Loading a saved
//! checkpoint reproduces the in-memory state exactly; truncated or
//! mismatched files fail without partial state.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AdamState, Checkpoint, TrainingSchedule};
use crate::error::{Error, Result};
use crate::network::{
    concatenator_spec, discriminator_specs, generator_spec, DiscriminatorBundle, Generator,
    LayerParams, Params,
};
use crate::preprocess::OutpaintGeometry;

const MAGIC: &[u8; 4] = b"OPNT";
const FORMAT_VERSION: u32 = 1;

pub fn save_checkpoint(state: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        write_all(&mut w, state).map_err(|e| Error::io(&tmp, e))?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    write_sidecar(state, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    read_all(&mut r).map_err(|e| match e {
        ReadError::Io => Error::CheckpointFormat(format!(
            "{} is truncated or unreadable",
            path.display()
        )),
        ReadError::Format(msg) => Error::CheckpointFormat(msg),
    })
}

fn write_sidecar(state: &Checkpoint, path: &Path) -> Result<()> {
    let sidecar = path.with_extension("json");
    let meta = serde_json::json!({
        "format_version": FORMAT_VERSION,
        "iteration": state.iteration,
        "schedule": state.schedule,
        "geometry": state.geometry,
        "dilations": state.dilations,
        "use_local_discriminator": state.use_local,
    });
    fs::write(&sidecar, serde_json::to_string_pretty(&meta).expect("serializable") + "\n")
        .map_err(|e| Error::io(&sidecar, e))
}

enum ReadError {
    Io,
    Format(String),
}

impl From<std::io::Error> for ReadError {
    fn from(_: std::io::Error) -> Self {
        ReadError::Io
    }
}

fn write_all<W: Write>(w: &mut W, state: &Checkpoint) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u64::<LittleEndian>(state.iteration)?;
    let s = &state.schedule;
    w.write_u64::<LittleEndian>(s.t1)?;
    w.write_u64::<LittleEndian>(s.t2)?;
    w.write_u64::<LittleEndian>(s.t3)?;
    w.write_f64::<LittleEndian>(s.alpha)?;
    w.write_u64::<LittleEndian>(s.batch_size as u64)?;
    w.write_f64::<LittleEndian>(s.learning_rate)?;
    w.write_u64::<LittleEndian>(s.seed)?;
    w.write_u64::<LittleEndian>(s.eval_interval)?;
    w.write_u64::<LittleEndian>(state.geometry.height as u64)?;
    w.write_u64::<LittleEndian>(state.geometry.center_width as u64)?;
    w.write_u64::<LittleEndian>(state.geometry.strip_width as u64)?;
    for d in state.dilations {
        w.write_u64::<LittleEndian>(d as u64)?;
    }
    w.write_u8(u8::from(state.use_local))?;
    w.write_all(&state.rng.get_seed())?;
    w.write_u64::<LittleEndian>(state.rng.get_stream())?;
    w.write_u128::<LittleEndian>(state.rng.get_word_pos())?;
    write_params(w, &state.generator.params)?;
    write_params(w, &state.discriminator.global)?;
    write_params(w, &state.discriminator.local)?;
    write_params(w, &state.discriminator.concat)?;
    write_adam(w, &state.gen_opt)?;
    for opt in &state.disc_opt {
        write_adam(w, opt)?;
    }
    Ok(())
}

fn read_all<R: Read>(r: &mut R) -> std::result::Result<Checkpoint, ReadError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ReadError::Format("not a checkpoint file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(ReadError::Format(format!(
            "checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let iteration = r.read_u64::<LittleEndian>()?;
    let schedule = TrainingSchedule {
        t1: r.read_u64::<LittleEndian>()?,
        t2: r.read_u64::<LittleEndian>()?,
        t3: r.read_u64::<LittleEndian>()?,
        alpha: r.read_f64::<LittleEndian>()?,
        batch_size: r.read_u64::<LittleEndian>()? as usize,
        learning_rate: r.read_f64::<LittleEndian>()?,
        seed: r.read_u64::<LittleEndian>()?,
        eval_interval: r.read_u64::<LittleEndian>()?,
    };
    let geometry = OutpaintGeometry {
        height: r.read_u64::<LittleEndian>()? as usize,
        center_width: r.read_u64::<LittleEndian>()? as usize,
        strip_width: r.read_u64::<LittleEndian>()? as usize,
    };
    let mut dilations = [0usize; 3];
    for d in &mut dilations {
        *d = r.read_u64::<LittleEndian>()? as usize;
    }
    let use_local = r.read_u8()? != 0;
    let mut rng_seed = [0u8; 32];
    r.read_exact(&mut rng_seed)?;
    let stream = r.read_u64::<LittleEndian>()?;
    let word_pos = r.read_u128::<LittleEndian>()?;
    let mut rng = ChaCha8Rng::from_seed(rng_seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    let gen_params = read_params(r)?;
    let global = read_params(r)?;
    let local = read_params(r)?;
    let concat = read_params(r)?;
    let gen_opt = read_adam(r)?;
    let disc_opt = [read_adam(r)?, read_adam(r)?, read_adam(r)?];

    let gen_spec = generator_spec(dilations);
    let (global_spec, local_spec, _) = discriminator_specs();
    let concat_width = if use_local { 3 * 512 } else { 512 };
    let concat_spec = concatenator_spec(concat_width);
    let input_hw = (geometry.height, geometry.total_width());
    Ok(Checkpoint {
        iteration,
        schedule,
        geometry,
        dilations,
        use_local,
        generator: Generator::from_parts(gen_spec, gen_params),
        discriminator: DiscriminatorBundle {
            input_hw,
            use_local,
            global_spec,
            local_spec,
            concat_spec,
            global,
            local,
            concat,
        },
        gen_opt,
        disc_opt,
        rng,
    })
}

const KIND_CONV: u8 = 0;
const KIND_DECONV: u8 = 1;
const KIND_FC: u8 = 2;
const KIND_CONCAT: u8 = 3;

fn write_params<W: Write>(w: &mut W, params: &Params) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(params.layers.len() as u32)?;
    for layer in &params.layers {
        match layer {
            LayerParams::Conv { w: wt, b } | LayerParams::Deconv { w: wt, b } => {
                let kind = if matches!(layer, LayerParams::Conv { .. }) {
                    KIND_CONV
                } else {
                    KIND_DECONV
                };
                w.write_u8(kind)?;
                for d in wt.shape() {
                    w.write_u64::<LittleEndian>(*d as u64)?;
                }
                w.write_u64::<LittleEndian>(b.len() as u64)?;
                write_f64s(w, wt.as_slice().expect("standard layout"))?;
                write_f64s(w, b.as_slice().expect("standard layout"))?;
            }
            LayerParams::Fc { w: wt, b } => {
                w.write_u8(KIND_FC)?;
                for d in wt.shape() {
                    w.write_u64::<LittleEndian>(*d as u64)?;
                }
                w.write_u64::<LittleEndian>(b.len() as u64)?;
                write_f64s(w, wt.as_slice().expect("standard layout"))?;
                write_f64s(w, b.as_slice().expect("standard layout"))?;
            }
            LayerParams::Concat => w.write_u8(KIND_CONCAT)?,
        }
    }
    Ok(())
}

fn read_params<R: Read>(r: &mut R) -> std::result::Result<Params, ReadError> {
    let count = r.read_u32::<LittleEndian>()? as usize;
    if count > 1024 {
        return Err(ReadError::Format(format!("implausible layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = r.read_u8()?;
        match kind {
            KIND_CONV | KIND_DECONV => {
                let mut dims = [0usize; 4];
                for d in &mut dims {
                    *d = read_dim(r)?;
                }
                let blen = read_dim(r)?;
                let wlen = dims.iter().product();
                let w4 = Array4::from_shape_vec(
                    (dims[0], dims[1], dims[2], dims[3]),
                    read_f64s(r, wlen)?,
                )
                .map_err(|e| ReadError::Format(e.to_string()))?;
                let b = Array1::from_vec(read_f64s(r, blen)?);
                layers.push(if kind == KIND_CONV {
                    LayerParams::Conv { w: w4, b }
                } else {
                    LayerParams::Deconv { w: w4, b }
                });
            }
            KIND_FC => {
                let rows = read_dim(r)?;
                let cols = read_dim(r)?;
                let blen = read_dim(r)?;
                let w2 = Array2::from_shape_vec((rows, cols), read_f64s(r, rows * cols)?)
                    .map_err(|e| ReadError::Format(e.to_string()))?;
                let b = Array1::from_vec(read_f64s(r, blen)?);
                layers.push(LayerParams::Fc { w: w2, b });
            }
            KIND_CONCAT => layers.push(LayerParams::Concat),
            other => {
                return Err(ReadError::Format(format!("unknown layer kind {other}")));
            }
        }
    }
    Ok(Params { layers })
}

fn write_adam<W: Write>(w: &mut W, adam: &AdamState) -> std::io::Result<()> {
    w.write_f64::<LittleEndian>(adam.lr)?;
    w.write_f64::<LittleEndian>(adam.beta1)?;
    w.write_f64::<LittleEndian>(adam.beta2)?;
    w.write_f64::<LittleEndian>(adam.eps)?;
    w.write_u64::<LittleEndian>(adam.t)?;
    write_params(w, &adam.m)?;
    write_params(w, &adam.v)
}

fn read_adam<R: Read>(r: &mut R) -> std::result::Result<AdamState, ReadError> {
    Ok(AdamState {
        lr: r.read_f64::<LittleEndian>()?,
        beta1: r.read_f64::<LittleEndian>()?,
        beta2: r.read_f64::<LittleEndian>()?,
        eps: r.read_f64::<LittleEndian>()?,
        t: r.read_u64::<LittleEndian>()?,
        m: read_params(r)?,
        v: read_params(r)?,
    })
}

fn read_dim<R: Read>(r: &mut R) -> std::result::Result<usize, ReadError> {
    let v = r.read_u64::<LittleEndian>()?;
    if v > (1 << 32) {
        return Err(ReadError::Format(format!("implausible dimension {v}")));
    }
    Ok(v as usize)
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_u64::<LittleEndian>(v.to_bits())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, len: usize) -> std::result::Result<Vec<f64>, ReadError> {
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(f64::from_bits(r.read_u64::<LittleEndian>()?));
    }
    Ok(out)
}
