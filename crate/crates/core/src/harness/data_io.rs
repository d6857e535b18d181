//! Built-in synthetic datasets and the binary dataset file.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "SSPDATA\0"
//! version  u32      1
//! dtype    u8       1 = f32, 2 = f64
//! ndim     u8       1 (flat) or 3 (channels, height, width)
//! dims     ndim x u32
//! classes  u32
//! count    u64
//! inputs   count * prod(dims) values of dtype
//! labels   count x u32
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{argmax, ActShape, Dataset, Split};

pub const DATA_MAGIC: &[u8; 8] = b"SSPDATA\0";
pub const DATA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }
}

/// Where a run's examples come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSpec {
    /// Gaussian features; the label is the argmax of a random linear map of
    /// `informative` randomly chosen coordinates. The rest are pure noise.
    Planted {
        features: usize,
        informative: usize,
        classes: usize,
        train: usize,
        test: usize,
    },
    /// Two interleaved half circles in the plane with Gaussian jitter.
    Moons { noise: f64, train: usize, test: usize },
    /// Labels from a random one-hidden-layer ReLU network.
    Teacher {
        features: usize,
        hidden: usize,
        classes: usize,
        train: usize,
        test: usize,
    },
    Files { train: PathBuf, test: PathBuf },
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// The coordinates a planted dataset's labels depend on, sorted.
pub fn planted_informative(features: usize, informative: usize, seed: u64) -> Result<Vec<usize>> {
    if informative == 0 || informative > features {
        return Err(Error::Config(format!(
            "planted data needs 0 < informative <= features, got {informative} of {features}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(draw_informative(&mut rng, features, informative))
}

fn draw_informative(rng: &mut ChaCha8Rng, features: usize, informative: usize) -> Vec<usize> {
    let mut idx = sample(rng, features, informative).into_vec();
    idx.sort_unstable();
    idx
}

fn labelled(
    rng: &mut ChaCha8Rng,
    count: usize,
    dim: usize,
    mut draw: impl FnMut(&mut ChaCha8Rng, &mut [f64]) -> usize,
) -> (Vec<f64>, Vec<usize>) {
    let mut inputs = vec![0.0; count * dim];
    let labels = inputs.chunks_mut(dim).map(|x| draw(rng, x)).collect();
    (inputs, labels)
}

fn pair(
    shape: ActShape,
    classes: usize,
    (xtr, ytr): (Vec<f64>, Vec<usize>),
    (xte, yte): (Vec<f64>, Vec<usize>),
) -> Result<(Dataset, Dataset)> {
    Ok((
        Dataset::new(shape, classes, Split::Train, xtr, ytr)?,
        Dataset::new(shape, classes, Split::Test, xte, yte)?,
    ))
}

/// Deterministic train and test sets for `spec` and `seed`.
pub fn load_dataset(spec: &DataSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match *spec {
        DataSpec::Planted {
            features,
            informative,
            classes,
            train,
            test,
        } => {
            planted_informative(features, informative, seed)?;
            if classes < 2 {
                return Err(Error::Config("planted data needs at least 2 classes".into()));
            }
            let idx = draw_informative(&mut rng, features, informative);
            let v: Vec<f64> = (0..classes * informative).map(|_| gaussian(&mut rng)).collect();
            let mut draw = |rng: &mut ChaCha8Rng, x: &mut [f64]| {
                x.iter_mut().for_each(|v| *v = gaussian(rng));
                let scores: Vec<f64> = v
                    .chunks(informative)
                    .map(|row| row.iter().zip(&idx).map(|(a, &j)| a * x[j]).sum())
                    .collect();
                argmax(&scores)
            };
            let tr = labelled(&mut rng, train, features, &mut draw);
            let te = labelled(&mut rng, test, features, &mut draw);
            pair(ActShape::Flat(features), classes, tr, te)
        }
        DataSpec::Moons { noise, train, test } => {
            if !(noise >= 0.0 && noise.is_finite()) {
                return Err(Error::Config(format!("moons noise must be >= 0, got {noise}")));
            }
            let mut draw = |rng: &mut ChaCha8Rng, x: &mut [f64]| {
                let label = usize::from(rng.gen_bool(0.5));
                let a = rng.gen_range(0.0..std::f64::consts::PI);
                let (px, py) = if label == 0 {
                    (a.cos(), a.sin())
                } else {
                    (1.0 - a.cos(), 0.5 - a.sin())
                };
                x[0] = px + noise * gaussian(rng);
                x[1] = py + noise * gaussian(rng);
                label
            };
            let tr = labelled(&mut rng, train, 2, &mut draw);
            let te = labelled(&mut rng, test, 2, &mut draw);
            pair(ActShape::Flat(2), 2, tr, te)
        }
        DataSpec::Teacher {
            features,
            hidden,
            classes,
            train,
            test,
        } => {
            if features == 0 || hidden == 0 || classes < 2 {
                return Err(Error::Config(
                    "teacher data needs features > 0, hidden > 0 and at least 2 classes".into(),
                ));
            }
            let s1 = (1.0 / features as f64).sqrt();
            let s2 = (1.0 / hidden as f64).sqrt();
            let w1: Vec<f64> = (0..hidden * features).map(|_| s1 * gaussian(&mut rng)).collect();
            let w2: Vec<f64> = (0..classes * hidden).map(|_| s2 * gaussian(&mut rng)).collect();
            let mut draw = |rng: &mut ChaCha8Rng, x: &mut [f64]| {
                x.iter_mut().for_each(|v| *v = gaussian(rng));
                let h: Vec<f64> = w1
                    .chunks(features)
                    .map(|r| r.iter().zip(&*x).map(|(a, b)| a * b).sum::<f64>().max(0.0))
                    .collect();
                let z: Vec<f64> = w2
                    .chunks(hidden)
                    .map(|r| r.iter().zip(&h).map(|(a, b)| a * b).sum())
                    .collect();
                argmax(&z)
            };
            let tr = labelled(&mut rng, train, features, &mut draw);
            let te = labelled(&mut rng, test, features, &mut draw);
            pair(ActShape::Flat(features), classes, tr, te)
        }
        DataSpec::Files { ref train, ref test } => {
            Ok((read_dataset(train, Split::Train)?, read_dataset(test, Split::Test)?))
        }
    }
}

pub fn dataset_to_bytes(data: &Dataset, dtype: DType) -> Result<Vec<u8>> {
    let dims: Vec<usize> = match data.sample_shape() {
        ActShape::Flat(n) => vec![n],
        ActShape::Spatial {
            channels,
            height,
            width,
        } => vec![channels, height, width],
    };
    let u32_of = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(32 + data.inputs().len() * 8 + data.len() * 4);
    out.extend_from_slice(DATA_MAGIC);
    out.extend_from_slice(&DATA_VERSION.to_le_bytes());
    out.push(dtype.code());
    out.push(dims.len() as u8);
    for &d in &dims {
        out.extend_from_slice(&u32_of(d, "dimension")?.to_le_bytes());
    }
    out.extend_from_slice(&u32_of(data.classes(), "class count")?.to_le_bytes());
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    for &v in data.inputs() {
        match dtype {
            DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    for &l in data.labels() {
        out.extend_from_slice(&u32_of(l, "label")?.to_le_bytes());
    }
    Ok(out)
}

/// Little-endian cursor over a byte buffer with format errors on underrun.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated: wanted {n} bytes at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn dataset_from_bytes(bytes: &[u8], split: Split) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    if r.take(8)? != DATA_MAGIC {
        return Err(Error::Format("not a dataset file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != DATA_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let dtype = match r.u8()? {
        1 => DType::F32,
        2 => DType::F64,
        c => return Err(Error::Format(format!("unknown dtype code {c}"))),
    };
    let shape = match r.u8()? {
        1 => ActShape::Flat(r.u32()? as usize),
        3 => ActShape::Spatial {
            channels: r.u32()? as usize,
            height: r.u32()? as usize,
            width: r.u32()? as usize,
        },
        n => return Err(Error::Format(format!("unsupported ndim {n}"))),
    };
    let classes = r.u32()? as usize;
    let count = usize::try_from(r.u64()?).map_err(|_| Error::Format("count overflows".into()))?;
    let values = count
        .checked_mul(shape.len())
        .ok_or_else(|| Error::Format("input size overflows".into()))?;
    let width = if dtype == DType::F32 { 4 } else { 8 };
    if values.saturating_mul(width).saturating_add(count.saturating_mul(4)) > bytes.len() {
        return Err(Error::Format("header declares more data than the file holds".into()));
    }
    let mut inputs = Vec::with_capacity(values);
    for _ in 0..values {
        inputs.push(match dtype {
            DType::F32 => f64::from(r.f32()?),
            DType::F64 => r.f64()?,
        });
    }
    let labels = (0..count).map(|_| r.u32().map(|l| l as usize)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Dataset::new(shape, classes, split, inputs, labels).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_dataset(path: &Path, data: &Dataset, dtype: DType) -> Result<()> {
    fs::write(path, dataset_to_bytes(data, dtype)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path, split: Split) -> Result<Dataset> {
    dataset_from_bytes(&fs::read(path)?, split)
}
