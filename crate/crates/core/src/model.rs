//! The model file: one versioned container for every fitted stage.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PINV" | u32 version | u32 section count
//! count × ( [u8; 4] tag | u64 offset | u64 length )
//! section payloads
//! ```
//!
//! Offsets are absolute. Sections with unknown tags are carried through a
//! read/write cycle untouched.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::bench::DatasetKind;
use crate::classifier::LinearModel;
use crate::dictionary::{Dictionary, Provenance};
use crate::encoder::{EncoderConfig, PoolGrid, PoolOp};
use crate::error::{PdlError, Result};
use crate::linalg::RowMatrix;
use crate::nystrom::{NystromTransform, PcaTransform};
use crate::patches::ZcaWhitener;
use crate::selection::ExemplarSet;

pub const MAGIC: &[u8; 4] = b"PINV";
pub const VERSION: u32 = 1;

pub type Tag = [u8; 4];

pub const TAG_ZCA: Tag = *b"ZCA ";
pub const TAG_DICT: Tag = *b"DICT";
pub const TAG_EXEMPLARS: Tag = *b"EXEM";
pub const TAG_NYSTROM: Tag = *b"NYST";
pub const TAG_PCA: Tag = *b"PCA ";
pub const TAG_SVM: Tag = *b"SVM ";
pub const TAG_ENCODER: Tag = *b"ENCC";
pub const TAG_SOURCE: Tag = *b"SRC ";

const HEADER: usize = 12;
const ENTRY: usize = 20;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelFile {
    sections: Vec<(Tag, Vec<u8>)>,
}

impl ModelFile {
    pub fn new() -> Self {
        ModelFile::default()
    }

    pub fn tags(&self) -> Vec<Tag> {
        self.sections.iter().map(|(t, _)| *t).collect()
    }

    pub fn raw(&self, tag: Tag) -> Option<&[u8]> {
        self.sections
            .iter()
            .find(|(t, _)| *t == tag)
            .map(|(_, b)| b.as_slice())
    }

    /// Replace the section in place, or append it.
    pub fn set_raw(&mut self, tag: Tag, bytes: Vec<u8>) {
        match self.sections.iter_mut().find(|(t, _)| *t == tag) {
            Some(slot) => slot.1 = bytes,
            None => self.sections.push((tag, bytes)),
        }
    }

    pub fn remove(&mut self, tag: Tag) {
        self.sections.retain(|(t, _)| *t != tag);
    }

    pub fn contains(&self, tag: Tag) -> bool {
        self.raw(tag).is_some()
    }

    pub fn get<T: Section>(&self) -> Result<T> {
        let bytes = self
            .raw(T::TAG)
            .ok_or_else(|| PdlError::MissingSection(tag_name(T::TAG)))?;
        let mut r = Reader::new(bytes, T::TAG);
        let value = T::decode(&mut r)?;
        r.finish()?;
        Ok(value)
    }

    pub fn get_opt<T: Section>(&self) -> Result<Option<T>> {
        if self.contains(T::TAG) {
            self.get().map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn put<T: Section>(&mut self, value: &T) {
        let mut w = Writer::default();
        value.encode(&mut w);
        self.set_raw(T::TAG, w.0);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        let mut offset = (HEADER + ENTRY * self.sections.len()) as u64;
        for (tag, bytes) in &self.sections {
            out.extend_from_slice(tag);
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            offset += bytes.len() as u64;
        }
        for (_, bytes) in &self.sections {
            out.extend_from_slice(bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER || &bytes[..4] != MAGIC {
            return Err(PdlError::Format("missing PINV magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(PdlError::Format(format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let table_end = HEADER
            .checked_add(
                count
                    .checked_mul(ENTRY)
                    .ok_or_else(|| PdlError::Format("section count overflow".into()))?,
            )
            .ok_or_else(|| PdlError::Format("section count overflow".into()))?;
        if bytes.len() < table_end {
            return Err(PdlError::Format("truncated section table".into()));
        }
        let mut sections = Vec::with_capacity(count);
        for e in 0..count {
            let at = HEADER + e * ENTRY;
            let tag: Tag = bytes[at..at + 4].try_into().unwrap();
            let offset = u64::from_le_bytes(bytes[at + 4..at + 12].try_into().unwrap());
            let len = u64::from_le_bytes(bytes[at + 12..at + 20].try_into().unwrap());
            let end = offset.checked_add(len).filter(|&e| e <= bytes.len() as u64);
            let Some(end) = end else {
                return Err(PdlError::Format(format!(
                    "section {} runs past end of file",
                    tag_name(tag)
                )));
            };
            sections.push((tag, bytes[offset as usize..end as usize].to_vec()));
        }
        Ok(ModelFile { sections })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| PdlError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| PdlError::io(path, e))
    }
}

pub fn tag_name(tag: Tag) -> String {
    String::from_utf8_lossy(&tag).trim_end().to_string()
}

#[derive(Debug, Default)]
pub struct Writer(Vec<u8>);

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    pub fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: impl IntoIterator<Item = f64>) {
        for v in vs {
            self.f64(v);
        }
    }

    pub fn u32s(&mut self, vs: impl IntoIterator<Item = usize>) {
        for v in vs {
            self.u32(v);
        }
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.u32(v.len());
        self.0.extend_from_slice(v);
    }

    /// Row-major dump of a column-major matrix.
    pub fn matrix(&mut self, m: &DMatrix<f64>) {
        for i in 0..m.nrows() {
            self.f64s(m.row(i).iter().copied());
        }
    }
}

pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    tag: Tag,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], tag: Tag) -> Self {
        Reader { bytes, pos: 0, tag }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(PdlError::Format(format!(
                "section {} truncated at byte {}",
                tag_name(self.tag),
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| self.bad("length overflow"))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn u32s(&mut self, n: usize) -> Result<Vec<usize>> {
        (0..n).map(|_| self.u32()).collect()
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()?;
        self.take(n)
    }

    pub fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let data = self.f64s(
            rows.checked_mul(cols)
                .ok_or_else(|| self.bad("length overflow"))?,
        )?;
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }

    pub fn bad(&self, what: &str) -> PdlError {
        PdlError::Format(format!("section {}: {what}", tag_name(self.tag)))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.bad("trailing bytes"));
        }
        Ok(())
    }
}

pub trait Section: Sized {
    const TAG: Tag;
    fn encode(&self, w: &mut Writer);
    fn decode(r: &mut Reader<'_>) -> Result<Self>;
}

impl Section for ZcaWhitener {
    const TAG: Tag = TAG_ZCA;

    fn encode(&self, w: &mut Writer) {
        w.u32(self.dim());
        w.f64(self.epsilon);
        w.f64s(self.mean.iter().copied());
        w.matrix(&self.transform);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let d = r.u32()?;
        let epsilon = r.f64()?;
        let mean = r.f64s(d)?;
        let transform = r.matrix(d, d)?;
        Ok(ZcaWhitener {
            mean,
            transform,
            epsilon,
        })
    }
}

impl Section for Dictionary {
    const TAG: Tag = TAG_DICT;

    fn encode(&self, w: &mut Writer) {
        w.u32(self.size());
        w.u32(self.dim());
        w.u32(self.patch_side);
        w.u32(self.channels);
        w.u8(self.provenance.code());
        w.f64s(self.codes.as_slice().iter().copied());
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let (m, d) = (r.u32()?, r.u32()?);
        let (side, channels) = (r.u32()?, r.u32()?);
        let provenance =
            Provenance::from_code(r.u8()?).ok_or_else(|| r.bad("unknown provenance"))?;
        let codes = RowMatrix::from_vec(m, d, r.f64s(m * d)?)?;
        Dictionary::new(codes, side, channels, provenance)
    }
}

impl Section for ExemplarSet {
    const TAG: Tag = TAG_EXEMPLARS;

    fn encode(&self, w: &mut Writer) {
        w.u32(self.indices.len());
        w.u32(self.assignment.len());
        w.f64(self.preference_used);
        w.u32s(self.indices.iter().copied());
        w.u32s(self.assignment.iter().copied());
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let k = r.u32()?;
        let m = r.u32()?;
        let preference_used = r.f64()?;
        let indices = r.u32s(k)?;
        let assignment = r.u32s(m)?;
        let set = ExemplarSet {
            indices,
            assignment,
            preference_used,
        };
        if !set.is_consistent() {
            return Err(r.bad("exemplar assignment is inconsistent"));
        }
        Ok(set)
    }
}

impl Section for NystromTransform {
    const TAG: Tag = TAG_NYSTROM;

    fn encode(&self, w: &mut Writer) {
        let k = self.k();
        w.u32(k);
        w.u32s(self.selected.iter().copied());
        w.matrix(&self.lambda_v);
        w.f64s(self.singular_values.iter().copied());
        w.u32(self.effective_rank);
        w.u32(self.a.nrows());
        w.matrix(&self.a);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let k = r.u32()?;
        let selected = r.u32s(k)?;
        let lambda_v = r.matrix(k, k)?;
        let singular_values = r.f64s(k)?;
        let effective_rank = r.u32()?;
        let m = r.u32()?;
        let a = r.matrix(m, k)?;
        Ok(NystromTransform {
            selected,
            a,
            lambda_v,
            singular_values,
            effective_rank,
        })
    }
}

impl Section for PcaTransform {
    const TAG: Tag = TAG_PCA;

    fn encode(&self, w: &mut Writer) {
        w.u32(self.dim());
        w.u32(self.k());
        w.f64s(self.mean.iter().copied());
        w.f64s(self.eigenvalues.iter().copied());
        w.matrix(&self.components);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let (m, k) = (r.u32()?, r.u32()?);
        let mean = r.f64s(m)?;
        let eigenvalues = r.f64s(k)?;
        let components = r.matrix(m, k)?;
        Ok(PcaTransform {
            components,
            eigenvalues,
            mean,
        })
    }
}

impl Section for LinearModel {
    const TAG: Tag = TAG_SVM;

    fn encode(&self, w: &mut Writer) {
        w.u32(self.num_classes());
        w.u32(self.dim());
        w.f64(self.lambda);
        w.f64s(self.weights.as_slice().iter().copied());
        w.f64s(self.biases.iter().copied());
        w.f64s(self.feature_means.iter().copied());
        w.f64s(self.feature_scales.iter().copied());
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let (c, d) = (r.u32()?, r.u32()?);
        let lambda = r.f64()?;
        let weights = RowMatrix::from_vec(c, d, r.f64s(c * d)?)?;
        Ok(LinearModel {
            weights,
            biases: r.f64s(c)?,
            feature_means: r.f64s(d)?,
            feature_scales: r.f64s(d)?,
            lambda,
        })
    }
}

/// Encoding settings that must match between selection and evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderSettings {
    pub encoder: EncoderConfig,
    pub bias: f64,
}

impl Section for EncoderSettings {
    const TAG: Tag = TAG_ENCODER;

    fn encode(&self, w: &mut Writer) {
        w.f64(self.encoder.alpha);
        w.u32(self.encoder.pool_grid.rows);
        w.u32(self.encoder.pool_grid.cols);
        w.u8(self.encoder.pool_op.code());
        w.u32(self.encoder.stride);
        w.f64(self.bias);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let alpha = r.f64()?;
        let pool_grid = PoolGrid::new(r.u32()?, r.u32()?);
        let pool_op =
            PoolOp::from_code(r.u8()?).ok_or_else(|| r.bad("unknown pooling operator"))?;
        let stride = r.u32()?;
        let bias = r.f64()?;
        Ok(EncoderSettings {
            encoder: EncoderConfig {
                alpha,
                pool_grid,
                pool_op,
                stride,
            },
            bias,
        })
    }
}

/// Where the training images for this model came from, so later stages can
/// find them without repeating the flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSource {
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    pub resize: usize,
}

impl Section for DataSource {
    const TAG: Tag = TAG_SOURCE;

    fn encode(&self, w: &mut Writer) {
        w.u8(match self.dataset {
            DatasetKind::Cifar10 => 0,
            DatasetKind::Stl10 => 1,
        });
        w.u32(self.resize);
        w.bytes(self.data_dir.to_string_lossy().as_bytes());
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let dataset = match r.u8()? {
            0 => DatasetKind::Cifar10,
            1 => DatasetKind::Stl10,
            _ => return Err(r.bad("unknown dataset")),
        };
        let resize = r.u32()?;
        let dir = std::str::from_utf8(r.bytes()?).map_err(|_| r.bad("path is not UTF-8"))?;
        Ok(DataSource {
            dataset,
            data_dir: PathBuf::from(dir),
            resize,
        })
    }
}
