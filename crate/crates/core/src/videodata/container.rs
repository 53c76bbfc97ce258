//! `DYN1` container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic      "DYN1"
//! count      u32
//! split      u8   (0 train, 1 test)
//! classes    u32
//! count × record:
//!   id       u32 length + UTF-8 bytes
//!   label    u32
//!   kind     u8   (0 video, 1 image from real video, 2 generated image)
//!   T, H, W  u32 each (T = 1 for images)
//!   source   u32 length + UTF-8 bytes   (images only; empty = none)
//!   pixels   T·H·W × f32
//! ```
//!
//! Pixels are stored as `f32`; values already representable in `f32`
//! round-trip exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dataset, Sample, Split, Video};
use crate::binio::{Reader, Writer};
use crate::numerics::Tensor;
use crate::rankpool::{DynamicImage, Provenance};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DYN1";
const MAX_ELEMENTS: usize = 1 << 28;

const KIND_VIDEO: u8 = 0;
const KIND_REAL_IMAGE: u8 = 1;
const KIND_GENERATED_IMAGE: u8 = 2;

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    write_dataset_to(dataset, BufWriter::new(file))?;
    Ok(())
}

pub fn write_dataset_to<W: Write>(dataset: &Dataset, sink: W) -> Result<W> {
    let mut w = Writer::new(sink);
    w.bytes(MAGIC)?;
    w.u32(dataset.len() as u32)?;
    w.u8(match dataset.split {
        Split::Train => 0,
        Split::Test => 1,
    })?;
    w.u32(dataset.num_classes as u32)?;
    for item in dataset.items() {
        w.string(item.id())?;
        w.u32(item.label() as u32)?;
        match item {
            Sample::Video(v) => {
                w.u8(KIND_VIDEO)?;
                w.u32(v.len() as u32)?;
                w.u32(v.height() as u32)?;
                w.u32(v.width() as u32)?;
                w.f32s(v.pixels().as_slice())?;
            }
            Sample::Image(d) => {
                w.u8(match d.provenance {
                    Provenance::SparseSampledReal => KIND_REAL_IMAGE,
                    Provenance::GanGenerated => KIND_GENERATED_IMAGE,
                })?;
                w.u32(1)?;
                w.u32(d.height() as u32)?;
                w.u32(d.width() as u32)?;
                w.string(d.source.as_deref().unwrap_or(""))?;
                w.f32s(d.pixels().as_slice())?;
            }
        }
    }
    w.finish()
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = File::open(path.as_ref())?;
    read_dataset_from(BufReader::new(file))
}

pub fn read_dataset_from<R: Read>(source: R) -> Result<Dataset> {
    let mut r = Reader::new(source);
    r.magic(MAGIC)?;
    let count = r.u32("record count")? as usize;
    let split = match r.u8("split tag")? {
        0 => Split::Train,
        1 => Split::Test,
        other => return Err(r.fail(format!("unknown split tag {other}"))),
    };
    let num_classes = r.u32("class count")? as usize;
    let mut items = Vec::with_capacity(count.min(1 << 16));
    for index in 0..count {
        r.at(format!("record {index}"));
        let id = r.string("id")?;
        r.at(format!("record {index} ('{id}')"));
        let label = r.u32("label")? as usize;
        if label >= num_classes {
            return Err(r.fail(format!("label {label} out of range for {num_classes} classes")));
        }
        let kind = r.u8("kind")?;
        let t = r.u32("T")? as usize;
        let h = r.u32("H")? as usize;
        let w = r.u32("W")? as usize;
        let numel = t.checked_mul(h).and_then(|x| x.checked_mul(w)).unwrap_or(usize::MAX);
        if numel == 0 || numel > MAX_ELEMENTS {
            return Err(r.fail(format!("implausible geometry {t}x{h}x{w}")));
        }
        let sample = match kind {
            KIND_VIDEO => {
                let data = r.f32s(numel, "pixels")?;
                let frames = Tensor::new(vec![t, h, w], data).map_err(|e| r.fail(e.to_string()))?;
                Sample::Video(Video::new(id, label, frames).map_err(|e| r.fail(e.to_string()))?)
            }
            KIND_REAL_IMAGE | KIND_GENERATED_IMAGE => {
                if t != 1 {
                    return Err(r.fail(format!("image record with T = {t}")));
                }
                let source = r.string("source id")?;
                let data = r.f32s(numel, "pixels")?;
                let pixels = Tensor::new(vec![h, w], data).map_err(|e| r.fail(e.to_string()))?;
                let provenance = if kind == KIND_REAL_IMAGE {
                    Provenance::SparseSampledReal
                } else {
                    Provenance::GanGenerated
                };
                Sample::Image(DynamicImage {
                    id,
                    label,
                    provenance,
                    source: (!source.is_empty()).then_some(source),
                    pixels,
                })
            }
            other => return Err(r.fail(format!("unknown record kind {other}"))),
        };
        items.push(sample);
    }
    r.finish()?;
    Dataset::new(split, num_classes, items).map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::format("dataset", msg),
        e => e,
    })
}
