//! Sequence datasets: synthetic delay recall, permuted pixel MNIST and
//! binned spike-event recordings.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::init::seeded_rng;
use crate::linalg::Matrix;
use crate::model::Target;

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes { labels: Vec<usize>, classes: usize },
    Sequences(Vec<Matrix>),
}

/// Sequences of shape `T x M`, one per sample, with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub inputs: Vec<Matrix>,
    pub targets: Targets,
    pub lengths: Vec<usize>,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::cols)
    }

    pub fn seq_len(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }

    pub fn classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Classes { classes, .. } => Some(*classes),
            Targets::Sequences(_) => None,
        }
    }

    pub fn target(&self, i: usize) -> Target<'_> {
        match &self.targets {
            Targets::Classes { labels, .. } => Target::Class(labels[i]),
            Targets::Sequences(seqs) => Target::Sequence(&seqs[i]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.inputs.len();
        if self.lengths.len() != n {
            return Err(Error::invalid("one length per sample"));
        }
        for (x, &len) in self.inputs.iter().zip(&self.lengths) {
            if len > x.rows() {
                return Err(Error::invalid(format!(
                    "length {len} exceeds sequence of {} steps",
                    x.rows()
                )));
            }
        }
        match &self.targets {
            Targets::Classes { labels, classes } => {
                if labels.len() != n {
                    return Err(Error::invalid("one label per sample"));
                }
                if let Some(&bad) = labels.iter().find(|&&l| l >= *classes) {
                    return Err(Error::invalid(format!(
                        "label {bad} outside {classes} classes"
                    )));
                }
            }
            Targets::Sequences(seqs) => {
                if seqs.len() != n {
                    return Err(Error::invalid("one target sequence per sample"));
                }
                if seqs
                    .iter()
                    .zip(&self.inputs)
                    .any(|(t, x)| t.rows() != x.rows())
                {
                    return Err(Error::invalid("target sequences must match input length"));
                }
            }
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> SequenceBatch {
        let targets = match &self.targets {
            Targets::Classes { labels, classes } => Targets::Classes {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
            Targets::Sequences(seqs) => {
                Targets::Sequences(indices.iter().map(|&i| seqs[i].clone()).collect())
            }
        };
        SequenceBatch {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets,
            lengths: indices.iter().map(|&i| self.lengths[i]).collect(),
        }
    }

    /// CRC-32 over inputs and targets in little-endian order.
    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for x in &self.inputs {
            for v in x.as_slice() {
                h.update(&v.to_le_bytes());
            }
        }
        match &self.targets {
            Targets::Classes { labels, .. } => {
                for &l in labels {
                    h.update(&(l as u64).to_le_bytes());
                }
            }
            Targets::Sequences(seqs) => {
                for t in seqs {
                    for v in t.as_slice() {
                        h.update(&v.to_le_bytes());
                    }
                }
            }
        }
        h.finalize()
    }
}

/// Uniform `[-1, 1]` scalar inputs; the target at step `t` is the input at
/// `t - delay`, zero before the first delayed value arrives.
pub fn delay_recall_task(
    batch: usize,
    len: usize,
    delay: usize,
    seed: u64,
) -> Result<SequenceBatch> {
    if delay >= len {
        return Err(Error::invalid(format!(
            "delay {delay} must be shorter than the sequence ({len})"
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut inputs = Vec::with_capacity(batch);
    let mut targets = Vec::with_capacity(batch);
    for _ in 0..batch {
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let mut y = vec![0.0; len];
        y[delay..].copy_from_slice(&x[..len - delay]);
        inputs.push(Matrix::from_vec(len, 1, x));
        targets.push(Matrix::from_vec(len, 1, y));
    }
    Ok(SequenceBatch {
        inputs,
        targets: Targets::Sequences(targets),
        lengths: vec![len; batch],
    })
}

/// Random partition of `0..count` into (train, validation).
pub fn split_indices(
    count: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::invalid("validation fraction must be in [0, 1)"));
    }
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut seeded_rng(seed));
    let n_val = (count as f64 * val_fraction).round() as usize;
    let val = idx.split_off(count - n_val);
    Ok((idx, val))
}

// ---------------------------------------------------------------------------
// IDX

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(offset as u64, "unexpected end of file in header"))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(0, format!("bad image magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let need = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::format(
            bytes.len() as u64,
            format!(
                "truncated: {need} pixel bytes expected, {} present",
                body.len()
            ),
        ));
    }
    Ok(IdxImages {
        rows,
        cols,
        pixels: body[..need].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(0, format!("bad label magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated: {count} labels expected, {} present", body.len()),
        ));
    }
    Ok(body[..count].to_vec())
}

/// Images with pixels scaled to `[0, 1]` and their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub images: IdxImages,
    pub labels: Vec<u8>,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label_histogram(&self) -> [usize; 10] {
        let mut h = [0; 10];
        for &l in &self.labels {
            h[l as usize % 10] += 1;
        }
        h
    }
}

pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<ImageSet> {
    let images = parse_idx_images(&fs::read(images)?)?;
    let labels = parse_idx_labels(&fs::read(labels)?)?;
    if images.count() != labels.len() {
        return Err(Error::format(
            4,
            format!("{} images but {} labels", images.count(), labels.len()),
        ));
    }
    if let Some(pos) = labels.iter().position(|&l| l > 9) {
        return Err(Error::format(
            8 + pos as u64,
            format!("label {} is not a digit", labels[pos]),
        ));
    }
    Ok(ImageSet { images, labels })
}

/// Fixed pixel permutation derived from `seed`.
pub fn pixel_permutation(len: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..len).collect();
    p.shuffle(&mut seeded_rng(seed));
    p
}

/// Flattens the selected images into `pixels x 1` sequences whose step `t`
/// holds pixel `permutation[t]`.
pub fn permute_sequence(
    set: &ImageSet,
    indices: &[usize],
    permutation: &[usize],
) -> Result<SequenceBatch> {
    let n = set.images.rows * set.images.cols;
    if permutation.len() != n {
        return Err(Error::invalid(format!(
            "permutation has {} entries for {n} pixels",
            permutation.len()
        )));
    }
    let mut inputs = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= set.len() {
            return Err(Error::invalid(format!("image index {i} out of range")));
        }
        let img = set.images.image(i);
        let seq: Vec<f64> = permutation
            .iter()
            .map(|&p| f64::from(img[p]) / 255.0)
            .collect();
        inputs.push(Matrix::from_vec(n, 1, seq));
        labels.push(set.labels[i] as usize);
    }
    Ok(SequenceBatch {
        lengths: vec![n; inputs.len()],
        inputs,
        targets: Targets::Classes {
            labels,
            classes: 10,
        },
    })
}

// ---------------------------------------------------------------------------
// Spike events

pub const EVENT_MAGIC: [u8; 4] = *b"DSPK";
pub const EVENT_VERSION: u32 = 1;
const TEXT_TAG: &str = "dlssm-spikes";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpikeEvent {
    pub sample: u32,
    pub time_us: u32,
    pub channel: u32,
}

/// Spike recordings for a set of labelled samples.
///
/// Binary layout, little-endian:
///
/// ```text
/// 0   magic "DSPK"
/// 4   version u32 (1)
/// 8   channels u32
/// 12  bin width in microseconds u32
/// 16  steps u32
/// 20  samples u32
/// 24  labels, one u32 per sample
/// ..  events, 12 bytes each: sample u32, time_us u32, channel u32
/// ```
///
/// The text form carries the same fields:
///
/// ```text
/// dlssm-spikes 1
/// channels 700
/// bin_us 10000
/// steps 100
/// labels 3 0 7
/// 0 15000 12
/// ```
///
/// Events past `steps * bin_us` are dropped; several events in one bin
/// produce a single spike.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventFile {
    pub channels: u32,
    pub bin_us: u32,
    pub steps: u32,
    pub labels: Vec<u32>,
    pub events: Vec<SpikeEvent>,
}

impl EventFile {
    pub fn parse(bytes: &[u8]) -> Result<EventFile> {
        if bytes.starts_with(&EVENT_MAGIC) {
            Self::parse_binary(bytes)
        } else if bytes.starts_with(TEXT_TAG.as_bytes()) {
            let text = std::str::from_utf8(bytes)
                .map_err(|e| Error::format(e.valid_up_to() as u64, "event text is not UTF-8"))?;
            Self::parse_text(text)
        } else {
            Err(Error::format(0, "not a spike event file"))
        }
    }

    fn parse_binary(bytes: &[u8]) -> Result<EventFile> {
        let word = |offset: usize| -> Result<u32> {
            bytes
                .get(offset..offset + 4)
                .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .ok_or_else(|| Error::format(offset as u64, "unexpected end of file"))
        };
        let version = word(4)?;
        if version != EVENT_VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let channels = word(8)?;
        let bin_us = word(12)?;
        let steps = word(16)?;
        let samples = word(20)? as usize;
        let labels = (0..samples)
            .map(|i| word(24 + 4 * i))
            .collect::<Result<Vec<_>>>()?;
        let start = 24 + 4 * samples;
        let body = &bytes[start..];
        if !body.len().is_multiple_of(12) {
            return Err(Error::format(
                (start + body.len() / 12 * 12) as u64,
                "truncated event record",
            ));
        }
        let events = (0..body.len() / 12)
            .map(|k| {
                let o = start + 12 * k;
                Ok(SpikeEvent {
                    sample: word(o)?,
                    time_us: word(o + 4)?,
                    channel: word(o + 8)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let file = EventFile {
            channels,
            bin_us,
            steps,
            labels,
            events,
        };
        file.check(|k| (start + 12 * k) as u64)?;
        Ok(file)
    }

    fn parse_text(text: &str) -> Result<EventFile> {
        let mut channels = None;
        let mut bin_us = None;
        let mut steps = None;
        let mut labels = None;
        let mut events = Vec::new();
        let mut event_offsets = Vec::new();
        let mut offset = 0usize;
        for (n, line) in text.split_inclusive('\n').enumerate() {
            let at = offset as u64;
            offset += line.len();
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let head = parts.next().unwrap_or_default();
            let num = |s: &str| -> Result<u32> {
                s.parse::<u32>().map_err(|_| {
                    Error::format(
                        at,
                        format!("line {}: `{s}` is not an unsigned integer", n + 1),
                    )
                })
            };
            let single = |parts: &mut std::str::SplitWhitespace<'_>| -> Result<u32> {
                let v = parts
                    .next()
                    .ok_or_else(|| Error::format(at, format!("line {}: missing value", n + 1)))?;
                num(v)
            };
            match head {
                TEXT_TAG => {
                    let v = single(&mut parts)?;
                    if v != EVENT_VERSION {
                        return Err(Error::format(at, format!("unsupported version {v}")));
                    }
                }
                "channels" => channels = Some(single(&mut parts)?),
                "bin_us" => bin_us = Some(single(&mut parts)?),
                "steps" => steps = Some(single(&mut parts)?),
                "labels" => labels = Some(parts.map(num).collect::<Result<Vec<_>>>()?),
                _ => {
                    let fields = std::iter::once(head)
                        .chain(parts)
                        .map(num)
                        .collect::<Result<Vec<_>>>()?;
                    let [sample, time_us, channel] = fields[..] else {
                        return Err(Error::format(
                            at,
                            format!("line {}: expected `sample time_us channel`", n + 1),
                        ));
                    };
                    events.push(SpikeEvent {
                        sample,
                        time_us,
                        channel,
                    });
                    event_offsets.push(at);
                }
            }
        }
        let missing = |what: &str| Error::format(offset as u64, format!("missing `{what}` line"));
        let file = EventFile {
            channels: channels.ok_or_else(|| missing("channels"))?,
            bin_us: bin_us.ok_or_else(|| missing("bin_us"))?,
            steps: steps.ok_or_else(|| missing("steps"))?,
            labels: labels.ok_or_else(|| missing("labels"))?,
            events,
        };
        file.check(|k| event_offsets[k])?;
        Ok(file)
    }

    fn check(&self, offset_of: impl Fn(usize) -> u64) -> Result<()> {
        if self.channels == 0 || self.bin_us == 0 || self.steps == 0 {
            return Err(Error::format(
                8,
                "channels, bin width and steps must be positive",
            ));
        }
        for (k, e) in self.events.iter().enumerate() {
            if e.channel >= self.channels {
                return Err(Error::format(
                    offset_of(k),
                    format!("channel {} outside 0..{}", e.channel, self.channels),
                ));
            }
            if e.sample as usize >= self.labels.len() {
                return Err(Error::format(
                    offset_of(k),
                    format!("sample {} outside 0..{}", e.sample, self.labels.len()),
                ));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 4 * self.labels.len() + 12 * self.events.len());
        out.extend_from_slice(&EVENT_MAGIC);
        for w in [
            EVENT_VERSION,
            self.channels,
            self.bin_us,
            self.steps,
            self.labels.len() as u32,
        ] {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        for e in &self.events {
            for w in [e.sample, e.time_us, e.channel] {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{TEXT_TAG} {EVENT_VERSION}\nchannels {}\nbin_us {}\nsteps {}\nlabels",
            self.channels, self.bin_us, self.steps
        );
        for l in &self.labels {
            s.push_str(&format!(" {l}"));
        }
        s.push('\n');
        for e in &self.events {
            s.push_str(&format!("{} {} {}\n", e.sample, e.time_us, e.channel));
        }
        s
    }

    /// Bins the events into one binary `steps x channels` grid per sample.
    pub fn bin(&self) -> SequenceBatch {
        let (steps, channels) = (self.steps as usize, self.channels as usize);
        let mut inputs = vec![Matrix::zeros(steps, channels); self.labels.len()];
        for e in &self.events {
            let bin = (e.time_us / self.bin_us) as usize;
            if bin < steps {
                inputs[e.sample as usize][(bin, e.channel as usize)] = 1.0;
            }
        }
        let labels: Vec<usize> = self.labels.iter().map(|&l| l as usize).collect();
        let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
        SequenceBatch {
            lengths: vec![steps; labels.len()],
            inputs,
            targets: Targets::Classes { labels, classes },
        }
    }
}

pub fn load_binned_spikes(path: &Path) -> Result<SequenceBatch> {
    Ok(EventFile::parse(&fs::read(path)?)?.bin())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(events: Vec<SpikeEvent>) -> EventFile {
        EventFile {
            channels: 4,
            bin_us: 10_000,
            steps: 5,
            labels: vec![1, 0],
            events,
        }
    }

    fn ev(sample: u32, time_us: u32, channel: u32) -> SpikeEvent {
        SpikeEvent {
            sample,
            time_us,
            channel,
        }
    }

    #[test]
    fn zero_delay_is_identity() {
        let b = delay_recall_task(3, 10, 0, 1).unwrap();
        let Targets::Sequences(t) = &b.targets else {
            panic!()
        };
        assert_eq!(t, &b.inputs);
    }

    #[test]
    fn unit_delay_shifts_by_one() {
        let b = delay_recall_task(1, 3, 1, 5).unwrap();
        let x = b.inputs[0].as_slice();
        let Targets::Sequences(t) = &b.targets else {
            panic!()
        };
        assert_eq!(t[0].as_slice(), &[0.0, x[0], x[1]]);
    }

    #[test]
    fn delay_recall_is_seeded() {
        let a = delay_recall_task(4, 16, 2, 9).unwrap();
        let b = delay_recall_task(4, 16, 2, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(
            a.checksum(),
            delay_recall_task(4, 16, 2, 10).unwrap().checksum()
        );
        assert!(a
            .inputs
            .iter()
            .all(|x| x.as_slice().iter().all(|v| v.abs() <= 1.0)));
        a.validate().unwrap();
    }

    #[test]
    fn delay_must_fit() {
        assert!(matches!(
            delay_recall_task(1, 4, 4, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn splits_are_disjoint_partitions() {
        let (train, val) = split_indices(103, 0.2, 4).unwrap();
        assert_eq!(val.len(), 21);
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
    }

    #[test]
    fn permutation_is_a_bijection() {
        let mut p = pixel_permutation(784, 3);
        assert_ne!(p, (0..784).collect::<Vec<_>>());
        p.sort_unstable();
        assert_eq!(p, (0..784).collect::<Vec<_>>());
    }

    fn tiny_idx(count: u32) -> (Vec<u8>, Vec<u8>) {
        let mut img = Vec::new();
        for w in [IDX_IMAGES_MAGIC, count, 2, 2] {
            img.extend_from_slice(&w.to_be_bytes());
        }
        img.extend((0..count * 4).map(|i| (i * 17 % 256) as u8));
        let mut lab = Vec::new();
        for w in [IDX_LABELS_MAGIC, count] {
            lab.extend_from_slice(&w.to_be_bytes());
        }
        lab.extend((0..count).map(|i| (i % 10) as u8));
        (img, lab)
    }

    #[test]
    fn idx_roundtrip_and_scaling() {
        let (img, lab) = tiny_idx(3);
        let set = ImageSet {
            images: parse_idx_images(&img).unwrap(),
            labels: parse_idx_labels(&lab).unwrap(),
        };
        let b = permute_sequence(&set, &[0, 1, 2], &[0, 1, 2, 3]).unwrap();
        assert_eq!(
            b.inputs[1].as_slice(),
            &[68.0 / 255.0, 85.0 / 255.0, 102.0 / 255.0, 119.0 / 255.0]
        );
        assert_eq!(b.target(2), Target::Class(2));
    }

    #[test]
    fn zero_image_gives_zero_sequence() {
        let set = ImageSet {
            images: IdxImages {
                rows: 28,
                cols: 28,
                pixels: vec![0; 784],
            },
            labels: vec![4],
        };
        let ident: Vec<usize> = (0..784).collect();
        let b = permute_sequence(&set, &[0], &ident).unwrap();
        assert_eq!(b.inputs[0].shape(), (784, 1));
        assert!(b.inputs[0].as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn idx_errors_carry_offsets() {
        let (mut img, mut lab) = tiny_idx(3);
        img[3] = 0x02;
        assert!(matches!(
            parse_idx_images(&img),
            Err(Error::Format { offset: 0, .. })
        ));
        img[3] = 0x03;
        img.truncate(20);
        assert!(matches!(
            parse_idx_images(&img),
            Err(Error::Format { offset: 20, .. })
        ));
        lab.truncate(6);
        assert!(matches!(
            parse_idx_labels(&lab),
            Err(Error::Format { offset: 4, .. })
        ));
    }

    #[test]
    fn empty_events_give_silent_grid() {
        let b = file(vec![]).bin();
        assert_eq!(b.len(), 2);
        assert!(b
            .inputs
            .iter()
            .all(|x| x.shape() == (5, 4) && x.max_abs() == 0.0));
    }

    #[test]
    fn event_lands_in_floor_bin() {
        let b = file(vec![ev(0, 15_000, 2)]).bin();
        assert_eq!(b.inputs[0][(1, 2)], 1.0);
        assert_eq!(b.inputs[0].as_slice().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn events_in_one_bin_clip_to_one() {
        let b = file(vec![ev(1, 20_000, 0), ev(1, 29_999, 0), ev(1, 60_000, 0)]).bin();
        assert_eq!(b.inputs[1][(2, 0)], 1.0);
        assert_eq!(b.inputs[1].as_slice().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn binary_and_text_agree() {
        let f = file(vec![ev(0, 1, 3), ev(1, 41_000, 1)]);
        assert_eq!(EventFile::parse(&f.to_bytes()).unwrap(), f);
        assert_eq!(EventFile::parse(f.to_text().as_bytes()).unwrap(), f);
    }

    #[test]
    fn channel_out_of_range_is_a_format_error() {
        let f = file(vec![ev(0, 0, 1), ev(0, 0, 4)]);
        let err = EventFile::parse(&f.to_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 44, .. }), "{err}");
        let err = EventFile::parse(f.to_text().as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn truncated_event_record() {
        let mut bytes = file(vec![ev(0, 0, 1)]).to_bytes();
        bytes.pop();
        assert!(matches!(
            EventFile::parse(&bytes),
            Err(Error::Format { offset: 32, .. })
        ));
    }
}
