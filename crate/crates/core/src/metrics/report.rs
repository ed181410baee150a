use std::fmt::Write as _;

use super::{auc_judd, cc, nss, sauc, sim, FixationSet};
use crate::data::{ClipSample, Dataset};
use crate::error::{Error, Result};
use crate::model::SaliencyModel;
use crate::tensor::Tensor;

pub const REPORT_HEADER: &str = "clip_id,cc,nss,auc_j,sauc,sim";

/// Anything that maps a clip to an `H×W` saliency map.
pub trait Predictor {
    fn predict_clip(&self, clip: &ClipSample) -> Result<Tensor<f32>>;
}

impl Predictor for SaliencyModel<f32> {
    fn predict_clip(&self, clip: &ClipSample) -> Result<Tensor<f32>> {
        self.predict(&clip.video, &clip.audio)
    }
}

impl<F: Fn(&ClipSample) -> Result<Tensor<f32>>> Predictor for F {
    fn predict_clip(&self, clip: &ClipSample) -> Result<Tensor<f32>> {
        self(clip)
    }
}

/// Where shuffled-AUC negatives come from.
#[derive(Clone, Copy, Debug)]
pub enum ShufflePool<'a> {
    /// Fixations of every other clip in the evaluated dataset.
    WithinDataset,
    /// A fixed external pool, e.g. another dataset's fixations.
    External(&'a [FixationSet]),
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricValues {
    pub cc: f64,
    pub nss: f64,
    pub auc_j: f64,
    pub sauc: f64,
    pub sim: f64,
}

impl MetricValues {
    fn mean_of<'a>(rows: impl ExactSizeIterator<Item = &'a MetricValues>) -> MetricValues {
        let n = rows.len() as f64;
        let mut m = MetricValues::default();
        for r in rows {
            m.cc += r.cc;
            m.nss += r.nss;
            m.auc_j += r.auc_j;
            m.sauc += r.sauc;
            m.sim += r.sim;
        }
        MetricValues {
            cc: m.cc / n,
            nss: m.nss / n,
            auc_j: m.auc_j / n,
            sauc: m.sauc / n,
            sim: m.sim / n,
        }
    }

    fn csv_fields(&self) -> String {
        format!("{:.6},{:.6},{:.6},{:.6},{:.6}", self.cc, self.nss, self.auc_j, self.sauc, self.sim)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipMetrics {
    pub clip_id: String,
    pub values: MetricValues,
    /// CC or NSS fell back to 0 on a zero-variance map.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub clips: Vec<ClipMetrics>,
    pub mean: MetricValues,
}

impl MetricReport {
    pub fn from_clips(clips: Vec<ClipMetrics>) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::invalid("metric report needs at least one clip"));
        }
        let mean = MetricValues::mean_of(clips.iter().map(|c| &c.values));
        Ok(MetricReport { clips, mean })
    }

    pub fn degenerate_count(&self) -> usize {
        self.clips.iter().filter(|c| c.degenerate).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for c in &self.clips {
            writeln!(out, "{},{}", c.clip_id, c.values.csv_fields()).unwrap();
        }
        writeln!(out, "mean,{}", self.mean.csv_fields()).unwrap();
        out
    }

    pub fn summary_table(&self, label: &str) -> String {
        format_table(&[(label.to_string(), self.mean)])
    }
}

/// Aligned text table, one row per run, columns CC, NSS, sAUC, AUC-J, SIM.
pub fn format_table(rows: &[(String, MetricValues)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}\n", "method", "CC", "NSS", "sAUC", "AUC-J", "SIM");
    for (label, v) in rows {
        writeln!(
            out,
            "{label:<width$}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}",
            v.cc, v.nss, v.sauc, v.auc_j, v.sim
        )
        .unwrap();
    }
    out
}

/// Reads a report written by [`MetricReport::to_csv`]. Columns are matched
/// by name, so reordered columns are accepted; missing ones are not.
pub fn parse_report_csv(text: &str) -> Result<MetricReport> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::Codec("empty report".into()))?.split(',').map(str::trim).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::Codec(format!("report is missing column {name:?}")))
    };
    let id_col = col("clip_id")?;
    let cols = [col("cc")?, col("nss")?, col("auc_j")?, col("sauc")?, col("sim")?];
    let mut clips = Vec::new();
    let mut mean = None;
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != header.len() {
            return Err(Error::Codec(format!("report row {} has {} fields, header has {}", n + 2, fields.len(), header.len())));
        }
        let num = |i: usize| {
            fields[i]
                .parse::<f64>()
                .map_err(|_| Error::Codec(format!("report row {}: bad number {:?}", n + 2, fields[i])))
        };
        let v = MetricValues {
            cc: num(cols[0])?,
            nss: num(cols[1])?,
            auc_j: num(cols[2])?,
            sauc: num(cols[3])?,
            sim: num(cols[4])?,
        };
        if fields[id_col] == "mean" {
            mean = Some(v);
        } else {
            clips.push(ClipMetrics {
                clip_id: fields[id_col].to_string(),
                values: v,
                degenerate: false,
            });
        }
    }
    let mean = mean.ok_or_else(|| Error::Codec("report has no mean row".into()))?;
    if clips.is_empty() {
        return Err(Error::Codec("report has no clip rows".into()));
    }
    Ok(MetricReport { clips, mean })
}

fn clip_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer keeps per-clip streams independent
    let mut z = seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `predictor` on every clip and scores it against the clip's ground
/// truth and fixations.
pub fn evaluate(predictor: &impl Predictor, data: &Dataset, pool: ShufflePool<'_>, seed: u64) -> Result<MetricReport> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty dataset"));
    }
    let mut clips = Vec::with_capacity(data.len());
    for (i, clip) in data.clips.iter().enumerate() {
        let p = predictor.predict_clip(clip)?;
        let shuffle: Vec<&FixationSet> = match pool {
            ShufflePool::WithinDataset => data
                .clips
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, c)| &c.fixations)
                .collect(),
            ShufflePool::External(sets) => sets.iter().collect(),
        };
        let c = cc(&p, &clip.gt)?;
        let n = nss(&p, &clip.fixations)?;
        let values = MetricValues {
            cc: c.value,
            nss: n.value,
            auc_j: auc_judd(&p, &clip.fixations)?,
            sauc: sauc(&p, &clip.fixations, &shuffle, clip_seed(seed, i))
                .map_err(|e| Error::invalid(format!("clip {}: {e}", clip.id)))?,
            sim: sim(&p, &clip.gt)?,
        };
        clips.push(ClipMetrics {
            clip_id: clip.id.clone(),
            values,
            degenerate: c.degenerate || n.degenerate,
        });
    }
    MetricReport::from_clips(clips)
}
