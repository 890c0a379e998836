//! Normal-shooting correspondences and the closest-point distance histogram.
//!
//! The histogram is the PDF of pair distances; its cumulative counts give the
//! median used both for outlier rejection and for the convergence rule in
//! [`crate::icp`].

use std::io::Write;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::RigidTransform;
use crate::pyramid::OrganizedCloud;

/// Work split used for the histogram reduction unless a caller chooses.
pub const DEFAULT_PARTITIONS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// Source pixel index; pairs are ordered by it.
    pub pixel: usize,
    /// Source point mapped into the target frame by the current estimate.
    pub source: Vector3<f64>,
    pub target: Vector3<f64>,
    /// Unit normal at `target`.
    pub normal: Vector3<f64>,
    /// `|source - target|`.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
    pub source_frame: usize,
    pub target_frame: usize,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<Correspondence>) -> Self {
        Self {
            pairs,
            source_frame: 0,
            target_frame: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.pairs.iter().map(|c| c.distance).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootConfig {
    /// March increment along the source normal (m).
    pub step_len: f64,
    /// Largest accepted `|p' - q|`, also the march budget (m).
    pub max_dist: f64,
    /// Largest angle between transformed source normal and target normal;
    /// `None` disables the gate.
    pub normal_gate_deg: Option<f64>,
}

/// Normal shooting over organized clouds.
///
/// Each valid source point `p` (with a normal) is mapped to `p' = T p`, then
/// the line `p' + s n'` is sampled at `s = 0, +h, -h, +2h, ...` up to
/// `max_dist`. Every sample is projected into the target image; the first
/// sample lying within `h / 2` of the tangent plane of the target pixel it
/// lands on, with `|p' - q| <= max_dist` and compatible normals, gives the
/// pair. Output order follows the source pixel index.
pub fn normal_shoot(
    source: &OrganizedCloud,
    target: &OrganizedCloud,
    estimate: &RigidTransform,
    cfg: &ShootConfig,
) -> Result<CorrespondenceSet> {
    if !(cfg.step_len > 0.0) || !(cfg.max_dist > 0.0) {
        return Err(Error::Config("step_len and max_dist must be positive".into()));
    }
    let cos_gate = cfg.normal_gate_deg.map(|g| g.to_radians().cos());
    let steps = (cfg.max_dist / cfg.step_len).floor() as i64;
    let tol = 0.5 * cfg.step_len;

    let shoot = |i: usize| -> Option<Correspondence> {
        if !source.normal_valid[i] {
            return None;
        }
        let p = estimate.apply_to_point(&source.points[i]);
        let n_src = estimate.apply_to_vector(&source.normals[i]);
        for k in 0..=(2 * steps) {
            let s = if k == 0 {
                0.0
            } else if k % 2 == 1 {
                ((k + 1) / 2) as f64 * cfg.step_len
            } else {
                -((k / 2) as f64) * cfg.step_len
            };
            let x = p + n_src * s;
            let Some(j) = target.pixel_of(&x) else {
                continue;
            };
            if !target.normal_valid[j] {
                continue;
            }
            let q = target.points[j];
            let n = target.normals[j];
            if (x - q).dot(&n).abs() > tol {
                continue;
            }
            let d = (p - q).norm();
            if d > cfg.max_dist {
                continue;
            }
            if let Some(c) = cos_gate {
                if n_src.dot(&n) < c {
                    continue;
                }
            }
            return Some(Correspondence {
                pixel: i,
                source: p,
                target: q,
                normal: n,
                distance: d,
            });
        }
        None
    };

    let pairs: Vec<Correspondence> = (0..source.len()).into_par_iter().filter_map(shoot).collect();
    if pairs.is_empty() {
        return Err(Error::NoCorrespondences);
    }
    Ok(CorrespondenceSet::new(pairs))
}

/// Fixed-width histogram of distances over `[0, d_max]` with cached CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceHistogram {
    pub bin_width: f64,
    pub d_max: f64,
    pub bins: Vec<u64>,
    /// Samples above `d_max` (or not a number).
    pub overflow: u64,
    pub total: u64,
    cdf: Vec<u64>,
}

impl DistanceHistogram {
    pub fn empty(bin_width: f64, d_max: f64) -> Self {
        let n = bin_count(bin_width, d_max);
        Self {
            bin_width,
            d_max,
            bins: vec![0; n],
            overflow: 0,
            total: 0,
            cdf: vec![0; n],
        }
    }

    pub fn cdf(&self) -> &[u64] {
        &self.cdf
    }

    pub fn bin_lower(&self, k: usize) -> f64 {
        k as f64 * self.bin_width
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.bin_width
    }

    /// Bin holding `d`, `None` for overflow. Values within 1e-9 of a bin edge
    /// snap up so that e.g. `0.03 / 0.01` lands in bin 3.
    pub fn bin_of(&self, d: f64) -> Option<usize> {
        if !(d >= 0.0) || d > self.d_max {
            return None;
        }
        let k = (d / self.bin_width + 1e-9).floor() as usize;
        Some(k.min(self.bins.len() - 1))
    }

    fn add(&mut self, d: f64) {
        match self.bin_of(d) {
            Some(k) => self.bins[k] += 1,
            None => self.overflow += 1,
        }
        self.total += 1;
    }

    fn merge(mut self, other: &DistanceHistogram) -> Self {
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            *a += b;
        }
        self.overflow += other.overflow;
        self.total += other.total;
        self
    }

    fn finish(mut self) -> Self {
        let mut acc = 0;
        for (c, b) in self.cdf.iter_mut().zip(&self.bins) {
            acc += b;
            *c = acc;
        }
        self
    }

    /// `bin_lower,count` rows for plotting.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "bin_lower,count")?;
        for (k, c) in self.bins.iter().enumerate() {
            writeln!(out, "{:.6},{}", self.bin_lower(k), c)?;
        }
        Ok(())
    }
}

fn bin_count(bin_width: f64, d_max: f64) -> usize {
    ((d_max / bin_width) - 1e-9).ceil().max(1.0) as usize
}

pub fn build_histogram(c: &CorrespondenceSet, bin_width: f64, d_max: f64) -> Result<DistanceHistogram> {
    histogram_of(&c.distances(), bin_width, d_max, DEFAULT_PARTITIONS)
}

pub fn build_histogram_partitioned(
    c: &CorrespondenceSet,
    bin_width: f64,
    d_max: f64,
    partitions: usize,
) -> Result<DistanceHistogram> {
    histogram_of(&c.distances(), bin_width, d_max, partitions)
}

/// Partitioned accumulation: one histogram per contiguous chunk, merged in
/// chunk order. Integer counts make the result independent of the split.
pub fn histogram_of(distances: &[f64], bin_width: f64, d_max: f64, partitions: usize) -> Result<DistanceHistogram> {
    if !(bin_width > 0.0) || !(d_max > 0.0) {
        return Err(Error::Config("bin_width and d_max must be positive".into()));
    }
    let parts = partitions.max(1);
    let chunk = distances.len().div_ceil(parts).max(1);
    let partials: Vec<DistanceHistogram> = distances
        .par_chunks(chunk)
        .map(|part| {
            let mut h = DistanceHistogram::empty(bin_width, d_max);
            for &d in part {
                h.add(d);
            }
            h
        })
        .collect();
    let merged = partials
        .iter()
        .fold(DistanceHistogram::empty(bin_width, d_max), |acc, h| acc.merge(h));
    Ok(merged.finish())
}

/// Center of the first bin whose CDF reaches `ceil(total / 2)`.
pub fn median_from_cdf(h: &DistanceHistogram) -> Result<f64> {
    if h.total == 0 {
        return Err(Error::EmptyHistogram);
    }
    let rank = h.total.div_ceil(2);
    match h.cdf.iter().position(|&c| c >= rank) {
        Some(k) => Ok(h.bin_center(k)),
        None => Ok(h.d_max),
    }
}

/// Median absolute deviation of the binned distances around `median`.
pub fn mad_from_histogram(h: &DistanceHistogram, median: f64) -> Result<f64> {
    let inside: u64 = h.bins.iter().sum();
    if inside == 0 {
        return Err(Error::EmptyHistogram);
    }
    let mut dev: Vec<(f64, u64)> = h
        .bins
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(k, &c)| ((h.bin_center(k) - median).abs(), c))
        .collect();
    dev.sort_by(|a, b| a.0.total_cmp(&b.0));
    let rank = inside.div_ceil(2);
    let mut acc = 0;
    for (d, c) in dev {
        acc += c;
        if acc >= rank {
            return Ok(d);
        }
    }
    unreachable!("rank never exceeds the in-range count")
}

/// Acceptance band around the median: `max(2 * bin_width, kappa * MAD)`.
pub fn median_band(h: &DistanceHistogram, median: f64, kappa: f64) -> Result<f64> {
    Ok((2.0 * h.bin_width).max(kappa * mad_from_histogram(h, median)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub set: CorrespondenceSet,
    /// Kept pairs over input pairs.
    pub kept_fraction: f64,
}

/// Keeps pairs with `|d - median| <= band`.
pub fn median_filter(c: &CorrespondenceSet, median: f64, band: f64) -> Result<FilterOutcome> {
    if !(band > 0.0) {
        return Err(Error::Config("median band must be positive".into()));
    }
    let pairs: Vec<Correspondence> = c
        .pairs
        .iter()
        .filter(|p| (p.distance - median).abs() <= band)
        .copied()
        .collect();
    if pairs.is_empty() {
        return Err(Error::AllPairsRejected);
    }
    let kept_fraction = pairs.len() as f64 / c.len().max(1) as f64;
    Ok(FilterOutcome {
        set: CorrespondenceSet {
            pairs,
            source_frame: c.source_frame,
            target_frame: c.target_frame,
        },
        kept_fraction,
    })
}
