//! Dataset foreground intensity statistics.
//!
//! [`ForegroundStats`] keeps a 1-HU histogram of foreground voxels (bins are
//! centered on integer HU values over `[-1024, 3071]`, out-of-range values
//! land in the end bins), running moments, and the exact median of every
//! foreground class in every volume. From it we derive the base viewing
//! window, the window-shift level range and the z-score parameters.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume_io::{HuVolume, SegmentationMask, LABEL_LIVER, LABEL_TUMOR};
use crate::windowing::{Normalization, ViewingWindow, WindowShiftPolicy};

pub const HU_MIN: i32 = -1024;
pub const HU_MAX: i32 = 3071;

/// Lower and upper percentile of the foreground kept by the base window, and
/// of the per-volume medians kept by the shift range.
pub const LOWER_QUANTILE: f64 = 0.005;
pub const UPPER_QUANTILE: f64 = 0.995;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBinning {
    pub min_hu: i32,
    pub max_hu: i32,
}

impl Default for HistogramBinning {
    fn default() -> Self {
        Self {
            min_hu: HU_MIN,
            max_hu: HU_MAX,
        }
    }
}

impl HistogramBinning {
    pub fn len(&self) -> usize {
        (self.max_hu - self.min_hu + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.max_hu < self.min_hu
    }

    #[inline]
    fn bin(&self, hu: f32) -> usize {
        let r = (hu as f64).round();
        (r.clamp(self.min_hu as f64, self.max_hu as f64) as i64 - self.min_hu as i64) as usize
    }

    fn center(&self, bin: usize) -> i32 {
        self.min_hu + bin as i32
    }
}

pub fn default_foreground() -> BTreeSet<u8> {
    BTreeSet::from([LABEL_LIVER, LABEL_TUMOR])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedianEntry {
    pub source_id: String,
    pub class_label: u8,
    pub median_hu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StatsRecord", into = "StatsRecord")]
pub struct ForegroundStats {
    binning: HistogramBinning,
    foreground_labels: BTreeSet<u8>,
    counts: Vec<u64>,
    sums: Vec<f64>,
    mins: Vec<f32>,
    maxs: Vec<f32>,
    n: u64,
    mean: f64,
    m2: f64,
    volumes: BTreeSet<String>,
    medians: BTreeMap<(String, u8), f64>,
}

impl ForegroundStats {
    pub fn new(foreground_labels: BTreeSet<u8>) -> Self {
        Self::with_binning(foreground_labels, HistogramBinning::default())
    }

    pub fn with_binning(foreground_labels: BTreeSet<u8>, binning: HistogramBinning) -> Self {
        let len = binning.len();
        Self {
            binning,
            foreground_labels,
            counts: vec![0; len],
            sums: vec![0.0; len],
            mins: vec![f32::INFINITY; len],
            maxs: vec![f32::NEG_INFINITY; len],
            n: 0,
            mean: 0.0,
            m2: 0.0,
            volumes: BTreeSet::new(),
            medians: BTreeMap::new(),
        }
    }

    pub fn binning(&self) -> HistogramBinning {
        self.binning
    }

    pub fn foreground_labels(&self) -> &BTreeSet<u8> {
        &self.foreground_labels
    }

    pub fn n_foreground(&self) -> u64 {
        self.n
    }

    pub fn global_mean(&self) -> f64 {
        self.mean
    }

    /// Population standard deviation of all foreground voxels.
    pub fn global_std(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2 / self.n as f64).max(0.0).sqrt()
        }
    }

    pub fn volumes(&self) -> impl Iterator<Item = &str> {
        self.volumes.iter().map(String::as_str)
    }

    pub fn per_volume_medians(&self) -> impl Iterator<Item = MedianEntry> + '_ {
        self.medians.iter().map(|((id, label), &m)| MedianEntry {
            source_id: id.clone(),
            class_label: *label,
            median_hu: m,
        })
    }

    /// `(bin center HU, count)` for every non-empty bin.
    pub fn histogram(&self) -> impl Iterator<Item = (i32, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (self.binning.center(i), c))
    }

    #[inline]
    fn push(&mut self, v: f32) {
        let b = self.binning.bin(v);
        self.counts[b] += 1;
        self.sums[b] += v as f64;
        self.mins[b] = self.mins[b].min(v);
        self.maxs[b] = self.maxs[b].max(v);
        self.n += 1;
        let x = v as f64;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Adds the foreground voxels of one volume.
    pub fn accumulate(&mut self, vol: &HuVolume, mask: &SegmentationMask) -> Result<()> {
        mask.check_aligned(vol)?;
        let id = vol.source_id();
        if self.volumes.contains(id) {
            let label = self.foreground_labels.first().copied().unwrap_or(0);
            return Err(Error::DuplicateVolume {
                source_id: id.to_string(),
                label,
            });
        }
        let mut per_class: BTreeMap<u8, Vec<f32>> = BTreeMap::new();
        for (&v, &l) in vol.voxels().iter().zip(mask.labels()) {
            if self.foreground_labels.contains(&l) {
                self.push(v);
                per_class.entry(l).or_default().push(v);
            }
        }
        if per_class.is_empty() {
            log::warn!("volume `{id}` has no foreground voxels; no medians recorded");
        }
        for (label, mut values) in per_class {
            self.medians
                .insert((id.to_string(), label), exact_median(&mut values));
        }
        self.volumes.insert(id.to_string());
        Ok(())
    }

    /// Combines two shards; equivalent to accumulating both volume sets.
    pub fn merge(&self, other: &ForegroundStats) -> Result<ForegroundStats> {
        if self.binning != other.binning {
            return Err(Error::BinningMismatch(format!(
                "{:?} vs {:?}",
                self.binning, other.binning
            )));
        }
        if self.foreground_labels != other.foreground_labels {
            return Err(Error::BinningMismatch(format!(
                "foreground labels {:?} vs {:?}",
                self.foreground_labels, other.foreground_labels
            )));
        }
        if let Some(id) = self.volumes.intersection(&other.volumes).next() {
            let label = self
                .medians
                .keys()
                .find(|(s, _)| s == id)
                .map(|(_, l)| *l)
                .unwrap_or(0);
            return Err(Error::DuplicateVolume {
                source_id: id.clone(),
                label,
            });
        }
        let mut out = self.clone();
        for i in 0..out.counts.len() {
            out.counts[i] += other.counts[i];
            out.sums[i] += other.sums[i];
            out.mins[i] = out.mins[i].min(other.mins[i]);
            out.maxs[i] = out.maxs[i].max(other.maxs[i]);
        }
        let n = self.n + other.n;
        if n > 0 {
            let (na, nb) = (self.n as f64, other.n as f64);
            let delta = other.mean - self.mean;
            out.mean = self.mean + delta * nb / n as f64;
            out.m2 = self.m2 + other.m2 + delta * delta * na * nb / n as f64;
        }
        out.n = n;
        out.volumes.extend(other.volumes.iter().cloned());
        out.medians
            .extend(other.medians.iter().map(|(k, v)| (k.clone(), *v)));
        Ok(out)
    }

    /// Merges shards left to right.
    pub fn merge_all<'a>(
        labels: BTreeSet<u8>,
        shards: impl IntoIterator<Item = &'a ForegroundStats>,
    ) -> Result<ForegroundStats> {
        shards
            .into_iter()
            .try_fold(ForegroundStats::new(labels), |acc, s| acc.merge(s))
    }

    /// q-quantile of the foreground from the histogram.
    ///
    /// Inside the bin holding rank `q * n` the value is interpolated
    /// linearly between the smallest and largest voxel seen in that bin, so
    /// the error is bounded by the bin width (1 HU) and a distribution of a
    /// single value reports that value exactly.
    pub fn percentile(&self, q: f64) -> Result<f64> {
        if self.n == 0 {
            return Err(Error::EmptyStats);
        }
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::Config(format!("quantile {q} outside [0, 1]")));
        }
        let target = q * self.n as f64;
        let mut below = 0u64;
        let mut last = None;
        for (i, &c) in self.counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            last = Some(i);
            if (below + c) as f64 >= target {
                let frac = ((target - below as f64) / c as f64).clamp(0.0, 1.0);
                let (lo, hi) = (self.mins[i] as f64, self.maxs[i] as f64);
                return Ok(lo + frac * (hi - lo));
            }
            below += c;
        }
        // rounding left target a hair above n
        Ok(self.maxs[last.expect("n > 0 implies a non-empty bin")] as f64)
    }

    /// Window spanning the 0.5 and 99.5 percentiles of the foreground.
    pub fn derive_base_window(&self) -> Result<ViewingWindow> {
        let lower = self.percentile(LOWER_QUANTILE)?;
        let upper = self.percentile(UPPER_QUANTILE)?;
        if upper <= lower {
            return Err(Error::DegenerateWindow { lower, upper });
        }
        ViewingWindow::from_bounds(lower, upper)
    }

    /// Per-volume medians of the given classes, in (source_id, label) order.
    pub fn pooled_medians(&self, classes: &BTreeSet<u8>) -> Vec<f64> {
        self.medians
            .iter()
            .filter(|((_, l), _)| classes.contains(l))
            .map(|(_, &m)| m)
            .collect()
    }

    /// Level range from the 0.5 and 99.5 percentiles of the pooled
    /// per-volume medians of `classes`.
    pub fn derive_shift_bounds(
        &self,
        classes: &BTreeSet<u8>,
        probability: f64,
    ) -> Result<WindowShiftPolicy> {
        if classes.is_empty() {
            return Err(Error::Config(
                "no classes requested for shift bounds".into(),
            ));
        }
        for &c in classes {
            if !self.medians.keys().any(|(_, l)| *l == c) {
                return Err(Error::ClassAbsent(c));
            }
        }
        let mut medians = self.pooled_medians(classes);
        if medians.len() < 2 {
            return Err(Error::TooFewMedians {
                found: medians.len(),
                required: 2,
            });
        }
        medians.sort_by(f64::total_cmp);
        let low = quantile_sorted(&medians, LOWER_QUANTILE);
        let high = quantile_sorted(&medians, UPPER_QUANTILE);
        WindowShiftPolicy::new(low, high, probability)
    }

    /// Mean and standard deviation of the foreground after clipping to
    /// `window` and rescaling to `[0, 1]`, from the histogram.
    ///
    /// Each bin contributes its voxel mean, clipped and rescaled.
    pub fn normalization_params(&self, window: &ViewingWindow) -> Result<Normalization> {
        if self.n == 0 {
            return Err(Error::EmptyStats);
        }
        let unit = |i: usize| {
            let rep = self.sums[i] / self.counts[i] as f64;
            (rep.clamp(window.lower(), window.upper()) - window.lower()) / window.width()
        };
        let n = self.n as f64;
        let occupied = || (0..self.counts.len()).filter(|&i| self.counts[i] > 0);
        let mean = occupied()
            .map(|i| self.counts[i] as f64 * unit(i))
            .sum::<f64>()
            / n;
        let var = occupied()
            .map(|i| {
                let d = unit(i) - mean;
                self.counts[i] as f64 * d * d
            })
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        if std < 1e-12 {
            return Err(Error::ZeroStd);
        }
        Normalization::new(mean, std)
    }

    /// Fraction of foreground voxels whose bin center lies in `[lower, upper]`.
    pub fn fraction_within(&self, lower: f64, upper: f64) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let inside: u64 = self
            .counts
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let c = self.binning.center(*i) as f64;
                c >= lower && c <= upper
            })
            .map(|(_, &c)| c)
            .sum();
        inside as f64 / self.n as f64
    }
}

/// Exact median; sorts `values` in place. Even counts average the two middle values.
pub fn exact_median(values: &mut [f32]) -> f64 {
    values.sort_by(f32::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] as f64 + values[n / 2] as f64) / 2.0
    }
}

/// Linear-interpolation quantile of sorted data at position `q * (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Serialize, Deserialize)]
struct BinRecord {
    hu: i32,
    count: u64,
    sum: f64,
    min: f32,
    max: f32,
}

#[derive(Serialize, Deserialize)]
struct StatsRecord {
    binning: HistogramBinning,
    foreground_labels: Vec<u8>,
    n_foreground: u64,
    global_mean: f64,
    global_std: f64,
    m2: f64,
    volumes: Vec<String>,
    per_volume_medians: Vec<MedianEntry>,
    histogram: Vec<BinRecord>,
}

impl From<ForegroundStats> for StatsRecord {
    fn from(s: ForegroundStats) -> Self {
        let histogram = (0..s.counts.len())
            .filter(|&i| s.counts[i] > 0)
            .map(|i| BinRecord {
                hu: s.binning.center(i),
                count: s.counts[i],
                sum: s.sums[i],
                min: s.mins[i],
                max: s.maxs[i],
            })
            .collect();
        StatsRecord {
            binning: s.binning,
            foreground_labels: s.foreground_labels.iter().copied().collect(),
            n_foreground: s.n,
            global_mean: s.mean,
            global_std: s.global_std(),
            m2: s.m2,
            volumes: s.volumes.iter().cloned().collect(),
            per_volume_medians: s.per_volume_medians().collect(),
            histogram,
        }
    }
}

impl TryFrom<StatsRecord> for ForegroundStats {
    type Error = Error;

    fn try_from(r: StatsRecord) -> Result<Self> {
        if r.binning.is_empty() {
            return Err(Error::BinningMismatch("empty binning".into()));
        }
        let mut s =
            ForegroundStats::with_binning(r.foreground_labels.into_iter().collect(), r.binning);
        for b in r.histogram {
            if b.hu < r.binning.min_hu || b.hu > r.binning.max_hu {
                return Err(Error::Config(format!(
                    "histogram bin {} outside binning",
                    b.hu
                )));
            }
            let i = (b.hu - r.binning.min_hu) as usize;
            s.counts[i] = b.count;
            s.sums[i] = b.sum;
            s.mins[i] = b.min;
            s.maxs[i] = b.max;
        }
        let total: u64 = s.counts.iter().sum();
        if total != r.n_foreground {
            return Err(Error::Config(format!(
                "n_foreground {} does not match histogram total {total}",
                r.n_foreground
            )));
        }
        if !(r.m2 >= 0.0 && r.global_mean.is_finite()) {
            return Err(Error::Config("moments are invalid".into()));
        }
        s.n = r.n_foreground;
        s.mean = r.global_mean;
        s.m2 = r.m2;
        s.volumes = r.volumes.into_iter().collect();
        for m in r.per_volume_medians {
            let key = (m.source_id, m.class_label);
            if s.medians.insert(key.clone(), m.median_hu).is_some() {
                return Err(Error::DuplicateVolume {
                    source_id: key.0,
                    label: key.1,
                });
            }
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn volume(id: &str, values: &[f32], labels: &[u8]) -> (HuVolume, SegmentationMask) {
        let dims = [values.len(), 1, 1];
        (
            HuVolume::new(dims, [1.0; 3], values.to_vec(), id).unwrap(),
            SegmentationMask::new(dims, labels.to_vec()).unwrap(),
        )
    }

    #[test]
    fn three_voxel_mean_and_median() {
        let (v, m) = volume("a", &[10.0, 20.0, 30.0, -500.0], &[1, 1, 1, 0]);
        let mut s = ForegroundStats::new(default_foreground());
        s.accumulate(&v, &m).unwrap();
        assert_eq!(s.n_foreground(), 3);
        assert!((s.global_mean() - 20.0).abs() < 1e-12);
        let meds: Vec<_> = s.per_volume_medians().collect();
        assert_eq!(meds.len(), 1);
        assert_eq!(meds[0].median_hu, 20.0);
    }

    #[test]
    fn same_volume_twice_under_new_id_doubles_count() {
        let (v, m) = volume("a", &[10.0, 20.0, 30.0], &[1, 2, 1]);
        let mut s = ForegroundStats::new(default_foreground());
        s.accumulate(&v, &m).unwrap();
        s.accumulate(&v.clone().with_source_id("b"), &m).unwrap();
        assert_eq!(s.n_foreground(), 6);
        assert!(matches!(
            s.accumulate(&v, &m),
            Err(Error::DuplicateVolume { .. })
        ));
    }

    #[test]
    fn empty_foreground_records_no_median() {
        let (v, m) = volume("a", &[10.0, 20.0], &[0, 0]);
        let mut s = ForegroundStats::new(default_foreground());
        s.accumulate(&v, &m).unwrap();
        assert_eq!(s.per_volume_medians().count(), 0);
        assert_eq!(s.volumes().collect::<Vec<_>>(), vec!["a"]);
        assert!(matches!(s.percentile(0.5), Err(Error::EmptyStats)));
    }

    #[test]
    fn constant_distribution_percentiles_and_degenerate_window() {
        let (v, m) = volume("a", &[40.0; 50], &[1; 50]);
        let mut s = ForegroundStats::new(default_foreground());
        s.accumulate(&v, &m).unwrap();
        for q in [0.0, 0.005, 0.3, 0.5, 0.995, 1.0] {
            assert_eq!(s.percentile(q).unwrap(), 40.0);
        }
        assert!(matches!(
            s.derive_base_window(),
            Err(Error::DegenerateWindow { .. })
        ));
    }

    #[test]
    fn symmetric_median_near_zero() {
        let vals: Vec<f32> = (-200..=200).map(|v| v as f32 * 0.5).collect();
        let (v, m) = volume("a", &vals, &vec![1; vals.len()]);
        let mut s = ForegroundStats::new(default_foreground());
        s.accumulate(&v, &m).unwrap();
        assert!(s.percentile(0.5).unwrap().abs() <= 1.0);
    }

    #[test]
    fn base_window_bounds_are_the_percentiles() {
        let vals: Vec<f32> = (0..1000).map(|i| -100.0 + i as f32 * 0.4).collect();
        let (v, m) = volume("a", &vals, &vec![2; vals.len()]);
        let mut s = ForegroundStats::new(default_foreground());
        s.accumulate(&v, &m).unwrap();
        let w = s.derive_base_window().unwrap();
        assert_eq!(w.lower(), s.percentile(LOWER_QUANTILE).unwrap());
        assert_eq!(w.upper(), s.percentile(UPPER_QUANTILE).unwrap());
    }

    #[test]
    fn shift_bounds_from_medians() {
        let mut s = ForegroundStats::new(default_foreground());
        for (i, med) in [60.0f32; 4].iter().enumerate() {
            let (v, m) = volume(&format!("v{i}"), &[*med; 3], &[1; 3]);
            s.accumulate(&v, &m).unwrap();
        }
        let p = s.derive_shift_bounds(&BTreeSet::from([1]), 0.3).unwrap();
        assert_eq!(
            (p.level_low, p.level_high, p.probability),
            (60.0, 60.0, 0.3)
        );
        assert!(matches!(
            s.derive_shift_bounds(&BTreeSet::from([2]), 0.3),
            Err(Error::ClassAbsent(2))
        ));
    }

    #[test]
    fn one_median_is_too_few() {
        let mut s = ForegroundStats::new(default_foreground());
        let (v, m) = volume("only", &[5.0, 6.0], &[1, 1]);
        s.accumulate(&v, &m).unwrap();
        assert!(matches!(
            s.derive_shift_bounds(&BTreeSet::from([1]), 0.3),
            Err(Error::TooFewMedians { found: 1, .. })
        ));
    }

    #[test]
    fn merge_identity_and_mismatch() {
        let (v, m) = volume("a", &[1.0, 2.0, 7.5], &[1, 2, 1]);
        let mut a = ForegroundStats::new(default_foreground());
        a.accumulate(&v, &m).unwrap();
        let empty = ForegroundStats::new(default_foreground());
        assert_eq!(a.merge(&empty).unwrap(), a);
        let other = ForegroundStats::with_binning(
            default_foreground(),
            HistogramBinning {
                min_hu: -100,
                max_hu: 100,
            },
        );
        assert!(matches!(a.merge(&other), Err(Error::BinningMismatch(_))));
        let labels = ForegroundStats::new(BTreeSet::from([2]));
        assert!(matches!(a.merge(&labels), Err(Error::BinningMismatch(_))));
        assert!(matches!(a.merge(&a), Err(Error::DuplicateVolume { .. })));
    }

    #[test]
    fn normalization_uniform_over_window_is_centered() {
        let vals: Vec<f32> = (0..=400).map(|i| i as f32).collect();
        let (v, m) = volume("a", &vals, &vec![1; vals.len()]);
        let mut s = ForegroundStats::new(default_foreground());
        s.accumulate(&v, &m).unwrap();
        let w = ViewingWindow::from_bounds(0.0, 400.0).unwrap();
        let n = s.normalization_params(&w).unwrap();
        assert!((n.mean() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn normalization_at_lower_bound_has_zero_std() {
        let (v, m) = volume("a", &[-300.0; 10], &[1; 10]);
        let mut s = ForegroundStats::new(default_foreground());
        s.accumulate(&v, &m).unwrap();
        let w = ViewingWindow::from_bounds(-100.0, 100.0).unwrap();
        assert!(matches!(s.normalization_params(&w), Err(Error::ZeroStd)));
    }

    #[test]
    fn out_of_range_values_land_in_end_bins() {
        let (v, m) = volume("a", &[-3000.0, 5000.0], &[1, 1]);
        let mut s = ForegroundStats::new(default_foreground());
        s.accumulate(&v, &m).unwrap();
        let hist: Vec<_> = s.histogram().collect();
        assert_eq!(hist, vec![(HU_MIN, 1), (HU_MAX, 1)]);
        assert_eq!(s.percentile(0.0).unwrap(), -3000.0);
        assert_eq!(s.percentile(1.0).unwrap(), 5000.0);
    }

    #[test]
    fn json_round_trip_and_corruption() {
        let (v, m) = volume("a", &[1.0, 2.0, 7.5, 7.25], &[1, 2, 1, 2]);
        let mut s = ForegroundStats::new(default_foreground());
        s.accumulate(&v, &m).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: ForegroundStats = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        let corrupted = text.replace("\"n_foreground\":4", "\"n_foreground\":5");
        assert!(serde_json::from_str::<ForegroundStats>(&corrupted).is_err());
    }

    #[test]
    fn quantile_of_five_values() {
        let v = [30.0, 50.0, 70.0, 90.0, 110.0];
        assert!((quantile_sorted(&v, 0.005) - 30.4).abs() < 1e-12);
        assert!((quantile_sorted(&v, 0.995) - 109.6).abs() < 1e-12);
        assert_eq!(quantile_sorted(&v, 0.5), 70.0);
    }
}
