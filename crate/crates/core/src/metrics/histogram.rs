use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::sampler::Batch;

/// Bin layout over integer path lengths starting at 1.
///
/// Bin edges are always integers, so a bin `[lo, hi)` holds exactly the
/// lengths `lo..hi` and any binning can be derived exactly from `linear(1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Binning {
    Linear {
        width: u32,
    },
    /// Each edge is `max(prev + 1, ceil(prev * factor))`.
    Logarithmic {
        factor: f64,
    },
}

impl Binning {
    pub fn validate(&self) -> Result<(), MetricsError> {
        match *self {
            Binning::Linear { width } if width < 1 => Err(MetricsError::BadBinning(format!("width {width} < 1"))),
            Binning::Logarithmic { factor } if !(factor > 1.0 && factor.is_finite()) => {
                Err(MetricsError::BadBinning(format!("factor {factor} <= 1")))
            }
            _ => Ok(()),
        }
    }

    /// Edges `1 = e_0 < e_1 < ... < e_B` with `e_B > max_len`.
    pub fn edges(&self, max_len: u32) -> Result<Vec<u32>, MetricsError> {
        self.validate()?;
        let mut edges = vec![1u32];
        let mut lo = 1u32;
        while lo <= max_len {
            lo = match *self {
                Binning::Linear { width } => lo + width,
                Binning::Logarithmic { factor } => (lo + 1).max((f64::from(lo) * factor).ceil() as u32),
            };
            edges.push(lo);
        }
        Ok(edges)
    }

    fn is_logarithmic(&self) -> bool {
        matches!(self, Binning::Logarithmic { .. })
    }
}

/// Which rollouts a density is computed over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    All,
    #[default]
    Success,
    Fail,
    Odd,
    Even,
}

impl Population {
    /// Lengths this population can contain, by parity.
    pub fn admits(self, length: u32) -> bool {
        match self {
            Population::Odd => length % 2 == 1,
            Population::Even => length.is_multiple_of(2),
            _ => true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: u32,
    pub hi: u32,
    pub all: u64,
    pub success: u64,
    pub fail: u64,
    pub odd: u64,
    pub even: u64,
}

impl Bin {
    fn empty(lo: u32, hi: u32) -> Self {
        Bin { lo, hi, all: 0, success: 0, fail: 0, odd: 0, even: 0 }
    }

    pub fn width(&self) -> u32 {
        self.hi - self.lo
    }

    pub fn count(&self, pop: Population) -> u64 {
        match pop {
            Population::All => self.all,
            Population::Success => self.success,
            Population::Fail => self.fail,
            Population::Odd => self.odd,
            Population::Even => self.even,
        }
    }

    fn add(&mut self, other: &Bin) {
        self.all += other.all;
        self.success += other.success;
        self.fail += other.fail;
        self.odd += other.odd;
        self.even += other.even;
    }
}

/// Path-length histogram split by outcome and parity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthHistogram {
    pub step: u64,
    pub binning: Binning,
    pub bins: Vec<Bin>,
}

impl LengthHistogram {
    /// Histograms `(length, success)` pairs; lengths must lie in `1..=max_len`.
    pub fn from_lengths<I>(step: u64, binning: Binning, max_len: u32, lengths: I) -> Result<Self, MetricsError>
    where
        I: IntoIterator<Item = (u32, bool)>,
    {
        let edges = binning.edges(max_len)?;
        let mut bins: Vec<Bin> = edges.windows(2).map(|e| Bin::empty(e[0], e[1])).collect();
        for (len, success) in lengths {
            if len < 1 || len > max_len {
                return Err(MetricsError::LengthOutOfRange { length: len, max_len });
            }
            // partition_point gives the first bin whose upper edge exceeds len
            let b = &mut bins[edges[1..].partition_point(|&e| e <= len)];
            b.all += 1;
            if success {
                b.success += 1;
            } else {
                b.fail += 1;
            }
            if len % 2 == 1 {
                b.odd += 1;
            } else {
                b.even += 1;
            }
        }
        Ok(LengthHistogram { step, binning, bins })
    }

    /// Merges unit bins into `binning`. Only a `linear(1)` histogram can be rebinned.
    pub fn rebin(&self, binning: Binning) -> Result<Self, MetricsError> {
        if self.binning != (Binning::Linear { width: 1 }) {
            return Err(MetricsError::BadBinning("only linear(1) histograms can be rebinned".into()));
        }
        let max_len = self.bins.last().map_or(1, |b| b.hi - 1);
        let edges = binning.edges(max_len)?;
        let mut bins: Vec<Bin> = edges.windows(2).map(|e| Bin::empty(e[0], e[1])).collect();
        let mut target = 0;
        for src in &self.bins {
            while bins[target].hi <= src.lo {
                target += 1;
            }
            bins[target].add(src);
        }
        Ok(LengthHistogram { step: self.step, binning, bins })
    }

    pub fn total(&self, pop: Population) -> u64 {
        self.bins.iter().map(|b| b.count(pop)).sum()
    }

    /// Probability density per unit length: `count / (width * total)`.
    pub fn densities(&self, pop: Population) -> Vec<f64> {
        let total = self.total(pop) as f64;
        self.bins
            .iter()
            .map(|b| if total == 0.0 { 0.0 } else { b.count(pop) as f64 / (f64::from(b.width()) * total) })
            .collect()
    }

    /// Representative length of a bin: the mean of its member lengths for
    /// linear bins, the geometric mean of its first and last member for
    /// logarithmic bins.
    pub fn center(&self, bin: &Bin) -> f64 {
        let first = f64::from(bin.lo);
        let last = f64::from(bin.hi - 1);
        if self.binning.is_logarithmic() {
            (first * last).sqrt()
        } else {
            0.5 * (first + last)
        }
    }

    /// Length with the highest count in `pop` (earliest on ties); meaningful
    /// for unit-width bins.
    pub fn mode(&self, pop: Population) -> Option<u32> {
        let mut best: Option<&Bin> = None;
        for b in &self.bins {
            if b.count(pop) > best.map_or(0, |x| x.count(pop)) {
                best = Some(b);
            }
        }
        best.map(|b| b.lo)
    }
}

/// Histogram of a batch's rollout lengths.
pub fn length_histogram(batch: &Batch, binning: Binning) -> Result<LengthHistogram, MetricsError> {
    if batch.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    LengthHistogram::from_lengths(
        batch.step,
        binning,
        batch.l_max,
        batch.rollouts.iter().map(|r| (r.length, r.success)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn powers_of_two_in_log2_bins() {
        let h =
            LengthHistogram::from_lengths(0, Binning::Logarithmic { factor: 2.0 }, 15, [1, 2, 4, 8].map(|l| (l, true)))
                .unwrap();
        let layout: Vec<(u32, u32, u64)> = h.bins.iter().map(|b| (b.lo, b.hi, b.all)).collect();
        assert_eq!(layout, vec![(1, 2, 1), (2, 4, 1), (4, 8, 1), (8, 16, 1)]);
    }

    #[test]
    fn log_edges_at_default_factor() {
        let edges = Binning::Logarithmic { factor: 1.25 }.edges(200).unwrap();
        assert_eq!(edges, vec![1, 2, 3, 4, 5, 7, 9, 12, 15, 19, 24, 30, 38, 48, 60, 75, 94, 118, 148, 185, 232]);
    }

    #[test]
    fn odd_lengths_only_in_odd_counts() {
        let h = LengthHistogram::from_lengths(0, Binning::Linear { width: 1 }, 10, [1, 3, 3, 9].map(|l| (l, true)))
            .unwrap();
        assert_eq!(h.total(Population::Odd), 4);
        assert_eq!(h.total(Population::Even), 0);
    }

    #[test]
    fn bad_binnings() {
        assert!(matches!(Binning::Linear { width: 0 }.validate(), Err(MetricsError::BadBinning(_))));
        assert!(matches!(Binning::Logarithmic { factor: 1.0 }.validate(), Err(MetricsError::BadBinning(_))));
        assert!(matches!(Binning::Logarithmic { factor: 0.5 }.validate(), Err(MetricsError::BadBinning(_))));
    }

    #[test]
    fn out_of_range_length_is_rejected() {
        let r = LengthHistogram::from_lengths(0, Binning::Linear { width: 1 }, 5, [(6, true)]);
        assert!(matches!(r, Err(MetricsError::LengthOutOfRange { .. })));
    }

    #[test]
    fn json_layout() {
        let h = LengthHistogram::from_lengths(3, Binning::Linear { width: 2 }, 3, [(1, true), (3, false)]).unwrap();
        let json = serde_json::to_string(&h).unwrap();
        assert_eq!(
            json,
            r#"{"step":3,"binning":{"kind":"linear","width":2},"bins":[{"lo":1,"hi":3,"all":1,"success":1,"fail":0,"odd":1,"even":0},{"lo":3,"hi":5,"all":1,"success":0,"fail":1,"odd":1,"even":0}]}"#
        );
        let back: LengthHistogram = serde_json::from_str(&json).unwrap();
        assert_eq!(back, h);
    }

    proptest! {
        #[test]
        fn densities_normalize_and_counts_agree(
            lengths in proptest::collection::vec((1u32..=200, any::<bool>()), 1..400),
            factor in 1.05f64..3.0,
            width in 1u32..17,
        ) {
            for binning in [Binning::Linear { width }, Binning::Logarithmic { factor }] {
                let h = LengthHistogram::from_lengths(0, binning, 200, lengths.iter().copied()).unwrap();
                for w in h.bins.windows(2) {
                    prop_assert_eq!(w[0].hi, w[1].lo);
                }
                for b in &h.bins {
                    prop_assert_eq!(b.all, b.success + b.fail);
                    prop_assert_eq!(b.all, b.odd + b.even);
                }
                prop_assert_eq!(h.total(Population::All), lengths.len() as u64);
                for pop in [Population::All, Population::Success, Population::Fail, Population::Odd, Population::Even] {
                    if h.total(pop) == 0 { continue; }
                    let mass: f64 = h.densities(pop).iter().zip(&h.bins).map(|(d, b)| d * f64::from(b.width())).sum();
                    prop_assert!((mass - 1.0).abs() < 1e-9);
                }
            }
            let unit = LengthHistogram::from_lengths(0, Binning::Linear { width: 1 }, 200, lengths.iter().copied()).unwrap();
            let direct = LengthHistogram::from_lengths(0, Binning::Logarithmic { factor }, 200, lengths.iter().copied()).unwrap();
            prop_assert_eq!(unit.rebin(Binning::Logarithmic { factor }).unwrap(), direct);
        }
    }
}
