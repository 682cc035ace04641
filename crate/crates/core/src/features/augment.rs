//! Translation augmentation of time-series features.
//!
//! A subsequence starting at `start` and running to the last row is moved
//! `shift` rows to the left or right:
//!
//! * left: rows `start+shift..40` move to `start..40-shift`; the `shift`
//!   trailing slots take the flow's packets 41, 42, ... when the flow has
//!   them, otherwise zero rows.
//! * right: rows `start..40-shift` move to `start+shift..40`; the vacated
//!   slots `start..start+shift` repeat row `start` verbatim, time included,
//!   so the time column is not monotone after a right shift.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::extract::{packet_row, TimeSeriesFeature, TS_LEN};
use crate::ingest::Flow;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftDirection {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub shift: usize,
    pub direction: ShiftDirection,
    /// First row of the shifted subsequence.
    pub start: usize,
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.shift == 0 || self.shift >= TS_LEN {
            return Err(Error::Config(format!(
                "shift must be in 1..{TS_LEN}, got {}",
                self.shift
            )));
        }
        if self.start >= TS_LEN {
            return Err(Error::Config(format!(
                "subsequence start must be below {TS_LEN}, got {}",
                self.start
            )));
        }
        Ok(())
    }

    /// Draws shift uniformly from `1..=max_shift`, a random direction, and a
    /// start row that leaves at least one row of the subsequence in place.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, max_shift: usize) -> Self {
        let max_shift = max_shift.clamp(1, TS_LEN - 1);
        let shift = rng.gen_range(1..=max_shift);
        let direction = if rng.gen_bool(0.5) {
            ShiftDirection::Left
        } else {
            ShiftDirection::Right
        };
        let start = rng.gen_range(0..TS_LEN - shift);
        AugmentationSpec {
            shift,
            direction,
            start,
        }
    }
}

/// Shifts a subsequence of `feature`. `source` supplies the packets beyond
/// row 40 for left shifts; without it the trailing slots are zero.
pub fn augment_translate(
    feature: &TimeSeriesFeature,
    source: Option<&Flow>,
    spec: &AugmentationSpec,
) -> Result<TimeSeriesFeature> {
    spec.validate()?;
    let rows = feature.rows();
    let (s, n) = (spec.start, spec.shift);
    let mut out = *feature;
    match spec.direction {
        ShiftDirection::Left => {
            for i in s..TS_LEN {
                out.0[i] = if i + n < TS_LEN {
                    rows[i + n]
                } else {
                    let extra = i + n - TS_LEN;
                    source
                        .and_then(|f| f.packets.get(TS_LEN + extra))
                        .map(packet_row)
                        .unwrap_or([0.0, 0.0])
                };
            }
        }
        ShiftDirection::Right => {
            for i in s..TS_LEN {
                out.0[i] = if i < s + n { rows[s] } else { rows[i - n] };
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::extract::tests::flow_with;
    use crate::features::extract_timeseries;

    fn spec(direction: ShiftDirection, shift: usize) -> AugmentationSpec {
        AugmentationSpec {
            shift,
            direction,
            start: 0,
        }
    }

    #[test]
    fn right_shift_repeats_first_row() {
        let f = flow_with(40, 0..0);
        let ts = extract_timeseries(&f);
        let out = augment_translate(&ts, Some(&f), &spec(ShiftDirection::Right, 2)).unwrap();
        let r = ts.rows();
        assert_eq!(out.rows()[0], r[0]);
        assert_eq!(out.rows()[1], r[0]);
        assert_eq!(out.rows()[2], r[0]);
        assert_eq!(out.rows()[3], r[1]);
        assert_eq!(out.rows()[39], r[37]);
    }

    #[test]
    fn left_shift_zero_fill_without_extra_packets() {
        let f = flow_with(40, 0..0);
        let ts = extract_timeseries(&f);
        let out = augment_translate(&ts, Some(&f), &spec(ShiftDirection::Left, 3)).unwrap();
        assert_eq!(out.rows()[0], ts.rows()[3]);
        assert_eq!(out.rows()[36], ts.rows()[39]);
        assert!(out.rows()[37..].iter().all(|r| *r == [0.0, 0.0]));
    }

    #[test]
    fn left_shift_pulls_later_packets() {
        let f = flow_with(50, 40..41);
        let ts = extract_timeseries(&f);
        let out = augment_translate(&ts, Some(&f), &spec(ShiftDirection::Left, 2)).unwrap();
        assert_eq!(out.rows()[37], ts.rows()[39]);
        assert_eq!(out.rows()[38], [40.0, -140.0]);
        assert_eq!(out.rows()[39], [41.0, 141.0]);
    }

    #[test]
    fn prefix_before_start_is_untouched() {
        let f = flow_with(40, 0..0);
        let ts = extract_timeseries(&f);
        let sp = AugmentationSpec {
            shift: 4,
            direction: ShiftDirection::Right,
            start: 10,
        };
        let out = augment_translate(&ts, Some(&f), &sp).unwrap();
        assert_eq!(out.rows()[..10], ts.rows()[..10]);
        assert!(out.rows()[10..14].iter().all(|r| *r == ts.rows()[10]));
        assert_eq!(out.rows()[14], ts.rows()[10]);
    }

    #[test]
    fn invalid_shift_rejected() {
        let ts = TimeSeriesFeature::default();
        assert!(augment_translate(&ts, None, &spec(ShiftDirection::Left, 0)).is_err());
        assert!(augment_translate(&ts, None, &spec(ShiftDirection::Left, 40)).is_err());
    }
}
