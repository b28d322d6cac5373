use std::ops::RangeInclusive;

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

/// Day-of-month ranges for each partition. Days outside every range
/// (21, 25-26, 30-31 by default) are buffer days and are discarded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_days: RangeInclusive<u32>,
    pub val_days: RangeInclusive<u32>,
    pub test_days: RangeInclusive<u32>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_days: 1..=20,
            val_days: 22..=24,
            test_days: 27..=29,
        }
    }
}

fn overlap(a: &RangeInclusive<u32>, b: &RangeInclusive<u32>) -> bool {
    a.start() <= b.end() && b.start() <= a.end()
}

impl SplitSpec {
    pub fn new(
        train_days: RangeInclusive<u32>,
        val_days: RangeInclusive<u32>,
        test_days: RangeInclusive<u32>,
    ) -> Result<Self> {
        let s = SplitSpec {
            train_days,
            val_days,
            test_days,
        };
        if overlap(&s.train_days, &s.val_days)
            || overlap(&s.train_days, &s.test_days)
            || overlap(&s.val_days, &s.test_days)
        {
            return Err(Error::usage("split day ranges must be pairwise disjoint"));
        }
        Ok(s)
    }

    pub fn partition_of_day(&self, day: u32) -> Option<Partition> {
        if self.train_days.contains(&day) {
            Some(Partition::Train)
        } else if self.val_days.contains(&day) {
            Some(Partition::Val)
        } else if self.test_days.contains(&day) {
            Some(Partition::Test)
        } else {
            None
        }
    }

    pub fn partition_of(&self, t: DateTime<Utc>) -> Option<Partition> {
        self.partition_of_day(t.day())
    }
}

/// Partition samples by the day-of-month of their first input step.
pub fn split(samples: Vec<Sample>, spec: &SplitSpec) -> (Vec<Sample>, Vec<Sample>, Vec<Sample>) {
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for s in samples {
        match spec.partition_of(s.t0) {
            Some(Partition::Train) => train.push(s),
            Some(Partition::Val) => val.push(s),
            Some(Partition::Test) => test.push(s),
            None => {}
        }
    }
    (train, val, test)
}
