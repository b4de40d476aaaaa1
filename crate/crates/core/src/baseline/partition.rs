use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Summer,
    Winter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayType {
    Weekday,
    Weekend,
}

/// One of the four variance-homogeneous groups of days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PartitionLabel {
    pub season: Season,
    pub daytype: DayType,
}

impl PartitionLabel {
    pub const ALL: [PartitionLabel; 4] = [
        PartitionLabel { season: Season::Summer, daytype: DayType::Weekday },
        PartitionLabel { season: Season::Winter, daytype: DayType::Weekday },
        PartitionLabel { season: Season::Summer, daytype: DayType::Weekend },
        PartitionLabel { season: Season::Winter, daytype: DayType::Weekend },
    ];
}

impl fmt::Display for PartitionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let season = match self.season {
            Season::Summer => "summer",
            Season::Winter => "winter",
        };
        let day = match self.daytype {
            DayType::Weekday => "weekday",
            DayType::Weekend => "weekend",
        };
        write!(f, "{season}-{day}")
    }
}

impl FromStr for PartitionLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PartitionLabel::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| format!("unknown partition `{s}`"))
    }
}

/// Season boundaries as (month, day) pairs; summer runs from `summer_start`
/// through `summer_end` inclusive. Weekends are Saturday and Sunday. All
/// years are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionScheme {
    pub summer_start: (u32, u32),
    pub summer_end: (u32, u32),
}

impl Default for PartitionScheme {
    /// April 1 through October 31.
    fn default() -> Self {
        PartitionScheme { summer_start: (4, 1), summer_end: (10, 31) }
    }
}

impl PartitionScheme {
    pub fn assign(&self, date: NaiveDate) -> PartitionLabel {
        let md = (date.month(), date.day());
        let summer = if self.summer_start <= self.summer_end {
            self.summer_start <= md && md <= self.summer_end
        } else {
            // southern-hemisphere style season wrapping the new year
            md >= self.summer_start || md <= self.summer_end
        };
        let weekend = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
        PartitionLabel {
            season: if summer { Season::Summer } else { Season::Winter },
            daytype: if weekend { DayType::Weekend } else { DayType::Weekday },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn definition_examples() {
        let s = PartitionScheme::default();
        assert_eq!(s.assign(d(2017, 7, 4)).to_string(), "summer-weekday");
        assert_eq!(s.assign(d(2018, 1, 6)).to_string(), "winter-weekend");
        assert_eq!(s.assign(d(2019, 10, 31)).to_string(), "summer-weekday");
        assert_eq!(s.assign(d(2019, 11, 1)).to_string(), "winter-weekday");
        assert_eq!(s.assign(d(2019, 3, 31)).season, Season::Winter);
        assert_eq!(s.assign(d(2019, 4, 1)).season, Season::Summer);
    }

    #[test]
    fn full_year_has_exactly_four_labels() {
        let s = PartitionScheme::default();
        let labels: BTreeSet<_> = d(2018, 1, 1).iter_days().take(365).map(|x| s.assign(x)).collect();
        assert_eq!(labels.len(), 4);
    }

    #[test]
    fn custom_boundaries_shift_season() {
        let s = PartitionScheme { summer_start: (3, 25), summer_end: (10, 31) };
        assert_eq!(s.assign(d(2017, 3, 25)).season, Season::Summer);
        let wrap = PartitionScheme { summer_start: (10, 1), summer_end: (3, 31) };
        assert_eq!(wrap.assign(d(2017, 1, 15)).season, Season::Summer);
        assert_eq!(wrap.assign(d(2017, 6, 15)).season, Season::Winter);
    }

    #[test]
    fn labels_round_trip_through_strings() {
        for p in PartitionLabel::ALL {
            assert_eq!(p.to_string().parse::<PartitionLabel>().unwrap(), p);
        }
    }
}
