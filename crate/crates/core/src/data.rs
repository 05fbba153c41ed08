//! Half-hourly smart-meter ingest: Ausgrid CSV parsing, household selection,
//! complete-week filtering, train/test splitting and synthetic traces.
//!
//! All energies are kWh per half-hour slot. Slot `k` covers the interval
//! `[k * 30 min, (k + 1) * 30 min)` of its calendar date.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, NaiveTime, Weekday};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SLOTS_PER_DAY: usize = 48;
pub const DAYS_PER_WEEK: usize = 7;
pub const SLOTS_PER_WEEK: usize = SLOTS_PER_DAY * DAYS_PER_WEEK;

pub type CustomerId = u32;

/// Parsed households keyed by customer id. Each value is in file order, not
/// necessarily chronological; use [`select_household`] for a sorted series.
pub type HouseholdData = BTreeMap<CustomerId, Vec<HalfHourRecord>>;

/// Calendar date plus half-hour slot index in `0..48`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp {
    pub date: NaiveDate,
    pub slot: u8,
}

impl Timestamp {
    pub fn new(date: NaiveDate, slot: usize) -> Result<Self> {
        if slot >= SLOTS_PER_DAY {
            return Err(Error::Domain(format!("slot index {slot} outside 0..48")));
        }
        Ok(Timestamp {
            date,
            slot: slot as u8,
        })
    }

    pub fn slot(&self) -> usize {
        self.slot as usize
    }

    /// Wall-clock start of the slot.
    pub fn start(&self) -> NaiveDateTime {
        self.date.and_time(NaiveTime::MIN) + Duration::minutes(30 * self.slot as i64)
    }

    pub fn from_start(start: NaiveDateTime) -> Result<Self> {
        let offset = start.time().signed_duration_since(NaiveTime::MIN);
        let minutes = offset.num_minutes();
        if offset != Duration::minutes(minutes) || minutes % 30 != 0 {
            return Err(Error::Format(format!(
                "timestamp {start} is not aligned to a half-hour boundary"
            )));
        }
        Timestamp::new(start.date(), (minutes / 30) as usize)
    }

    /// The following half-hour slot (rolls over midnight).
    pub fn succ(&self) -> Timestamp {
        if self.slot() + 1 == SLOTS_PER_DAY {
            Timestamp {
                date: self.date.succ_opt().expect("date overflow"),
                slot: 0,
            }
        } else {
            Timestamp {
                date: self.date,
                slot: self.slot + 1,
            }
        }
    }
}

/// One 30-minute reading for a household.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfHourRecord {
    pub timestamp: Timestamp,
    /// General consumption.
    pub gc: f64,
    /// Controlled-load consumption.
    pub cl: f64,
    /// Solar generation (gross meter).
    pub cs: f64,
}

impl HalfHourRecord {
    pub fn new(timestamp: Timestamp, gc: f64, cl: f64, cs: f64) -> Result<Self> {
        for (name, v) in [("gc", gc), ("cl", cl), ("cs", cs)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Domain(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(HalfHourRecord {
            timestamp,
            gc,
            cl,
            cs,
        })
    }
}

/// Seven contiguous days (Monday to Sunday) of half-hour records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeekTrace {
    start_date: NaiveDate,
    records: Vec<HalfHourRecord>,
}

impl WeekTrace {
    /// Checks the Monday start, the length and 30-minute contiguity.
    pub fn new(records: Vec<HalfHourRecord>) -> Result<Self> {
        if records.len() != SLOTS_PER_WEEK {
            return Err(Error::Domain(format!(
                "a week needs {SLOTS_PER_WEEK} records, got {}",
                records.len()
            )));
        }
        let first = records[0].timestamp;
        if first.slot != 0 || first.date.weekday() != Weekday::Mon {
            return Err(Error::Domain(format!(
                "a week must start on Monday 00:00, got {} slot {}",
                first.date, first.slot
            )));
        }
        for pair in records.windows(2) {
            if pair[1].timestamp != pair[0].timestamp.succ() {
                return Err(Error::Domain(format!(
                    "records not contiguous at {:?}",
                    pair[1].timestamp
                )));
            }
        }
        Ok(WeekTrace {
            start_date: first.date,
            records,
        })
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start_date
    }

    pub fn records(&self) -> &[HalfHourRecord] {
        &self.records
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Vec<WeekTrace>,
    pub test: Vec<WeekTrace>,
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// Ausgrid CSV layout
// ---------------------------------------------------------------------------

const FIXED_COLUMNS: [&str; 5] = [
    "Customer",
    "Generator Capacity",
    "Postcode",
    "Consumption Category",
    "date",
];
const ROW_QUALITY: &str = "Row Quality";

/// Column label for half-hour slot `k`: the time at which the slot ENDS,
/// so slot 0 is `0:30` and slot 47 is `0:00`.
pub fn slot_column_label(slot: usize) -> String {
    let end_minutes = ((slot + 1) * 30) % (24 * 60);
    format!("{}:{:02}", end_minutes / 60, end_minutes % 60)
}

fn expected_header() -> Vec<String> {
    FIXED_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((0..SLOTS_PER_DAY).map(slot_column_label))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Category {
    General,
    Controlled,
    Generation,
}

impl Category {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "GC" => Some(Category::General),
            "CL" => Some(Category::Controlled),
            "GG" => Some(Category::Generation),
            _ => None,
        }
    }

    fn code(self) -> &'static str {
        match self {
            Category::General => "GC",
            Category::Controlled => "CL",
            Category::Generation => "GG",
        }
    }
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%d/%m/%Y").ok()
}

fn format_date(d: NaiveDate) -> String {
    format!("{}/{}/{}", d.day(), d.month(), d.year())
}

/// Parse an Ausgrid solar-home CSV into per-customer half-hour records.
///
/// A single free-text preamble line before the header is tolerated (the
/// published files carry one). GC, CL and GG rows for the same customer and
/// date are merged; a missing CL row means zero controlled load. A date
/// lacking either its GC or its GG row yields no records, leaving a gap the
/// complete-week filter will drop.
pub fn parse_ausgrid_csv<R: Read>(raw: R) -> Result<HouseholdData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(raw);

    let expected = expected_header();
    let mut header_seen = false;
    let mut has_quality = false;
    let mut rows: BTreeMap<(CustomerId, NaiveDate), HashMap<Category, [f64; SLOTS_PER_DAY]>> =
        BTreeMap::new();
    let mut first_seen: Vec<(CustomerId, NaiveDate)> = Vec::new();

    for (idx, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(idx + 1);
        if !header_seen {
            let fields: Vec<&str> = rec.iter().collect();
            if fields.first() == Some(&"Customer") {
                let n = expected.len();
                let matches = fields.len() >= n
                    && fields[..n].iter().zip(&expected).all(|(a, b)| *a == b);
                has_quality = fields.len() == n + 1 && fields[n] == ROW_QUALITY;
                if !matches || !(fields.len() == n || has_quality) {
                    return Err(Error::Format(format!(
                        "unexpected header on line {line}: expected `{}`",
                        expected.join(",")
                    )));
                }
                header_seen = true;
                continue;
            }
            if idx == 0 {
                // free-text preamble
                continue;
            }
            return Err(Error::Format(format!(
                "missing `Customer,...` header (line {line})"
            )));
        }

        let want = expected.len() + usize::from(has_quality);
        if rec.len() != want {
            return Err(Error::Format(format!(
                "line {line}: expected {want} fields, found {}",
                rec.len()
            )));
        }
        let customer: CustomerId = rec[0].parse().map_err(|_| Error::Validation {
            row: line,
            column: "Customer".into(),
            message: format!("invalid customer id `{}`", &rec[0]),
        })?;
        let category = Category::parse(&rec[3]).ok_or_else(|| Error::Validation {
            row: line,
            column: "Consumption Category".into(),
            message: format!("unknown category `{}`", &rec[3]),
        })?;
        let date = parse_date(&rec[4]).ok_or_else(|| Error::Validation {
            row: line,
            column: "date".into(),
            message: format!("invalid date `{}` (expected D/M/YYYY)", &rec[4]),
        })?;

        let mut values = [0.0; SLOTS_PER_DAY];
        for (slot, v) in values.iter_mut().enumerate() {
            let cell = &rec[FIXED_COLUMNS.len() + slot];
            let parsed: f64 = cell.parse().map_err(|_| Error::Validation {
                row: line,
                column: slot_column_label(slot),
                message: format!("non-numeric value `{cell}`"),
            })?;
            if !parsed.is_finite() || parsed < 0.0 {
                return Err(Error::Validation {
                    row: line,
                    column: slot_column_label(slot),
                    message: format!("value {parsed} must be finite and non-negative"),
                });
            }
            *v = parsed;
        }

        let day = rows.entry((customer, date)).or_insert_with(|| {
            first_seen.push((customer, date));
            HashMap::new()
        });
        if day.insert(category, values).is_some() {
            return Err(Error::Duplicate {
                customer,
                category: category.code().into(),
                date: format_date(date),
            });
        }
    }

    if !header_seen {
        // An entirely empty input has no header either.
        if first_seen.is_empty() && rows.is_empty() && reader.position().line() <= 1 {
            return Err(Error::Format("empty input: missing header".into()));
        }
        return Err(Error::Format("missing `Customer,...` header".into()));
    }

    let mut out = HouseholdData::new();
    for key in first_seen {
        let (customer, date) = key;
        let day = &rows[&key];
        let entry = out.entry(customer).or_default();
        let (Some(gc), Some(cs)) = (day.get(&Category::General), day.get(&Category::Generation))
        else {
            continue;
        };
        let cl = day.get(&Category::Controlled);
        for slot in 0..SLOTS_PER_DAY {
            entry.push(HalfHourRecord {
                timestamp: Timestamp {
                    date,
                    slot: slot as u8,
                },
                gc: gc[slot],
                cl: cl.map_or(0.0, |c| c[slot]),
                cs: cs[slot],
            });
        }
    }
    Ok(out)
}

type Column = fn(&HalfHourRecord) -> f64;

/// Write households back in the Ausgrid layout (no preamble, no quality
/// column). CL rows are only emitted for dates with some controlled load.
/// Every date present must be a full 48-slot day.
pub fn write_ausgrid_csv<W: Write>(data: &HouseholdData, out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().from_writer(out);
    writer.write_record(expected_header())?;
    for (&customer, records) in data {
        let mut days: BTreeMap<NaiveDate, Vec<Option<&HalfHourRecord>>> = BTreeMap::new();
        for r in records {
            let day = days
                .entry(r.timestamp.date)
                .or_insert_with(|| vec![None; SLOTS_PER_DAY]);
            if day[r.timestamp.slot()].replace(r).is_some() {
                return Err(Error::Format(format!(
                    "customer {customer}: duplicate timestamp {:?}",
                    r.timestamp
                )));
            }
        }
        for (date, slots) in days {
            let slots: Vec<&HalfHourRecord> = slots
                .into_iter()
                .collect::<Option<_>>()
                .ok_or_else(|| {
                    Error::Format(format!("customer {customer}: incomplete day {date}"))
                })?;
            let has_cl = slots.iter().any(|r| r.cl != 0.0);
            let rows: [(Category, Column); 3] = [
                (Category::General, |r| r.gc),
                (Category::Controlled, |r| r.cl),
                (Category::Generation, |r| r.cs),
            ];
            for (category, value) in rows {
                if category == Category::Controlled && !has_cl {
                    continue;
                }
                let mut row = vec![
                    customer.to_string(),
                    "0".to_string(),
                    "0".to_string(),
                    category.code().to_string(),
                    format_date(date),
                ];
                row.extend(slots.iter().map(|r| value(r).to_string()));
                writer.write_record(row)?;
            }
        }
    }
    writer.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Normalized per-household format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct NormalizedRow {
    timestamp: NaiveDateTime,
    gc: f64,
    cl: f64,
    cs: f64,
}

/// Columnar single-household format: `timestamp,gc,cl,cs`, timestamp being
/// the ISO-8601 start of the slot.
pub fn write_normalized<W: Write>(records: &[HalfHourRecord], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for r in records {
        writer.serialize(NormalizedRow {
            timestamp: r.timestamp.start(),
            gc: r.gc,
            cl: r.cl,
            cs: r.cs,
        })?;
    }
    writer.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

pub fn read_normalized<R: Read>(raw: R) -> Result<Vec<HalfHourRecord>> {
    let mut reader = csv::Reader::from_reader(raw);
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<NormalizedRow>().enumerate() {
        let row = row?;
        let ts = Timestamp::from_start(row.timestamp)?;
        let rec = HalfHourRecord::new(ts, row.gc, row.cl, row.cs).map_err(|e| {
            Error::Validation {
                row: i + 2,
                column: "gc/cl/cs".into(),
                message: e.to_string(),
            }
        })?;
        out.push(rec);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Selection, filtering, splitting
// ---------------------------------------------------------------------------

pub fn select_household(data: &HouseholdData, customer: CustomerId) -> Result<Vec<HalfHourRecord>> {
    let mut records = data
        .get(&customer)
        .ok_or_else(|| Error::NotFound(format!("customer {customer}")))?
        .clone();
    records.sort_by_key(|r| r.timestamp);
    Ok(records)
}

/// Monday-anchored calendar weeks lying entirely inside `year` whose 336
/// slots are all present exactly once.
pub fn filter_complete_weeks(records: &[HalfHourRecord], year: i32) -> Vec<WeekTrace> {
    let mut by_day: BTreeMap<NaiveDate, Vec<Vec<&HalfHourRecord>>> = BTreeMap::new();
    for r in records {
        if r.timestamp.date.year() != year {
            continue;
        }
        by_day
            .entry(r.timestamp.date)
            .or_insert_with(|| vec![Vec::new(); SLOTS_PER_DAY])[r.timestamp.slot()]
        .push(r);
    }
    let complete_day =
        |d: &NaiveDate| by_day.get(d).is_some_and(|s| s.iter().all(|v| v.len() == 1));

    let Some(jan1) = NaiveDate::from_ymd_opt(year, 1, 1) else {
        return Vec::new();
    };
    let offset = (7 - jan1.weekday().num_days_from_monday()) % 7;
    let mut monday = jan1 + Duration::days(offset as i64);
    let mut weeks = Vec::new();
    loop {
        let sunday = monday + Duration::days(6);
        if sunday.year() != year {
            break;
        }
        let days: Vec<NaiveDate> = (0..7).map(|i| monday + Duration::days(i)).collect();
        if days.iter().all(complete_day) {
            let recs: Vec<HalfHourRecord> = days
                .iter()
                .flat_map(|d| by_day[d].iter().map(|s| *s[0]))
                .collect();
            weeks.push(WeekTrace::new(recs).expect("complete Monday week is a valid trace"));
        }
        monday += Duration::days(7);
    }
    weeks
}

/// Uniformly random train/test partition, deterministic in `seed`. Both halves
/// keep the input (chronological) order.
pub fn split_train_test(weeks: &[WeekTrace], n_train: usize, seed: u64) -> Result<DataSplit> {
    if n_train >= weeks.len() {
        return Err(Error::config_at(
            "data.n_train",
            format!(
                "n_train = {n_train} must be smaller than the {} available weeks",
                weeks.len()
            ),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; weeks.len()];
    for i in index::sample(&mut rng, weeks.len(), n_train) {
        chosen[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (week, is_train) in weeks.iter().zip(chosen) {
        if is_train {
            train.push(week.clone());
        } else {
            test.push(week.clone());
        }
    }
    Ok(DataSplit { train, test, seed })
}

// ---------------------------------------------------------------------------
// Synthetic traces
// ---------------------------------------------------------------------------

/// Shape of a synthetic household. All quantities are kWh per half-hour.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticProfile {
    /// Solar output at solar noon on a clear day.
    pub peak_solar: f64,
    /// Demand present in every slot.
    pub base_demand: f64,
    /// Extra demand at the top of the morning peak (around 07:30).
    pub morning_peak: f64,
    /// Extra demand at the top of the evening peak (around 19:00).
    pub evening_peak: f64,
    /// Controlled load drawn in each slot of the 23:00-08:00 window.
    pub controlled_load: f64,
    /// Relative noise amplitude in `[0, 1]`; zero gives a periodic trace.
    pub noise: f64,
    /// First Monday of the generated sequence.
    pub start: NaiveDate,
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        SyntheticProfile {
            peak_solar: 0.6,
            base_demand: 0.15,
            morning_peak: 0.35,
            evening_peak: 0.5,
            controlled_load: 0.1,
            noise: 0.0,
            start: NaiveDate::from_ymd_opt(2013, 1, 7).unwrap(),
        }
    }
}

impl SyntheticProfile {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("peak_solar", self.peak_solar),
            ("base_demand", self.base_demand),
            ("morning_peak", self.morning_peak),
            ("evening_peak", self.evening_peak),
            ("controlled_load", self.controlled_load),
            ("noise", self.noise),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config_at(
                    format!("data.synthetic.{name}"),
                    format!("must be finite and non-negative, got {v}"),
                ));
            }
        }
        if self.noise > 1.0 {
            return Err(Error::config_at("data.synthetic.noise", "must not exceed 1"));
        }
        if self.start.weekday() != Weekday::Mon {
            return Err(Error::config_at("data.synthetic.start", "must be a Monday"));
        }
        Ok(())
    }
}

fn bump(hour: f64, centre: f64, width: f64) -> f64 {
    (-0.5 * ((hour - centre) / width).powi(2)).exp()
}

/// `n` consecutive synthetic weeks. Solar is a half-sine over 06:00-18:00
/// scaled by a per-day cloud factor; demand has morning and evening peaks;
/// controlled load sits in the night window. With `noise == 0` the output
/// does not depend on `seed`.
pub fn generate_synthetic_weeks(
    n: usize,
    profile: &SyntheticProfile,
    seed: u64,
) -> Result<Vec<WeekTrace>> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = |rng: &mut ChaCha8Rng| -> f64 {
        if profile.noise == 0.0 {
            1.0
        } else {
            (1.0 + profile.noise * rng.random_range(-1.0..=1.0)).max(0.0)
        }
    };
    let mut weeks = Vec::with_capacity(n);
    for w in 0..n {
        let monday = profile.start + Duration::days(7 * w as i64);
        let mut records = Vec::with_capacity(SLOTS_PER_WEEK);
        for d in 0..DAYS_PER_WEEK {
            let date = monday + Duration::days(d as i64);
            let cloud = if profile.noise == 0.0 {
                1.0
            } else {
                1.0 - profile.noise * rng.random_range(0.0..=1.0)
            };
            for slot in 0..SLOTS_PER_DAY {
                let mid = (slot as f64 + 0.5) / 2.0;
                let solar = if (6.0..18.0).contains(&mid) {
                    profile.peak_solar * (std::f64::consts::PI * (mid - 6.0) / 12.0).sin()
                } else {
                    0.0
                };
                let demand = profile.base_demand
                    + profile.morning_peak * bump(mid, 7.5, 1.0)
                    + profile.evening_peak * bump(mid, 19.0, 1.5);
                let controlled = if !(8.0..23.0).contains(&mid) {
                    profile.controlled_load
                } else {
                    0.0
                };
                let ts = Timestamp {
                    date,
                    slot: slot as u8,
                };
                let gc = demand * jitter(&mut rng);
                let cl = controlled * jitter(&mut rng);
                records.push(HalfHourRecord::new(ts, gc, cl, (solar * cloud).max(0.0))?);
            }
        }
        weeks.push(WeekTrace::new(records)?);
    }
    Ok(weeks)
}
