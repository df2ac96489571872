//! Synthetic two-file population generator with configurable error
//! injection.
//!
//! `generate_population` builds a Y file whose geography is exact — SA1
//! areas of `400 * scale` records, each split into meshblocks that nest
//! inside their SA1 (the meshblock code's first five digits are the SA1
//! code) — plus exact 50/50 sex counts and an exact 75% share of one
//! dominant country code. Records are randomly ordered and the X file is a
//! copy of the first eighth of Y, so the two files share record identifiers.
//!
//! `inject_errors` perturbs X in place-of-copy, drawing each rule's record
//! subset without replacement so that configured counts are hit exactly,
//! and keeps every pre-error value in a truth sidecar.
//!
//! All randomness comes from ChaCha20 streams seeded with the configured
//! seeds; identical configuration reproduces identical files byte for byte.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

/// The seven comparison fields carried by every record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Field {
    Sa1,
    Mb,
    Bday,
    Byear,
    Sex,
    Eye,
    Cob,
}

/// All fields in schema order.
pub const ALL_FIELDS: [Field; 7] =
    [Field::Sa1, Field::Mb, Field::Bday, Field::Byear, Field::Sex, Field::Eye, Field::Cob];

impl Field {
    pub fn index(self) -> usize {
        match self {
            Field::Sa1 => 0,
            Field::Mb => 1,
            Field::Bday => 2,
            Field::Byear => 3,
            Field::Sex => 4,
            Field::Eye => 5,
            Field::Cob => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::Sa1 => "SA1",
            Field::Mb => "MB",
            Field::Bday => "BDAY",
            Field::Byear => "BYEAR",
            Field::Sex => "SEX",
            Field::Eye => "EYE",
            Field::Cob => "COB",
        }
    }

    pub fn from_name(name: &str) -> Option<Field> {
        ALL_FIELDS.iter().copied().find(|f| f.name().eq_ignore_ascii_case(name))
    }
}

/// One person record: identifier plus seven optional numeric field values
/// (`None` encodes a missing value).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersonRecord {
    pub recid: String,
    pub values: [Option<u32>; 7],
}

impl PersonRecord {
    pub fn value(&self, field: Field) -> Option<u32> {
        self.values[field.index()]
    }
}

/// An ordered file of person records.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PersonFile {
    pub records: Vec<PersonRecord>,
}

impl PersonFile {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Maps record identifiers to positions.
    pub fn index_by_recid(&self) -> HashMap<&str, usize> {
        self.records.iter().enumerate().map(|(i, r)| (r.recid.as_str(), i)).collect()
    }
}

pub const AUSTRALIA_CODE: u32 = 1101;
pub const SA1_BASE: u32 = 10001;
pub const BDAY_RANGE: (u32, u32) = (1, 366);
pub const BYEAR_RANGE: (u32, u32) = (1955, 2009);
pub const EYE_RANGE: (u32, u32) = (1, 5);

/// Country-of-birth code table: 30 two-digit regions of ten codes each.
/// The first two digits of a code name its broad region, mirroring how real
/// statistical country classifications nest countries in regions; the
/// frequencies of the non-dominant codes decay harmonically. The table is a
/// fixed approximation, not a census extract.
pub struct CountryTable {
    /// Every code, dominant code included.
    pub codes: Vec<u32>,
    /// Codes drawn for the non-dominant 25%, with their weights.
    foreign_codes: Vec<u32>,
    foreign_weights: Vec<f64>,
    by_region: HashMap<u32, Vec<u32>>,
}

impl CountryTable {
    fn build() -> CountryTable {
        let mut codes = Vec::new();
        for major in 1..=6u32 {
            for minor in 1..=5u32 {
                let region = major * 10 + minor;
                for k in 1..=10u32 {
                    codes.push(region * 100 + k);
                }
            }
        }
        let foreign_codes: Vec<u32> =
            codes.iter().copied().filter(|&c| c != AUSTRALIA_CODE).collect();
        let foreign_weights: Vec<f64> =
            (0..foreign_codes.len()).map(|k| 1.0 / (k as f64 + 2.0)).collect();
        let mut by_region: HashMap<u32, Vec<u32>> = HashMap::new();
        for &c in &codes {
            by_region.entry(c / 100).or_default().push(c);
        }
        CountryTable { codes, foreign_codes, foreign_weights, by_region }
    }

    pub fn region_of(code: u32) -> u32 {
        code / 100
    }

    /// Codes sharing a region with `code`, excluding `code` itself.
    pub fn region_alternatives(&self, code: u32) -> Vec<u32> {
        self.by_region
            .get(&Self::region_of(code))
            .map(|v| v.iter().copied().filter(|&c| c != code).collect())
            .unwrap_or_default()
    }
}

/// The process-wide country table.
pub fn country_table() -> &'static CountryTable {
    static TABLE: OnceLock<CountryTable> = OnceLock::new();
    TABLE.get_or_init(CountryTable::build)
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("y_count = {y_count} must be a positive multiple of {divisor} ({why})")]
    YCountNotDivisible { y_count: usize, divisor: usize, why: &'static str },
    #[error("y_count = {y_count} exceeds the identifier space (max 999999)")]
    YCountTooLarge { y_count: usize },
    #[error("scale = {scale} is unusable: {why}")]
    BadScale { scale: f64, why: &'static str },
    #[error("rate `{name}` = {value} is outside [0, 1]")]
    BadRate { name: &'static str, value: f64 },
    #[error("{field} rules request {requested} records but only {available} are eligible")]
    TooManyErrors { field: &'static str, requested: usize, available: usize },
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv failure: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: expected header {expected:?}, found {found:?}")]
    BadHeader { path: String, expected: Vec<String>, found: Vec<String> },
    #[error("{path} line {line}: bad value {value:?} for {what}")]
    BadValue { path: String, line: usize, value: String, what: &'static str },
    #[error("truth sidecar names unknown record {recid}")]
    UnknownRecid { recid: String },
}

/// Size and seeding of a generated population.
///
/// `scale` shrinks the records-per-area constants (an SA1 holds
/// `400 * scale` records) while `y_count` fixes the total, so the two
/// together choose between "fewer areas" and "smaller areas".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    pub y_count: usize,
    pub scale: f64,
    pub seed: u64,
}

/// Geography constants realised by a generation run, needed when injecting
/// geography-consistent errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthLayout {
    pub sa1_min: u32,
    pub sa1_max: u32,
    pub sa1_group: usize,
    pub mb_per_sa1: u32,
}

/// A generated population: full file, its first-eighth copy, and the layout.
#[derive(Debug, Clone)]
pub struct Generated {
    pub y: PersonFile,
    pub x: PersonFile,
    pub layout: SynthLayout,
}

fn scaled_group(scale: f64, base: f64) -> Result<usize, SynthError> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(SynthError::BadScale { scale, why: "must be finite and positive" });
    }
    let raw = base * scale;
    let rounded = raw.round();
    if (raw - rounded).abs() > 1e-6 || rounded < 1.0 {
        return Err(SynthError::BadScale { scale, why: "group sizes must stay integral" });
    }
    Ok(rounded as usize)
}

impl GeneratorConfig {
    /// SA1 group size, meshblock split and SA1 code range implied by the
    /// configuration.
    pub fn layout(&self) -> Result<SynthLayout, SynthError> {
        if self.y_count == 0 || self.y_count % 8 != 0 {
            return Err(SynthError::YCountNotDivisible {
                y_count: self.y_count,
                divisor: 8,
                why: "the X file copies the first eighth of Y",
            });
        }
        if self.y_count > 999_999 {
            return Err(SynthError::YCountTooLarge { y_count: self.y_count });
        }
        let sa1_group = scaled_group(self.scale, 400.0)?;
        if self.y_count % sa1_group != 0 {
            return Err(SynthError::YCountNotDivisible {
                y_count: self.y_count,
                divisor: sa1_group,
                why: "every SA1 area must be full",
            });
        }
        // Five meshblocks per SA1 when the group splits evenly, otherwise
        // one record per meshblock (tiny scales).
        let mb_per_sa1 = if sa1_group % 5 == 0 { 5 } else { sa1_group as u32 };
        if mb_per_sa1 > 99 {
            return Err(SynthError::BadScale {
                scale: self.scale,
                why: "meshblock index must fit in two digits",
            });
        }
        let sa1_count = (self.y_count / sa1_group) as u32;
        Ok(SynthLayout {
            sa1_min: SA1_BASE,
            sa1_max: SA1_BASE + sa1_count - 1,
            sa1_group,
            mb_per_sa1,
        })
    }
}

/// Generates the Y file and its X copy.
///
/// Draw order (fixed for reproducibility): the sex pool shuffle, the
/// dominant-country flag shuffle, then per record slot BDAY, BYEAR, EYE and
/// (for non-dominant records) the country code, then the record-order
/// shuffle. Identifiers `A000001..` are assigned after the final shuffle.
pub fn generate_population(cfg: &GeneratorConfig) -> Result<Generated, SynthError> {
    let layout = cfg.layout()?;
    let n = cfg.y_count;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    let mut sex_pool: Vec<u32> = vec![1; n / 2];
    sex_pool.extend(std::iter::repeat_n(2, n - n / 2));
    sex_pool.shuffle(&mut rng);

    let au_count = 3 * n / 4;
    let mut au_flags: Vec<bool> = vec![true; au_count];
    au_flags.extend(std::iter::repeat_n(false, n - au_count));
    au_flags.shuffle(&mut rng);

    let table = country_table();
    let foreign =
        WeightedIndex::new(table.foreign_weights.iter().copied()).expect("static weights");

    let mb_group = layout.sa1_group / layout.mb_per_sa1 as usize;
    let mut records = Vec::with_capacity(n);
    for slot in 0..n {
        let sa1 = SA1_BASE + (slot / layout.sa1_group) as u32;
        let pos = slot % layout.sa1_group;
        let mb = sa1 * 100 + (pos / mb_group) as u32 + 1;
        let bday = rng.random_range(BDAY_RANGE.0..=BDAY_RANGE.1);
        let byear = rng.random_range(BYEAR_RANGE.0..=BYEAR_RANGE.1);
        let eye = rng.random_range(EYE_RANGE.0..=EYE_RANGE.1);
        let cob = if au_flags[slot] {
            AUSTRALIA_CODE
        } else {
            table.foreign_codes[foreign.sample(&mut rng)]
        };
        records.push(PersonRecord {
            recid: String::new(),
            values: [
                Some(sa1),
                Some(mb),
                Some(bday),
                Some(byear),
                Some(sex_pool[slot]),
                Some(eye),
                Some(cob),
            ],
        });
    }

    records.shuffle(&mut rng);
    for (i, r) in records.iter_mut().enumerate() {
        r.recid = format!("A{:06}", i + 1);
    }

    let x = PersonFile { records: records[..n / 8].to_vec() };
    Ok(Generated { y: PersonFile { records }, x, layout })
}

/// Per-rule perturbation rates, as fractions of the X file size, plus the
/// injection seed. Each rule draws `round(rate * |X|)` records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSpec {
    pub seed: u64,
    /// SA1 moved to an adjacent code, meshblock prefix realigned.
    pub sa1_adjacent: f64,
    /// Meshblock replaced by another meshblock of the same SA1.
    pub mb_within_sa1: f64,
    pub bday_missing: f64,
    pub bday_altered: f64,
    pub byear_minus2: f64,
    pub byear_plus2: f64,
    pub byear_minus1: f64,
    pub byear_plus1: f64,
    pub sex_flip: f64,
    pub eye_missing: f64,
    pub eye_altered: f64,
    /// Dominant-country records whose country code is blanked.
    pub cob_au_missing: f64,
    /// Other records whose country code is blanked.
    pub cob_other_missing: f64,
    /// Other records recoded to the dominant country.
    pub cob_to_au: f64,
    /// Other records recoded within their two-digit region.
    pub cob_regional: f64,
}

impl ErrorSpec {
    /// The standard corruption profile: 1% adjacent-SA1 moves, 3% meshblock
    /// moves, 8% + 1% birthday blanking/altering, 0.1%/2.4% birth-year
    /// shifts of two/one years each way, 0.1% sex flips, 10% + 10% eye
    /// blanking/altering, and country blanking/recoding totalling 2.5%.
    pub fn defaults(seed: u64) -> ErrorSpec {
        ErrorSpec {
            seed,
            sa1_adjacent: 0.01,
            mb_within_sa1: 0.03,
            bday_missing: 0.08,
            bday_altered: 0.01,
            byear_minus2: 0.001,
            byear_plus2: 0.001,
            byear_minus1: 0.024,
            byear_plus1: 0.024,
            sex_flip: 0.001,
            eye_missing: 0.10,
            eye_altered: 0.10,
            cob_au_missing: 0.015,
            cob_other_missing: 0.005,
            cob_to_au: 0.0025,
            cob_regional: 0.0025,
        }
    }

    /// No perturbation at all.
    pub fn none(seed: u64) -> ErrorSpec {
        ErrorSpec {
            seed,
            sa1_adjacent: 0.0,
            mb_within_sa1: 0.0,
            bday_missing: 0.0,
            bday_altered: 0.0,
            byear_minus2: 0.0,
            byear_plus2: 0.0,
            byear_minus1: 0.0,
            byear_plus1: 0.0,
            sex_flip: 0.0,
            eye_missing: 0.0,
            eye_altered: 0.0,
            cob_au_missing: 0.0,
            cob_other_missing: 0.0,
            cob_to_au: 0.0,
            cob_regional: 0.0,
        }
    }

    fn rates(&self) -> [(&'static str, f64); 15] {
        [
            ("sa1_adjacent", self.sa1_adjacent),
            ("mb_within_sa1", self.mb_within_sa1),
            ("bday_missing", self.bday_missing),
            ("bday_altered", self.bday_altered),
            ("byear_minus2", self.byear_minus2),
            ("byear_plus2", self.byear_plus2),
            ("byear_minus1", self.byear_minus1),
            ("byear_plus1", self.byear_plus1),
            ("sex_flip", self.sex_flip),
            ("eye_missing", self.eye_missing),
            ("eye_altered", self.eye_altered),
            ("cob_au_missing", self.cob_au_missing),
            ("cob_other_missing", self.cob_other_missing),
            ("cob_to_au", self.cob_to_au),
            ("cob_regional", self.cob_regional),
        ]
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, value) in self.rates() {
            if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
                return Err(SynthError::BadRate { name, value });
            }
        }
        Ok(())
    }

    fn count(rate: f64, n: usize) -> usize {
        (rate * n as f64).round() as usize
    }
}

/// Pre-error values of perturbed fields, indexed like the X file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TruthStore {
    originals: Vec<[Option<u32>; 7]>,
}

impl TruthStore {
    pub fn empty(len: usize) -> TruthStore {
        TruthStore { originals: vec![[None; 7]; len] }
    }

    fn capture(&mut self, idx: usize, field: Field, old: Option<u32>) {
        let slot = &mut self.originals[idx][field.index()];
        if slot.is_none() {
            *slot = old;
        }
    }

    /// Pre-error value of a perturbed field; `None` when untouched.
    pub fn original(&self, idx: usize, field: Field) -> Option<u32> {
        self.originals[idx][field.index()]
    }

    /// The record's true field value: the pre-error value when perturbed,
    /// otherwise the observed one.
    pub fn true_value(&self, idx: usize, field: Field, observed: Option<u32>) -> Option<u32> {
        match self.original(idx, field) {
            Some(v) => Some(v),
            None => observed,
        }
    }

    /// Number of records with at least one perturbed field.
    pub fn perturbed_records(&self) -> usize {
        self.originals.iter().filter(|o| o.iter().any(Option::is_some)).count()
    }

    /// Indices of records perturbed on `field`.
    pub fn perturbed_on(&self, field: Field) -> Vec<usize> {
        self.originals
            .iter()
            .enumerate()
            .filter(|(_, o)| o[field.index()].is_some())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.iter().all(|o| o.iter().all(Option::is_none))
    }
}

fn shuffled_indices(n: usize, rng: &mut ChaCha20Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Uniform draw from `lo..=hi` excluding `not`.
fn draw_excluding(lo: u32, hi: u32, not: u32, rng: &mut ChaCha20Rng) -> u32 {
    debug_assert!(hi > lo);
    let v = rng.random_range(lo..hi);
    if v >= not { v + 1 } else { v }
}

/// Applies an error specification to a copy of `x`.
///
/// Rules run in a fixed order (SA1, meshblock, birthday, birth year, sex,
/// eye, country) and the rules that share a field draw disjoint record
/// subsets, so every configured count lands exactly. Each perturbed field's
/// pre-error value is captured once in the returned [`TruthStore`].
pub fn inject_errors(
    x: &PersonFile,
    spec: &ErrorSpec,
    layout: &SynthLayout,
) -> Result<(PersonFile, TruthStore), SynthError> {
    spec.validate()?;
    let n = x.len();
    let mut out = x.clone();
    let mut truth = TruthStore::empty(n);
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let table = country_table();

    let need = |field: &'static str, requested: usize, available: usize| {
        if requested > available {
            Err(SynthError::TooManyErrors { field, requested, available })
        } else {
            Ok(())
        }
    };

    // SA1: move to an adjacent code (reflecting at the range ends so the
    // value always changes) and realign the meshblock prefix.
    let sa1_n = ErrorSpec::count(spec.sa1_adjacent, n);
    need("SA1", sa1_n, n)?;
    let pool = shuffled_indices(n, &mut rng);
    for &idx in &pool[..sa1_n] {
        let r = &mut out.records[idx];
        let old_sa1 = r.values[Field::Sa1.index()].expect("generated SA1 present");
        let up = rng.random_bool(0.5);
        let new_sa1 = if up {
            if old_sa1 >= layout.sa1_max { old_sa1 - 1 } else { old_sa1 + 1 }
        } else if old_sa1 <= layout.sa1_min {
            old_sa1 + 1
        } else {
            old_sa1 - 1
        };
        truth.capture(idx, Field::Sa1, Some(old_sa1));
        r.values[Field::Sa1.index()] = Some(new_sa1);
        if let Some(old_mb) = r.values[Field::Mb.index()] {
            truth.capture(idx, Field::Mb, Some(old_mb));
            r.values[Field::Mb.index()] = Some(new_sa1 * 100 + old_mb % 100);
        }
    }

    // Meshblock: recode within the record's current SA1.
    let mb_n = ErrorSpec::count(spec.mb_within_sa1, n);
    need("MB", mb_n, n)?;
    let pool = shuffled_indices(n, &mut rng);
    if layout.mb_per_sa1 >= 2 {
        for &idx in &pool[..mb_n] {
            let r = &mut out.records[idx];
            let old_mb = r.values[Field::Mb.index()].expect("generated MB present");
            let sa1 = r.values[Field::Sa1.index()].expect("SA1 present");
            let k = draw_excluding(1, layout.mb_per_sa1, old_mb % 100, &mut rng);
            truth.capture(idx, Field::Mb, Some(old_mb));
            r.values[Field::Mb.index()] = Some(sa1 * 100 + k);
        }
    }

    // Birthday: blank one subset, alter a disjoint subset.
    let miss_n = ErrorSpec::count(spec.bday_missing, n);
    let alt_n = ErrorSpec::count(spec.bday_altered, n);
    need("BDAY", miss_n + alt_n, n)?;
    let pool = shuffled_indices(n, &mut rng);
    for &idx in &pool[..miss_n] {
        let r = &mut out.records[idx];
        truth.capture(idx, Field::Bday, r.values[Field::Bday.index()]);
        r.values[Field::Bday.index()] = None;
    }
    for &idx in &pool[miss_n..miss_n + alt_n] {
        let r = &mut out.records[idx];
        let old = r.values[Field::Bday.index()].expect("disjoint from blanked subset");
        let new = draw_excluding(BDAY_RANGE.0, BDAY_RANGE.1, old, &mut rng);
        truth.capture(idx, Field::Bday, Some(old));
        r.values[Field::Bday.index()] = Some(new);
    }

    // Birth year: +/-2 then +/-1 shifts, mutually disjoint.
    let m2 = ErrorSpec::count(spec.byear_minus2, n);
    let p2 = ErrorSpec::count(spec.byear_plus2, n);
    let m1 = ErrorSpec::count(spec.byear_minus1, n);
    let p1 = ErrorSpec::count(spec.byear_plus1, n);
    need("BYEAR", m2 + p2 + m1 + p1, n)?;
    let pool = shuffled_indices(n, &mut rng);
    let mut start = 0;
    for (count, shift) in [(m2, -2i32), (p2, 2), (m1, -1), (p1, 1)] {
        for &idx in &pool[start..start + count] {
            let r = &mut out.records[idx];
            let old = r.values[Field::Byear.index()].expect("generated BYEAR present");
            truth.capture(idx, Field::Byear, Some(old));
            r.values[Field::Byear.index()] = Some((old as i32 + shift) as u32);
        }
        start += count;
    }

    // Sex: flip.
    let sex_n = ErrorSpec::count(spec.sex_flip, n);
    need("SEX", sex_n, n)?;
    let pool = shuffled_indices(n, &mut rng);
    for &idx in &pool[..sex_n] {
        let r = &mut out.records[idx];
        let old = r.values[Field::Sex.index()].expect("generated SEX present");
        truth.capture(idx, Field::Sex, Some(old));
        r.values[Field::Sex.index()] = Some(3 - old);
    }

    // Eye colour: blank one subset, recode a disjoint subset.
    let miss_n = ErrorSpec::count(spec.eye_missing, n);
    let alt_n = ErrorSpec::count(spec.eye_altered, n);
    need("EYE", miss_n + alt_n, n)?;
    let pool = shuffled_indices(n, &mut rng);
    for &idx in &pool[..miss_n] {
        let r = &mut out.records[idx];
        truth.capture(idx, Field::Eye, r.values[Field::Eye.index()]);
        r.values[Field::Eye.index()] = None;
    }
    for &idx in &pool[miss_n..miss_n + alt_n] {
        let r = &mut out.records[idx];
        let old = r.values[Field::Eye.index()].expect("disjoint from blanked subset");
        let new = draw_excluding(EYE_RANGE.0, EYE_RANGE.1, old, &mut rng);
        truth.capture(idx, Field::Eye, Some(old));
        r.values[Field::Eye.index()] = Some(new);
    }

    // Country: blank dominant-coded records; blank, recode-to-dominant and
    // recode-within-region disjoint subsets of the rest.
    let au_pool: Vec<usize> = {
        let mut v: Vec<usize> = (0..n)
            .filter(|&i| out.records[i].values[Field::Cob.index()] == Some(AUSTRALIA_CODE))
            .collect();
        v.shuffle(&mut rng);
        v
    };
    let other_pool: Vec<usize> = {
        let mut v: Vec<usize> = (0..n)
            .filter(|&i| {
                matches!(out.records[i].values[Field::Cob.index()], Some(c) if c != AUSTRALIA_CODE)
            })
            .collect();
        v.shuffle(&mut rng);
        v
    };
    let au_miss = ErrorSpec::count(spec.cob_au_missing, n);
    need("COB", au_miss, au_pool.len())?;
    let oth_miss = ErrorSpec::count(spec.cob_other_missing, n);
    let to_au = ErrorSpec::count(spec.cob_to_au, n);
    let regional = ErrorSpec::count(spec.cob_regional, n);
    need("COB", oth_miss + to_au + regional, other_pool.len())?;

    for &idx in &au_pool[..au_miss] {
        let r = &mut out.records[idx];
        truth.capture(idx, Field::Cob, r.values[Field::Cob.index()]);
        r.values[Field::Cob.index()] = None;
    }
    for &idx in &other_pool[..oth_miss] {
        let r = &mut out.records[idx];
        truth.capture(idx, Field::Cob, r.values[Field::Cob.index()]);
        r.values[Field::Cob.index()] = None;
    }
    for &idx in &other_pool[oth_miss..oth_miss + to_au] {
        let r = &mut out.records[idx];
        truth.capture(idx, Field::Cob, r.values[Field::Cob.index()]);
        r.values[Field::Cob.index()] = Some(AUSTRALIA_CODE);
    }
    for &idx in &other_pool[oth_miss + to_au..oth_miss + to_au + regional] {
        let r = &mut out.records[idx];
        let old = r.values[Field::Cob.index()].expect("pool filtered to present codes");
        let alts = table.region_alternatives(old);
        if alts.is_empty() {
            continue;
        }
        let new = alts[rng.random_range(0..alts.len())];
        truth.capture(idx, Field::Cob, Some(old));
        r.values[Field::Cob.index()] = Some(new);
    }

    Ok((out, truth))
}

const PERSON_HEADER: [&str; 8] = ["RECID", "SA1", "MB", "BDAY", "BYEAR", "SEX", "EYE", "COB"];
const TRUTH_HEADER: [&str; 3] = ["recid", "field", "original_value"];

/// Writes a person file as CSV; missing values become empty cells.
pub fn write_person_csv(file: &PersonFile, path: &Path) -> Result<(), SynthError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", PERSON_HEADER.join(","))?;
    for r in &file.records {
        write!(w, "{}", r.recid)?;
        for v in r.values {
            match v {
                Some(v) => write!(w, ",{v}")?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_cell(
    raw: &str,
    path: &str,
    line: usize,
    what: &'static str,
) -> Result<Option<u32>, SynthError> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse::<u32>().map(Some).map_err(|_| SynthError::BadValue {
        path: path.to_string(),
        line,
        value: raw.to_string(),
        what,
    })
}

/// Reads a person CSV written by [`write_person_csv`] (or shaped like one).
pub fn read_person_csv(path: &Path) -> Result<PersonFile, SynthError> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != PERSON_HEADER {
        return Err(SynthError::BadHeader {
            path: display,
            expected: PERSON_HEADER.iter().map(|s| s.to_string()).collect(),
            found: header,
        });
    }
    let mut records = Vec::new();
    for (k, row) in reader.records().enumerate() {
        let row = row?;
        let line = k + 2;
        if row.len() != 8 {
            return Err(SynthError::BadValue {
                path: display,
                line,
                value: format!("{} columns", row.len()),
                what: "row width",
            });
        }
        let mut values = [None; 7];
        for (f, slot) in values.iter_mut().enumerate() {
            *slot = parse_cell(&row[f + 1], &display, line, ALL_FIELDS[f].name())?;
        }
        records.push(PersonRecord { recid: row[0].to_string(), values });
    }
    Ok(PersonFile { records })
}

/// Writes the truth sidecar: one row per perturbed field, in X-file order.
pub fn write_truth_csv(
    x: &PersonFile,
    truth: &TruthStore,
    path: &Path,
) -> Result<(), SynthError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", TRUTH_HEADER.join(","))?;
    for (i, r) in x.records.iter().enumerate() {
        for field in ALL_FIELDS {
            if let Some(old) = truth.original(i, field) {
                writeln!(w, "{},{},{}", r.recid, field.name(), old)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a truth sidecar back, aligned to `x`.
pub fn read_truth_csv(path: &Path, x: &PersonFile) -> Result<TruthStore, SynthError> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != TRUTH_HEADER {
        return Err(SynthError::BadHeader {
            path: display,
            expected: TRUTH_HEADER.iter().map(|s| s.to_string()).collect(),
            found: header,
        });
    }
    let by_recid = x.index_by_recid();
    let mut truth = TruthStore::empty(x.len());
    for (k, row) in reader.records().enumerate() {
        let row = row?;
        let line = k + 2;
        let idx = *by_recid
            .get(&row[0])
            .ok_or_else(|| SynthError::UnknownRecid { recid: row[0].to_string() })?;
        let field = Field::from_name(&row[1]).ok_or_else(|| SynthError::BadValue {
            path: display.clone(),
            line,
            value: row[1].to_string(),
            what: "field name",
        })?;
        let value = parse_cell(&row[2], &display, line, "original_value")?;
        truth.capture(idx, field, value);
    }
    Ok(truth)
}
