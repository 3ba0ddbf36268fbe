//! Synthetic demo corpus: twelve tables and a clustered 200-query workload.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::formats::{RunConfig, WorkloadLine};
use super::serialize::serialize_table;
use crate::kvstore::EvictionPolicy;
use crate::schema::{ColumnDef, ForeignKey, TableId, TableSchema};

pub const DEMO_SEED: u64 = 7;

/// Hot cluster referenced by the first half of the interleaved queries: the
/// four-table foreign-key chain.
pub const CLUSTER_A: [TableId; 4] = [0, 1, 2, 3];
/// Second hot cluster: three unrelated tables.
pub const CLUSTER_B: [TableId; 3] = [6, 7, 8];
/// Tables touched only by the occasional cold query.
pub const COLD_TABLES: [TableId; 5] = [4, 5, 9, 10, 11];

fn col(name: &str, desc: &str) -> ColumnDef {
    ColumnDef { name: name.into(), description: desc.into(), is_primary_key: false }
}

fn pk(name: &str, desc: &str) -> ColumnDef {
    ColumnDef { is_primary_key: true, ..col(name, desc) }
}

fn table(id: TableId, name: &str, columns: Vec<ColumnDef>, fks: &[(&str, TableId, &str)]) -> TableSchema {
    TableSchema {
        table_id: id,
        name: name.into(),
        columns,
        foreign_keys: fks
            .iter()
            .map(|&(c, t, r)| ForeignKey { column: c.into(), ref_table: t, ref_column: r.into() })
            .collect(),
    }
}

/// Chain districts → schools → classes → enrollments, the pair
/// vendors → purchase_orders, and six standalone tables.
pub fn demo_schemas() -> Vec<TableSchema> {
    vec![
        table(
            0,
            "districts",
            vec![pk("district_id", "district identifier"), col("name", "district name"), col("county", "county name")],
            &[],
        ),
        table(
            1,
            "schools",
            vec![
                pk("school_id", "school identifier"),
                col("district_id", "owning district"),
                col("name", "school name"),
                col("opened_year", "year the school opened"),
            ],
            &[("district_id", 0, "district_id")],
        ),
        table(
            2,
            "classes",
            vec![
                pk("class_id", "class identifier"),
                col("school_id", "school offering the class"),
                col("subject", "subject taught"),
                col("grade_level", "grade from 1 to 12"),
            ],
            &[("school_id", 1, "school_id")],
        ),
        table(
            3,
            "enrollments",
            vec![
                pk("enrollment_id", "enrollment identifier"),
                col("class_id", "enrolled class"),
                col("student_name", "full name of the student"),
                col("final_score", "score between 0 and 100"),
            ],
            &[("class_id", 2, "class_id")],
        ),
        table(
            4,
            "vendors",
            vec![pk("vendor_id", "vendor identifier"), col("vendor_name", "registered name"), col("country", "country code")],
            &[],
        ),
        table(
            5,
            "purchase_orders",
            vec![
                pk("order_id", "order identifier"),
                col("vendor_id", "supplying vendor"),
                col("amount", "order total in dollars"),
                col("order_date", "date the order was placed"),
            ],
            &[("vendor_id", 4, "vendor_id")],
        ),
        table(
            6,
            "weather_stations",
            vec![
                pk("station_id", "station identifier"),
                col("latitude", "degrees north"),
                col("longitude", "degrees east"),
                col("elevation_m", "elevation in metres"),
            ],
            &[],
        ),
        table(
            7,
            "holidays",
            vec![pk("holiday_date", "calendar date"), col("holiday_name", "public name"), col("is_federal", "1 if federal")],
            &[],
        ),
        table(
            8,
            "exchange_rates",
            vec![
                pk("rate_id", "rate identifier"),
                col("currency", "ISO currency code"),
                col("rate_to_usd", "units per US dollar"),
                col("quoted_on", "quote date"),
            ],
            &[],
        ),
        table(
            9,
            "zip_codes",
            vec![pk("zip", "five digit code"), col("city", "city name"), col("state", "two letter state")],
            &[],
        ),
        table(
            10,
            "audit_log",
            vec![
                pk("event_id", "event identifier"),
                col("actor", "user who acted"),
                col("action", "verb such as insert or delete"),
                col("logged_at", "event timestamp"),
            ],
            &[],
        ),
        table(
            11,
            "app_settings",
            vec![pk("setting_key", "setting name"), col("setting_value", "current value"), col("updated_at", "last change")],
            &[],
        ),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkloadSpec {
    pub seed: u64,
    /// Queries per hot cluster; the two clusters alternate.
    pub per_cluster: usize,
    /// Cold queries, spread evenly through the stream.
    pub cold: usize,
    /// Shuffle the order in which a query's tables appear in its prompt.
    pub shuffle_tables: bool,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self { seed: DEMO_SEED, per_cluster: 90, cold: 20, shuffle_tables: true }
    }
}

const QUESTIONS: [&str; 6] = [
    "How many rows are there?",
    "List the ten most recent records.",
    "What is the average value per group?",
    "Which entries appear more than once?",
    "Show the totals sorted from largest to smallest.",
    "Find records with missing values.",
];

fn pick(rng: &mut ChaCha8Rng, pool: &[TableId], sizes: std::ops::RangeInclusive<usize>) -> Vec<TableId> {
    let k = rng.gen_range(sizes);
    let mut chosen: Vec<TableId> = pool.choose_multiple(rng, k).copied().collect();
    chosen.sort_unstable();
    chosen
}

/// Clustered workload over `schemas`: cluster A and cluster B queries
/// alternate, with cold queries interleaved at even intervals.
pub fn generate_workload(schemas: &[TableSchema], spec: &WorkloadSpec) -> Vec<WorkloadLine> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let hot = 2 * spec.per_cluster;
    let total = hot + spec.cold;
    let cold_every = total.checked_div(spec.cold).unwrap_or(usize::MAX);
    let (mut a, mut b, mut c) = (0, 0, 0);
    let mut out = Vec::with_capacity(total);
    for i in 0..total {
        let cold_slot = c < spec.cold && (i + 1) % cold_every == 0;
        let mut tables = if cold_slot || (a + b == hot) {
            c += 1;
            pick(&mut rng, &COLD_TABLES, 1..=2)
        } else if (a <= b && a < spec.per_cluster) || b == spec.per_cluster {
            a += 1;
            pick(&mut rng, &CLUSTER_A, 2..=4)
        } else {
            b += 1;
            pick(&mut rng, &CLUSTER_B, 1..=3)
        };
        if spec.shuffle_tables {
            tables.shuffle(&mut rng);
        }
        let mut text = String::new();
        for &t in &tables {
            text.push_str(&serialize_table(&schemas[t], schemas));
        }
        text.push_str("Question: ");
        text.push_str(QUESTIONS[rng.gen_range(0..QUESTIONS.len())]);
        out.push(WorkloadLine { format_version: None, query_id: format!("q{i:03}"), text });
    }
    out
}

pub fn demo_workload() -> Vec<WorkloadLine> {
    generate_workload(&demo_schemas(), &WorkloadSpec::default())
}

/// Settings the shipped demo run uses.
pub fn demo_config() -> RunConfig {
    RunConfig {
        capacity: 4,
        policy: EvictionPolicy::Lru,
        b_c: 10,
        b_m: 10,
        seed: Some(DEMO_SEED),
        ..RunConfig::default()
    }
}
