//! Bundled template generator: seed tables for the corpus fabricator.
//!
//! Produces the six industrial categories (financial statements, sales,
//! inventory, human resources, project management, stock ticks) for a
//! configurable number of workbooks across simulated companies, fiscal years
//! and quarters. Attribute values are embedded redundantly — company and
//! sub-category in the workbook name, fiscal year and quarter only in
//! metadata columns — so listwise queries have a learnable lexical footprint.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::extract::CellGrid;

/// Attribute keys used for query construction.
pub const ATTR_COMPANY: &str = "company";
pub const ATTR_FISCAL_YEAR: &str = "fiscal_year";
pub const ATTR_QUARTER: &str = "quarter";
pub const ATTR_SUB_CATEGORY: &str = "sub_category";
pub const ATTR_CATEGORY: &str = "category";

/// A seed table plus the attribute values its sheets inherit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateTable {
    pub grid: CellGrid,
    pub attributes: BTreeMap<String, String>,
}

impl TemplateTable {
    /// Template without attributes (no queries will target it).
    pub fn bare(grid: CellGrid) -> Self {
        TemplateTable {
            grid,
            attributes: BTreeMap::new(),
        }
    }

    pub fn attribute(&self, key: &str) -> Option<&str> {
        self.attributes.get(key).map(String::as_str)
    }
}

const COMPANIES: [&str; 18] = [
    "acme", "northbay", "bluepine", "ironpeak", "sunfield", "rivertec", "goldleaf", "stonegate",
    "brightcove", "maplecrest", "silverline", "oakhaven", "redcliff", "seabright", "hollowell",
    "greenford", "starweld", "crestline",
];

const YEARS: [&str; 4] = ["FY2021", "FY2022", "FY2023", "FY2024"];
const QUARTERS: [&str; 4] = ["Q1", "Q2", "Q3", "Q4"];

const ACCOUNTS: [&str; 10] = [
    "Revenue", "COGS", "Payroll", "Marketing", "Research", "Logistics", "Utilities", "Rent",
    "Insurance", "Taxes",
];
const DEPARTMENTS: [&str; 6] = [
    "Operations", "Finance", "Engineering", "Support", "Procurement", "Legal",
];
const PRODUCTS: [&str; 8] = [
    "Widget", "Gasket", "Bracket", "Spindle", "Coupler", "Flange", "Bearing", "Sprocket",
];
const REGIONS: [&str; 6] = ["North", "South", "East", "West", "Central", "Export"];
const WAREHOUSES: [&str; 5] = ["Dock A", "Dock B", "Yard", "Cold Store", "Annex"];
const ROLES: [&str; 7] = [
    "Analyst", "Technician", "Manager", "Engineer", "Clerk", "Supervisor", "Operator",
];
const STATUSES: [&str; 4] = ["Active", "On Leave", "Contract", "Probation"];
const TASKS: [&str; 8] = [
    "Site Survey", "Foundation", "Framing", "Wiring", "Inspection", "Handover", "Design Review",
    "Commissioning",
];
const OWNERS: [&str; 6] = ["Ops Team", "Vendor", "Client", "PMO", "Field Crew", "QA"];
const SYMBOLS: [&str; 8] = ["AXQ", "NBY", "BLP", "IRP", "SNF", "RVT", "GLF", "STG"];
const NOTES: [&str; 6] = [
    "approved",
    "pending review",
    "reclassified",
    "Quarterly adjustment pending review by the regional controller; carried forward from the prior period and subject to reclassification after the audit committee completes its sign-off procedure.",
    "follow up with vendor",
    "Manual journal entry recorded outside the standard close calendar; the supporting documentation is attached to the reconciliation binder and must be countersigned by both the controller and the treasurer.",
];

enum ColumnSpec {
    /// Values drawn from a fixed pool.
    Pool(&'static [&'static str]),
    /// `{:.2}`-formatted uniform draws from a range.
    Num(f64, f64),
    /// Serial identifiers like `SKU-0042` (high-cardinality by design).
    Serial(&'static str),
}

struct CategorySpec {
    slug: &'static str,
    sub_categories: &'static [&'static str],
    columns: &'static [(&'static str, ColumnSpec)],
}

static CATEGORIES: [CategorySpec; 6] = [
    CategorySpec {
        slug: "financial",
        sub_categories: &["income", "balance", "cashflow"],
        columns: &[
            ("Account", ColumnSpec::Pool(&ACCOUNTS)),
            ("Department", ColumnSpec::Pool(&DEPARTMENTS)),
            ("Amount", ColumnSpec::Num(500.0, 250_000.0)),
            ("Budget", ColumnSpec::Num(500.0, 250_000.0)),
            ("Variance", ColumnSpec::Num(0.0, 50_000.0)),
            ("Notes", ColumnSpec::Pool(&NOTES)),
        ],
    },
    CategorySpec {
        slug: "sales",
        sub_categories: &["orders", "returns", "pipeline"],
        columns: &[
            ("Product", ColumnSpec::Pool(&PRODUCTS)),
            ("Region", ColumnSpec::Pool(&REGIONS)),
            ("Units", ColumnSpec::Num(1.0, 900.0)),
            ("Unit Price", ColumnSpec::Num(2.0, 400.0)),
            ("Total", ColumnSpec::Num(50.0, 90_000.0)),
        ],
    },
    CategorySpec {
        slug: "inventory",
        sub_categories: &["inbound", "outbound", "ledger", "stocktake"],
        columns: &[
            ("SKU", ColumnSpec::Serial("SKU")),
            ("Warehouse", ColumnSpec::Pool(&WAREHOUSES)),
            ("Quantity", ColumnSpec::Num(0.0, 5_000.0)),
            ("Reorder Level", ColumnSpec::Num(10.0, 400.0)),
            ("Unit Cost", ColumnSpec::Num(1.0, 900.0)),
        ],
    },
    CategorySpec {
        slug: "hr",
        sub_categories: &["roster", "payroll", "attendance", "training"],
        columns: &[
            ("Employee", ColumnSpec::Serial("EMP")),
            ("Role", ColumnSpec::Pool(&ROLES)),
            ("Salary", ColumnSpec::Num(30_000.0, 150_000.0)),
            ("Hours", ColumnSpec::Num(80.0, 200.0)),
            ("Status", ColumnSpec::Pool(&STATUSES)),
        ],
    },
    CategorySpec {
        slug: "project",
        sub_categories: &["budget", "progress", "sitelog"],
        columns: &[
            ("Task", ColumnSpec::Pool(&TASKS)),
            ("Owner", ColumnSpec::Pool(&OWNERS)),
            ("Budget", ColumnSpec::Num(1_000.0, 500_000.0)),
            ("Spent", ColumnSpec::Num(0.0, 400_000.0)),
            ("Completion", ColumnSpec::Num(0.0, 100.0)),
        ],
    },
    CategorySpec {
        slug: "ticks",
        sub_categories: &["intraday", "daily"],
        columns: &[
            ("Symbol", ColumnSpec::Pool(&SYMBOLS)),
            ("Open", ColumnSpec::Num(5.0, 800.0)),
            ("High", ColumnSpec::Num(5.0, 900.0)),
            ("Low", ColumnSpec::Num(1.0, 700.0)),
            ("Close", ColumnSpec::Num(5.0, 800.0)),
            ("Volume", ColumnSpec::Num(1_000.0, 9_000_000.0)),
        ],
    },
];

/// Category mix, financial-heavy like a typical enterprise dump.
const CATEGORY_CYCLE: [usize; 18] = [0, 0, 0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 5, 5];

/// Generates `count` seed tables deterministically from `seed`.
pub fn generate_templates(count: usize, seed: u64) -> Vec<TemplateTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let cat = &CATEGORIES[CATEGORY_CYCLE[i % CATEGORY_CYCLE.len()]];
        let company = COMPANIES[rng.random_range(0..COMPANIES.len())];
        let year = YEARS[rng.random_range(0..YEARS.len())];
        let quarter = QUARTERS[rng.random_range(0..QUARTERS.len())];
        let sub = cat.sub_categories[rng.random_range(0..cat.sub_categories.len())];
        // company, sub-category, and fiscal year ride in the workbook name
        // (tab names are never noised); the quarter lives only in metadata
        // columns, so the example channel carries real retrieval signal
        let workbook = format!(
            "{company}_{sub}_{}_{}_{i:03}",
            cat.slug,
            year.to_lowercase()
        );

        let rows = rng.random_range(12..=28usize);
        let mut header: Vec<Option<String>> = Vec::new();
        for h in ["Company", "Fiscal Year", "Quarter", "Period", "Report Tag"] {
            header.push(Some(h.to_string()));
        }
        for (h, _) in cat.columns {
            header.push(Some((*h).to_string()));
        }
        let mut cells = Vec::with_capacity(rows + 1);
        cells.push(header);
        let serial_base = rng.random_range(100..9000usize);
        for r in 0..rows {
            let mut row: Vec<Option<String>> = Vec::new();
            row.push(Some(company.to_string()));
            row.push(Some(year.to_string()));
            row.push(Some(quarter.to_string()));
            row.push(Some(format!("{year}-{quarter}")));
            row.push(Some(format!("{company}-{}-{}", year.to_lowercase(), quarter.to_lowercase())));
            for (_, spec) in cat.columns {
                let cell = match spec {
                    ColumnSpec::Pool(pool) => pool[rng.random_range(0..pool.len())].to_string(),
                    ColumnSpec::Num(lo, hi) => format!("{:.2}", rng.random_range(*lo..*hi)),
                    ColumnSpec::Serial(prefix) => format!("{prefix}-{:04}", serial_base + r),
                };
                row.push(Some(cell));
            }
            cells.push(row);
        }

        let grid = CellGrid::new(workbook, cells).expect("generated grid is rectangular");
        let mut attributes = BTreeMap::new();
        attributes.insert(ATTR_COMPANY.to_string(), company.to_string());
        attributes.insert(ATTR_FISCAL_YEAR.to_string(), year.to_string());
        attributes.insert(ATTR_QUARTER.to_string(), quarter.to_string());
        attributes.insert(ATTR_SUB_CATEGORY.to_string(), sub.to_string());
        attributes.insert(ATTR_CATEGORY.to_string(), cat.slug.to_string());
        out.push(TemplateTable { grid, attributes });
    }
    out
}

/// Infers attributes from well-known metadata columns, for externally
/// supplied templates (CSV ingestion). Missing columns simply yield no
/// attribute, which removes the table from the matching query families.
pub fn infer_attributes(grid: &CellGrid) -> BTreeMap<String, String> {
    let mut attrs = BTreeMap::new();
    for j in 0..grid.cols() {
        let Some(header) = grid.header(j) else { continue };
        let key = match header.to_lowercase().as_str() {
            "company" => ATTR_COMPANY,
            "fiscal year" | "fiscal_year" => ATTR_FISCAL_YEAR,
            "quarter" => ATTR_QUARTER,
            "sub category" | "sub_category" => ATTR_SUB_CATEGORY,
            _ => continue,
        };
        if let Some(value) = (1..grid.rows()).find_map(|r| grid.cell(r, j)) {
            attrs.insert(key.to_string(), value.to_string());
        }
    }
    attrs
}
