use std::fmt::Write;

use crate::schema::TableSchema;

/// Canonical text form of a table: a header line, then one line per column
/// with key annotations and description.
///
/// `corpus` resolves foreign-key target names; unresolved targets fall back
/// to `#<id>`.
pub fn serialize_table(schema: &TableSchema, corpus: &[TableSchema]) -> String {
    let mut out = format!("# Table: {}\n", schema.name);
    for col in &schema.columns {
        out.push_str("- ");
        out.push_str(&col.name);
        if col.is_primary_key {
            out.push_str(" [PK]");
        }
        for fk in schema.foreign_keys.iter().filter(|fk| fk.column == col.name) {
            let target = corpus
                .iter()
                .find(|t| t.table_id == fk.ref_table)
                .map_or_else(|| format!("#{}", fk.ref_table), |t| t.name.clone());
            let _ = write!(out, " [FK -> {}.{}]", target, fk.ref_column);
        }
        if !col.description.is_empty() {
            out.push_str(": ");
            // keep one line per column
            out.push_str(&col.description.replace('\n', " "));
        }
        out.push('\n');
    }
    out
}
