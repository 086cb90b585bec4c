use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::{Dataset, Group, Instance, ProtectedRule, Schema};
use crate::{Error, Result};

enum Role {
    Label,
    Month,
    Score,
    Skip,
    /// Feature slot; categorical columns carry their category table.
    Feature(usize, Option<HashMap<String, usize>>),
}

fn delimiter_byte(schema: &Schema) -> Result<u8> {
    if schema.delimiter.is_ascii() {
        Ok(schema.delimiter as u8)
    } else {
        Err(Error::Config(format!(
            "delimiter {:?} is not a single ASCII character",
            schema.delimiter
        )))
    }
}

/// Reads a delimiter-separated file with a header row.
///
/// Ids are assigned in file order starting at 0. Columns not claimed by the
/// schema (label, month, score, excluded) become features; categorical ones
/// are integer-encoded by first appearance.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter_byte(schema)?)
        .has_headers(true)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_owned()).collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }

    let find = |role: &'static str, name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                role,
                column: name.to_owned(),
            })
    };
    let label_col = find("label", &schema.label)?;
    let month_col = find("month", &schema.month)?;
    let group_col = find("group", &schema.group)?;
    let score_col = match &schema.score {
        Some(name) => Some(find("score", name)?),
        None => None,
    };
    for name in &schema.categorical {
        find("categorical", name)?;
    }
    if schema.exclude.contains(&schema.group) {
        return Err(Error::Config(format!(
            "group column '{}' cannot be excluded from the features",
            schema.group
        )));
    }

    let mut roles = Vec::with_capacity(header.len());
    let mut feature_names = Vec::new();
    for (c, name) in header.iter().enumerate() {
        let role = if c == label_col {
            Role::Label
        } else if c == month_col {
            Role::Month
        } else if Some(c) == score_col {
            Role::Score
        } else if schema.exclude.contains(name) {
            Role::Skip
        } else {
            feature_names.push(name.clone());
            let table = schema.categorical.contains(name).then(HashMap::new);
            Role::Feature(feature_names.len() - 1, table)
        };
        roles.push(role);
    }
    let mut category_lists: BTreeMap<String, Vec<String>> = schema
        .categorical
        .iter()
        .map(|n| (n.clone(), Vec::new()))
        .collect();

    let mut instances = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let parse_err = |c: usize, v: &str| Error::Parse {
            row,
            column: header[c].clone(),
            value: v.to_owned(),
        };
        let mut features = vec![0.0; feature_names.len()];
        let mut label = None;
        let mut month = None;
        let mut score = None;
        for (c, role) in roles.iter_mut().enumerate() {
            let raw = record.get(c).map(str::trim).unwrap_or("");
            match role {
                Role::Label => {
                    label = Some(match raw.parse::<f64>() {
                        Ok(v) if v == 0.0 => 0u8,
                        Ok(v) if v == 1.0 => 1u8,
                        _ => return Err(parse_err(c, raw)),
                    })
                }
                Role::Month => {
                    month = Some(match raw.parse::<u32>() {
                        Ok(m) if m >= 1 => m,
                        _ => match raw.parse::<f64>() {
                            Ok(v) if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 => {
                                v as u32
                            }
                            _ => return Err(parse_err(c, raw)),
                        },
                    })
                }
                Role::Score => {
                    score = Some(match raw.parse::<f64>() {
                        Ok(v) if (0.0..=1.0).contains(&v) => v,
                        _ => return Err(parse_err(c, raw)),
                    })
                }
                Role::Skip => {}
                Role::Feature(slot, Some(table)) => {
                    let next = table.len();
                    let code = *table.entry(raw.to_owned()).or_insert_with(|| {
                        category_lists
                            .get_mut(&header[c])
                            .expect("categorical list registered")
                            .push(raw.to_owned());
                        next
                    });
                    features[*slot] = code as f64;
                }
                Role::Feature(slot, None) => {
                    features[*slot] = match raw.parse::<f64>() {
                        Ok(v) if v.is_finite() => v,
                        _ => return Err(parse_err(c, raw)),
                    };
                }
            }
        }
        let raw_group = record.get(group_col).map(str::trim).unwrap_or("");
        let group = match &schema.protected {
            ProtectedRule::AtLeast(bound) => match raw_group.parse::<f64>() {
                Ok(v) if v >= *bound => Group::Protected,
                Ok(_) => Group::Reference,
                Err(_) => return Err(parse_err(group_col, raw_group)),
            },
            ProtectedRule::Equals(value) => {
                if raw_group == value {
                    Group::Protected
                } else {
                    Group::Reference
                }
            }
        };
        instances.push(Instance {
            id: r as u64,
            features,
            label: label.expect("label column present"),
            group,
            month: month.expect("month column present"),
            score,
        });
    }
    if instances.is_empty() {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    Ok(Dataset {
        schema: schema.clone(),
        feature_names,
        categories: category_lists,
        instances,
    })
}

/// Writes a dataset back in the layout `load_dataset` reads with the same schema.
///
/// Categorical features are written as their original strings, so reloading
/// reproduces the same integer codes. Excluded columns are not written; the
/// loader tolerates their absence.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let schema = &dataset.schema;
    let mut writer = csv::WriterBuilder::new()
        .delimiter(delimiter_byte(schema)?)
        .from_path(path)?;
    let with_score = schema.score.is_some() && dataset.has_scores();
    let mut header: Vec<&str> = dataset.feature_names.iter().map(String::as_str).collect();
    header.push(&schema.label);
    header.push(&schema.month);
    if with_score {
        header.push(schema.score.as_deref().unwrap_or("score"));
    }
    writer.write_record(&header)?;

    let tables: Vec<Option<&Vec<String>>> = dataset
        .feature_names
        .iter()
        .map(|n| dataset.categories.get(n))
        .collect();
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for inst in &dataset.instances {
        row.clear();
        for (v, table) in inst.features.iter().zip(&tables) {
            match table {
                Some(cats) => row.push(cats[*v as usize].clone()),
                None => row.push(format!("{v}")),
            }
        }
        row.push(inst.label.to_string());
        row.push(inst.month.to_string());
        if with_score {
            row.push(format!("{}", inst.score.expect("checked by has_scores")));
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}
