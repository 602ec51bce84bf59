//! Delimited-text ingestion with optional per-attribute error bars, plus the
//! dataset save/load pair (delimited table + flat key-value sidecar).

use super::{Dataset, DatasetMeta};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct DelimitedSchema {
    pub delimiter: char,
    pub label_column: String,
    pub feature_columns: Vec<String>,
    /// feature column -> error-bar column. Error bars are standard
    /// deviations and are squared into variances on load; features without
    /// an entry get variance zero.
    pub errorbar_columns: Vec<(String, String)>,
}

impl DelimitedSchema {
    pub fn new(label: impl Into<String>, features: Vec<String>) -> Self {
        DelimitedSchema {
            delimiter: ',',
            label_column: label.into(),
            feature_columns: features,
            errorbar_columns: Vec::new(),
        }
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Load a header-carrying delimited text file. Labels map to internal
/// indices by first appearance; the original text is kept in the metadata.
pub fn load_delimited(path: &Path, schema: &DelimitedSchema) -> Result<Dataset> {
    let content =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = content.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let cols: Vec<&str> = header.split(schema.delimiter).map(str::trim).collect();
    let find = |name: &str, line: usize| -> Result<usize> {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| parse_err(path, line, format!("unknown column '{}'", name)))
    };
    let label_idx = find(&schema.label_column, 1)?;
    let mut feat_idx = Vec::new();
    for f in &schema.feature_columns {
        feat_idx.push(find(f, 1)?);
    }
    let mut err_idx = vec![None; feat_idx.len()];
    for (feat, err) in &schema.errorbar_columns {
        let fpos = schema
            .feature_columns
            .iter()
            .position(|c| c == feat)
            .ok_or_else(|| parse_err(path, 1, format!("error bar for unknown feature '{}'", feat)))?;
        err_idx[fpos] = Some(find(err, 1)?);
    }
    let has_errorbars = !schema.errorbar_columns.is_empty();

    let d = feat_idx.len();
    let mut rows: Vec<f64> = Vec::new();
    let mut vrows: Vec<f64> = Vec::new();
    let mut labels_raw: Vec<String> = Vec::new();
    let mut label_map: Vec<String> = Vec::new();
    let mut n = 0usize;
    for (lineno0, line) in lines {
        let lineno = lineno0 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(schema.delimiter).map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {} fields, found {}", cols.len(), fields.len()),
            ));
        }
        for (k, &fi) in feat_idx.iter().enumerate() {
            let v: f64 = fields[fi].parse().map_err(|_| {
                parse_err(
                    path,
                    lineno,
                    format!("non-numeric feature '{}' in column '{}'", fields[fi], cols[fi]),
                )
            })?;
            rows.push(v);
            if has_errorbars {
                let var = match err_idx[k] {
                    Some(ei) => {
                        let sd: f64 = fields[ei].parse().map_err(|_| {
                            parse_err(
                                path,
                                lineno,
                                format!("non-numeric error bar '{}'", fields[ei]),
                            )
                        })?;
                        sd * sd
                    }
                    None => 0.0,
                };
                vrows.push(var);
            }
        }
        let label = fields[label_idx].to_string();
        if !label_map.contains(&label) {
            label_map.push(label.clone());
        }
        labels_raw.push(label);
        n += 1;
    }
    if n == 0 {
        return Err(parse_err(path, 2, "no data rows"));
    }
    let y: Vec<usize> = labels_raw
        .iter()
        .map(|l| label_map.iter().position(|m| m == l).unwrap())
        .collect();
    let data = Dataset {
        x: None,
        x_tilde: Mat::from_vec(n, d, rows),
        y,
        v: if has_errorbars {
            Some(Mat::from_vec(n, d, vrows))
        } else {
            None
        },
        meta: DatasetMeta {
            name: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            seed: None,
            num_classes: label_map.len(),
            label_map,
            redraws: 0,
        },
    };
    data.validate()?;
    Ok(data)
}

/// Write a dataset as a delimited table plus a flat key-value sidecar
/// (`<path>.meta`) carrying the label map and generation seed.
pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let d = data.dim();
    let mut out = String::new();
    out.push_str("label");
    for j in 0..d {
        out.push_str(&format!(",x{}", j));
    }
    if data.v.is_some() {
        for j in 0..d {
            out.push_str(&format!(",err{}", j));
        }
    }
    out.push('\n');
    for i in 0..data.n() {
        out.push_str(&data.meta.label_map[data.y[i]]);
        for j in 0..d {
            out.push_str(&format!(",{:.17e}", data.x_tilde[(i, j)]));
        }
        if let Some(v) = &data.v {
            for j in 0..d {
                out.push_str(&format!(",{:.17e}", v[(i, j)].sqrt()));
            }
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))?;

    let mut meta = String::new();
    meta.push_str(&format!("name\t{}\n", data.meta.name));
    if let Some(seed) = data.meta.seed {
        meta.push_str(&format!("seed\t{}\n", seed));
    }
    meta.push_str(&format!("num_classes\t{}\n", data.meta.num_classes));
    meta.push_str(&format!("label_map\t{}\n", data.meta.label_map.join(",")));
    let mpath = path.with_extension(format!(
        "{}{}",
        path.extension().map(|e| e.to_string_lossy()).unwrap_or_default(),
        ".meta"
    ));
    fs::write(&mpath, meta).map_err(|e| Error::io(mpath.display().to_string(), e))
}

/// Load a dataset written by [`save_dataset`].
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let content =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let header = content
        .lines()
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    let features: Vec<String> = cols
        .iter()
        .filter(|c| c.starts_with('x'))
        .map(|c| c.to_string())
        .collect();
    let mut schema = DelimitedSchema::new("label", features.clone());
    for f in &features {
        let err = format!("err{}", &f[1..]);
        if cols.contains(&err.as_str()) {
            schema.errorbar_columns.push((f.clone(), err));
        }
    }
    let mut data = load_delimited(path, &schema)?;
    // restore sidecar metadata when present
    let mpath = path.with_extension(format!(
        "{}{}",
        path.extension().map(|e| e.to_string_lossy()).unwrap_or_default(),
        ".meta"
    ));
    if let Ok(meta) = fs::read_to_string(&mpath) {
        for line in meta.lines() {
            let mut it = line.splitn(2, '\t');
            match (it.next(), it.next()) {
                (Some("name"), Some(v)) => data.meta.name = v.to_string(),
                (Some("seed"), Some(v)) => data.meta.seed = v.parse().ok(),
                (Some("num_classes"), Some(v)) => {
                    if let Ok(c) = v.parse() {
                        data.meta.num_classes = c;
                    }
                }
                (Some("label_map"), Some(v)) => {
                    let map: Vec<String> = v.split(',').map(str::to_string).collect();
                    // remap labels onto the recorded order
                    let remap: Vec<usize> = data
                        .meta
                        .label_map
                        .iter()
                        .map(|l| map.iter().position(|m| m == l).unwrap_or(0))
                        .collect();
                    for y in data.y.iter_mut() {
                        *y = remap[*y];
                    }
                    data.meta.label_map = map;
                }
                _ => {}
            }
        }
    }
    data.validate()?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(name: &str, content: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("nimgp-tests");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn loads_basic_file_without_errorbars() {
        let path = write_tmp(
            "basic.csv",
            "class,a,b\npulsar,1.0,2.0\nblazar,0.5,-1.0\npulsar,0.0,0.25\n",
        );
        let schema = DelimitedSchema::new("class", vec!["a".into(), "b".into()]);
        let data = load_delimited(&path, &schema).unwrap();
        assert_eq!(data.n(), 3);
        assert_eq!(data.v, None);
        assert_eq!(data.meta.label_map, vec!["pulsar", "blazar"]);
        assert_eq!(data.y, vec![0, 1, 0]);
        assert_eq!(data.x_tilde[(2, 1)], 0.25);
    }

    #[test]
    fn errorbars_square_into_variances() {
        let path = write_tmp(
            "bars.csv",
            "class,flux,flux_err,idx\nA,1.0,0.5,3.0\nB,2.0,0.1,4.0\n",
        );
        let mut schema =
            DelimitedSchema::new("class", vec!["flux".into(), "idx".into()]);
        schema.errorbar_columns = vec![("flux".into(), "flux_err".into())];
        let data = load_delimited(&path, &schema).unwrap();
        let v = data.v.as_ref().unwrap();
        assert!((v[(0, 0)] - 0.25).abs() < 1e-15);
        assert_eq!(v[(0, 1)], 0.0); // no error bar mapped
        assert!((v[(1, 0)] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn malformed_files_are_located_errors() {
        let path = write_tmp("ragged.csv", "class,a\nA,1.0\nB\n");
        let schema = DelimitedSchema::new("class", vec!["a".into()]);
        let err = load_delimited(&path, &schema).unwrap_err();
        assert!(err.to_string().contains(":3"), "{}", err);

        let path = write_tmp("nonnum.csv", "class,a\nA,oops\n");
        let err = load_delimited(&path, &schema).unwrap_err();
        assert!(err.to_string().contains("non-numeric"), "{}", err);

        let path = write_tmp("nocol.csv", "class,b\nA,1.0\n");
        let err = load_delimited(&path, &schema).unwrap_err();
        assert!(err.to_string().contains("unknown column"), "{}", err);
    }

    #[test]
    fn save_load_round_trip() {
        let path = write_tmp(
            "round.csv",
            "class,a,b\nup,0.125,-3.5\ndown,7.0,0.0625\nup,-1.5,2.25\n",
        );
        let schema = DelimitedSchema::new("class", vec!["a".into(), "b".into()]);
        let data = load_delimited(&path, &schema).unwrap();
        let out = std::env::temp_dir().join("nimgp-tests").join("round-out.csv");
        save_dataset(&data, &out).unwrap();
        let back = load_dataset(&out).unwrap();
        assert_eq!(back.x_tilde, data.x_tilde);
        assert_eq!(back.y, data.y);
        assert_eq!(back.meta.label_map, data.meta.label_map);
    }
}
