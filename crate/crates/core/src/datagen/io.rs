//! Dataset files: a `#` header with provenance, a column header, then one
//! comma-separated record per line.

use std::fmt::Write as _;
use std::path::Path;

use super::{DatagenError, Dataset, Generator, NoiseSpec};

pub const DATASET_SCHEMA: u32 = 1;

pub fn format_dataset(d: &Dataset) -> Result<String, DatagenError> {
    if d.is_empty() {
        return Err(DatagenError::Empty);
    }
    let json = |v: &dyn erased::Json| v.to_json();
    let mut s = String::new();
    writeln!(s, "# sparse-stein dataset").unwrap();
    writeln!(s, "# schema: {DATASET_SCHEMA}").unwrap();
    writeln!(s, "# generator: {}", json(&d.generator)).unwrap();
    writeln!(s, "# epsilon: {:?}", d.epsilon).unwrap();
    writeln!(s, "# noise: {}", json(&d.noise)).unwrap();
    writeln!(s, "# seed: {}", d.seed).unwrap();
    writeln!(s, "# count: {}", d.len()).unwrap();
    let mut cols = d.generator.input_names();
    cols.extend(d.generator.output_names());
    writeln!(s, "{}", cols.join(",")).unwrap();
    for (x, y) in d.inputs.iter().zip(&d.outputs) {
        let fields: Vec<String> = x.iter().chain(y).map(|v| format!("{v:?}")).collect();
        writeln!(s, "{}", fields.join(",")).unwrap();
    }
    Ok(s)
}

mod erased {
    pub trait Json {
        fn to_json(&self) -> String;
    }

    impl<T: serde::Serialize> Json for T {
        fn to_json(&self) -> String {
            serde_json::to_string(self).expect("plain data serializes")
        }
    }
}

pub fn write_dataset(path: &Path, d: &Dataset) -> Result<(), DatagenError> {
    std::fs::write(path, format_dataset(d)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DatagenError> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

fn err(line: usize, message: impl Into<String>) -> DatagenError {
    DatagenError::Parse {
        line,
        message: message.into(),
    }
}

pub fn parse_dataset(text: &str) -> Result<Dataset, DatagenError> {
    let mut schema = None;
    let mut generator: Option<Generator> = None;
    let mut epsilon = None;
    let mut noise: Option<NoiseSpec> = None;
    let mut seed = None;
    let mut count: Option<usize> = None;
    let mut header: Option<Vec<String>> = None;
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut last_line = 0;
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(err(text.lines().count(), "truncated final record (no line terminator)"));
    }

    for (idx, line) in text.lines().enumerate() {
        let ln = idx + 1;
        last_line = ln;
        if let Some(rest) = line.strip_prefix('#') {
            let Some((key, value)) = rest.split_once(':') else {
                continue;
            };
            let value = value.trim();
            let bad = |e: &dyn std::fmt::Display| err(ln, format!("bad {}: {e}", key.trim()));
            match key.trim() {
                "schema" => {
                    let v: u32 = value.parse().map_err(|e| bad(&e))?;
                    if v != DATASET_SCHEMA {
                        return Err(DatagenError::SchemaMismatch {
                            found: v,
                            expected: DATASET_SCHEMA,
                        });
                    }
                    schema = Some(v);
                }
                "generator" => generator = Some(serde_json::from_str(value).map_err(|e| bad(&e))?),
                "epsilon" => epsilon = Some(value.parse::<f64>().map_err(|e| bad(&e))?),
                "noise" => noise = Some(serde_json::from_str(value).map_err(|e| bad(&e))?),
                "seed" => seed = Some(value.parse::<u64>().map_err(|e| bad(&e))?),
                "count" => count = Some(value.parse::<usize>().map_err(|e| bad(&e))?),
                other => return Err(err(ln, format!("unknown header key '{other}'"))),
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let g = generator.ok_or_else(|| err(ln, "records before the generator header"))?;
        let (n_in, n_out) = (g.input_names().len(), g.output_names().len());
        if header.is_none() {
            let cols: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
            let mut expected = g.input_names();
            expected.extend(g.output_names());
            if cols != expected {
                return Err(err(ln, format!("column header {cols:?} does not match {expected:?}")));
            }
            header = Some(cols);
            continue;
        }
        let values = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|e| err(ln, format!("bad number '{f}': {e}"))))
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != n_in + n_out {
            return Err(err(ln, format!("expected {} fields, found {}", n_in + n_out, values.len())));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(err(ln, format!("non-finite value {bad}")));
        }
        inputs.push(values[..n_in].to_vec());
        outputs.push(values[n_in..].to_vec());
    }

    let missing = |what: &str| err(last_line, format!("missing header field '{what}'"));
    schema.ok_or_else(|| missing("schema"))?;
    let count = count.ok_or_else(|| missing("count"))?;
    if inputs.len() != count {
        return Err(err(
            last_line,
            format!("truncated dataset: header declares {count} records, found {}", inputs.len()),
        ));
    }
    if count == 0 {
        return Err(DatagenError::Empty);
    }
    Ok(Dataset {
        generator: generator.ok_or_else(|| missing("generator"))?,
        epsilon: epsilon.ok_or_else(|| missing("epsilon"))?,
        noise: noise.ok_or_else(|| missing("noise"))?,
        seed: seed.ok_or_else(|| missing("seed"))?,
        inputs,
        outputs,
    })
}
