//! CSV micro-data.
//!
//! Header `id,period,group,choice,<covariates...>`. Choices are coded 0..=3
//! in the order (empty, A, B, AB) or given by label. Empty cells and the
//! tokens `NA` and `.` are missing; a row with a missing choice or covariate
//! is dropped and counted.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dgp::{PanelDataset, PanelRow};
use crate::error::{Error, Result};
use crate::model::Bundle;

pub const REQUIRED_COLUMNS: [&str; 4] = ["id", "period", "group", "choice"];

const MISSING_TOKENS: [&str; 3] = ["", "NA", "."];

fn is_missing(token: &str) -> bool {
    MISSING_TOKENS.contains(&token)
}

/// Token substitution applied to one column before parsing.
///
/// Written `column=from:to`; `to` may be `missing`. The shorthands
/// `column=zero` and `column=missing` set every missing cell of the column to
/// `0` or leave it missing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recode {
    pub column: String,
    /// `None` matches every missing token.
    pub from: Option<String>,
    /// `None` recodes to missing.
    pub to: Option<String>,
}

impl FromStr for Recode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("recode rule '{s}' is not of the form column=rule"));
        let (column, rule) = s.split_once('=').ok_or_else(bad)?;
        let column = column.trim();
        if column.is_empty() {
            return Err(bad());
        }
        let target = |t: &str| if t == "missing" { None } else { Some(t.to_string()) };
        let (from, to) = match rule.trim() {
            "zero" => (None, Some("0".to_string())),
            "missing" => (None, None),
            r => {
                let (from, to) = r.split_once(':').ok_or_else(bad)?;
                (Some(from.to_string()), target(to))
            }
        };
        Ok(Recode {
            column: column.to_string(),
            from,
            to,
        })
    }
}

impl Recode {
    fn apply<'a>(&'a self, token: &'a str) -> &'a str {
        let hit = match &self.from {
            Some(f) => token == f,
            None => is_missing(token),
        };
        if !hit {
            return token;
        }
        self.to.as_deref().unwrap_or("")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadOptions {
    /// Covariate columns to keep, in order. All non-required columns if `None`.
    pub covariates: Option<Vec<String>>,
    pub recodes: Vec<Recode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadedData {
    pub data: PanelDataset,
    pub rows_read: usize,
    pub dropped_missing_choice: usize,
    pub dropped_missing_covariate: usize,
}

pub fn parse_choice(token: &str) -> Option<Bundle> {
    match token {
        "0" | "empty" | "Empty" | "EMPTY" => Some(Bundle::Empty),
        "1" | "A" | "a" => Some(Bundle::A),
        "2" | "B" | "b" => Some(Bundle::B),
        "3" | "AB" | "ab" | "Ab" => Some(Bundle::AB),
        _ => None,
    }
}

fn parse_num<T: FromStr>(token: &str, column: &str, line: u64) -> Result<T> {
    token.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("column '{column}': cannot parse '{token}'"),
    })
}

pub fn load_dataset(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<LoadedData> {
    read_dataset(File::open(path)?, opts)
}

pub fn read_dataset<R: Read>(input: R, opts: &LoadOptions) -> Result<LoadedData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let mut req = [0usize; 4];
    for (slot, name) in req.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = find(name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing required column '{name}'"),
        })?;
    }
    let covariates: Vec<String> = match &opts.covariates {
        Some(c) => c.clone(),
        None => header.iter().filter(|h| !REQUIRED_COLUMNS.contains(&h.as_str())).cloned().collect(),
    };
    let mut cov_idx = Vec::with_capacity(covariates.len());
    for c in &covariates {
        cov_idx.push(find(c).ok_or_else(|| Error::invalid(format!("covariate column '{c}' not in the header")))?);
    }
    for r in &opts.recodes {
        if find(&r.column).is_none() {
            return Err(Error::invalid(format!("recode column '{}' not in the header", r.column)));
        }
    }
    let recodes: Vec<Vec<&Recode>> = (0..header.len())
        .map(|i| opts.recodes.iter().filter(|r| r.column == header[i]).collect())
        .collect();

    let mut rows = Vec::new();
    let (mut read, mut no_choice, mut no_cov) = (0, 0, 0);
    for rec in rdr.records() {
        let rec = rec?;
        read += 1;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| -> &str {
            let mut t = rec.get(i).unwrap_or("").trim();
            for r in &recodes[i] {
                t = r.apply(t);
            }
            t
        };
        let choice_tok = field(req[3]);
        if is_missing(choice_tok) {
            no_choice += 1;
            continue;
        }
        let choice = parse_choice(choice_tok).ok_or_else(|| Error::Parse {
            line,
            message: format!("unknown choice token '{choice_tok}'"),
        })?;
        let mut x = Vec::with_capacity(cov_idx.len());
        let mut missing = false;
        for (&i, name) in cov_idx.iter().zip(&covariates) {
            let t = field(i);
            if is_missing(t) {
                missing = true;
                break;
            }
            let v: f64 = parse_num(t, name, line)?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column '{name}': non-finite value"),
                });
            }
            x.push(v);
        }
        if missing {
            no_cov += 1;
            continue;
        }
        rows.push(PanelRow {
            id: parse_num(field(req[0]), "id", line)?,
            period: parse_num(field(req[1]), "period", line)?,
            group: parse_num(field(req[2]), "group", line)?,
            choice,
            x,
        });
    }
    Ok(LoadedData {
        data: PanelDataset::new(covariates, rows)?,
        rows_read: read,
        dropped_missing_choice: no_choice,
        dropped_missing_covariate: no_cov,
    })
}

/// Writes the dataset with numeric choice codes. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_dataset<W: Write>(data: &PanelDataset, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
    header.extend(data.covariate_names.iter().map(String::as_str));
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for r in &data.rows {
        rec.clear();
        rec.push(r.id.to_string());
        rec.push(r.period.to_string());
        rec.push(r.group.to_string());
        rec.push(r.choice.code().to_string());
        rec.extend(r.x.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(data: &PanelDataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(data, std::io::BufWriter::new(File::create(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::simulate;
    use crate::testutil::{recovery_config, recovery_theta};

    fn read(text: &str, opts: &LoadOptions) -> Result<LoadedData> {
        read_dataset(text.as_bytes(), opts)
    }

    #[test]
    fn small_file_round_trips() {
        let text = "id,period,group,choice,const,x\n1,1,0,0,1,0.5\n2,1,1,AB,1,-2\n3,2,0,B,1,0\n";
        let l = read(text, &LoadOptions::default()).unwrap();
        assert_eq!(l.rows_read, 3);
        let d = &l.data;
        assert_eq!(d.covariate_names, ["const", "x"]);
        assert_eq!(d.rows[1].choice, Bundle::AB);
        assert_eq!(d.rows[1].choice.code(), 3);
        assert_eq!(d.rows[0].x, [1.0, 0.5]);
        assert_eq!((d.rows[2].id, d.rows[2].period, d.rows[2].group), (3, 2, 0));
        let mut buf = Vec::new();
        write_dataset(d, &mut buf).unwrap();
        let again = read(std::str::from_utf8(&buf).unwrap(), &LoadOptions::default()).unwrap();
        assert_eq!(&again.data, d);
    }

    #[test]
    fn choice_labels() {
        for (tok, b) in [("empty", Bundle::Empty), ("A", Bundle::A), ("2", Bundle::B), ("AB", Bundle::AB)] {
            assert_eq!(parse_choice(tok), Some(b));
        }
        assert_eq!(parse_choice("C"), None);
    }

    #[test]
    fn missing_values_drop_rows() {
        let text = "id,period,group,choice,const,x\n1,1,0,,1,0\n2,1,0,A,1,NA\n3,1,0,A,1,1\n4,1,0,.,1,1\n";
        let l = read(text, &LoadOptions::default()).unwrap();
        assert_eq!(l.data.len(), 1);
        assert_eq!(l.dropped_missing_choice, 2);
        assert_eq!(l.dropped_missing_covariate, 1);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "id,period,group,choice,x\n1,1,0,A,1\n2,1,0,Q,1\n";
        match read(text, &LoadOptions::default()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("'Q'"));
            }
            other => panic!("{other:?}"),
        }
        let text = "id,period,group,choice,x\n1,1,0,A,1\n2,1,0,A,1\n3,1,0,A,abc\n";
        assert!(matches!(read(text, &LoadOptions::default()), Err(Error::Parse { line: 4, .. })));
        assert!(matches!(read("id,period,choice\n", &LoadOptions::default()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn recode_rules() {
        let text = "id,period,group,choice,fgc,x\n1,1,0,A,dk,1\n2,1,0,A,,1\n3,1,0,B,1,1\n";
        let base = read(text, &LoadOptions::default());
        assert!(matches!(base, Err(Error::Parse { line: 2, .. })));
        let opts = LoadOptions {
            covariates: None,
            recodes: vec!["fgc=dk:missing".parse().unwrap()],
        };
        let l = read(text, &opts).unwrap();
        assert_eq!((l.data.len(), l.dropped_missing_covariate), (1, 2));
        let opts = LoadOptions {
            covariates: None,
            recodes: vec!["fgc=dk:missing".parse().unwrap(), "fgc=zero".parse().unwrap()],
        };
        let l = read(text, &opts).unwrap();
        assert_eq!(l.data.len(), 3);
        assert_eq!(l.data.rows[0].x, [0.0, 1.0]);
        assert!("nonsense".parse::<Recode>().is_err());
        assert!("fgc=".parse::<Recode>().is_err());
        let opts = LoadOptions {
            covariates: None,
            recodes: vec!["nope=zero".parse().unwrap()],
        };
        assert!(read(text, &opts).is_err());
    }

    #[test]
    fn covariate_selection() {
        let text = "id,period,group,choice,a,b\n1,1,0,A,1,2\n";
        let opts = LoadOptions {
            covariates: Some(vec!["b".into()]),
            recodes: vec![],
        };
        assert_eq!(read(text, &opts).unwrap().data.rows[0].x, [2.0]);
        let opts = LoadOptions {
            covariates: Some(vec!["c".into()]),
            recodes: vec![],
        };
        assert!(read(text, &opts).is_err());
    }

    #[test]
    fn simulated_file_reloads_identically() {
        let mut cfg = recovery_config(recovery_theta(), 300, 5);
        cfg.covariate_spec.push(crate::dgp::CovariateSpec::new(
            "income",
            crate::dgp::CovariateGen::Normal { mean: 0.3, sd: 1.7 },
        ));
        cfg.theta_true.beta_a.push(0.0);
        cfg.theta_true.beta_b.push(0.0);
        let data = simulate(&cfg).unwrap().data;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sim.csv");
        save_dataset(&data, &path).unwrap();
        let back = load_dataset(&path, &LoadOptions::default()).unwrap();
        assert_eq!(back.data, data);
        assert_eq!(back.rows_read, data.len());
        let bytes = std::fs::read(&path).unwrap();
        assert!(!bytes.contains(&b'\r'));
    }
}
