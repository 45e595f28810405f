//! Plain-text dataset files.
//!
//! ```text
//! # ramoe-dataset v1
//! d_in 3
//! domains 2
//! domain 1 identities 2 samples 4
//! domain 2 identities 2 samples 4
//! 1,0,0.5,-1.25,3
//! ...
//! ```
//!
//! One row per sample: domain id, identity label, then `d_in` values. Values
//! are written in shortest round-trip form, so a load reproduces them exactly.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DataError, Domain, MultiDomainDataset, Result};

const MAGIC: &str = "# ramoe-dataset v1";

pub fn write_dataset<W: Write>(dataset: &MultiDomainDataset, mut out: W) -> Result<()> {
    let mut buf = String::new();
    writeln!(buf, "{MAGIC}").ok();
    writeln!(buf, "d_in {}", dataset.d_in).ok();
    writeln!(buf, "domains {}", dataset.domains.len()).ok();
    for d in &dataset.domains {
        writeln!(buf, "domain {} identities {} samples {}", d.domain_id, d.num_identities, d.len()).ok();
    }
    out.write_all(buf.as_bytes())?;
    for d in &dataset.domains {
        for i in 0..d.len() {
            buf.clear();
            write!(buf, "{},{}", d.domain_id, d.labels[i]).ok();
            for v in d.row(i) {
                write!(buf, ",{v:?}").ok();
            }
            buf.push('\n');
            out.write_all(buf.as_bytes())?;
        }
    }
    Ok(())
}

pub fn save_dataset(dataset: &MultiDomainDataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_dataset(dataset, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<MultiDomainDataset> {
    parse_dataset(&fs::read_to_string(path)?)
}

fn header_value(line: Option<(usize, &str)>, key: &str) -> Result<usize> {
    let (n, text) = line.ok_or(DataError::Parse {
        line: 0,
        msg: format!("missing '{key}' header"),
    })?;
    let mut parts = text.split_whitespace();
    match (parts.next(), parts.next().map(str::parse::<usize>), parts.next()) {
        (Some(k), Some(Ok(v)), None) if k == key => Ok(v),
        _ => Err(DataError::Parse {
            line: n,
            msg: format!("malformed header, expected '{key} <integer>'"),
        }),
    }
}

pub fn parse_dataset(text: &str) -> Result<MultiDomainDataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, l)) if l == MAGIC => {}
        other => {
            return Err(DataError::Parse {
                line: other.map_or(1, |(n, _)| n),
                msg: format!("expected '{MAGIC}'"),
            })
        }
    }
    let d_in = header_value(lines.next(), "d_in")?;
    let k = header_value(lines.next(), "domains")?;
    if d_in == 0 {
        return Err(DataError::Parse {
            line: 2,
            msg: "d_in must be positive".into(),
        });
    }
    let mut domains = Vec::with_capacity(k);
    let mut declared = Vec::with_capacity(k);
    for _ in 0..k {
        let (n, l) = lines.next().ok_or(DataError::Parse {
            line: 0,
            msg: "missing domain header".into(),
        })?;
        let f: Vec<&str> = l.split_whitespace().collect();
        let nums: Option<Vec<usize>> = [1, 3, 5].iter().map(|&i| f.get(i).and_then(|s| s.parse().ok())).collect();
        match (f.len(), f.first(), f.get(2), f.get(4), nums) {
            (6, Some(&"domain"), Some(&"identities"), Some(&"samples"), Some(v)) => {
                if domains.iter().any(|d: &Domain| d.domain_id == v[0]) {
                    return Err(DataError::Parse {
                        line: n,
                        msg: format!("duplicate domain {}", v[0]),
                    });
                }
                declared.push(v[2]);
                domains.push(Domain {
                    domain_id: v[0],
                    d_in,
                    samples: Vec::with_capacity(v[2] * d_in),
                    labels: Vec::with_capacity(v[2]),
                    num_identities: v[1],
                });
            }
            _ => {
                return Err(DataError::Parse {
                    line: n,
                    msg: "malformed header, expected 'domain <id> identities <L> samples <N>'".into(),
                })
            }
        }
    }
    for (n, l) in lines {
        let fields: Vec<&str> = l.split(',').map(str::trim).collect();
        if fields.len() != d_in + 2 {
            return Err(DataError::Arity {
                line: n,
                expected: d_in + 2,
                found: fields.len(),
            });
        }
        let int = |s: &str, what: &str| {
            s.parse::<usize>().map_err(|_| DataError::Parse {
                line: n,
                msg: format!("non-numeric {what} '{s}'"),
            })
        };
        let id = int(fields[0], "domain id")?;
        let label = int(fields[1], "label")?;
        let domain = domains.iter_mut().find(|d| d.domain_id == id).ok_or(DataError::Parse {
            line: n,
            msg: format!("row references undeclared domain {id}"),
        })?;
        if label >= domain.num_identities {
            return Err(DataError::Parse {
                line: n,
                msg: format!("label {label} outside 0..{}", domain.num_identities),
            });
        }
        for s in &fields[2..] {
            let v: f64 = s.parse().map_err(|_| DataError::Parse {
                line: n,
                msg: format!("non-numeric value '{s}'"),
            })?;
            if !v.is_finite() {
                return Err(DataError::Parse {
                    line: n,
                    msg: format!("non-finite value '{s}'"),
                });
            }
            domain.samples.push(v);
        }
        domain.labels.push(label);
    }
    for (d, &want) in domains.iter().zip(&declared) {
        if d.is_empty() {
            return Err(DataError::EmptyDomain(d.domain_id));
        }
        if d.len() != want {
            return Err(DataError::Invalid {
                domain: d.domain_id,
                msg: format!("header declares {want} samples, file has {}", d.len()),
            });
        }
    }
    Ok(MultiDomainDataset { d_in, domains })
}
