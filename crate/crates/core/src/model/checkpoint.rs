//! Text checkpoints: a magic line, the expert count, then one line per
//! tensor, `<name> <d0>x<d1>.. <values..>`.
//!
//! Names: `backbone.layer{i}.{w|b}`, `expert{k}.{embed|cls}.{w|b}`,
//! `expert{k}.norm.{scale|shift|running_mean|running_var}`, `proto{k}`,
//! `voting.fc.{w|b}`, `voting.norm.{scale|shift|running_mean|running_var}`,
//! with `k` the source domain id. Loading is strict: every name must be
//! present exactly once with the shape implied by the others.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use super::{HyperParams, ModelError, ModelParams, Result};
use crate::autodiff::Tensor;

pub const CHECKPOINT_MAGIC: &str = "# ramoe-checkpoint v1";

enum Slot<'a> {
    Param(&'a mut Tensor),
    Stat(&'a mut Vec<f64>),
}

fn slots(p: &mut ModelParams) -> Vec<(String, Slot<'_>)> {
    let mut out: Vec<(String, Slot<'_>)> = Vec::new();
    for (i, l) in p.backbone.iter_mut().enumerate() {
        out.push((format!("backbone.layer{i}.w"), Slot::Param(&mut l.w)));
        out.push((format!("backbone.layer{i}.b"), Slot::Param(&mut l.b)));
    }
    for e in p.experts.iter_mut() {
        let k = e.domain_id;
        out.push((format!("expert{k}.embed.w"), Slot::Param(&mut e.embed.w)));
        out.push((format!("expert{k}.embed.b"), Slot::Param(&mut e.embed.b)));
        out.push((format!("expert{k}.norm.scale"), Slot::Param(&mut e.norm.scale)));
        out.push((format!("expert{k}.norm.shift"), Slot::Param(&mut e.norm.shift)));
        out.push((format!("expert{k}.norm.running_mean"), Slot::Stat(&mut e.norm.running_mean)));
        out.push((format!("expert{k}.norm.running_var"), Slot::Stat(&mut e.norm.running_var)));
        out.push((format!("expert{k}.cls.w"), Slot::Param(&mut e.cls.w)));
        out.push((format!("expert{k}.cls.b"), Slot::Param(&mut e.cls.b)));
    }
    for (k, c) in p.prototypes.iter_mut().enumerate() {
        out.push((format!("proto{}", k + 1), Slot::Param(c)));
    }
    let v = &mut p.voting;
    out.push(("voting.fc.w".into(), Slot::Param(&mut v.fc.w)));
    out.push(("voting.fc.b".into(), Slot::Param(&mut v.fc.b)));
    out.push(("voting.norm.scale".into(), Slot::Param(&mut v.norm.scale)));
    out.push(("voting.norm.shift".into(), Slot::Param(&mut v.norm.shift)));
    out.push(("voting.norm.running_mean".into(), Slot::Stat(&mut v.norm.running_mean)));
    out.push(("voting.norm.running_var".into(), Slot::Stat(&mut v.norm.running_var)));
    out
}

pub fn write_checkpoint<W: Write>(params: &ModelParams, mut out: W) -> Result<()> {
    let mut copy = params.detached();
    writeln!(out, "{CHECKPOINT_MAGIC}")?;
    writeln!(out, "experts {}", copy.num_experts())?;
    let mut line = String::new();
    for (name, slot) in slots(&mut copy) {
        let (shape, values): (Vec<usize>, &[f64]) = match &slot {
            Slot::Param(t) => (t.shape().to_vec(), t.values()),
            Slot::Stat(v) => (vec![v.len()], v.as_slice()),
        };
        line.clear();
        let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
        write!(line, "{name} {}", dims.join("x")).ok();
        for v in values {
            write!(line, " {v:?}").ok();
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

type Entry = (usize, Vec<usize>, Vec<f64>);

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<ModelParams> {
    let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
    let bad = |line: usize, msg: &str| ModelError::Checkpoint {
        line,
        msg: msg.to_string(),
    };
    let magic = match lines.next() {
        Some((_, l)) => l?,
        None => return Err(bad(1, "empty checkpoint")),
    };
    if magic.trim() != CHECKPOINT_MAGIC {
        return Err(ModelError::Version(magic.trim().to_string()));
    }
    let k: usize = match lines.next() {
        Some((n, l)) => {
            let l = l?;
            l.strip_prefix("experts ")
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| bad(n, "expected 'experts <K>'"))?
        }
        None => return Err(bad(2, "missing expert count")),
    };
    let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
    for (n, l) in lines {
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        let mut fields = l.split_whitespace();
        let name = fields.next().unwrap_or_default().to_string();
        let shape: Vec<usize> = fields
            .next()
            .ok_or_else(|| bad(n, "missing shape"))?
            .split('x')
            .map(|d| d.parse::<usize>().map_err(|_| bad(n, "malformed shape")))
            .collect::<Result<_>>()?;
        let values: Vec<f64> = fields
            .map(|v| v.parse::<f64>().map_err(|_| bad(n, &format!("non-numeric value '{v}'"))))
            .collect::<Result<_>>()?;
        if values.len() != shape.iter().product::<usize>() || values.iter().any(|v| !v.is_finite()) {
            return Err(bad(n, &format!("'{name}' value count does not match shape {shape:?}")));
        }
        if entries.insert(name.clone(), (n, shape, values)).is_some() {
            return Err(bad(n, &format!("duplicate parameter '{name}'")));
        }
    }

    let dim = |name: &str, axis: usize| -> Result<usize> {
        let (_, shape, _) = entries.get(name).ok_or_else(|| ModelError::MissingKey(name.to_string()))?;
        shape.get(axis).copied().ok_or_else(|| ModelError::ShapeMismatch {
            name: name.to_string(),
            expected: vec![0; axis + 1],
            got: shape.clone(),
        })
    };
    let hp = HyperParams {
        hidden: dim("backbone.layer0.w", 1)?,
        d_feat: dim("backbone.layer1.w", 1)?,
        d_emb: dim("voting.fc.w", 1)?,
        ..HyperParams::default()
    };
    let d_in = dim("backbone.layer0.w", 0)?;
    let counts: Vec<usize> = (1..=k).map(|j| dim(&format!("proto{j}"), 0)).collect::<Result<_>>()?;
    let mut params = ModelParams::init(d_in, &counts, &hp, 0)?;
    for (name, slot) in slots(&mut params) {
        let (_, shape, values) = entries.remove(&name).ok_or_else(|| ModelError::MissingKey(name.clone()))?;
        match slot {
            Slot::Param(t) => {
                if t.shape() != shape.as_slice() {
                    return Err(ModelError::ShapeMismatch {
                        name,
                        expected: t.shape().to_vec(),
                        got: shape,
                    });
                }
                *t = Tensor::new(shape, values)?;
            }
            Slot::Stat(v) => {
                if shape != [v.len()] {
                    return Err(ModelError::ShapeMismatch {
                        name,
                        expected: vec![v.len()],
                        got: shape,
                    });
                }
                *v = values;
            }
        }
    }
    if let Some(name) = entries.into_keys().next() {
        return Err(ModelError::UnknownKey(name));
    }
    Ok(params)
}

impl ModelParams {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_checkpoint(self, &mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
