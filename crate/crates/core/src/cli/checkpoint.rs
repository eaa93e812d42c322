//! Plain-text checkpoints.
//!
//! ```text
//! CAFKT-CKPT v1
//! translator 32 16
//! <16 numbers>
//! ...
//! ```
//!
//! Numbers use the shortest representation that parses back to the same
//! `f64`, so a write/read/write cycle is byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{ClassifierWeights, Nonlinearity, SyntheticEncoder, Translator};

const MAGIC: &str = "CAFKT-CKPT v1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    /// Named matrices in file order.
    pub blocks: Vec<(String, Matrix)>,
}

/// Encoders, translator and decoder as stored after pretraining or federation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub teacher: SyntheticEncoder,
    pub student: SyntheticEncoder,
    pub translator: Translator,
    pub classifier: ClassifierWeights,
}

impl Checkpoint {
    pub fn insert(&mut self, name: &str, m: Matrix) {
        match self.blocks.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = m,
            None => self.blocks.push((name.to_string(), m)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    fn require(&self, name: &str, origin: &str) -> Result<&Matrix> {
        self.get(name)
            .ok_or_else(|| Error::Config(format!("{origin}: checkpoint has no `{name}` block")))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        for (name, m) in &self.blocks {
            let _ = writeln!(out, "{name} {} {}", m.rows(), m.cols());
            for row in m.row_iter() {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == MAGIC => {}
            _ => return Err(perr(1, format!("missing `{MAGIC}` header"))),
        }
        let mut ckpt = Checkpoint::default();
        while let Some((i, line)) = lines.next() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let [name, rows, cols] = fields[..] else {
                return Err(perr(i + 1, "expected `<name> <rows> <cols>`".into()));
            };
            let rows: usize = rows.parse().map_err(|_| perr(i + 1, format!("bad row count `{rows}`")))?;
            let cols: usize = cols.parse().map_err(|_| perr(i + 1, format!("bad column count `{cols}`")))?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (j, row) = lines
                    .next()
                    .ok_or_else(|| perr(i + 1, format!("block `{name}` ends early")))?;
                let before = data.len();
                for tok in row.split_whitespace() {
                    let v: f64 = tok.parse().map_err(|_| perr(j + 1, format!("bad number `{tok}`")))?;
                    data.push(v);
                }
                if data.len() - before != cols {
                    return Err(perr(j + 1, format!("expected {cols} values, found {}", data.len() - before)));
                }
            }
            if ckpt.get(name).is_some() {
                return Err(perr(i + 1, format!("duplicate block `{name}`")));
            }
            ckpt.insert(name, Matrix::from_vec(rows, cols, data)?);
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn from_bundle(bundle: &ModelBundle) -> Self {
        let mut c = Checkpoint::default();
        c.insert("teacher", bundle.teacher.weight.clone());
        c.insert("student", bundle.student.weight.clone());
        c.insert("translator", bundle.translator.weight.clone());
        c.insert("classifier", bundle.classifier.weight.clone());
        c
    }

    /// Rebuilds the models; the activation is not stored and comes from the run configuration.
    pub fn bundle(&self, origin: &str, nonlinearity: Nonlinearity) -> Result<ModelBundle> {
        let teacher = SyntheticEncoder::with_nonlinearity(self.require("teacher", origin)?.clone(), nonlinearity)?;
        let student = SyntheticEncoder::with_nonlinearity(self.require("student", origin)?.clone(), nonlinearity)?;
        let translator = Translator::new(self.require("translator", origin)?.clone())?;
        let classifier = ClassifierWeights::new(self.require("classifier", origin)?.clone())?;
        if translator.in_dim() != student.out_dim() {
            return Err(Error::dim("checkpoint translator input vs student output", student.out_dim(), translator.in_dim()));
        }
        if translator.out_dim() != teacher.out_dim() {
            return Err(Error::dim("checkpoint translator output vs teacher output", teacher.out_dim(), translator.out_dim()));
        }
        if classifier.feature_dim() != teacher.out_dim() {
            return Err(Error::dim("checkpoint classifier vs feature dim", teacher.out_dim(), classifier.feature_dim()));
        }
        if teacher.in_dim() != student.in_dim() {
            return Err(Error::dim("checkpoint teacher vs student input dim", teacher.in_dim(), student.in_dim()));
        }
        Ok(ModelBundle {
            teacher,
            student,
            translator,
            classifier,
        })
    }
}
