use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::QsimError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FringeMeta {
    pub sequence: String,
    pub system: String,
    pub seed: Option<u64>,
}

/// Readout signal versus sweep delay. `stderr` is zero for deterministic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeData {
    pub delays: Vec<f64>,
    pub signal: Vec<f64>,
    pub stderr: Vec<f64>,
    pub meta: FringeMeta,
}

pub const FRINGE_HEADER: &str = "delay_s,signal,stderr";

impl FringeData {
    pub fn new(
        delays: Vec<f64>,
        signal: Vec<f64>,
        stderr: Vec<f64>,
        meta: FringeMeta,
    ) -> Result<Self, QsimError> {
        let data = Self {
            delays,
            signal,
            stderr,
            meta,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<(), QsimError> {
        let n = self.delays.len();
        if self.signal.len() != n || self.stderr.len() != n {
            return Err(QsimError::InvalidSequence(format!(
                "fringe columns differ in length ({n}, {}, {})",
                self.signal.len(),
                self.stderr.len()
            )));
        }
        if self.delays.windows(2).any(|w| w[1] <= w[0]) {
            return Err(QsimError::InvalidSequence(
                "fringe delays must increase".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    /// Writes `# key=value` metadata lines followed by the data table.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# sequence={}", self.meta.sequence)?;
        writeln!(out, "# system={}", self.meta.system)?;
        if let Some(seed) = self.meta.seed {
            writeln!(out, "# seed={seed}")?;
        }
        writeln!(out, "{FRINGE_HEADER}")?;
        for i in 0..self.len() {
            writeln!(
                out,
                "{:.17e},{:.17e},{:.17e}",
                self.delays[i], self.signal[i], self.stderr[i]
            )?;
        }
        Ok(())
    }

    /// Parses the CSV schema; a missing stderr column reads as zero. Other
    /// comment lines are ignored.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, QsimError> {
        let mut meta = FringeMeta::default();
        let (mut delays, mut signal, mut stderr) = (Vec::new(), Vec::new(), Vec::new());
        let mut columns = None;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let row = i + 1;
            let line = line.trim();
            let err = |message: String| QsimError::Csv { row, message };
            if let Some(c) = line.strip_prefix('#') {
                match c.trim().split_once('=') {
                    Some(("sequence", v)) => meta.sequence = v.to_string(),
                    Some(("system", v)) => meta.system = v.to_string(),
                    Some(("seed", v)) => meta.seed = v.trim().parse().ok(),
                    _ => {}
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let Some(ncol) = columns else {
                columns = match line {
                    FRINGE_HEADER => Some(3),
                    "delay_s,signal" => Some(2),
                    _ => {
                        return Err(err(format!(
                            "expected header `{FRINGE_HEADER}`, found `{line}`"
                        )))
                    }
                };
                continue;
            };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != ncol {
                return Err(err(format!(
                    "expected {ncol} columns, found {}",
                    fields.len()
                )));
            }
            let parse = |s: &str, what: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("bad {what} `{s}`")))
            };
            let d = parse(fields[0], "delay")?;
            if delays.last().is_some_and(|&last| d <= last) {
                return Err(err(format!("delay {d} does not increase")));
            }
            delays.push(d);
            signal.push(parse(fields[1], "signal")?);
            stderr.push(if ncol == 3 {
                parse(fields[2], "stderr")?
            } else {
                0.0
            });
        }
        if columns.is_none() {
            return Err(QsimError::Csv {
                row: 0,
                message: "no header found".into(),
            });
        }
        Self::new(delays, signal, stderr, meta)
    }
}
