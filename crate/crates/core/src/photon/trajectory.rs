use std::io::{self, BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp, Geometric};
use serde::{Deserialize, Serialize};

use super::{require, PhotonError};
use crate::rng::stream_rng;

/// A single photon gained (+1) or lost (-1) at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub delta: i8,
}

/// Piecewise-constant photon number on [0, horizon].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpTrajectory {
    pub initial_n: u32,
    pub events: Vec<JumpEvent>,
    pub horizon: f64,
}

/// How the photon number at t = 0 is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialPhotons {
    Fixed(u32),
    /// Drawn from the stationary geometric law.
    Thermal,
}

impl JumpTrajectory {
    /// Photon number just after time `t` (jumps are right-continuous).
    pub fn n_at(&self, t: f64) -> u32 {
        let k = self.events.partition_point(|e| e.time <= t);
        self.apply(self.initial_n as i64, &self.events[..k])
    }

    pub fn final_n(&self) -> u32 {
        self.apply(self.initial_n as i64, &self.events)
    }

    fn apply(&self, start: i64, events: &[JumpEvent]) -> u32 {
        (start + events.iter().map(|e| e.delta as i64).sum::<i64>()) as u32
    }

    /// `(start, end, N)` for each constant stretch, covering [0, horizon].
    pub fn segments(&self) -> Vec<(f64, f64, u32)> {
        let mut out = Vec::with_capacity(self.events.len() + 1);
        let mut start = 0.0;
        let mut n = self.initial_n as i64;
        for e in &self.events {
            out.push((start, e.time, n as u32));
            start = e.time;
            n += e.delta as i64;
        }
        out.push((start, self.horizon, n as u32));
        out
    }

    /// Checks ordering, step sizes and that N never goes negative.
    pub fn validate(&self) -> Result<(), PhotonError> {
        let mut n = self.initial_n as i64;
        let mut last = 0.0;
        for (i, e) in self.events.iter().enumerate() {
            let bad = |m: String| PhotonError::InvalidDistribution(format!("event {i}: {m}"));
            if !(e.time >= last && e.time <= self.horizon) {
                return Err(bad(format!("time {} out of order", e.time)));
            }
            if e.delta != 1 && e.delta != -1 {
                return Err(bad(format!("delta {} is not +-1", e.delta)));
            }
            n += e.delta as i64;
            if n < 0 {
                return Err(bad("photon number went negative".into()));
            }
            last = e.time;
        }
        Ok(())
    }

    /// Writes `time_s,delta` rows; the first row is the initial number at t = 0.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "# initial_n={} horizon_s={:e}",
            self.initial_n, self.horizon
        )?;
        writeln!(out, "time_s,delta")?;
        for e in &self.events {
            writeln!(out, "{:.17e},{}", e.time, e.delta)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, PhotonError> {
        let mut meta = None;
        let mut header = false;
        let mut events = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let row = i + 1;
            let line = line.trim();
            let csv = |message: String| PhotonError::Csv { row, message };
            if let Some(rest) = line.strip_prefix('#') {
                let mut n = None;
                let mut h = None;
                for kv in rest.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("initial_n", v)) => n = v.parse::<u32>().ok(),
                        Some(("horizon_s", v)) => h = v.parse::<f64>().ok(),
                        _ => {}
                    }
                }
                if let (Some(n), Some(h)) = (n, h) {
                    meta = Some((n, h));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            if !header {
                if line != "time_s,delta" {
                    return Err(csv(format!(
                        "expected header `time_s,delta`, found `{line}`"
                    )));
                }
                header = true;
                continue;
            }
            let (t, d) = line
                .split_once(',')
                .ok_or_else(|| csv("expected two columns".into()))?;
            let time: f64 = t
                .trim()
                .parse()
                .map_err(|_| csv(format!("bad time `{t}`")))?;
            let delta: i8 = d
                .trim()
                .parse()
                .map_err(|_| csv(format!("bad delta `{d}`")))?;
            events.push(JumpEvent { time, delta });
        }
        let (initial_n, horizon) = meta.ok_or_else(|| PhotonError::Csv {
            row: 0,
            message: "missing `# initial_n=.. horizon_s=..` line".into(),
        })?;
        let traj = Self {
            initial_n,
            events,
            horizon,
        };
        traj.validate()?;
        Ok(traj)
    }
}

/// Samples one exact realization of the birth-death process on [0, horizon]
/// (no truncation) by racing the absorption and emission clocks.
pub fn sample_trajectory<R: Rng + ?Sized>(
    rng: &mut R,
    n_bar: f64,
    kappa: f64,
    horizon: f64,
    init: InitialPhotons,
) -> Result<JumpTrajectory, PhotonError> {
    require(
        n_bar >= 0.0 && n_bar.is_finite(),
        "n_bar",
        n_bar,
        "must be non-negative",
    )?;
    require(
        kappa >= 0.0 && kappa.is_finite(),
        "kappa",
        kappa,
        "must be non-negative",
    )?;
    require(
        horizon >= 0.0 && horizon.is_finite(),
        "horizon",
        horizon,
        "must be non-negative",
    )?;
    let initial_n = match init {
        InitialPhotons::Fixed(n) => n,
        InitialPhotons::Thermal if n_bar == 0.0 => 0,
        InitialPhotons::Thermal => {
            // failures before first success with p = 1/(nbar+1)
            let g = Geometric::new(1.0 / (n_bar + 1.0)).expect("probability in (0, 1]");
            g.sample(rng).min(u32::MAX as u64) as u32
        }
    };
    let mut events = Vec::new();
    let mut t = 0.0;
    let mut n = initial_n as f64;
    loop {
        let up = kappa * n_bar * (n + 1.0);
        let down = kappa * (n_bar + 1.0) * n;
        let total = up + down;
        if total == 0.0 {
            break;
        }
        let wait = Exp::new(total).expect("positive rate").sample(rng);
        t += wait;
        if t > horizon {
            break;
        }
        let delta: i8 = if rng.random::<f64>() * total < up {
            1
        } else {
            -1
        };
        n += delta as f64;
        events.push(JumpEvent { time: t, delta });
    }
    Ok(JumpTrajectory {
        initial_n,
        events,
        horizon,
    })
}

/// [`sample_trajectory`] drawing from stream `index` of `master_seed`.
pub fn sample_trajectory_seeded(
    master_seed: u64,
    index: u64,
    n_bar: f64,
    kappa: f64,
    horizon: f64,
    init: InitialPhotons,
) -> Result<JumpTrajectory, PhotonError> {
    let mut rng = stream_rng(master_seed, index);
    sample_trajectory(&mut rng, n_bar, kappa, horizon, init)
}
