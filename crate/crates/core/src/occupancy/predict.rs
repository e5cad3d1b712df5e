use std::io::Write;
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{wire, CellState, OccupancyEstimate};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    None,
    Structural,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    /// Probability factor per cell walked away from an occupied cell.
    pub decay: f64,
    /// Grid axes to extrapolate along.
    pub axes: Vec<usize>,
    /// Half-angle of the fan of rays around each axis, degrees; 0 walks
    /// straight lines only.
    pub spread_deg: f64,
    /// Program and arguments of an external predictor.
    pub external_cmd: Vec<String>,
    pub external_timeout_ms: u64,
    pub prob_floor: f64,
    pub prob_ceiling: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            kind: PredictorKind::None,
            decay: 0.98,
            axes: vec![0, 1],
            spread_deg: 15.0,
            external_cmd: Vec::new(),
            external_timeout_ms: 10_000,
            prob_floor: 0.0,
            prob_ceiling: 1.0,
        }
    }
}

impl PredictorConfig {
    pub fn structural() -> Self {
        Self { kind: PredictorKind::Structural, ..Self::default() }
    }

    pub fn validate(&self, ndim: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay must lie in (0, 1]");
        }
        if !(0.0 <= self.prob_floor && self.prob_floor <= self.prob_ceiling && self.prob_ceiling <= 1.0) {
            return bad("need 0 <= prob_floor <= prob_ceiling <= 1");
        }
        if !(0.0..45.0).contains(&self.spread_deg) {
            return bad("spread_deg must lie in [0, 45)");
        }
        if self.axes.iter().any(|&a| a >= ndim) {
            return bad("extrapolation axis out of range");
        }
        if self.kind == PredictorKind::External && self.external_cmd.is_empty() {
            return bad("external predictor needs external_cmd");
        }
        Ok(())
    }
}

/// Occupancy probability for every cell. Observed cells always map to 0
/// (free) or 1 (occupied); predictors only shape unknown cells. External
/// failures fall back to the passthrough grid.
pub fn predict(est: &OccupancyEstimate, cfg: &PredictorConfig) -> Vec<f64> {
    let mut out = match cfg.kind {
        PredictorKind::None => passthrough(est),
        PredictorKind::Structural => structural(est, cfg),
        PredictorKind::External => match external(est, cfg) {
            Ok(p) => p,
            Err(e) => {
                warn!("external predictor failed, using passthrough: {e}");
                passthrough(est)
            }
        },
    };
    for (p, s) in out.iter_mut().zip(est.states()) {
        match s {
            CellState::KnownFree => *p = 0.0,
            CellState::KnownOccupied => *p = 1.0,
            CellState::Unknown(_) => {}
        }
    }
    out
}

fn passthrough(est: &OccupancyEstimate) -> Vec<f64> {
    est.states().iter().map(|s| s.probability()).collect()
}

/// Walks rays out of every known-occupied cell along each configured axis,
/// fanned across the other axes up to `spread_deg`. A cell `d` steps along
/// the axis gets at least `decay^d`; rays pass through occupied cells and
/// stop at the first known-free cell or the grid edge, so more contacts
/// never lower a prediction.
fn structural(est: &OccupancyEstimate, cfg: &PredictorConfig) -> Vec<f64> {
    let spec = &est.spec;
    let ndim = spec.ndim();
    let mut out = passthrough(est);
    let slope = cfg.spread_deg.to_radians().tan();
    for cell in est.known_occupied().iter() {
        let origin: Vec<i64> = spec.coords(cell).into_iter().map(|c| c as i64).collect();
        for &axis in &cfg.axes {
            let len = spec.dims[axis] as i64;
            // lateral offsets reached at the far end of the longest ray
            let fan = (slope * len as f64).ceil() as i64;
            let laterals: Vec<Option<usize>> =
                if fan == 0 || ndim == 1 { vec![None] } else { (0..ndim).filter(|&a| a != axis).map(Some).collect() };
            for lat in laterals {
                let ends = if lat.is_some() { -fan..=fan } else { 0..=0 };
                for end in ends {
                    for dir in [-1i64, 1] {
                        let mut p = 1.0;
                        let mut at = origin.clone();
                        for d in 1..=len {
                            at[axis] = origin[axis] + dir * d;
                            if let Some(l) = lat {
                                // nearest lattice point on the ray towards `end`
                                at[l] = origin[l] + (end * d * 2 + len * end.signum()) / (2 * len);
                            }
                            let inside = at.iter().zip(&spec.dims).all(|(&c, &n)| c >= 0 && c < n as i64);
                            if !inside {
                                break;
                            }
                            let coords: Vec<usize> = at.iter().map(|&c| c as usize).collect();
                            let idx = spec.index(&coords).expect("inside the grid");
                            p *= cfg.decay;
                            match est.state(idx) {
                                CellState::KnownFree => break,
                                CellState::KnownOccupied => {}
                                CellState::Unknown(_) => out[idx] = out[idx].max(p),
                            }
                        }
                    }
                }
            }
        }
    }
    for (p, s) in out.iter_mut().zip(est.states()) {
        if let CellState::Unknown(_) = s {
            *p = p.clamp(cfg.prob_floor, cfg.prob_ceiling);
        }
    }
    out
}

fn external(est: &OccupancyEstimate, cfg: &PredictorConfig) -> Result<Vec<f64>> {
    let ext = |m: String| Error::ExternalPredictor(m);
    let mut child = Command::new(&cfg.external_cmd[0])
        .args(&cfg.external_cmd[1..])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| ext(format!("spawn {:?}: {e}", cfg.external_cmd)))?;
    let mut request = Vec::new();
    wire::write_request(&mut request, &est.spec.dims, &est.to_half_units())?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let mut stdout = child.stdout.take().expect("piped stdout");
    let writer = std::thread::spawn(move || stdin.write_all(&request));
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let _ = tx.send(wire::read_response(&mut stdout));
    });
    let reply = rx.recv_timeout(Duration::from_millis(cfg.external_timeout_ms));
    if reply.is_err() {
        let _ = child.kill();
    }
    let _ = child.wait();
    let _ = writer.join();
    let (header, probs) = reply.map_err(|_| ext("timed out".into()))??;
    if header.dims != est.spec.dims {
        return Err(ext(format!("response dims {:?} differ from {:?}", header.dims, est.spec.dims)));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(ext("response probabilities outside [0, 1]".into()));
    }
    Ok(probs.into_iter().map(f64::from).collect())
}
