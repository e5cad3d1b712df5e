//! Property checks shared by the property suite and the acceptance run.
//! Each check draws everything it needs from one seed and returns a
//! description of the first violation.

#![allow(dead_code)]

use blindreach::bench::{ScenarioOverrides, Variant};
use blindreach::executive::run_episode_observed;
use blindreach::kinematics::{
    point_jacobian, robot_cells, surface_point_at, swept_cells, Action, ArmModel, Config, Side,
};
use blindreach::occupancy::{predict, CellState, OccupancyEstimate, PredictorConfig};
use blindreach::planner::{edge_validity, ChsSet, SweepCache};
use blindreach::rng::SeedStream;
use blindreach::workspace::{generate_scene, CellSet, Domain, GridSpec, SceneParams};
use nalgebra::{DVector, Vector2};

pub type Check = Result<(), String>;

pub fn desk() -> GridSpec {
    GridSpec::planar(32, 32, 0.03).unwrap()
}

/// An estimate with some cells certified free, some occupied and a few
/// contact bumps, drawn from `seed`.
pub fn random_estimate(seed: u64) -> OccupancyEstimate {
    let mut rng = SeedStream::new(seed, 100);
    let spec = GridSpec::planar(12, 10, 0.1).unwrap();
    let mut e = OccupancyEstimate::with_prior(spec.clone(), rng.uniform());
    for _ in 0..rng.int_range(0, 4) {
        let p = [rng.uniform_in(0.0, 1.2), rng.uniform_in(0.0, 1.0)];
        e.mark_contact(&p, rng.uniform(), rng.index(3)).unwrap();
    }
    let free: CellSet = (0..rng.int_range(0, 30)).map(|_| rng.index(spec.num_cells())).collect();
    e.certify_free(&free);
    for _ in 0..rng.int_range(0, 6) {
        e.mark_occupied(rng.index(spec.num_cells()));
    }
    e
}

fn kinds() -> [PredictorConfig; 2] {
    [PredictorConfig::default(), PredictorConfig::structural()]
}

/// Predictions equal 0 on known-free and 1 on known-occupied cells.
pub fn observation_consistency(seed: u64) -> Check {
    let e = random_estimate(seed);
    for cfg in kinds() {
        let p = predict(&e, &cfg);
        for (c, s) in e.states().iter().enumerate() {
            let want = match s {
                CellState::KnownFree => Some(0.0),
                CellState::KnownOccupied => Some(1.0),
                CellState::Unknown(_) => None,
            };
            match want {
                Some(w) if p[c] != w => {
                    return Err(format!("{:?}: cell {c} is {s:?} but predicted {}", cfg.kind, p[c]))
                }
                None if !(0.0..=1.0).contains(&p[c]) => return Err(format!("cell {c} predicted {}", p[c])),
                _ => {}
            }
        }
    }
    Ok(())
}

/// A contact mark never lowers a structural prediction; certifying cells
/// free never raises one.
pub fn monotone_evidence(seed: u64) -> Check {
    let e = random_estimate(seed);
    let mut rng = SeedStream::new(seed, 101);
    let cfg = PredictorConfig::structural();
    let before = predict(&e, &cfg);

    let mut marked = e.clone();
    marked.mark_contact(&[rng.uniform_in(0.0, 1.2), rng.uniform_in(0.0, 1.0)], rng.uniform(), 1).unwrap();
    let up = predict(&marked, &cfg);
    if let Some(c) = (0..up.len()).find(|&c| up[c] < before[c]) {
        return Err(format!("contact lowered cell {c}: {} -> {}", before[c], up[c]));
    }

    let mut cert = e.clone();
    let cells: CellSet = (0..rng.int_range(1, 30)).map(|_| rng.index(e.spec.num_cells())).collect();
    cert.certify_free(&cells);
    let down = predict(&cert, &cfg);
    if let Some(c) = (0..down.len()).find(|&c| down[c] > before[c]) {
        return Err(format!("certification raised cell {c}: {} -> {}", before[c], down[c]));
    }
    Ok(())
}

fn random_cells(rng: &mut SeedStream, max_len: i64) -> CellSet {
    (0..rng.int_range(0, max_len)).map(|_| rng.index(40)).collect()
}

/// Adding a hypothesis set never raises an edge's validity.
pub fn validity_monotonicity(seed: u64) -> Check {
    let mut rng = SeedStream::new(seed, 102);
    let swept = random_cells(&mut rng, 20);
    let origin = (Config::new(vec![0]), Config::new(vec![1]));
    let mut chs: Vec<ChsSet> = Vec::new();
    let mut prev = edge_validity(&swept, &chs);
    for i in 0..rng.int_range(1, 6) as usize {
        let mut cells = random_cells(&mut rng, 8);
        cells.insert(rng.index(40));
        chs.push(ChsSet { cells, origin_edge: origin.clone(), created_iter: i });
        let p = edge_validity(&swept, &chs);
        if !(p <= prev && (0.0..=1.0).contains(&p)) {
            return Err(format!("validity went {prev} -> {p} after adding set {i}"));
        }
        prev = p;
    }
    Ok(())
}

/// Every cell certified free during an episode is truly free, and the
/// known-free set only grows.
pub fn free_certification_soundness(seed: u64) -> Check {
    let variant = Variant::parse("chs+structural").unwrap();
    let domain = if seed % 2 == 0 { Domain::Pipe } else { Domain::Shelf };
    let sc = ScenarioOverrides::default().scenario(domain, variant, seed).map_err(|e| e.to_string())?;
    let mut known = CellSet::new();
    let mut violation = None;
    run_episode_observed(&sc, seed, &SweepCache::new(), &mut |view| {
        if violation.is_some() {
            return;
        }
        let now = view.state.est.known_free();
        if let Some(c) = now.iter().find(|&c| sc.world.is_occupied(c)) {
            violation = Some(format!("iteration {}: occupied cell {c} certified free", view.iter));
        } else if !known.is_subset(&now) {
            violation = Some(format!("iteration {}: known-free set shrank", view.iter));
        }
        known = now;
    })
    .map_err(|e| e.to_string())?;
    violation.map_or(Ok(()), Err)
}

fn random_edge(arm: &ArmModel, rng: &mut SeedStream) -> (Config, Config) {
    let n = arm.num_links();
    let top = arm.steps_per_joint as i64 - 1;
    let a = Config::new((0..n).map(|_| rng.int_range(0, top) as i32).collect());
    let joint = rng.index(n);
    let dir = if a.steps[joint] == 0 || (a.steps[joint] < top as i32 && rng.uniform() < 0.5) { 1 } else { -1 };
    let b = a.apply(Action { joint, dir });
    (a, b)
}

/// Both endpoint footprints lie inside the swept volume of a primitive.
pub fn swept_volume_containment(seed: u64) -> Check {
    let mut rng = SeedStream::new(seed, 103);
    let arm = ArmModel::reference();
    let spec = desk();
    let (a, b) = random_edge(&arm, &mut rng);
    let substeps = 1 + rng.index(16);
    let swept = swept_cells(&arm, &a, &b, &spec, substeps).map_err(|e| e.to_string())?;
    let ends = robot_cells(&arm, &a, &spec).union(&robot_cells(&arm, &b, &spec));
    if ends.is_subset(&swept) {
        Ok(())
    } else {
        Err(format!("{a:?} -> {b:?} with {substeps} substeps drops endpoint cells"))
    }
}

/// `J q̇` matches the finite-difference velocity of a surface point.
pub fn jacobian_finite_difference(seed: u64) -> Check {
    let mut rng = SeedStream::new(seed, 104);
    let arm = ArmModel::reference();
    let q: Vec<f64> = (0..3).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
    let v: Vec<f64> = (0..3).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let link = rng.index(3);
    let side = match rng.index(3) {
        0 => Side::Left,
        1 => Side::Right,
        _ if link == 2 => Side::Tip,
        _ => Side::Left,
    };
    let sp = surface_point_at(&arm, &q, link, side, rng.uniform());
    let jv = point_jacobian(&arm, &q, &sp) * DVector::from_vec(v.clone());
    let jv = Vector2::new(jv[0], jv[1]);
    let h = 1e-6;
    let shifted = |s: f64| {
        let qs: Vec<f64> = q.iter().zip(&v).map(|(a, b)| a + s * b).collect();
        surface_point_at(&arm, &qs, link, side, sp.param).point()
    };
    let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
    let err = (fd - jv).norm() / jv.norm().max(1e-3);
    if err < 1e-4 {
        Ok(())
    } else {
        Err(format!("relative error {err:.2e} at q = {q:?}"))
    }
}

/// After marking where an arm touched one pipe and certifying the corridor
/// it came through, the structural predictor recovers most of that pipe.
/// The unknown prior is 0.1, so only extrapolation can lift a cell to 0.5.
/// Returns the recovered fraction.
pub fn pipe_recovery(seed: u64) -> Result<f64, String> {
    pipe_recovery_with(seed, &PredictorConfig::structural())
}

pub fn pipe_recovery_with(seed: u64, cfg: &PredictorConfig) -> Result<f64, String> {
    let spec = desk();
    let params = SceneParams { pipe_count_range: [1, 4], ..SceneParams::for_domain(Domain::Pipe) };
    let world = generate_scene(&params, &spec, seed).map_err(|e| e.to_string())?;
    let ids = world.objects();
    let id = ids[SeedStream::new(seed, 105).index(ids.len())];
    let cells = world.object_cells(id);
    let coords: Vec<Vec<usize>> = cells.iter().map(|c| spec.coords(c)).collect();
    // the spanning axis is the one the pipe touches at both ends
    let axis = (0..2)
        .find(|&a| coords.iter().any(|c| c[a] == 0) && coords.iter().any(|c| c[a] == spec.dims[a] - 1))
        .ok_or("pipe spans no axis")?;
    let mid = spec.dims[axis] / 2;
    let window = |c: &[usize]| c[axis].abs_diff(mid) <= 1;

    let mut est = OccupancyEstimate::with_prior(spec.clone(), 0.1);
    let touched: CellSet = cells.iter().filter(|&c| window(&spec.coords(c))).collect();
    let corridor: CellSet =
        (0..spec.num_cells()).filter(|&c| window(&spec.coords(c)) && !world.is_occupied(c)).collect();
    est.certify_free(&corridor);
    for c in touched.iter() {
        est.mark_occupied(c);
    }
    let p = predict(&est, cfg);
    let rest: Vec<usize> = cells.difference(&touched).iter().collect();
    if rest.is_empty() {
        return Ok(1.0);
    }
    Ok(rest.iter().filter(|&&c| p[c] >= 0.5).count() as f64 / rest.len() as f64)
}

pub fn pipe_recovery_check(seed: u64) -> Check {
    let f = pipe_recovery(seed)?;
    if f >= 0.6 {
        Ok(())
    } else {
        Err(format!("recovered {:.0}% of the pipe", 100.0 * f))
    }
}
