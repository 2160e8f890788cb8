use std::path::Path;

use sarstereo::accuracy::{accuracy_grid, grid_csv, normalized_height_accuracy, CSV_HEADER};
use sarstereo::evaluation::{plane_distances, stats, EvalStats, PointCloud, STATS_CSV_HEADER};
use sarstereo::geometry::{GroundPoint, ImagePoint, OpticalSensorModel, SarSensorModel};
use sarstereo::intersection::{intersect, ObservationWeights};
use sarstereo::matching::{
    detect_keypoints, run_matching, sar_matching_grid, tie_points_csv, HeightPrior, KeypointOutcome, MatchRun,
};
use sarstereo::raster::Raster;
use sarstereo::scene_sim::{
    ground_truth_correspondences, keypoint_truth, make_scene, render_optical, render_sar, standard_scene, truth_csv,
    HeightField, Scene, SarRender, Sensors, TruthStatus,
};

use crate::artifacts::Artifacts;
use crate::config::{Config, SarChannel};
use crate::CliError;

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn required<'a>(p: &'a Option<std::path::PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| CliError::Config(format!("`{key}`: required by this command")))
}

fn sar_model(r: &Raster, key: &str) -> Result<SarSensorModel, CliError> {
    r.sidecar.sar.clone().ok_or_else(|| CliError::Data(format!("{key}: raster sidecar has no SAR model")))
}

fn opt_model(r: &Raster, key: &str) -> Result<OpticalSensorModel, CliError> {
    r.sidecar.optical.clone().ok_or_else(|| CliError::Data(format!("{key}: raster sidecar has no optical model")))
}

pub fn analyze_accuracy(cfg: &Config, out: &mut Artifacts) -> Result<(), CliError> {
    let mut csv = String::from("name,mode,theta_deg,alpha_deg,hs,ho,sigma_ratio\n");
    for c in &cfg.accuracy.cases {
        let ratio = normalized_height_accuracy(&c.stereo_config())
            .map(|v| format!("{v:.6}"))
            .unwrap_or_else(|_| "inf".into());
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.name,
            c.mode.as_str(),
            c.theta_deg,
            c.alpha_deg,
            c.hs,
            c.ho,
            ratio
        ));
    }
    out.add("accuracy_cases.csv", csv);
    if !cfg.accuracy.grids.is_empty() {
        let mut all = format!("{CSV_HEADER}\n");
        for g in &cfg.accuracy.grids {
            let body = grid_csv(g.mode, &accuracy_grid(g));
            all.push_str(body.split_once('\n').map_or("", |(_, rest)| rest));
        }
        out.add("accuracy_grid.csv", all);
    }
    Ok(())
}

struct Simulation {
    scene: Scene,
    sensors: Sensors,
    optical: Raster,
    sar: SarRender,
}

fn simulate_scene(cfg: &Config) -> Result<Simulation, CliError> {
    let sim = &cfg.simulation;
    let spec = sim.scene.clone().unwrap_or_else(|| standard_scene(sim.seed));
    let scene = make_scene(&spec).map_err(data)?;
    let sensors = sim.setup.build(&spec).map_err(data)?;
    let optical = render_optical(&scene, &sensors.opt, sensors.opt_shape.0, sensors.opt_shape.1, &sim.noise).map_err(data)?;
    let sar = render_sar(&scene, &sensors.sar, sensors.sar_shape.0, sensors.sar_shape.1, &sim.noise).map_err(data)?;
    Ok(Simulation { scene, sensors, optical, sar })
}

pub fn simulate(cfg: &Config, out: &mut Artifacts) -> Result<(), CliError> {
    let s = simulate_scene(cfg)?;
    let hf = HeightField::from_raster(&s.scene.dem).map_err(data)?;
    let (x0, y0, x1, y1) = hf.bounds();
    let step = cfg.simulation.truth_spacing;
    let mut pts = Vec::new();
    let mut y = y0 + step / 2.0;
    while y < y1 {
        let mut x = x0 + step / 2.0;
        while x < x1 {
            if let Some(h) = hf.height_at(x, y) {
                pts.push(GroundPoint::new(x, y, h));
            }
            x += step;
        }
        y += step;
    }
    let truth: Vec<_> = ground_truth_correspondences(&hf, &s.sensors, &pts)
        .into_iter()
        .filter(|(_, st)| *st == TruthStatus::Ok)
        .map(|(c, _)| c)
        .collect();
    out.add_raster("dem.rflt", &s.scene.dem);
    out.add_raster("reflectance.rflt", &s.scene.reflectance);
    out.add_raster("optical.rflt", &s.optical);
    out.add_raster("sar.rflt", &s.sar.intensity);
    out.add_raster("sar_low_speckle.rflt", &s.sar.low_speckle);
    out.add("truth.csv", truth_csv(&truth));
    out.add("reference.xyz", hf.reference_cloud(cfg.simulation.reference_stride).to_xyz());
    Ok(())
}

pub fn detect(cfg: &Config, out: &mut Artifacts) -> Result<(), CliError> {
    let sar = out.load_raster(required(&cfg.inputs.sar, "inputs.sar")?)?;
    let grid = sar_matching_grid(&sar, cfg.matching.sar_to_db);
    let kps = detect_keypoints(&grid, &cfg.matching.harris, cfg.matching.template_size / 2);
    let mut csv = String::from("kp_id,r_s,c_s,response\n");
    for (i, k) in kps.iter().enumerate() {
        csv.push_str(&format!("{i},{},{},{}\n", k.sar.row, k.sar.col, k.response));
    }
    out.add("keypoints.csv", csv);
    Ok(())
}

fn prior(cfg: &Config, out: &mut Artifacts) -> Result<HeightPrior, CliError> {
    Ok(match &cfg.inputs.dem {
        Some(p) => HeightPrior::Dem(out.load_raster(p)?),
        None => HeightPrior::Plane(cfg.prior_height),
    })
}

fn status_csv(run: &MatchRun) -> String {
    let mut s = String::from("kp_id,r_s,c_s,status,d_outlier\n");
    for (i, (k, o)) in run.keypoints.iter().zip(&run.outcomes).enumerate() {
        let (status, d) = match o {
            KeypointOutcome::Kept(t) => ("kept".to_string(), t.d_outlier.to_string()),
            KeypointOutcome::Outlier { d_outlier } => ("outlier".to_string(), d_outlier.to_string()),
            KeypointOutcome::Failed(e) => (format!("{e:?}").split('(').next().unwrap_or("error").to_string(), String::new()),
        };
        s.push_str(&format!("{i},{},{},{status},{d}\n", k.sar.row, k.sar.col));
    }
    s
}

fn match_rasters(
    cfg: &Config,
    sar: &Raster,
    opt: &Raster,
    sar_m: &SarSensorModel,
    opt_m: &OpticalSensorModel,
    prior: &HeightPrior,
    out: &mut Artifacts,
) -> Result<MatchRun, CliError> {
    let run = run_matching(sar, opt, sar_m, opt_m, prior, &cfg.matching).map_err(data)?;
    out.add("tie_points.csv", tie_points_csv(&run.tie_points()));
    out.add("keypoint_status.csv", status_csv(&run));
    Ok(run)
}

pub fn match_cmd(cfg: &Config, out: &mut Artifacts) -> Result<(), CliError> {
    let sar = out.load_raster(required(&cfg.inputs.sar, "inputs.sar")?)?;
    let opt = out.load_raster(required(&cfg.inputs.optical, "inputs.optical")?)?;
    let (sm, om) = (sar_model(&sar, "inputs.sar")?, opt_model(&opt, "inputs.optical")?);
    let prior = prior(cfg, out)?;
    match_rasters(cfg, &sar, &opt, &sm, &om, &prior, out)?;
    Ok(())
}

/// Rows of a tie-point CSV: id, SAR pixel, optical pixel, ground point.
type TieRow = (String, ImagePoint, ImagePoint, GroundPoint);

fn parse_tie_points(text: &[u8], name: &str) -> Result<Vec<TieRow>, CliError> {
    let mut rdr = csv::Reader::from_reader(text);
    let headers = rdr.headers().map_err(|e| CliError::Data(format!("{name}: {e}")))?.clone();
    let col = |k: &str| {
        headers.iter().position(|h| h == k).ok_or_else(|| CliError::Data(format!("{name}: missing column `{k}`")))
    };
    let idx = [col("kp_id")?, col("r_s")?, col("c_s")?, col("r_o")?, col("c_o")?, col("x")?, col("y")?, col("h")?];
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Data(format!("{name}: {e}")))?;
        let num = |i: usize| -> Result<f64, CliError> {
            rec.get(idx[i])
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| CliError::Data(format!("{name}: line {}: bad value in column {}", line + 2, i)))
        };
        rows.push((
            rec.get(idx[0]).unwrap_or_default().to_string(),
            ImagePoint { row: num(1)?, col: num(2)? },
            ImagePoint { row: num(3)?, col: num(4)? },
            GroundPoint::new(num(5)?, num(6)?, num(7)?),
        ));
    }
    Ok(rows)
}

pub fn intersect_cmd(cfg: &Config, out: &mut Artifacts) -> Result<(), CliError> {
    let sar = out.load_raster(required(&cfg.inputs.sar, "inputs.sar")?)?;
    let opt = out.load_raster(required(&cfg.inputs.optical, "inputs.optical")?)?;
    let (sm, om) = (sar_model(&sar, "inputs.sar")?, opt_model(&opt, "inputs.optical")?);
    let path = required(&cfg.inputs.points, "inputs.points")?;
    let rows = parse_tie_points(&out.read_input(path)?, &path.display().to_string())?;
    let weights = cfg.weights.unwrap_or_else(|| ObservationWeights::half_pixel(&sm));
    let mut csv = String::from("kp_id,status,x,y,h,sigma_x,sigma_y,sigma_h,iterations,rms_residual\n");
    for (id, s, o, g) in rows {
        match intersect(&sm, &om, sm.to_observation(s), o, g, weights, cfg.solver) {
            Ok(r) => {
                let c = r.covariance;
                csv.push_str(&format!(
                    "{id},ok,{},{},{},{},{},{},{},{}\n",
                    r.point.x,
                    r.point.y,
                    r.point.h,
                    c[(0, 0)].sqrt(),
                    c[(1, 1)].sqrt(),
                    c[(2, 2)].sqrt(),
                    r.iterations,
                    r.rms_residual
                ));
            }
            Err(e) => {
                let status = format!("{e:?}");
                let status = status.split(['(', ' ', '{']).next().unwrap_or("error");
                csv.push_str(&format!("{id},{status},,,,,,,,\n"));
            }
        }
    }
    out.add("intersections.csv", csv);
    Ok(())
}

fn parse_points(bytes: &[u8], name: &str) -> Result<Vec<GroundPoint>, CliError> {
    if bytes.starts_with(b"kp_id,") {
        return Ok(parse_tie_points(bytes, name)?.into_iter().map(|r| r.3).collect());
    }
    let text = std::str::from_utf8(bytes).map_err(|e| CliError::Data(format!("{name}: {e}")))?;
    Ok(PointCloud::parse_xyz(text).map_err(|e| CliError::Data(format!("{name}: {e}")))?.points().to_vec())
}

fn evaluate_points(points: &[GroundPoint], cloud: &PointCloud, k: usize, out: &mut Artifacts) -> Result<EvalStats, CliError> {
    let dists = plane_distances(points, cloud, k);
    let mut csv = String::from("id,x,y,h,distance\n");
    let mut ok = Vec::new();
    for (i, (p, d)) in points.iter().zip(&dists).enumerate() {
        let d = match d {
            Ok(d) => {
                ok.push(*d);
                d.to_string()
            }
            Err(_) => String::new(),
        };
        csv.push_str(&format!("{i},{},{},{},{d}\n", p.x, p.y, p.h));
    }
    let st = stats(&ok).map_err(data)?;
    out.add("distances.csv", csv);
    out.add("eval_stats.csv", format!("{STATS_CSV_HEADER}\n{}\n", st.csv_row()));
    Ok(st)
}

pub fn evaluate(cfg: &Config, out: &mut Artifacts) -> Result<(), CliError> {
    let pp = required(&cfg.inputs.points, "inputs.points")?;
    let points = parse_points(&out.read_input(pp)?, &pp.display().to_string())?;
    let rp = required(&cfg.inputs.reference, "inputs.reference")?;
    let cloud = parse_points(&out.read_input(rp)?, &rp.display().to_string())?;
    evaluate_points(&points, &PointCloud::new(cloud), cfg.evaluation.neighbours, out)?;
    Ok(())
}

/// Matching plus evaluation, either on given rasters or on a simulated scene.
/// Simulated runs also report each keypoint against the scene's truth.
pub fn pipeline(cfg: &Config, out: &mut Artifacts) -> Result<(), CliError> {
    if cfg.inputs.sar.is_some() || cfg.inputs.optical.is_some() {
        let sar = out.load_raster(required(&cfg.inputs.sar, "inputs.sar")?)?;
        let opt = out.load_raster(required(&cfg.inputs.optical, "inputs.optical")?)?;
        let (sm, om) = (sar_model(&sar, "inputs.sar")?, opt_model(&opt, "inputs.optical")?);
        let prior = prior(cfg, out)?;
        let run = match_rasters(cfg, &sar, &opt, &sm, &om, &prior, out)?;
        if let Some(rp) = &cfg.inputs.reference {
            let cloud = parse_points(&out.read_input(rp)?, &rp.display().to_string())?;
            let pts: Vec<_> = run.tie_points().iter().map(|t| t.ground).collect();
            evaluate_points(&pts, &PointCloud::new(cloud), cfg.evaluation.neighbours, out)?;
        }
        return Ok(());
    }

    let s = simulate_scene(cfg)?;
    let sar = match cfg.simulation.sar_channel {
        SarChannel::Intensity => &s.sar.intensity,
        SarChannel::LowSpeckle => &s.sar.low_speckle,
    };
    let prior = prior(cfg, out)?;
    let run = match_rasters(cfg, sar, &s.optical, &s.sensors.sar, &s.sensors.opt, &prior, out)?;
    let hf = HeightField::from_raster(&s.scene.dem).map_err(data)?;
    let cloud = hf.reference_cloud(cfg.simulation.reference_stride);
    let tie = run.tie_points();
    let pts: Vec<_> = tie.iter().map(|t| t.ground).collect();
    evaluate_points(&pts, &cloud, cfg.evaluation.neighbours, out)?;

    let mut csv = String::from("kp_id,r_s,c_s,status,r_o,c_o,x,y,h,err_px\n");
    for (i, (k, o)) in run.keypoints.iter().zip(&run.outcomes).enumerate() {
        match keypoint_truth(&hf, &s.sensors, k.sar, cfg.matching.template_size) {
            Ok(c) => {
                let err = match o {
                    KeypointOutcome::Kept(t) => t.opt.distance(&c.opt).to_string(),
                    _ => String::new(),
                };
                csv.push_str(&format!(
                    "{i},{},{},ok,{},{},{},{},{},{err}\n",
                    k.sar.row, k.sar.col, c.opt.row, c.opt.col, c.ground.x, c.ground.y, c.ground.h
                ));
            }
            Err(st) => csv.push_str(&format!("{i},{},{},{},,,,,,\n", k.sar.row, k.sar.col, st.as_str())),
        }
    }
    out.add("keypoint_truth.csv", csv);
    Ok(())
}
