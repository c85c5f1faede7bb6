//! Temporary diagnostic: per-elevation-band azimuth accuracy.

use nalgebra::DVector;
use rand::rngs::StdRng;
use rand::SeedableRng;
use relnav::mixture::{az_bin_distance, classify, fit_class_database, ClassId};
use relnav::pipeline::{class_center, silhouette_feature};
use relnav::scene::{
    augment_training, bundled_target, rasterize, viewsphere_pose, AugmentConfig, TriMesh,
};
use relnav::Intrinsics;

fn corpus(
    mesh: &TriMesh,
    k: &Intrinsics,
    distance: f64,
    az_bin: f64,
    el_bin: f64,
    d: usize,
) -> Vec<(ClassId, Vec<DVector<f64>>)> {
    let n_az = (360.0 / az_bin).round() as usize;
    let n_el = (180.0 / el_bin).round() as usize;
    let aug = AugmentConfig { morph_radius: 1, tilt_deg: 1.5 };
    let mut corpus = Vec::with_capacity(n_az * n_el);
    for ie in 0..n_el {
        for ia in 0..n_az {
            let id = ClassId { az_bin: ia, el_bin: ie };
            let (az_c, el_c) = class_center(id, az_bin, el_bin);
            let mut features = Vec::new();
            for da in [-az_bin / 4.0, 0.0, az_bin / 4.0] {
                for de in [-el_bin / 4.0, 0.0, el_bin / 4.0] {
                    let pose = viewsphere_pose(az_c + da, el_c + de, distance);
                    let (mask, _) = rasterize(mesh, k, &pose);
                    for variant in augment_training(&mask, &aug) {
                        features.push(silhouette_feature(&variant, d).unwrap());
                    }
                }
            }
            corpus.push((id, features));
        }
    }
    corpus
}

#[test]
#[ignore]
fn probe_az_accuracy_by_el_band() {
    let mesh = bundled_target();
    let k = Intrinsics::new(300.0, 300.0, 160.0, 120.0, 320, 240);
    let d = 25;
    let data = corpus(&mesh, &k, 5.0, 10.0, 10.0, d);
    // split: every 9th sample is test (one augment variant per view)
    let train: Vec<(ClassId, Vec<DVector<f64>>)> = data
        .iter()
        .map(|(id, v)| {
            (
                *id,
                v.iter()
                    .enumerate()
                    .filter(|(i, _)| i % 7 != 3)
                    .map(|(_, f)| f.clone())
                    .collect(),
            )
        })
        .collect();
    let mut rng = StdRng::seed_from_u64(1);
    let db = fit_class_database(&train, 1, 10.0, 10.0, &mut rng).unwrap();
    let mut per_el = vec![(0usize, 0usize, 0usize); 18]; // (n, az_exact, az_within1)
    for (id, v) in &data {
        for (i, f) in v.iter().enumerate() {
            if i % 7 != 3 {
                continue;
            }
            let pred = classify(&db, f).unwrap()[0].0;
            let dist = az_bin_distance(pred.az_bin, id.az_bin, 36);
            let e = &mut per_el[id.el_bin];
            e.0 += 1;
            if dist == 0 {
                e.1 += 1;
            }
            if dist <= 1 {
                e.2 += 1;
            }
        }
    }
    for (ie, (n, ex, w1)) in per_el.iter().enumerate() {
        println!(
            "el_bin {ie:2} (center {:+.0}): n={n} az_exact={:.3} az_within1={:.3}",
            -90.0 + 10.0 * (ie as f64 + 0.5),
            *ex as f64 / *n as f64,
            *w1 as f64 / *n as f64
        );
    }
}

use relnav::pipeline::{class_center as cc2, nees, simulate_frame, Frame, Pipeline, PipelineConfig};
use relnav::scene::{build_keyframe, sample_viewsphere, CorruptionModel, Keyframe};
use relnav::se3::{adjoint, exp_se3, ominus, Pose, Twist};
use nalgebra::Vector6;

#[test]
#[ignore]
fn probe_tracking_first_frames() {
    let mesh = bundled_target();
    let k = Intrinsics::new(2000.0, 2000.0, 320.0, 240.0, 640, 480);
    let keyframes: Vec<Keyframe> = sample_viewsphere(18.0, 18.0, 50.0)
        .iter()
        .enumerate()
        .map(|(i, v)| build_keyframe(&mesh, &k, v, i as u32, 0.02).unwrap())
        .collect();
    let corp = corpus(&mesh, &k, 50.0, 30.0, 30.0, 20);
    let mut rng = StdRng::seed_from_u64(700);
    let class_db = fit_class_database(&corp, 1, 30.0, 30.0, &mut rng).unwrap();
    let mut config = PipelineConfig::new(k);
    config.sigma0_pos = 2.5;
    config.sigma0_vel = 4.0;
    let mut pipeline = Pipeline::new(config, keyframes.clone(), Some(class_db));
    let pose0 = viewsphere_pose(13.0, 4.5, 50.0);
    let rate = 3.5_f64.to_radians();
    let body = Vector6::new(0.0, 0.0, 0.0, 0.0, 0.0, rate);
    let xi = Twist::from_vector(&(adjoint(&pose0) * body));
    let model = CorruptionModel {
        noise_px: 1.0,
        outlier_fraction: 0.2,
        confusion_rate: 0.1,
        ..CorruptionModel::default()
    };
    for i in 0..300usize {
        let t = i as f64 * 0.1;
        let truth = exp_se3(&xi.scale(t)).compose(&pose0);
        let kf = keyframes[pipeline.current_keyframe()].clone();
        let seed = 7000 ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let frame = simulate_frame(&mesh, &kf, &k, &truth, t, &model, seed);
        if i == 50 {
            // dissect this frame: association quality and fit accuracy
            let pred = {
                let st = pipeline.state().unwrap();
                relnav::ekf::predict(st, 0.1, &relnav::ekf::ProcessNoise { sigma2_nu: 1e-4, sigma2_omega: 1e-4 }, relnav::ekf::PoseParam::Matrix).pose
            };
            let ep = ominus(&truth, &pred);
            println!("pred err: rho {:.3} phi {:.2} deg", ep.rho.norm(), ep.phi.norm().to_degrees());
            if let Ok(m) = pipeline.match_by_tracking(&frame, &pred) {
                let good = m.point_pairs.iter().filter(|(cid, mi)| frame.points[*mi].id == *cid).count();
                println!("tracking matches: {} points ({} correct ids), {} lines", m.points.len(), good, m.lines.len());
                let prob = relnav::robust::ReprojectionProblem { k, points: m.points.clone(), lines: vec![] };
                let fit = match relnav::robust::huber_joint_fit(&prob, &pred, &relnav::robust::RobustConfig::huber_joint()) {
                    Ok(est) => Some(est),
                    Err(relnav::robust::RobustError::DidNotConverge(est)) => Some(*est),
                    Err(e) => { println!("tracking fit failed: {e}"); None }
                };
                if let Some(est) = fit {
                    let e = ominus(&truth, &est.pose);
                    println!("tracking-fit err: rho {:.3} phi {:.2} deg sigma {:.3} rmse {:.3}", e.rho.norm(), e.phi.norm().to_degrees(), est.sigma, est.rmse);
                }
            }
            if let Ok(m) = pipeline.match_by_detection(&frame) {
                println!("detection matches: {} points {} lines", m.points.len(), m.lines.len());
                let prob = relnav::robust::ReprojectionProblem { k, points: m.points.clone(), lines: vec![] };
                match relnav::robust::huber_joint_fit(&prob, &pred, &relnav::robust::RobustConfig::huber_joint()) {
                    Ok(est) => {
                        let e = ominus(&truth, &est.pose);
                        println!("detection-fit err: rho {:.3} phi {:.2} deg sigma {:.3} rmse {:.3}", e.rho.norm(), e.phi.norm().to_degrees(), est.sigma, est.rmse);
                    }
                    Err(e) => println!("detection fit failed: {e}"),
                }
                match relnav::robust::huber_joint_fit(&prob, &truth, &relnav::robust::RobustConfig::huber_joint()) {
                    Ok(est) => {
                        let e = ominus(&truth, &est.pose);
                        println!("truth-init fit err: rho {:.3} phi {:.2} deg sigma {:.3}", e.rho.norm(), e.phi.norm().to_degrees(), est.sigma);
                    }
                    Err(e) => println!("truth-init fit failed: {e}"),
                }
            }
            let st = pipeline.state().unwrap();
            println!("twist est  {:?}", st.twist.vector().transpose());
            println!("twist true {:?}", xi.vector().transpose());
        }
        let r = pipeline.step(&frame, Some(&truth)).unwrap();
        let (et, er) = r.truth_error.unwrap();
        let e0 = ominus(&truth, &r.state.pose);
        println!(
            "i={i:3} kf={:3} det={} reinit={} pm={:2}/{:2} em={:2}/{:2} pf={} ef={} et={et:8.3} er={:7.2} nees={:9.2} rho=[{:+.2},{:+.2},{:+.2}]",
            r.keyframe_id, r.by_detection as u8, r.reinitialized as u8,
            r.n_point_inliers, r.n_point_matches, r.n_edge_inliers, r.n_edge_matches,
            r.points_fused as u8, r.edges_fused as u8,
            er.to_degrees(), nees(&r.state, &truth, &xi),
            e0.rho[0], e0.rho[1], e0.rho[2],
        );
    }
    let _ = cc2;
}
