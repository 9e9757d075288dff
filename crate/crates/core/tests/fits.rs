use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regclust::dist::std_normal;
use regclust::posterior::{adjusted_rand, curve_fit, dahl_partition, warp_draws, warp_mean};
use regclust::{
    run_chain, simulate, BandKind, Curve, Dataset, KnotVector, McmcConfig, Mode, Model,
    ModelConfig, Priors, SimSpec,
};

fn config(mode: Mode) -> ModelConfig {
    ModelConfig {
        shape: KnotVector::equidistant(-5.0, 25.0, 31, 3).unwrap(),
        warp: KnotVector::new(0.0, 20.0, vec![5.0, 10.0, 15.0], 3).unwrap(),
        delta: 5.0,
        positive_amplitude: true,
        mode,
        priors: Priors::default(),
    }
}

fn short(seed: u64) -> McmcConfig {
    McmcConfig {
        iterations: 3000,
        burn_in: 1500,
        thin: 5,
        seed,
        check_state: false,
        ..Default::default()
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

#[test]
fn registration_only_recovers_warps() {
    let spec = SimSpec {
        cluster_sizes: vec![10],
        noise_sd: 0.02,
        warp_sd: 0.8,
        seed: 21,
        ..Default::default()
    };
    let (data, truth) = simulate(&spec).unwrap();
    let cfg = config(Mode::RegistrationOnly);
    let model = Model::new(cfg.clone()).unwrap();
    let trace = run_chain(
        &data,
        cfg,
        McmcConfig {
            iterations: 12000,
            burn_in: 6000,
            ..short(4)
        },
    )
    .unwrap();
    assert!(trace.draws.iter().all(|d| d.num_clusters() == 1));
    let warp = spec.warp_basis().unwrap();
    let times = &spec.times;
    let est: Vec<Vec<f64>> = (0..data.len())
        .map(|i| {
            warp_mean(&trace, &model, i, times, 0.95, BandKind::Pointwise)
                .unwrap()
                .mean
        })
        .collect();
    let tru: Vec<Vec<f64>> = truth
        .phi
        .iter()
        .map(|p| warp.eval(p, times).unwrap())
        .collect();
    // a warp shared by all curves can be absorbed into the shape, so compare
    // departures from the cross-curve average
    let centred = |w: &[Vec<f64>]| -> Vec<f64> {
        let n = w.len() as f64;
        let avg: Vec<f64> = (0..times.len())
            .map(|j| w.iter().map(|r| r[j]).sum::<f64>() / n)
            .collect();
        w.iter()
            .flat_map(|r| r.iter().zip(&avg).map(|(x, m)| x - m).collect::<Vec<_>>())
            .collect()
    };
    let r = pearson(&centred(&est), &centred(&tru));
    assert!(r > 0.95, "correlation {r}");
}

#[test]
fn clustering_only_keeps_identity_warps() {
    let spec = SimSpec {
        cluster_sizes: vec![4, 4],
        seed: 3,
        ..Default::default()
    };
    let (data, _) = simulate(&spec).unwrap();
    let cfg = config(Mode::ClusteringOnly);
    let model = Model::new(cfg.clone()).unwrap();
    let trace = run_chain(
        &data,
        cfg,
        McmcConfig {
            iterations: 400,
            burn_in: 200,
            ..short(1)
        },
    )
    .unwrap();
    let grid: Vec<f64> = (0..=40).map(|j| j as f64 * 0.5).collect();
    for i in 0..data.len() {
        for w in warp_draws(&trace, &model, i, &grid).unwrap() {
            for (a, b) in w.iter().zip(&grid) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn single_draw_fit_is_that_draw() {
    let spec = SimSpec {
        cluster_sizes: vec![3],
        seed: 8,
        ..Default::default()
    };
    let (data, _) = simulate(&spec).unwrap();
    let cfg = config(Mode::Joint);
    let model = Model::new(cfg.clone()).unwrap();
    let trace = run_chain(
        &data,
        cfg,
        McmcConfig {
            iterations: 60,
            burn_in: 59,
            thin: 1,
            ..short(2)
        },
    )
    .unwrap();
    assert_eq!(trace.len(), 1);
    let d = &trace.draws[0];
    let times = &data.curves[0].times;
    let fit = curve_fit(&trace, &model, 0, times, 0.95, BandKind::Simultaneous).unwrap();
    let mu = model.warp().eval(&d.phi[0], times).unwrap();
    let f = regclust::posterior::eval_shape(&model, &d.atoms[d.labels[0]].theta, &mu).unwrap();
    for j in 0..times.len() {
        let want = d.c[0] + d.a[0] * f[j];
        assert!((fit.mean[j] - want).abs() < 1e-12);
        assert_eq!(fit.lower[j], fit.mean[j]);
        assert_eq!(fit.upper[j], fit.mean[j]);
    }
}

#[test]
fn joint_model_separates_distinct_shapes() {
    // one extremum against two: no monotone warp maps one onto the other
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let times: Vec<f64> = (0..=20).map(f64::from).collect();
    let shapes: [fn(f64) -> f64; 2] = [|t| (-(t - 10.0).powi(2) / 8.0).exp(), |t| (t / 3.0).sin()];
    let curves = (0..10)
        .map(|i| {
            let shift = rng.random_range(-1.0..1.0);
            let v = times
                .iter()
                .map(|&t| shapes[i / 5](t + shift) + 0.1 * std_normal(&mut rng))
                .collect();
            Curve::new(format!("c{i}"), times.clone(), v).unwrap()
        })
        .collect();
    let data = Dataset::new(curves).unwrap();
    let truth: Vec<usize> = (0..10).map(|i| i / 5).collect();
    let trace = run_chain(&data, config(Mode::Joint), short(6)).unwrap();
    let dahl = dahl_partition(&trace).unwrap();
    let ari = adjusted_rand(&dahl.labels, &truth).unwrap();
    assert!(ari > 0.99, "ARI {ari}, labels {:?}", dahl.labels);
}
