use score_bridge::bridge::{BridgeProposal, ProposalKind};
use score_bridge::models::OrnsteinUhlenbeck;
use score_bridge::montecarlo::{ess_proportion, importance_weights};
use score_bridge::nn::Arch;
use score_bridge::score::{train_backward_score, InitialState, TrainConfig};
use score_bridge::sde::{simulate_forward, TimeGrid};
use score_bridge::{AdamParams64, RngSource};

#[test]
#[ignore]
fn probe_training_quality() {
    let model = OrnsteinUhlenbeck::new(0.0, 2.0, 1).unwrap();
    let grid = TimeGrid::uniform(1.0, 50).unwrap();
    let config = TrainConfig {
        iterations: 500,
        paths_per_iter: 100,
        grid: grid.clone(),
        x0: InitialState::Fixed(vec![1.0]),
        seed: RngSource::new(7),
        adam: AdamParams64::default(),
        arch: Arch::new(1, false),
    };
    let t0 = std::time::Instant::now();
    let (net, report) = train_backward_score(&model, &config).unwrap();
    println!("training took {:?}", t0.elapsed());
    println!(
        "loss first 5: {:?}, last 5: {:?}",
        &report.losses[..5],
        &report.losses[495..]
    );

    // on-path weighted RMSE vs closed form
    let ens = simulate_forward(&model, &[1.0], &grid, 256, RngSource::new(1234)).unwrap();
    let mut err = 0.0;
    let mut mag = 0.0;
    for m in 1..=50 {
        let t = grid.time(m);
        for p in 0..256 {
            let x = ens.state(p, m);
            let s_true = model.transition_score(t, x, &[1.0]).unwrap()[0];
            let s_net = net.forward(t, x, None).unwrap()[0];
            err += (s_net - s_true) * (s_net - s_true);
            mag += s_true * s_true;
        }
    }
    println!("relative RMSE = {}", (err / mag).sqrt());

    // ESS comparison
    let t1 = std::time::Instant::now();
    let prop =
        BridgeProposal::backward(&model, grid.clone(), vec![1.0], vec![1.0], &net).unwrap();
    let ens = score_bridge::bridge::simulate_proposal(&prop, 1024, RngSource::new(5)).unwrap();
    let w = importance_weights(&prop, ens).unwrap();
    println!("learned ESS = {} ({:?})", ess_proportion(&w).unwrap(), t1.elapsed());

    for kind in [
        ProposalKind::ForwardDiffusion,
        ProposalKind::ModifiedDiffusionBridge,
        ProposalKind::ClarkDelyonHu,
    ] {
        let prop =
            BridgeProposal::baseline(kind, &model, grid.clone(), vec![1.0], vec![1.0]).unwrap();
        let ens = score_bridge::bridge::simulate_proposal(&prop, 1024, RngSource::new(5)).unwrap();
        let w = importance_weights(&prop, ens).unwrap();
        println!("{} ESS = {}", kind.label(), ess_proportion(&w).unwrap());
    }

    // exact score oracle ESS
    let oracle = score_bridge::models::OuTransitionScore {
        model: &model,
        x0: vec![1.0],
    };
    let prop = BridgeProposal::backward(&model, grid, vec![1.0], vec![1.0], &oracle).unwrap();
    let ens = score_bridge::bridge::simulate_proposal(&prop, 1024, RngSource::new(5)).unwrap();
    let w = importance_weights(&prop, ens).unwrap();
    println!("oracle ESS = {}", ess_proportion(&w).unwrap());
}

#[test]
#[ignore]
fn probe_nn_costs() {
    use score_bridge::nn::ScoreNet;
    let net = ScoreNet::<f64>::init(Arch::new(1, false), 3).unwrap();
    let xs: Vec<f64> = (0..100).map(|i| (i as f64) * 0.01).collect();
    let mut out = vec![0.0; 100];
    let reps = 25_000; // = 500 iters x 50 intervals
    let t0 = std::time::Instant::now();
    for _ in 0..reps {
        net.forward_batch(0.5, &xs, None, &mut out).unwrap();
    }
    println!("forward only: {:?}", t0.elapsed());
    let mut grad = vec![0.0; net.params().len()];
    let mut trace = score_bridge::nn::ForwardTrace::new();
    let t0 = std::time::Instant::now();
    for _ in 0..reps {
        let o = net.forward_traced(&mut trace, 0.5, &xs, None).unwrap();
        net.backward(&mut trace, &o, &mut grad);
    }
    println!("forward+backward: {:?}", t0.elapsed());
    let mut trace = score_bridge::nn::ForwardTrace::new();
    let t0 = std::time::Instant::now();
    for _ in 0..reps {
        net.forward_batch_reusing(&mut trace, 0.5, &xs, None, &mut out).unwrap();
    }
    println!("forward reusing: {:?}", t0.elapsed());
}

#[test]
#[ignore]
fn probe_dot_throughput() {
    use std::hint::black_box;
    let a: Vec<f64> = (0..128).map(|i| i as f64 * 0.013).collect();
    let b: Vec<f64> = (0..128).map(|i| i as f64 * 0.007 - 0.4).collect();
    let t0 = std::time::Instant::now();
    let mut acc = 0.0f64;
    for _ in 0..1_000_000u64 {
        acc += score_bridge::linalg::dot(black_box(&a), black_box(&b));
    }
    let dt = t0.elapsed();
    println!("dot128 x 1e6: {:?} -> {:.2} Gflop/s (acc {acc})", dt, 256.0e6 / dt.as_secs_f64() / 1e9);

    // emulate the head linear layer: batch 100, 128->128
    let w: Vec<f64> = (0..128 * 128).map(|i| (i % 97) as f64 * 1e-3).collect();
    let x: Vec<f64> = (0..100 * 128).map(|i| (i % 89) as f64 * 1e-3).collect();
    let mut y = vec![0.0f64; 100 * 128];
    let t0 = std::time::Instant::now();
    for _ in 0..2000u64 {
        for r in 0..100 {
            let xr = &x[r * 128..(r + 1) * 128];
            for o in 0..128 {
                y[r * 128 + o] = score_bridge::linalg::dot(&w[o * 128..(o + 1) * 128], xr);
            }
        }
        black_box(&y);
    }
    let dt = t0.elapsed();
    println!("linear128 x 2000: {:?} -> {:.2} Gflop/s", dt, 2000.0 * 100.0 * 128.0 * 256.0 / dt.as_secs_f64() / 1e9);
}

#[test]
#[ignore]
fn probe_linear_kernel() {
    use score_bridge::nn::ScoreNet;
    use std::hint::black_box;
    // head-sized single layer: 64 -> 128 and 128 -> 128 dominate
    let arch = Arch {
        dim: 1,
        conditioned_on_x0: false,
        encode_dim: 2,
        time_hidden: vec![],
        time_embed: 1,
        state_hidden: vec![],
        state_embed: 127,
        head_hidden: vec![128, 128],
        leaky_slope: 0.01,
    };
    let net = ScoreNet::<f64>::init(arch, 3).unwrap();
    let xs: Vec<f64> = (0..100).map(|i| (i as f64) * 0.01).collect();
    let mut out = vec![0.0; 100];
    let reps = 25_000;
    let t0 = std::time::Instant::now();
    for _ in 0..reps {
        net.forward_batch(0.5, black_box(&xs), None, &mut out).unwrap();
    }
    let dt = t0.elapsed();
    // flops: state 1->127 (127), head 128*128 + 128*128 + 128 per row
    let flops_per_row = 2.0 * (127.0 + 128.0 * 128.0 * 2.0 + 128.0) as f64;
    println!(
        "head-dominated forward: {:?} -> {:.2} Gflop/s",
        dt,
        reps as f64 * 100.0 * flops_per_row / dt.as_secs_f64() / 1e9
    );
}

fn rmse_of(net: &score_bridge::nn::ScoreNet<f64>, model: &OrnsteinUhlenbeck<f64>, grid: &TimeGrid<f64>) -> f64 {
    let ens = simulate_forward(model, &[1.0], grid, 256, RngSource::new(1234)).unwrap();
    let (mut err, mut mag) = (0.0, 0.0);
    for m in 1..=grid.steps() {
        let t = grid.time(m);
        for p in 0..256 {
            let x = ens.state(p, m);
            let s_true = model.transition_score(t, x, &[1.0]).unwrap()[0];
            let s_net = net.forward(t, x, None).unwrap()[0];
            err += (s_net - s_true) * (s_net - s_true);
            mag += s_true * s_true;
        }
    }
    (err / mag).sqrt()
}

#[test]
#[ignore]
fn probe_arch_variants() {
    let model = OrnsteinUhlenbeck::new(0.0, 2.0, 1).unwrap();
    let grid = TimeGrid::uniform(1.0, 50).unwrap();
    let variants: Vec<(&str, Arch)> = vec![
        ("default", Arch::new(1, false)),
        ("enc64", {
            let mut a = Arch::new(1, false);
            a.encode_dim = 64;
            a
        }),
        ("enc64-state64", {
            let mut a = Arch::new(1, false);
            a.encode_dim = 64;
            a.state_hidden = vec![64];
            a.time_hidden = vec![64];
            a
        }),
        ("lr005", Arch::new(1, false)),
    ];
    for (name, arch) in variants {
        let mut adam = AdamParams64::default();
        if name == "lr005" {
            adam.learning_rate = 0.005;
        }
        let config = TrainConfig {
            iterations: 500,
            paths_per_iter: 100,
            grid: grid.clone(),
            x0: InitialState::Fixed(vec![1.0]),
            seed: RngSource::new(7),
            adam,
            arch,
        };
        let t0 = std::time::Instant::now();
        let (net, _) = train_backward_score(&model, &config).unwrap();
        let rmse = rmse_of(&net, &model, &grid);
        let prop = BridgeProposal::backward(&model, grid.clone(), vec![1.0], vec![1.0], &net).unwrap();
        let ens = score_bridge::bridge::simulate_proposal(&prop, 1024, RngSource::new(5)).unwrap();
        let w = importance_weights(&prop, ens).unwrap();
        println!(
            "{name}: rmse {rmse:.4}, ESS {:.4}, {:?}",
            ess_proportion(&w).unwrap(),
            t0.elapsed()
        );
    }
}

#[test]
#[ignore]
fn probe_forward_stage() {
    use score_bridge::score::train_forward_score;
    let model = OrnsteinUhlenbeck::new(0.0, 2.0, 1).unwrap();
    let grid = TimeGrid::uniform(1.0, 50).unwrap();
    let config = TrainConfig {
        iterations: 500,
        paths_per_iter: 100,
        grid: grid.clone(),
        x0: InitialState::Fixed(vec![1.0]),
        seed: RngSource::new(7),
        adam: AdamParams64::default(),
        arch: Arch::new(1, false),
    };
    let (bnet, _) = train_backward_score(&model, &config).unwrap();
    let mut cfg2 = config.clone();
    cfg2.seed = RngSource::new(8);
    let t0 = std::time::Instant::now();
    let (fnet, _) = train_forward_score(&model, &bnet, &[1.0], &[1.0], &cfg2).unwrap();
    println!("stage2 took {:?}", t0.elapsed());

    // composed forward drift vs closed-form conditioned drift on learned-forward paths
    let prop = BridgeProposal::forward(&model, grid.clone(), vec![1.0], vec![1.0], &bnet, &fnet).unwrap();
    let ens = score_bridge::bridge::simulate_proposal(&prop, 256, RngSource::new(42)).unwrap();
    let (mut err, mut mag) = (0.0, 0.0);
    for m in 0..grid.steps() {
        let t = grid.time(m);
        for p in 0..256 {
            let x = ens.state(p, m);
            let got = score_bridge::bridge::forward_bridge_drift(&fnet, &bnet, &model, 1.0, t, x)[0];
            let want = -2.0 * x[0] + model.doob_gradient(t, x, &[1.0], 1.0).unwrap()[0];
            err += (got - want) * (got - want);
            mag += want * want;
        }
    }
    println!("drift relative RMSE = {:.4}", (err / mag).sqrt());
    let w = importance_weights(&prop, score_bridge::bridge::simulate_proposal(&prop, 1024, RngSource::new(5)).unwrap()).unwrap();
    println!("learned_forward ESS = {:.4}", ess_proportion(&w).unwrap());
}

#[test]
#[ignore]
fn probe_forward_stage_oracle() {
    use score_bridge::models::{OuBridgeMarginalScore, OuTransitionScore};
    use score_bridge::nn::ScoreFunction;
    use score_bridge::score::train_forward_score;

    let model = OrnsteinUhlenbeck::new(0.0, 2.0, 1).unwrap();
    let grid = TimeGrid::uniform(1.0, 50).unwrap();
    let horizon = 1.0;
    let (x0, xt) = (vec![1.0], vec![1.0]);
    let oracle_s = OuTransitionScore { model: &model, x0: x0.clone() };
    let oracle_star = OuBridgeMarginalScore {
        model: &model,
        x0: x0.clone(),
        x_terminal: xt.clone(),
        horizon,
    };

    // empirical stage-2 loss of an arbitrary candidate, by hand
    let prop = BridgeProposal::backward(&model, grid.clone(), x0.clone(), xt.clone(), &oracle_s).unwrap();
    let ens = score_bridge::bridge::simulate_backward_bridge(&prop, 512, RngSource::new(3)).unwrap();
    let dt = grid.dt();
    let loss_of = |cand: &dyn ScoreFunction<f64>| -> f64 {
        let mut loss = 0.0;
        for m in 1..grid.steps() {
            let (tp, tc) = (grid.time(m - 1), grid.time(m));
            let c = (horizon - tc) / (horizon - tp);
            let mut acc = 0.0;
            for p in 0..512 {
                let zp = ens.state(p, m - 1);
                let zc = ens.state(p, m);
                let b = score_bridge::bridge::backward_drift(&oracle_s, &model, horizon, tp, zp)[0];
                let g = -(zc[0] - zp[0] - dt * b) / (dt * c);
                let mut s = [0.0];
                cand.score(horizon - tc, zc, &mut s);
                acc += (s[0] - g) * (s[0] - g);
            }
            loss += dt / 2.0 * acc / 512.0;
        }
        loss
    };
    println!("loss at oracle s*: {:.4}", loss_of(&oracle_star));

    let config = TrainConfig {
        iterations: 500,
        paths_per_iter: 100,
        grid: grid.clone(),
        x0: InitialState::Fixed(x0.clone()),
        seed: RngSource::new(8),
        adam: AdamParams64::default(),
        arch: Arch::new(1, false),
    };
    let (fnet, report) = train_forward_score(&model, &oracle_s, &x0, &xt, &config).unwrap();
    println!(
        "loss first 3 {:?} last 3 {:?}",
        &report.losses[..3],
        &report.losses[497..]
    );
    println!("loss at trained net: {:.4}", loss_of(&fnet));

    // drift RMSE with oracle backward + trained forward
    let prop_f = BridgeProposal::forward(&model, grid.clone(), x0.clone(), xt.clone(), &oracle_s, &fnet).unwrap();
    let ens_f = score_bridge::bridge::simulate_proposal(&prop_f, 256, RngSource::new(42)).unwrap();
    let (mut err, mut mag) = (0.0, 0.0);
    for m in 0..grid.steps() {
        let t = grid.time(m);
        for p in 0..256 {
            let x = ens_f.state(p, m);
            let got = score_bridge::bridge::forward_bridge_drift(&fnet, &oracle_s, &model, horizon, t, x)[0];
            let want = -2.0 * x[0] + model.doob_gradient(t, x, &xt, horizon).unwrap()[0];
            err += (got - want) * (got - want);
            mag += want * want;
        }
    }
    println!("drift relative RMSE (oracle backward) = {:.4}", (err / mag).sqrt());
    let w = importance_weights(&prop_f, score_bridge::bridge::simulate_proposal(&prop_f, 1024, RngSource::new(5)).unwrap()).unwrap();
    println!("learned_forward (oracle bwd) ESS = {:.4}", ess_proportion(&w).unwrap());
}

#[test]
#[ignore]
fn probe_forward_proposal_with_both_oracles() {
    use score_bridge::models::{OuBridgeMarginalScore, OuTransitionScore};
    let model = OrnsteinUhlenbeck::new(0.0, 2.0, 1).unwrap();
    let grid = TimeGrid::uniform(1.0, 50).unwrap();
    let horizon = 1.0;
    let (x0, xt) = (vec![1.0], vec![1.0]);
    let oracle_s = OuTransitionScore { model: &model, x0: x0.clone() };
    let oracle_star = OuBridgeMarginalScore {
        model: &model,
        x0: x0.clone(),
        x_terminal: xt.clone(),
        horizon,
    };
    let prop = BridgeProposal::forward(&model, grid.clone(), x0.clone(), xt.clone(), &oracle_s, &oracle_star).unwrap();
    let ens = score_bridge::bridge::simulate_proposal(&prop, 1024, RngSource::new(5)).unwrap();
    let w = importance_weights(&prop, ens).unwrap();
    println!("both-oracle learned_forward ESS = {:.4}", ess_proportion(&w).unwrap());
}

#[test]
#[ignore]
fn probe_forward_stage_per_step() {
    use score_bridge::score::train_forward_score;
    let model = OrnsteinUhlenbeck::new(0.0, 2.0, 1).unwrap();
    let grid = TimeGrid::uniform(1.0, 50).unwrap();
    let horizon = 1.0;
    let config = TrainConfig {
        iterations: 500,
        paths_per_iter: 100,
        grid: grid.clone(),
        x0: InitialState::Fixed(vec![1.0]),
        seed: RngSource::new(7),
        adam: AdamParams64::default(),
        arch: Arch::new(1, false),
    };
    let (bnet, _) = train_backward_score(&model, &config).unwrap();
    let mut cfg2 = config.clone();
    cfg2.seed = RngSource::new(8);
    let (fnet, _) = train_forward_score(&model, &bnet, &[1.0], &[1.0], &cfg2).unwrap();
    let prop = BridgeProposal::forward(&model, grid.clone(), vec![1.0], vec![1.0], &bnet, &fnet).unwrap();
    let ens = score_bridge::bridge::simulate_proposal(&prop, 512, RngSource::new(42)).unwrap();
    for m in [0usize, 1, 2, 5, 10, 25, 40, 45, 48, 49] {
        let t = grid.time(m);
        let (mut err2, mut mag2, mut xbar) = (0.0, 0.0, 0.0);
        for p in 0..512 {
            let x = ens.state(p, m);
            let got = score_bridge::bridge::forward_bridge_drift(&fnet, &bnet, &model, horizon, t, x)[0];
            let want = -2.0 * x[0] + model.doob_gradient(t, x, &[1.0], horizon).unwrap()[0];
            err2 += (got - want) * (got - want);
            mag2 += want * want;
            xbar += x[0];
        }
        println!(
            "m={m:2} t={t:.2}: drift rms err {:8.3} vs mag {:8.3}, mean x {:.3}",
            (err2 / 512.0).sqrt(),
            (mag2 / 512.0).sqrt(),
            xbar / 512.0
        );
    }
}

#[test]
#[ignore]
fn probe_forward_stage_budget() {
    use score_bridge::score::train_forward_score;
    let model = OrnsteinUhlenbeck::new(0.0, 2.0, 1).unwrap();
    let grid = TimeGrid::uniform(1.0, 50).unwrap();
    let horizon = 1.0;
    let config = TrainConfig {
        iterations: 500,
        paths_per_iter: 100,
        grid: grid.clone(),
        x0: InitialState::Fixed(vec![1.0]),
        seed: RngSource::new(7),
        adam: AdamParams64::default(),
        arch: Arch::new(1, false),
    };
    let (bnet, _) = train_backward_score(&model, &config).unwrap();
    let prop_b = BridgeProposal::backward(&model, grid.clone(), vec![1.0], vec![1.0], &bnet).unwrap();
    let wb = importance_weights(&prop_b, score_bridge::bridge::simulate_proposal(&prop_b, 1024, RngSource::new(5)).unwrap()).unwrap();
    println!("backward ESS = {:.4}", ess_proportion(&wb).unwrap());
    for (iters, paths) in [(500, 400), (1500, 100), (1500, 400)] {
        let mut cfg2 = config.clone();
        cfg2.iterations = iters;
        cfg2.paths_per_iter = paths;
        cfg2.seed = RngSource::new(8);
        let t0 = std::time::Instant::now();
        let (fnet, _) = train_forward_score(&model, &bnet, &[1.0], &[1.0], &cfg2).unwrap();
        let prop = BridgeProposal::forward(&model, grid.clone(), vec![1.0], vec![1.0], &bnet, &fnet).unwrap();
        let ens = score_bridge::bridge::simulate_proposal(&prop, 256, RngSource::new(42)).unwrap();
        let (mut err, mut mag) = (0.0, 0.0);
        for m in 0..grid.steps() {
            let t = grid.time(m);
            for p in 0..256 {
                let x = ens.state(p, m);
                let got = score_bridge::bridge::forward_bridge_drift(&fnet, &bnet, &model, horizon, t, x)[0];
                let want = -2.0 * x[0] + model.doob_gradient(t, x, &[1.0], horizon).unwrap()[0];
                err += (got - want) * (got - want);
                mag += want * want;
            }
        }
        let w = importance_weights(&prop, score_bridge::bridge::simulate_proposal(&prop, 1024, RngSource::new(5)).unwrap()).unwrap();
        println!(
            "iters {iters} paths {paths}: drift rmse {:.4}, fwd ESS {:.4} ({:?})",
            (err / mag).sqrt(),
            ess_proportion(&w).unwrap(),
            t0.elapsed()
        );
    }
}
