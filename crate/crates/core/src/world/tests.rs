use super::*;

fn cfg(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        ..ScenarioConfig::default()
    }
}

#[test]
fn straight_fraction_matches_prior() {
    let d = generate_dataset(&cfg(1), 10_000).unwrap();
    let straight = d.scenes.iter().filter(|s| s.context == Context::Straight).count() as f64 / 1e4;
    assert!((straight - 0.75).abs() < 0.02, "{straight}");
}

#[test]
fn object_classes_follow_cooccurrence_strength() {
    let c = ScenarioConfig {
        cooccurrence_strength: 0.7,
        n_objects: 1,
        ..cfg(2)
    };
    let d = generate_dataset(&c, 10_000).unwrap();
    for flag in [false, true] {
        let scenes: Vec<_> = d.scenes.iter().filter(|s| s.cooccurrence == flag).collect();
        let n = scenes.len() as f64;
        let hit = scenes.iter().filter(|s| s.object_classes[0] == usize::from(flag)).count() as f64 / n;
        let sigma = (0.7 * 0.3 / n).sqrt();
        assert!((hit - 0.7).abs() < 3.0 * sigma, "flag {flag}: {hit}");
    }
}

#[test]
fn zero_shortcut_history_is_the_independent_draw() {
    let c = ScenarioConfig {
        shortcut_strength: 0.0,
        ..cfg(3)
    };
    let d = generate_dataset(&c, 4000).unwrap();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in &d.scenes {
        for j in 0..2 {
            assert_eq!(s.ego_history[j].speed, s.exogenous.history_speed[j]);
            assert_eq!(s.ego_history[j].yaw, s.exogenous.history_yaw[j]);
        }
        let [x, y] = s.expert[0];
        xs.push(s.ego_history[1].speed);
        ys.push((x * x + y * y).sqrt());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (mean(&xs), mean(&ys));
    let cov: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = xs.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|b| (b - my).powi(2)).sum();
    assert!((cov / (vx * vy).sqrt()).abs() < 0.05);
}

#[test]
fn full_shortcut_history_copies_first_step() {
    let c = ScenarioConfig {
        shortcut_strength: 1.0,
        ..cfg(4)
    };
    for s in generate_dataset(&c, 200).unwrap().scenes {
        let [x, y] = s.expert[0];
        for h in s.ego_history {
            assert!((h.speed - (x * x + y * y).sqrt() / DT).abs() < 1e-12);
            assert!((h.yaw - y.atan2(x)).abs() < 1e-12);
        }
    }
}

fn bytes(d: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    d.write_jsonl(&mut out).unwrap();
    out
}

#[test]
fn generation_is_deterministic_across_runs_and_threads() {
    let a = generate_dataset(&cfg(5), 300).unwrap();
    let b = generate_dataset(&cfg(5), 300).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let c = pool.install(|| generate_dataset(&cfg(5), 300).unwrap());
    assert_eq!(bytes(&a), bytes(&c));
    let d = generate_dataset(&cfg(6), 300).unwrap();
    assert_ne!(bytes(&a), bytes(&d));
}

#[test]
fn jsonl_round_trip() {
    let a = generate_dataset(&cfg(7), 50).unwrap();
    let back = Dataset::read_jsonl(&bytes(&a)[..]).unwrap();
    assert_eq!(a, back);
}

#[test]
fn val_stream_is_disjoint() {
    let c = cfg(8);
    let train = generate_split(&c, 20, Split::Train).unwrap();
    let val = generate_split(&c, 20, Split::Val).unwrap();
    for t in &train.scenes {
        for v in &val.scenes {
            assert_ne!(t.exogenous, v.exogenous);
        }
    }
}

#[test]
fn empty_dataset_is_rejected() {
    assert!(generate_dataset(&cfg(0), 0).is_err());
    let bad = ScenarioConfig {
        context_prior: [0.5, 0.5, 0.5],
        ..cfg(0)
    };
    assert!(matches!(generate_dataset(&bad, 10), Err(Error::Config(_))));
}

#[test]
fn expert_trajectories_are_feasible() {
    let d = generate_dataset(&cfg(9), 10_000).unwrap();
    for s in &d.scenes {
        assert_eq!(s.expert.len(), HORIZON);
        assert!(is_feasible(&s.expert), "scene {}", s.index);
    }
    assert!(!is_feasible(&[[V_MAX * DT + 0.1, 0.0]]));
    assert!(!is_feasible(&[[3.0, 0.0], [6.0, 1.0]]));
}

#[test]
fn expert_geometry() {
    let d = generate_dataset(&cfg(10), 2000).unwrap();
    for s in d.scenes.iter().filter(|s| !s.has_cut_in()) {
        let v = s.exogenous.speed_limit;
        if s.context == Context::Straight {
            for (k, p) in s.expert.iter().enumerate() {
                assert!((p[0] - v * DT * (k + 1) as f64).abs() < 1e-9);
                assert_eq!(p[1], 0.0);
            }
        } else {
            // Constant speed on a circle of radius 1/kappa through the origin.
            let r = 1.0 / s.exogenous.curvature;
            let cy = s.context.turn() * r;
            for p in &s.expert {
                let d = (p[0] * p[0] + (p[1] - cy).powi(2)).sqrt();
                assert!((d - r).abs() < 1e-9);
            }
            let [x, y] = s.expert[5];
            let arc = 2.0 * r * ((x * x + y * y).sqrt() / (2.0 * r)).asin();
            assert!((arc - v * 3.0).abs() < 1e-9);
        }
    }
}

#[test]
fn cut_in_slows_the_expert() {
    let d = generate_dataset(&cfg(11), 500).unwrap();
    for s in &d.scenes {
        let [x, y] = s.expert[5];
        let [x4, y4] = s.expert[4];
        let last = ((x - x4).powi(2) + (y - y4).powi(2)).sqrt() / DT;
        if s.has_cut_in() {
            assert!(last < 0.5 * s.exogenous.speed_limit);
            let a = &s.agents[0];
            // Agent 0 drifts toward the ego lane.
            assert!(a.pos[1].signum() != a.vel[1].signum() || s.context.is_turn());
        } else {
            // Chord slightly shorter than the arc in turns.
            assert!((last - s.exogenous.speed_limit).abs() < 1e-2 * s.exogenous.speed_limit);
        }
    }
}

#[test]
fn expert_rarely_collides() {
    let d = generate_dataset(&cfg(12), 2000).unwrap();
    let n = d.scenes.iter().filter(|s| collides(&s.expert, &s.agents)).count();
    assert!(n < 40, "{n} expert collisions");
    let a = AgentState {
        pos: [5.0, 0.0],
        vel: [0.0, 0.0],
    };
    assert!(collides(&[[0.0, 0.0], [5.5, 0.0]], &[a]));
    assert!(!collides(&[[0.0, 0.0], [6.5, 0.0]], &[a]));
}

#[test]
fn velocity_perturbations() {
    let s = generate_scene(&cfg(13), Split::Val, 0, None);
    let before = s.clone();
    let z = perturb_ego_velocity(&s, VelocityPerturbation::Scale(0.0));
    assert!(z.ego_history.iter().all(|h| h.speed == 0.0));
    assert_eq!(perturb_ego_velocity(&s, VelocityPerturbation::Scale(1.0)), s);
    let f = perturb_ego_velocity(&s, VelocityPerturbation::Absolute(100.0));
    for (a, b) in f.ego_history.iter().zip(&s.ego_history) {
        assert_eq!(a.speed, 100.0);
        assert_eq!(a.yaw, b.yaw);
    }
    let mut rest = f.clone();
    rest.ego_history = s.ego_history;
    assert_eq!(rest, s);
    assert_eq!(s, before);
}

#[test]
fn context_feature_perturbations() {
    let s = generate_scene(&cfg(14), Split::Val, 3, None);
    assert_eq!(perturb_context_features(&s, Block::Map, 0.0, 1), s);
    for block in [Block::Agent, Block::Map] {
        let a = perturb_context_features(&s, block, 0.9, 1);
        let b = perturb_context_features(&s, block, 0.9, 2);
        assert_eq!(a, perturb_context_features(&s, block, 0.9, 1));
        let (ta, tb, t0) = match block {
            Block::Agent => (&a.agent_features, &b.agent_features, &s.agent_features),
            Block::Map => (&a.map_features, &b.map_features, &s.map_features),
        };
        assert!(ta.max_abs_diff(tb) > 0.0);
        let rms = (t0.data().iter().map(|v| v * v).sum::<f64>() / t0.len() as f64).sqrt();
        assert!(ta.max_abs_diff(t0) <= 0.9 * rms + 1e-12);
        let mut restored = a.clone();
        match block {
            Block::Agent => restored.agent_features = s.agent_features.clone(),
            Block::Map => restored.map_features = s.map_features.clone(),
        }
        assert_eq!(restored, s);
    }
}

#[test]
fn null_counterfactual_is_identity() {
    let d = generate_dataset(&cfg(15), 50).unwrap();
    for s in &d.scenes {
        assert_eq!(&counterfactual_context(s, s.context), s);
    }
}

#[test]
fn counterfactual_matches_regeneration() {
    let c = cfg(16);
    let d = generate_dataset(&c, 300).unwrap();
    for s in &d.scenes {
        for ctx in Context::ALL {
            let cf = counterfactual_context(s, ctx);
            let mut fresh = generate_scene(&c, Split::Train, s.index, Some(ctx));
            assert_eq!(cf.exogenous, fresh.exogenous);
            assert_eq!(cf.ego_history, s.ego_history);
            fresh.ego_history = s.ego_history;
            assert_eq!(cf, fresh);
        }
    }
}

#[test]
fn turning_an_active_cut_in_changes_the_expert_only() {
    let c = cfg(17);
    let d = generate_dataset(&c, 400).unwrap();
    let s = d
        .scenes
        .iter()
        .find(|s| s.context == Context::Straight && s.has_cut_in())
        .expect("a straight cut-in scene");
    let cf = counterfactual_context(s, Context::Left);
    assert_ne!(cf.expert, s.expert);
    assert_eq!(cf.ego_history, s.ego_history);
    assert_eq!(cf.object_features, s.object_features);
    assert!(cf.map_features.max_abs_diff(&s.map_features) > 0.0);
    assert!(cf.expert.iter().all(|p| p[1] >= 0.0));
}

#[test]
fn agent_motion_targets() {
    let s = generate_scene(&cfg(18), Split::Train, 1, None);
    let m = s.agent_motion();
    assert_eq!(m.shape(), &[s.agents.len(), 6]);
    for (i, a) in s.agents.iter().enumerate() {
        assert!((m.at(i, 4) - 3.0 * a.vel[0]).abs() < 1e-12);
        assert!((m.at(i, 1) - a.vel[1]).abs() < 1e-12);
    }
}
